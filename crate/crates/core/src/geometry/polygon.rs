use crate::scalar::Real;

use super::GeometryError;

/// Simple planar polygon in the z = 0 plane, vertices in meters.
///
/// Counterclockwise orientation (seen from z > 0) is expected by the field
/// kernels; [`super::validate`] reports polygons that violate it.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon<T: Real> {
    vertices: Vec<[T; 2]>,
}

impl<T: Real> Polygon<T> {
    /// Wraps a vertex list. Rejects fewer than three vertices and non-finite
    /// coordinates; orientation and simplicity are checked by validation.
    pub fn new(vertices: Vec<[T; 2]>) -> Result<Self, GeometryError> {
        if vertices.len() < 3 {
            return Err(GeometryError::TooFewVertices(vertices.len()));
        }
        if vertices
            .iter()
            .any(|v| !v[0].is_finite() || !v[1].is_finite())
        {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[[T; 2]] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Shoelace signed area; positive for counterclockwise polygons.
    pub fn signed_area(&self) -> T {
        let n = self.vertices.len();
        let mut acc = T::zero();
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            acc = acc + (a[0] * b[1] - a[1] * b[0]);
        }
        acc / T::lit(2.0)
    }

    pub fn area(&self) -> T {
        self.signed_area().abs()
    }

    pub fn is_counterclockwise(&self) -> bool {
        self.signed_area() > T::zero()
    }

    /// Copy with reversed vertex order.
    pub fn reversed(&self) -> Self {
        let mut vertices = self.vertices.clone();
        vertices.reverse();
        Self { vertices }
    }

    /// Copy rotated about the z-axis by `angle` radians.
    pub fn rotated(&self, angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        let vertices = self
            .vertices
            .iter()
            .map(|v| [c * v[0] - s * v[1], s * v[0] + c * v[1]])
            .collect();
        Self { vertices }
    }

    /// Axis-aligned bounding box `[xmin, ymin, xmax, ymax]`.
    pub fn bounds(&self) -> [T; 4] {
        let mut b = [
            T::infinity(),
            T::infinity(),
            T::neg_infinity(),
            T::neg_infinity(),
        ];
        for v in &self.vertices {
            b[0] = b[0].min(v[0]);
            b[1] = b[1].min(v[1]);
            b[2] = b[2].max(v[0]);
            b[3] = b[3].max(v[1]);
        }
        b
    }

    pub fn edges(&self) -> impl Iterator<Item = ([T; 2], [T; 2])> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Even-odd point-in-polygon test. Points on the boundary are not
    /// reported as strictly inside.
    pub fn contains_strictly(&self, p: [T; 2], tol: T) -> bool {
        for (a, b) in self.edges() {
            if point_segment_distance(p, a, b) <= tol {
                return false;
            }
        }
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                if x > p[0] {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// A point strictly inside the polygon: centroid of the first ear found.
    pub fn interior_point(&self) -> Option<[T; 2]> {
        let n = self.vertices.len();
        let orient = if self.signed_area() >= T::zero() {
            T::one()
        } else {
            -T::one()
        };
        let three = T::lit(3.0);
        for i in 0..n {
            let a = self.vertices[(i + n - 1) % n];
            let b = self.vertices[i];
            let c = self.vertices[(i + 1) % n];
            let turn = orient * cross2(sub2(b, a), sub2(c, b));
            if turn <= T::zero() {
                continue;
            }
            let centroid = [(a[0] + b[0] + c[0]) / three, (a[1] + b[1] + c[1]) / three];
            let ear = Polygon {
                vertices: vec![a, b, c],
            };
            let blocked = self.vertices.iter().enumerate().any(|(j, v)| {
                j != i
                    && j != (i + n - 1) % n
                    && j != (i + 1) % n
                    && ear.contains_strictly(*v, T::zero())
            });
            if !blocked && self.contains_strictly(centroid, T::zero()) {
                return Some(centroid);
            }
        }
        None
    }

    /// Converts the coordinate type.
    pub fn cast<U: Real>(&self) -> Polygon<U> {
        Polygon {
            vertices: self
                .vertices
                .iter()
                .map(|v| [U::lit(v[0].as_f64()), U::lit(v[1].as_f64())])
                .collect(),
        }
    }
}

#[inline]
pub(crate) fn sub2<T: Real>(a: [T; 2], b: [T; 2]) -> [T; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub(crate) fn cross2<T: Real>(a: [T; 2], b: [T; 2]) -> T {
    a[0] * b[1] - a[1] * b[0]
}

pub(crate) fn point_segment_distance<T: Real>(p: [T; 2], a: [T; 2], b: [T; 2]) -> T {
    let ab = sub2(b, a);
    let ap = sub2(p, a);
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > T::zero() {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2)
            .max(T::zero())
            .min(T::one())
    } else {
        T::zero()
    };
    let d = [ap[0] - t * ab[0], ap[1] - t * ab[1]];
    (d[0] * d[0] + d[1] * d[1]).sqrt()
}

/// True when the open segments `ab` and `cd` cross at a single interior point.
pub(crate) fn segments_cross<T: Real>(a: [T; 2], b: [T; 2], c: [T; 2], d: [T; 2]) -> bool {
    let d1 = cross2(sub2(b, a), sub2(c, a));
    let d2 = cross2(sub2(b, a), sub2(d, a));
    let d3 = cross2(sub2(d, c), sub2(a, c));
    let d4 = cross2(sub2(d, c), sub2(b, c));
    let z = T::zero();
    ((d1 > z && d2 < z) || (d1 < z && d2 > z)) && ((d3 > z && d4 < z) || (d3 < z && d4 > z))
}

/// Annular-sector polygon between radii `r_in < r_out` and angles
/// `theta0 < theta1`, with `n` chords per arc: `2(n + 1)` vertices,
/// counterclockwise.
pub fn arc_polygon<T: Real>(
    r_in: T,
    r_out: T,
    theta0: T,
    theta1: T,
    n: usize,
) -> Result<Polygon<T>, GeometryError> {
    if !(r_in > T::zero() && r_out > r_in) {
        return Err(GeometryError::DegenerateRadii {
            r_in: r_in.as_f64(),
            r_out: r_out.as_f64(),
        });
    }
    if !(theta1 > theta0) || theta1 - theta0 > T::TAU() {
        return Err(GeometryError::DegenerateAngles {
            theta0: theta0.as_f64(),
            theta1: theta1.as_f64(),
        });
    }
    if n == 0 {
        return Err(GeometryError::ZeroResolution);
    }
    let step = (theta1 - theta0) / T::from_usize(n).unwrap();
    let angle = |k: usize| {
        if k == n {
            theta1
        } else {
            theta0 + step * T::from_usize(k).unwrap()
        }
    };
    let mut vertices = Vec::with_capacity(2 * (n + 1));
    for k in 0..=n {
        let (s, c) = angle(k).sin_cos();
        vertices.push([r_out * c, r_out * s]);
    }
    for k in (0..=n).rev() {
        let (s, c) = angle(k).sin_cos();
        vertices.push([r_in * c, r_in * s]);
    }
    Polygon::new(vertices)
}
