//! Gapless-plane kernel: the unit potential of a planar region seen from a
//! point above the plane is its solid angle over 2 pi. Each directed boundary
//! edge A -> B contributes the solid angle of the triangle spanned by A, B and
//! the foot of the perpendicular from the field point.

use crate::geometry::Electrode;
use crate::scalar::{cross3, dot3, Real};
use std::collections::HashMap;

/// Weighted directed boundary edges of one or more plane regions.
///
/// Edges shared by two polygons of the same region appear with opposite
/// directions and are dropped, so each vertex is visited once per evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Boundary<T: Real> {
    vertices: Vec<[T; 2]>,
    edges: Vec<(u32, u32, T)>,
    offset: T,
}

struct Builder<T: Real> {
    vertices: Vec<[T; 2]>,
    vertex_index: HashMap<(u64, u64), u32>,
    edges: Vec<(u32, u32, T)>,
    edge_index: HashMap<(u32, u32), usize>,
    offset: T,
}

impl<T: Real> Builder<T> {
    fn new() -> Self {
        Self {
            vertices: Vec::new(),
            vertex_index: HashMap::new(),
            edges: Vec::new(),
            edge_index: HashMap::new(),
            offset: T::zero(),
        }
    }

    fn vertex(&mut self, v: [T; 2]) -> u32 {
        // Normalise -0.0 so the key matches +0.0.
        let key = (
            (v[0] + T::zero()).as_f64().to_bits(),
            (v[1] + T::zero()).as_f64().to_bits(),
        );
        *self.vertex_index.entry(key).or_insert_with(|| {
            self.vertices.push(v);
            (self.vertices.len() - 1) as u32
        })
    }

    fn edge(&mut self, i: u32, j: u32, w: T) {
        if i == j {
            return;
        }
        let (key, w) = if i < j { ((i, j), w) } else { ((j, i), -w) };
        match self.edge_index.get(&key) {
            Some(&k) => self.edges[k].2 = self.edges[k].2 + w,
            None => {
                self.edge_index.insert(key, self.edges.len());
                self.edges.push((key.0, key.1, w));
            }
        }
    }

    fn finish(self) -> Boundary<T> {
        let edges: Vec<_> = self
            .edges
            .into_iter()
            .filter(|e| e.2 != T::zero())
            .collect();
        let mut used = vec![u32::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        let mut remap = |i: u32| {
            if used[i as usize] == u32::MAX {
                used[i as usize] = vertices.len() as u32;
                vertices.push(self.vertices[i as usize]);
            }
            used[i as usize]
        };
        let edges = edges
            .into_iter()
            .map(|(i, j, w)| (remap(i), remap(j), w))
            .collect();
        Boundary {
            vertices,
            edges,
            offset: self.offset,
        }
    }
}

impl<T: Real> Boundary<T> {
    /// Boundary of the region covered by an electrode. An unbounded electrode
    /// covers the complement of its polygons: unit offset, reversed edges.
    pub fn from_electrode(e: &Electrode<T>) -> Self {
        let mut b = Builder::new();
        let w = if e.unbounded { -T::one() } else { T::one() };
        if e.unbounded {
            b.offset = T::one();
        }
        for p in &e.shapes {
            let idx: Vec<u32> = p.vertices().iter().map(|&v| b.vertex(v)).collect();
            for k in 0..idx.len() {
                b.edge(idx[k], idx[(k + 1) % idx.len()], w);
            }
        }
        b.finish()
    }

    /// Weighted sum of boundaries: evaluates to `sum_k w_k u_k(p)`.
    pub fn combine<'a>(parts: impl IntoIterator<Item = (&'a Boundary<T>, T)>) -> Self {
        let mut b = Builder::new();
        for (part, w) in parts {
            if w == T::zero() {
                continue;
            }
            b.offset = b.offset + w * part.offset;
            let idx: Vec<u32> = part.vertices.iter().map(|&v| b.vertex(v)).collect();
            for &(i, j, ew) in &part.edges {
                b.edge(idx[i as usize], idx[j as usize], w * ew);
            }
        }
        b.finish()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn offset(&self) -> T {
        self.offset
    }

    pub(crate) fn add_offset(&mut self, c: T) {
        self.offset = self.offset + c;
    }

    fn rel(&self, p: [T; 3]) -> Vec<([T; 3], T)> {
        self.vertices
            .iter()
            .map(|v| {
                let a = [v[0] - p[0], v[1] - p[1], -p[2]];
                (a, dot3(a, a).sqrt())
            })
            .collect()
    }

    /// Unit potential at `p` (requires `p[2] > 0`).
    pub fn value(&self, p: [T; 3]) -> T {
        let z = p[2];
        let rel = self.rel(p);
        let mut acc = T::zero();
        for &(i, j, w) in &self.edges {
            let (a, la) = rel[i as usize];
            let (b, lb) = rel[j as usize];
            let num = z * (a[0] * b[1] - a[1] * b[0]);
            let den = z * (la * lb + dot3(a, b)) + z * z * (la + lb);
            acc = acc + w * num.atan2(den);
        }
        self.offset + acc / T::PI()
    }

    /// Gradient of the unit potential at `p`.
    pub fn gradient(&self, p: [T; 3]) -> [T; 3] {
        let rel = self.rel(p);
        let mut g = [T::zero(); 3];
        for &(i, j, w) in &self.edges {
            let (a, la) = rel[i as usize];
            let (b, lb) = rel[j as usize];
            let c = cross3(a, b);
            let lab = la * lb;
            let f = w * (la + lb) / (lab * (lab + dot3(a, b)));
            for k in 0..3 {
                g[k] = g[k] + c[k] * f;
            }
        }
        let s = -T::one() / T::TAU();
        [g[0] * s, g[1] * s, g[2] * s]
    }

    /// Value, gradient and Hessian of the unit potential at `p`.
    pub fn hessian(&self, p: [T; 3]) -> (T, [T; 3], [[T; 3]; 3]) {
        let z = p[2];
        let rel = self.rel(p);
        let mut v = T::zero();
        let mut g = [T::zero(); 3];
        let mut h = [[T::zero(); 3]; 3];
        for &(i, j, w) in &self.edges {
            let (a, la) = rel[i as usize];
            let (b, lb) = rel[j as usize];
            let ab = dot3(a, b);
            let num = z * (a[0] * b[1] - a[1] * b[0]);
            let den = z * (la * lb + ab) + z * z * (la + lb);
            v = v + w * num.atan2(den);

            let c = cross3(a, b);
            let lab = la * lb;
            let pp = lab + ab;
            let s = la + lb;
            let d = lab * pp;
            let f = s / d;
            let mut df = [T::zero(); 3];
            for k in 0..3 {
                let ds = -a[k] / la - b[k] / lb;
                let dlab = -(lb * a[k] / la + la * b[k] / lb);
                let dp = dlab - (a[k] + b[k]);
                let dd = dlab * pp + lab * dp;
                df[k] = ds / d - s * dd / (d * d);
            }
            // d c / d p_k = L x e_k with L = B - A in the plane.
            let l = [b[0] - a[0], b[1] - a[1]];
            let dc = [
                [T::zero(), T::zero(), l[1]],
                [T::zero(), T::zero(), -l[0]],
                [-l[1], l[0], T::zero()],
            ];
            for r in 0..3 {
                g[r] = g[r] + w * c[r] * f;
                for k in 0..3 {
                    h[r][k] = h[r][k] + w * (dc[r][k] * f + c[r] * df[k]);
                }
            }
        }
        let s = -T::one() / T::TAU();
        let g = [g[0] * s, g[1] * s, g[2] * s];
        let mut hs = [[T::zero(); 3]; 3];
        for r in 0..3 {
            for k in 0..3 {
                hs[r][k] = h[r][k] * s;
            }
        }
        // Symmetrise away rounding asymmetry.
        for r in 0..3 {
            for k in r + 1..3 {
                let m = (hs[r][k] + hs[k][r]) / T::lit(2.0);
                hs[r][k] = m;
                hs[k][r] = m;
            }
        }
        (self.offset + v / T::PI(), g, hs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ElectrodeRole, Polygon};

    fn square(half: f64) -> Electrode<f64> {
        let p = Polygon::new(vec![
            [-half, -half],
            [half, -half],
            [half, half],
            [-half, half],
        ])
        .unwrap();
        Electrode::new("sq", ElectrodeRole::Control, vec![p])
    }

    #[test]
    fn square_solid_angle_closed_form() {
        let b = Boundary::from_electrode(&square(1.0));
        let (a, bb, h) = (1.0f64, 1.0f64, 1.0f64);
        let oracle =
            4.0 * (a * bb / (h * (a * a + bb * bb + h * h).sqrt())).atan() / std::f64::consts::TAU;
        assert!((b.value([0.0, 0.0, 1.0]) - oracle).abs() < 1e-15);
        assert!((oracle - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn split_square_drops_internal_edge() {
        let left = Polygon::new(vec![[-1.0, -1.0], [0.0, -1.0], [0.0, 1.0], [-1.0, 1.0]]).unwrap();
        let right = Polygon::new(vec![[0.0, -1.0], [1.0, -1.0], [1.0, 1.0], [0.0, 1.0]]).unwrap();
        let e = Electrode::new("split", ElectrodeRole::Control, vec![left, right]);
        let b = Boundary::from_electrode(&e);
        assert_eq!(b.edge_count(), 6);
        let whole = Boundary::from_electrode(&square(1.0));
        let p = [0.3, -0.2, 0.7];
        assert!((b.value(p) - whole.value(p)).abs() < 1e-14);
    }

    #[test]
    fn unbounded_complement_sums_to_one() {
        let mut outside = square(1.0);
        outside.unbounded = true;
        let inside = Boundary::from_electrode(&square(1.0));
        let outside = Boundary::from_electrode(&outside);
        for p in [[0.0, 0.0, 0.1], [3.0, -2.0, 0.5], [0.9, 0.9, 1e-3]] {
            assert!((inside.value(p) + outside.value(p) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let b = Boundary::from_electrode(&square(1.0));
        let p = [0.4, -0.7, 0.6];
        let (v, g, h) = b.hessian(p);
        assert!((v - b.value(p)).abs() < 1e-15);
        let g2 = b.gradient(p);
        for k in 0..3 {
            assert!((g[k] - g2[k]).abs() < 1e-15);
        }
        let eps = 1e-5;
        for k in 0..3 {
            let mut hi = p;
            let mut lo = p;
            hi[k] += eps;
            lo[k] -= eps;
            let (gh, gl) = (b.gradient(hi), b.gradient(lo));
            for r in 0..3 {
                let fd = (gh[r] - gl[r]) / (2.0 * eps);
                assert!((fd - h[r][k]).abs() < 1e-8, "{r}{k}: {fd} vs {}", h[r][k]);
            }
        }
    }
}
