use super::polygon::segments_cross;
use super::{Polygon, TrapModel};
use crate::scalar::Real;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    SelfIntersection { owner: String, shape: usize },
    Orientation { owner: String, shape: usize },
    ZeroArea { owner: String, shape: usize },
    Overlap { first: String, second: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SelfIntersection { owner, shape } => {
                write!(f, "{owner}[{shape}] self-intersects")
            }
            Violation::Orientation { owner, shape } => write!(f, "{owner}[{shape}] is clockwise"),
            Violation::ZeroArea { owner, shape } => write!(f, "{owner}[{shape}] has zero area"),
            Violation::Overlap { first, second } => write!(f, "{first} overlaps {second}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_clean() {
            return write!(f, "clean");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

struct Item<'a, T: Real> {
    owner: String,
    group: usize,
    unbounded: bool,
    poly: &'a Polygon<T>,
    bounds: [T; 4],
    interior: Option<[T; 2]>,
}

fn self_intersects<T: Real>(p: &Polygon<T>) -> bool {
    let v = p.vertices();
    let n = v.len();
    for i in 0..n {
        let (a, b) = (v[i], v[(i + 1) % n]);
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let (c, d) = (v[j], v[(j + 1) % n]);
            if segments_cross(a, b, c, d) {
                return true;
            }
        }
    }
    false
}

fn boxes_overlap<T: Real>(a: [T; 4], b: [T; 4]) -> bool {
    a[0] < b[2] && b[0] < a[2] && a[1] < b[3] && b[1] < a[3]
}

fn edges_cross<T: Real>(p: &Polygon<T>, q: &Polygon<T>, clip: [T; 4]) -> bool {
    let inside = |a: [T; 2], b: [T; 2]| {
        !(a[0].max(b[0]) < clip[0]
            || a[0].min(b[0]) > clip[2]
            || a[1].max(b[1]) < clip[1]
            || a[1].min(b[1]) > clip[3])
    };
    let qe: Vec<_> = q.edges().filter(|&(c, d)| inside(c, d)).collect();
    p.edges()
        .filter(|&(a, b)| inside(a, b))
        .any(|(a, b)| qe.iter().any(|&(c, d)| segments_cross(a, b, c, d)))
}

/// Is the point in the region covered by `item`?
fn covers<T: Real>(item: &Item<T>, p: [T; 2]) -> bool {
    if item.unbounded {
        // Strictly outside the hole boundary, i.e. neither inside nor on it.
        let b = item.bounds;
        let outside_box = p[0] < b[0] || p[0] > b[2] || p[1] < b[1] || p[1] > b[3];
        outside_box || (!item.poly.contains_strictly(p, T::zero()) && !on_boundary(item.poly, p))
    } else {
        item.poly.contains_strictly(p, T::zero())
    }
}

fn on_boundary<T: Real>(p: &Polygon<T>, x: [T; 2]) -> bool {
    let scale = p.bounds().iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let tol = scale * T::epsilon() * T::lit(16.0);
    p.edges()
        .any(|(a, b)| super::polygon::point_segment_distance(x, a, b) <= tol)
}

/// Checks every electrode and gap polygon for self-intersection, clockwise
/// orientation and zero area, and every pair of polygons owned by different
/// electrodes (or gaps) for overlap.
pub fn validate<T: Real>(model: &TrapModel<T>) -> ValidationReport {
    let mut violations = Vec::new();
    let mut items = Vec::new();
    for (ei, e) in model.electrodes().iter().enumerate() {
        for p in &e.shapes {
            items.push(Item {
                owner: e.id.clone(),
                group: ei,
                unbounded: e.unbounded,
                poly: p,
                bounds: p.bounds(),
                interior: None,
            });
        }
    }
    let n_electrodes = model.electrodes().len();
    for (gi, p) in model.gaps().iter().enumerate() {
        items.push(Item {
            owner: format!("gap{gi}"),
            group: n_electrodes + gi,
            unbounded: false,
            poly: p,
            bounds: p.bounds(),
            interior: None,
        });
    }

    let mut shape_index = Vec::with_capacity(items.len());
    let mut last: Option<usize> = None;
    let mut k = 0;
    for item in &items {
        if last != Some(item.group) {
            k = 0;
            last = Some(item.group);
        }
        shape_index.push(k);
        k += 1;
    }

    let mut broken = vec![false; items.len()];
    for (i, item) in items.iter_mut().enumerate() {
        let shape = shape_index[i];
        let area = item.poly.signed_area();
        if area == T::zero() {
            violations.push(Violation::ZeroArea {
                owner: item.owner.clone(),
                shape,
            });
            broken[i] = true;
            continue;
        }
        if area < T::zero() {
            violations.push(Violation::Orientation {
                owner: item.owner.clone(),
                shape,
            });
        }
        if self_intersects(item.poly) {
            violations.push(Violation::SelfIntersection {
                owner: item.owner.clone(),
                shape,
            });
            broken[i] = true;
            continue;
        }
        item.interior = item.poly.interior_point();
    }

    let mut reported = std::collections::HashSet::new();
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            let (a, b) = (&items[i], &items[j]);
            if a.group == b.group || broken[i] || broken[j] {
                continue;
            }
            let key = (a.group.min(b.group), a.group.max(b.group));
            if reported.contains(&key) {
                continue;
            }
            let overlap = if a.unbounded && b.unbounded {
                // Both cover a neighbourhood of infinity.
                true
            } else if a.unbounded || b.unbounded {
                let (u, other) = if a.unbounded { (a, b) } else { (b, a) };
                edges_cross(u.poly, other.poly, other.bounds)
                    || other.interior.is_some_and(|p| covers(u, p))
            } else if boxes_overlap(a.bounds, b.bounds) {
                let clip = [
                    a.bounds[0].max(b.bounds[0]),
                    a.bounds[1].max(b.bounds[1]),
                    a.bounds[2].min(b.bounds[2]),
                    a.bounds[3].min(b.bounds[3]),
                ];
                edges_cross(a.poly, b.poly, clip)
                    || a.interior.is_some_and(|p| covers(b, p))
                    || b.interior.is_some_and(|p| covers(a, p))
            } else {
                false
            };
            if overlap {
                reported.insert(key);
                violations.push(Violation::Overlap {
                    first: a.owner.clone(),
                    second: b.owner.clone(),
                });
            }
        }
    }
    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_ring_layout, Electrode, ElectrodeRole, RingLayoutParams};

    fn model() -> TrapModel<f64> {
        build_ring_layout(&RingLayoutParams::default()).unwrap()
    }

    #[test]
    fn default_layout_is_clean() {
        let report = validate(&model());
        assert!(report.is_clean(), "{report}");
    }

    #[test]
    fn duplicated_electrode_overlaps() {
        let m = model();
        let mut copy = m.electrode("e05").unwrap().clone();
        copy.id = "e05_copy".into();
        let report = validate(&m.with_extra_electrodes(vec![copy]).unwrap());
        assert!(report.violations.iter().any(|v| matches!(
            v,
            Violation::Overlap { first, second } if first == "e05" && second == "e05_copy"
        )));
    }

    #[test]
    fn clockwise_polygon_is_reported() {
        let m = model();
        let square =
            Polygon::new(vec![[0.0, 0.0], [0.0, 1e-6], [1e-6, 1e-6], [1e-6, 0.0]]).unwrap();
        let extra = Electrode::new("cw", ElectrodeRole::Control, vec![square]);
        let report = validate(&m.with_extra_electrodes(vec![extra]).unwrap());
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::Orientation { owner, .. } if owner == "cw")));
    }

    #[test]
    fn bow_tie_self_intersects() {
        let p = Polygon::new(vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(self_intersects(&p));
    }
}
