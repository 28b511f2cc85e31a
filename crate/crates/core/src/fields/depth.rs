use super::modes::local_minimum;
use super::{FieldError, Landscape, VoltageSet};
use crate::geometry::{RingSite, TrapModel};
use crate::scalar::dot3;
use std::cmp::Reverse;
use std::collections::BinaryHeap;

/// Search window for the escape saddle, in the site's (R, Z) half-plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthOptions {
    /// Radial half-width of the window around the minimum, m.
    pub radial_half_width: f64,
    pub z_min: f64,
    pub z_max: f64,
    /// Grid spacing, m.
    pub step: f64,
}

impl Default for DepthOptions {
    fn default() -> Self {
        Self {
            radial_half_width: 400e-6,
            z_min: 5e-6,
            z_max: 700e-6,
            step: 5e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapDepth {
    /// eV.
    pub depth: f64,
    pub minimum: [f64; 3],
    pub saddle: [f64; 3],
    pub minimum_energy: f64,
    pub saddle_energy: f64,
}

struct Key(f64);
impl PartialEq for Key {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}
impl Eq for Key {}
impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Key {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Lowest barrier between the minimum near `site` and escape through the top
/// or the sides of the search window. A minimax flood on a grid brackets the
/// saddle, which is then refined by Newton iteration on the in-plane
/// gradient.
pub fn trap_depth_in(
    landscape: &Landscape,
    site: &RingSite<f64>,
    opts: &DepthOptions,
) -> Result<TrapDepth, FieldError> {
    let pmin = local_minimum(landscape, site.position, &site.label)?;
    let u_min = landscape.energy(pmin);
    let az = pmin[1].atan2(pmin[0]);
    let (s, c) = az.sin_cos();
    let r0 = pmin[0].hypot(pmin[1]);
    let at = |r: f64, z: f64| [r * c, r * s, z];

    let r_lo = (r0 - opts.radial_half_width).max(opts.step);
    let nr = ((r0 + opts.radial_half_width - r_lo) / opts.step).ceil() as usize + 1;
    let nz = ((opts.z_max - opts.z_min) / opts.step).ceil() as usize + 1;
    let rr = |i: usize| r_lo + i as f64 * opts.step;
    let zz = |j: usize| opts.z_min + j as f64 * opts.step;
    let mut u = vec![f64::NAN; nr * nz];
    let mut value = |i: usize, j: usize| {
        let k = j * nr + i;
        if u[k].is_nan() {
            u[k] = landscape.energy(at(rr(i), zz(j)));
        }
        u[k]
    };

    let i0 = (((r0 - r_lo) / opts.step).round() as usize).min(nr - 1);
    let j0 = (((pmin[2] - opts.z_min) / opts.step).round().max(0.0) as usize).min(nz - 1);
    let mut level = vec![f64::INFINITY; nr * nz];
    let mut peak = vec![usize::MAX; nr * nz];
    let start = j0 * nr + i0;
    level[start] = value(i0, j0);
    peak[start] = start;
    let mut heap = BinaryHeap::new();
    heap.push(Reverse((Key(level[start]), start)));
    let mut escape = None;
    while let Some(Reverse((Key(l), k))) = heap.pop() {
        if l > level[k] {
            continue;
        }
        let (i, j) = (k % nr, k / nr);
        if i == 0 || i == nr - 1 || j == nz - 1 {
            escape = Some(k);
            break;
        }
        let mut nb = vec![(i - 1, j), (i + 1, j), (i, j + 1)];
        if j > 0 {
            nb.push((i, j - 1));
        }
        for (a, b) in nb {
            let kk = b * nr + a;
            let v = value(a, b);
            let (nl, np) = if v > l { (v, kk) } else { (l, peak[k]) };
            if nl < level[kk] {
                level[kk] = nl;
                peak[kk] = np;
                heap.push(Reverse((Key(nl), kk)));
            }
        }
    }
    let exit = escape.ok_or_else(|| FieldError::NoSaddle(site.label.clone()))?;
    let pk = peak[exit];
    let (pi, pj) = (pk % nr, pk / nr);
    if pi == 0 || pi == nr - 1 || pj == nz - 1 || pk == start {
        return Err(FieldError::NoSaddle(site.label.clone()));
    }

    // Newton on the in-plane gradient from the bracketing grid cell.
    let r_hat = [c, s, 0.0];
    let (mut r, mut z) = (rr(pi), zz(pj));
    let mut refined = false;
    for _ in 0..50 {
        let (_, g, h) = landscape.hessian(at(r, z));
        let gr = dot3(g, r_hat);
        let gz = g[2];
        let hr = [
            dot3(h[0], r_hat) * c + dot3(h[1], r_hat) * s,
            dot3(h[2], r_hat),
        ];
        let (hrr, hrz, hzz) = (hr[0], hr[1], h[2][2]);
        let det = hrr * hzz - hrz * hrz;
        if !(det.abs() > 0.0) {
            break;
        }
        let dr = -(gr * hzz - gz * hrz) / det;
        let dz = -(hrr * gz - hrz * gr) / det;
        r += dr;
        z += dz;
        if (r - rr(pi)).hypot(z - zz(pj)) > 3.0 * opts.step || z <= 0.0 {
            break;
        }
        if dr.hypot(dz) < 1e-12 {
            refined = true;
            break;
        }
    }
    let (saddle, u_saddle) = if refined {
        let p = at(r, z);
        (p, landscape.energy(p))
    } else {
        let p = at(rr(pi), zz(pj));
        (p, landscape.energy(p))
    };
    Ok(TrapDepth {
        depth: u_saddle - u_min,
        minimum: pmin,
        saddle,
        minimum_energy: u_min,
        saddle_energy: u_saddle,
    })
}

/// Trap depth at `site` under rf plus `volts`, with default search options.
pub fn trap_depth(
    model: &TrapModel<f64>,
    volts: &VoltageSet,
    site: &RingSite<f64>,
) -> Result<TrapDepth, FieldError> {
    let landscape = Landscape::new(model, volts)?;
    trap_depth_in(&landscape, site, &DepthOptions::default())
}
