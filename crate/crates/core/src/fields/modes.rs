use super::{FieldError, Landscape, VoltageSet};
use crate::constants::TWO_PI;
use crate::geometry::{RingSite, TrapModel};
use crate::scalar::{dot3, norm3};
use nalgebra::{Matrix3, SymmetricEigen, Vector3};

/// Frequencies below this are reported as zero (soft modes), in Hz.
pub const SOFT_MODE_HZ: f64 = 1.0e3;

const MAX_ITER: usize = 200;
/// Largest Newton step, m.
const MAX_STEP: f64 = 5e-6;
const STEP_TOL: f64 = 1e-12;
/// Gradient tolerance in V/m (energy gradient over charge number).
const GRADIENT_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeAxis {
    T,
    R,
    Z,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecularModes {
    pub site: String,
    /// Equilibrium position, m.
    pub position: [f64; 3],
    pub omega_t: f64,
    pub omega_r: f64,
    pub omega_z: f64,
    /// Principal axes in (T, R, Z) label order, unit vectors.
    pub axes: [[f64; 3]; 3],
    /// Potential curvatures along `axes`, V/m^2.
    pub curvatures: [f64; 3],
    /// Angle from R toward Z of the radial-like principal axis, rad, in
    /// (-pi/2, pi/2].
    pub rotation_angle: f64,
}

impl SecularModes {
    pub fn omega(&self, axis: ModeAxis) -> f64 {
        match axis {
            ModeAxis::T => self.omega_t,
            ModeAxis::R => self.omega_r,
            ModeAxis::Z => self.omega_z,
        }
    }
}

pub(crate) fn sym_eigen(h: [[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let m = Matrix3::from_fn(|r, c| h[r][c]);
    let eig = SymmetricEigen::new(m);
    let mut vals = [0.0; 3];
    let mut vecs = [[0.0; 3]; 3];
    for k in 0..3 {
        vals[k] = eig.eigenvalues[k];
        let v: Vector3<f64> = eig.eigenvectors.column(k).into();
        vecs[k] = [v[0], v[1], v[2]];
    }
    (vals, vecs)
}

/// Energy curvature (eV/m^2) below which a direction counts as soft.
pub(crate) fn soft_curvature(landscape: &Landscape) -> f64 {
    let s = landscape.model().species();
    let w = TWO_PI * SOFT_MODE_HZ;
    s.mass * w * w / s.charge * landscape.charge_number().abs()
}

/// Local minimum of the landscape near `start`, by Newton iteration on the
/// eigen-decomposed Hessian. Directions softer than the soft-mode threshold
/// are not stepped along; negative curvature directions are descended.
pub fn local_minimum(
    landscape: &Landscape,
    start: [f64; 3],
    label: &str,
) -> Result<[f64; 3], FieldError> {
    let soft = soft_curvature(landscape);
    let fail = |reason: String| FieldError::NoMinimum {
        site: label.to_string(),
        reason,
    };
    let z_scale = landscape.charge_number().abs();
    let mut p = start;
    for _ in 0..MAX_ITER {
        if !(p[2] > 0.0) {
            return Err(fail("left the region above the plane".into()));
        }
        let (u0, g, h) = landscape.hessian(p);
        let (vals, vecs) = sym_eigen(h);
        let mut d = [0.0; 3];
        let mut stiff_grad = 0.0f64;
        for k in 0..3 {
            let gk = dot3(vecs[k], g);
            if vals[k].abs() <= soft {
                continue;
            }
            stiff_grad = stiff_grad.max(gk.abs());
            let c = -gk / vals[k].abs();
            for i in 0..3 {
                d[i] += c * vecs[k][i];
            }
        }
        let len = norm3(d);
        if len > MAX_STEP {
            for v in d.iter_mut() {
                *v *= MAX_STEP / len;
            }
        }
        let converged_grad = stiff_grad / z_scale < GRADIENT_TOL;
        let mut t = 1.0;
        let mut moved = false;
        // Allow for rounding in the energy near the minimum.
        let slack = 8.0 * f64::EPSILON * u0.abs();
        for _ in 0..30 {
            let q = [p[0] + t * d[0], p[1] + t * d[1], p[2] + t * d[2]];
            if q[2] > 0.0 && landscape.energy(q) <= u0 + slack {
                p = q;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            if converged_grad {
                return Ok(p);
            }
            return Err(fail(format!(
                "line search failed with gradient {:.3e} V/m",
                stiff_grad / z_scale
            )));
        }
        if converged_grad && t * norm3(d) < STEP_TOL {
            return Ok(p);
        }
    }
    Err(fail(format!("no convergence after {MAX_ITER} iterations")))
}

/// Secular modes of a single ion trapped near `site` in the given landscape.
pub fn secular_modes_in(
    landscape: &Landscape,
    site: &RingSite<f64>,
) -> Result<SecularModes, FieldError> {
    let p = local_minimum(landscape, site.position, &site.label)?;
    modes_at(landscape, site, p)
}

/// Mode analysis at a given equilibrium point.
pub fn modes_at(
    landscape: &Landscape,
    site: &RingSite<f64>,
    p: [f64; 3],
) -> Result<SecularModes, FieldError> {
    let (_, _, h) = landscape.hessian(p);
    let (vals, vecs) = sym_eigen(h);
    let s = landscape.model().species();
    let zq = landscape.charge_number();
    let soft = soft_curvature(landscape);
    for k in 0..3 {
        if vals[k] < -soft {
            return Err(FieldError::Saddle {
                site: site.label.clone(),
                direction: vecs[k],
                eigenvalue: vals[k] / zq,
            });
        }
    }
    // Site frame in label order (T, R, Z).
    let (s_az, c_az) = p[1].atan2(p[0]).sin_cos();
    let frame = [[-s_az, c_az, 0.0], [c_az, s_az, 0.0], [0.0, 0.0, 1.0]];
    let perms = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let best = perms
        .iter()
        .max_by(|a, b| {
            let score = |perm: &[usize; 3]| {
                (0..3)
                    .map(|l| dot3(vecs[perm[l]], frame[l]).abs())
                    .sum::<f64>()
            };
            score(a).partial_cmp(&score(b)).unwrap()
        })
        .unwrap();
    let mut axes = [[0.0; 3]; 3];
    let mut curvatures = [0.0; 3];
    let mut omegas = [0.0; 3];
    for l in 0..3 {
        let k = best[l];
        let mut v = vecs[k];
        if dot3(v, frame[l]) < 0.0 {
            v = [-v[0], -v[1], -v[2]];
        }
        axes[l] = v;
        curvatures[l] = vals[k] / zq;
        let w2 = curvatures[l] * s.charge / s.mass;
        let w = w2.max(0.0).sqrt();
        omegas[l] = if w < TWO_PI * SOFT_MODE_HZ { 0.0 } else { w };
    }
    let radial = axes[1];
    let rotation_angle = dot3(radial, frame[2]).atan2(dot3(radial, frame[1]));
    Ok(SecularModes {
        site: site.label.clone(),
        position: p,
        omega_t: omegas[0],
        omega_r: omegas[1],
        omega_z: omegas[2],
        axes,
        curvatures,
        rotation_angle,
    })
}

/// Secular modes of a single ion near `site` under rf plus `volts`.
pub fn secular_modes(
    model: &TrapModel<f64>,
    volts: &VoltageSet,
    site: &RingSite<f64>,
) -> Result<SecularModes, FieldError> {
    let landscape = Landscape::new(model, volts)?;
    secular_modes_in(&landscape, site)
}
