use super::{Boundary, FieldError};
use crate::fields::pseudo::pseudo_scale;
use crate::geometry::{RingSite, TrapModel};
use crate::scalar::dot3;

/// Pseudopotential minimum in one azimuthal half-plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingPoint {
    pub azimuth: f64,
    pub radius: f64,
    pub height: f64,
    /// eV.
    pub pseudopotential: f64,
    /// Norm of the in-plane pseudopotential gradient divided by the charge
    /// number, V/m.
    pub gradient_norm: f64,
}

impl RingPoint {
    pub fn position(&self) -> [f64; 3] {
        let (s, c) = self.azimuth.sin_cos();
        [self.radius * c, self.radius * s, self.height]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimumRing {
    pub points: Vec<RingPoint>,
    pub mean_radius: f64,
    pub mean_height: f64,
}

const MAX_ITER: usize = 100;
const STEP_TOL: f64 = 1e-12;
const GRADIENT_TOL: f64 = 1e-3;

/// Minimises the pseudopotential over (r, z) in the half-plane at `azimuth`
/// by damped Gauss-Newton on the rf field vector.
pub(crate) fn minimize_half_plane(
    model: &TrapModel<f64>,
    rf: &Boundary<f64>,
    azimuth: f64,
    start: (f64, f64),
) -> Result<RingPoint, FieldError> {
    let fail = |reason: String| FieldError::NoConvergence {
        azimuth_deg: azimuth.to_degrees(),
        reason,
    };
    let (s, c) = azimuth.sin_cos();
    let r_hat = [c, s, 0.0];
    let at = |r: f64, z: f64| [r * c, r * s, z];
    let field = |r: f64, z: f64| {
        let (_, g, h) = rf.hessian(at(r, z));
        // E = -grad, dE/dr = -H r_hat, dE/dz = -H z_hat.
        let e = [-g[0], -g[1], -g[2]];
        let mut er = [0.0; 3];
        let mut ez = [0.0; 3];
        for i in 0..3 {
            er[i] = -dot3(h[i], r_hat);
            ez[i] = -h[i][2];
        }
        (e, er, ez)
    };
    let (mut r, mut z) = start;
    let mut converged = false;
    for _ in 0..MAX_ITER {
        let (e, er, ez) = field(r, z);
        let f0 = dot3(e, e);
        let a = [[dot3(er, er), dot3(er, ez)], [dot3(er, ez), dot3(ez, ez)]];
        let b = [-dot3(er, e), -dot3(ez, e)];
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        if !(det.abs() > 0.0) || !det.is_finite() {
            return Err(fail("singular Gauss-Newton system".into()));
        }
        let mut dr = (b[0] * a[1][1] - b[1] * a[0][1]) / det;
        let mut dz = (a[0][0] * b[1] - a[1][0] * b[0]) / det;
        // Keep steps small relative to the height so the iterate stays above
        // the plane.
        let cap = 0.25 * z;
        let len = dr.hypot(dz);
        if len > cap {
            dr *= cap / len;
            dz *= cap / len;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let (nr, nz) = (r + t * dr, z + t * dz);
            if nz > 0.0 && nr > 0.0 {
                let ge = rf.gradient(at(nr, nz));
                if dot3(ge, ge) <= f0 {
                    r = nr;
                    z = nz;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        let step = t * dr.hypot(dz);
        if !accepted || step < STEP_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(fail(format!("no convergence after {MAX_ITER} iterations")));
    }
    let (e, er, ez) = field(r, z);
    let scale = pseudo_scale(model);
    let grad = [2.0 * scale * dot3(er, e), 2.0 * scale * dot3(ez, e)];
    let gradient_norm = grad[0].hypot(grad[1]) / model.species().charge_number().abs();
    if !(gradient_norm < GRADIENT_TOL) {
        return Err(fail(format!(
            "gradient {gradient_norm:.3e} V/m above tolerance"
        )));
    }
    Ok(RingPoint {
        azimuth,
        radius: r,
        height: z,
        pseudopotential: scale * dot3(e, e),
        gradient_norm,
    })
}

fn rf_boundary(model: &TrapModel<f64>) -> Result<Boundary<f64>, FieldError> {
    let amp = model.rf_drive().amplitude;
    if !(amp > 0.0) || model.rf_indices().next().is_none() {
        return Err(FieldError::NoRf);
    }
    Ok(Boundary::combine(
        model.rf_indices().map(|i| (model.boundary(i), amp)),
    ))
}

fn start_point(model: &TrapModel<f64>) -> (f64, f64) {
    model
        .sites()
        .first()
        .map(|s| (s.radius(), s.height()))
        .unwrap_or((625e-6, 90e-6))
}

/// Pseudopotential minimum at `n_azimuths` equally spaced azimuths starting
/// at 0.
pub fn find_minimum_ring(
    model: &TrapModel<f64>,
    n_azimuths: usize,
) -> Result<MinimumRing, FieldError> {
    let rf = rf_boundary(model)?;
    let start = start_point(model);
    let points = (0..n_azimuths.max(1))
        .map(|k| {
            let az = std::f64::consts::TAU * k as f64 / n_azimuths.max(1) as f64;
            minimize_half_plane(model, &rf, az, start)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let n = points.len() as f64;
    Ok(MinimumRing {
        mean_radius: points.iter().map(|p| p.radius).sum::<f64>() / n,
        mean_height: points.iter().map(|p| p.height).sum::<f64>() / n,
        points,
    })
}

/// Copy of the model with every site moved onto the pseudopotential minimum
/// at its azimuth.
pub fn locate_sites(model: &TrapModel<f64>) -> Result<TrapModel<f64>, FieldError> {
    let rf = rf_boundary(model)?;
    let start = start_point(model);
    let sites = model
        .sites()
        .iter()
        .map(|s| {
            let p = minimize_half_plane(model, &rf, s.azimuth, start)?;
            Ok(RingSite::new(s.index, s.azimuth, p.position()))
        })
        .collect::<Result<Vec<_>, FieldError>>()?;
    Ok(model.with_sites(sites))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::rf_pseudopotential;
    use crate::geometry::{build_ring_layout, RfDrive, RingLayoutParams};

    #[test]
    fn zero_rf_is_rejected() {
        let m = build_ring_layout(&RingLayoutParams::default()).unwrap();
        let d = m.rf_drive();
        let m = m.with_rf_drive(RfDrive::new(0.0, d.omega).unwrap());
        assert!(matches!(find_minimum_ring(&m, 4), Err(FieldError::NoRf)));
    }

    #[test]
    fn minimum_is_far_below_surface_value() {
        let m = build_ring_layout(&RingLayoutParams::default()).unwrap();
        let ring = find_minimum_ring(&m, 1).unwrap();
        let p = ring.points[0];
        let at_min = rf_pseudopotential(&m, p.position()).unwrap();
        // Directly below, just above the electrode plane.
        let below = rf_pseudopotential(&m, [p.radius, 0.0, 1e-6]).unwrap();
        assert!(at_min < 1e-3 * below, "{at_min} vs {below}");
    }
}
