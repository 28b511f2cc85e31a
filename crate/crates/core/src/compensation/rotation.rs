use super::{bounded_ridge, CompensationError};
use crate::fields::{check_point, secular_modes, Landscape, VoltageSet};
use crate::geometry::{RingSite, TrapModel};
use crate::scalar::dot3;
use nalgebra::{DMatrix, DVector};

/// (omega_R^2 - omega_Z^2) over their mean for secular frequencies of
/// 2.12 MHz (R) and 2.17 MHz (Z).
pub const PAPER_SPLIT_RATIO: f64 =
    (2.12 * 2.12 - 2.17 * 2.17) / (0.5 * (2.12 * 2.12 + 2.17 * 2.17));

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationOptions {
    /// Largest allowed control voltage, V.
    pub bound: f64,
    /// Requested R-Z curvature splitting over the mean R-Z curvature. `None`
    /// at zero angle leaves the rf splitting alone (the control curvature is
    /// shared equally by R and Z); at other angles it means
    /// [`PAPER_SPLIT_RATIO`].
    pub split_ratio: Option<f64>,
    /// Allowed angle error, rad.
    pub angle_tolerance: f64,
    /// Allowed relative error of omega_T.
    pub omega_tolerance: f64,
    /// Also cancel the cubic and quartic terms of the potential along the
    /// ring, widening the harmonic range of the tangential well.
    pub flatten: bool,
}

impl Default for RotationOptions {
    fn default() -> Self {
        Self {
            bound: 10.0,
            split_ratio: None,
            angle_tolerance: 1f64.to_radians(),
            omega_tolerance: 0.02,
            flatten: false,
        }
    }
}

/// Control voltages rotating the radial principal axis at `site` by
/// `angle` toward Z and setting the tangential frequency to `omega_t`,
/// starting from zero volts.
pub fn find_rotation_voltages(
    model: &TrapModel<f64>,
    site: &RingSite<f64>,
    angle: f64,
    omega_t: f64,
) -> Result<VoltageSet, CompensationError> {
    find_rotation_voltages_with(
        model,
        &VoltageSet::new(),
        site,
        angle,
        omega_t,
        &RotationOptions::default(),
    )
}

fn to_frame(frame: &[[f64; 3]; 3], h: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            out[a][b] = (0..3).map(|i| frame[a][i] * dot3(h[i], frame[b])).sum();
        }
    }
    out
}

/// As [`find_rotation_voltages`], adding the smallest-norm change to
/// `base`. Returns the full voltage set.
pub fn find_rotation_voltages_with(
    model: &TrapModel<f64>,
    base: &VoltageSet,
    site: &RingSite<f64>,
    angle: f64,
    omega_t: f64,
    opts: &RotationOptions,
) -> Result<VoltageSet, CompensationError> {
    if !angle.is_finite() || !(omega_t >= 0.0) || !(opts.bound > 0.0) {
        return Err(CompensationError::Invalid(
            "angle, frequency and bound must be finite and non-negative".into(),
        ));
    }
    let p = site.position;
    check_point(p)?;
    let s = model.species();
    let landscape = Landscape::new(model, base)?;
    let zq = landscape.charge_number();
    let (_, g0, h0) = landscape.hessian(p);
    // Site frame rows in (T, R, Z) order.
    let frame = [site.t_hat(), site.r_hat(), site.z_hat()];
    let k = to_frame(&frame, &h0.map(|r| r.map(|v| v / zq)));
    let g = frame.map(|f| dot3(f, g0) / zq);

    let ids = model.drivable_ids();
    let unit: Vec<([f64; 3], [[f64; 3]; 3])> = ids
        .iter()
        .map(|id| {
            let (_, gu, hu) = model
                .boundary(model.electrode_index(id).unwrap())
                .hessian(p);
            (frame.map(|f| dot3(f, gu)), to_frame(&frame, &hu))
        })
        .collect();

    let rho = match opts.split_ratio {
        Some(r) => Some(r),
        None if angle == 0.0 => None,
        None => Some(PAPER_SPLIT_RATIO),
    };
    let (c2, s2) = ((2.0 * angle).cos(), (2.0 * angle).sin());
    // Gradient rows are scaled by the site height to curvature units.
    let len = p[2];
    type Row = Box<dyn Fn(&[f64; 3], &[[f64; 3]; 3]) -> f64>;
    let mut rows: Vec<(Row, f64)> = Vec::new();
    for a in 0..3 {
        rows.push((Box::new(move |gu, _| gu[a] / len), -g[a] / len));
    }
    let target_tt = s.mass * omega_t * omega_t / s.charge;
    rows.push((Box::new(|_, hu| hu[0][0]), target_tt - k[0][0]));
    rows.push((Box::new(|_, hu| hu[0][1]), -k[0][1]));
    rows.push((Box::new(|_, hu| hu[0][2]), -k[0][2]));
    match rho {
        Some(rho) => {
            let hs = 0.5 * rho;
            rows.push((
                Box::new(move |_, hu| hu[1][1] - hu[2][2] - hs * c2 * (hu[1][1] + hu[2][2])),
                -(k[1][1] - k[2][2] - hs * c2 * (k[1][1] + k[2][2])),
            ));
            rows.push((
                Box::new(move |_, hu| 2.0 * hu[1][2] - hs * s2 * (hu[1][1] + hu[2][2])),
                -(2.0 * k[1][2] - hs * s2 * (k[1][1] + k[2][2])),
            ));
        }
        None => {
            rows.push((Box::new(|_, hu| hu[1][1] - hu[2][2]), 0.0));
            rows.push((Box::new(|_, hu| 2.0 * hu[1][2]), -2.0 * k[1][2]));
        }
    }
    let mut a = DMatrix::from_fn(rows.len(), ids.len(), |r, c| {
        (rows[r].0)(&unit[c].0, &unit[c].1)
    });
    let mut b = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    if opts.flatten {
        // Arc-length derivatives of the tangential curvature by central
        // differences, scaled to curvature units.
        let r0 = site.radius();
        let ds = 0.05 * len;
        let tt_at = |sgn: f64, f: &dyn Fn([f64; 3]) -> [[f64; 3]; 3]| -> f64 {
            let (sn, cs) = (site.azimuth + sgn * ds / r0).sin_cos();
            let q = [r0 * cs, r0 * sn, p[2]];
            let t = [-sn, cs, 0.0];
            let h = f(q);
            (0..3).map(|i| t[i] * dot3(h[i], t)).sum()
        };
        let derivs = |f: &dyn Fn([f64; 3]) -> [[f64; 3]; 3]| -> (f64, f64) {
            let (m, z, pl) = (tt_at(-1.0, f), tt_at(0.0, f), tt_at(1.0, f));
            (
                (pl - m) / (2.0 * ds) * len,
                (pl - 2.0 * z + m) / (ds * ds) * len * len,
            )
        };
        let base_d = derivs(&|q| landscape.hessian(q).2.map(|r| r.map(|v| v / zq)));
        let unit_d: Vec<(f64, f64)> = ids
            .iter()
            .map(|id| {
                let bd = model.boundary(model.electrode_index(id).unwrap());
                derivs(&|q| bd.hessian(q).2)
            })
            .collect();
        let n0 = a.nrows();
        a = a.insert_rows(n0, 2, 0.0);
        b = b.insert_rows(n0, 2, 0.0);
        for (c, d) in unit_d.iter().enumerate() {
            a[(n0, c)] = d.0;
            a[(n0 + 1, c)] = d.1;
        }
        b[n0] = -base_d.0;
        b[n0 + 1] = -base_d.1;
    }
    let base_v = DVector::from_iterator(
        ids.len(),
        ids.iter().map(|id| base.get(id) - base.reference()),
    );

    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let dv = svd
        .solve(&b, 1e-12 * smax)
        .map_err(|e| CompensationError::Invalid(e.to_string()))?;
    let total = &base_v + &dv;
    let build = |v: &DVector<f64>| {
        let mut out = base.clone();
        for (id, x) in ids.iter().zip(v.iter()) {
            out.set(id.clone(), base.reference() + x);
        }
        out
    };
    let describe = |volts: &VoltageSet| match secular_modes(model, volts, site) {
        Ok(m) => format!(
            "angle {:.3} deg, omega_T 2pi x {:.4} MHz",
            m.rotation_angle.to_degrees(),
            m.omega_t / crate::constants::TWO_PI / 1e6
        ),
        Err(e) => format!("no stable well ({e})"),
    };
    if total.amax() > opts.bound {
        // Best achievable within the box, for the error report.
        let rhs = -(&a * &base_v + &b);
        let best = build(&bounded_ridge(&a, &rhs, 0.0, opts.bound, &total));
        return Err(CompensationError::Unreachable(format!(
            "needs {:.3} V against a bound of {} V; best within bounds: {}",
            total.amax(),
            opts.bound,
            describe(&best)
        )));
    }
    let volts = build(&total);
    let modes = secular_modes(model, &volts, site)
        .map_err(|e| CompensationError::Unreachable(format!("{e}")))?;
    let rel = if omega_t > 0.0 {
        (modes.omega_t - omega_t).abs() / omega_t
    } else {
        modes.omega_t / crate::constants::TWO_PI / crate::fields::SOFT_MODE_HZ
    };
    let (cr, cz) = (modes.curvatures[1], modes.curvatures[2]);
    let split = (cr - cz).abs() / (0.5 * (cr + cz).abs()).max(f64::MIN_POSITIVE);
    let mut dangle = (modes.rotation_angle - angle).rem_euclid(std::f64::consts::PI);
    if dangle > 0.5 * std::f64::consts::PI {
        dangle = std::f64::consts::PI - dangle;
    }
    if rel > opts.omega_tolerance || (split > 1e-3 && dangle > opts.angle_tolerance) {
        return Err(CompensationError::Unreachable(format!(
            "verification failed: {}",
            describe(&volts)
        )));
    }
    Ok(volts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::locate_sites;
    use crate::geometry::{build_ring_layout, RingLayoutParams};

    fn model() -> TrapModel<f64> {
        locate_sites(&build_ring_layout(&RingLayoutParams::default()).unwrap()).unwrap()
    }

    #[test]
    fn fifteen_degrees_at_290_khz_verifies() {
        let m = model();
        let site = m.site("g05").unwrap();
        let target = 15f64.to_radians();
        let w = crate::constants::TWO_PI * 290e3;
        let v = find_rotation_voltages(&m, site, target, w).unwrap();
        let modes = secular_modes(&m, &v, site).unwrap();
        assert!((modes.rotation_angle - target).abs() < 1f64.to_radians());
        assert!((modes.omega_t / w - 1.0).abs() < 0.02);
        let again =
            find_rotation_voltages_with(&m, &v, site, target, w, &RotationOptions::default())
                .unwrap();
        for id in m.drivable_ids() {
            assert!((again.get(&id) - v.get(&id)).abs() < 1e-6, "{id}");
        }
    }

    #[test]
    fn pure_rf_target_needs_almost_no_voltage() {
        let m = model();
        let site = m.site("g07").unwrap();
        let w = secular_modes(&m, &VoltageSet::new(), site).unwrap().omega_t;
        let v = find_rotation_voltages(&m, site, 0.0, w).unwrap();
        assert!(v.max_abs() < 1e-3, "{}", v.max_abs());
    }

    #[test]
    fn unreachable_target_reports_best_effort() {
        let m = model();
        let site = m.site("g05").unwrap();
        let err =
            find_rotation_voltages(&m, site, 0.0, crate::constants::TWO_PI * 3e6).unwrap_err();
        match err {
            CompensationError::Unreachable(msg) => {
                assert!(msg.contains("best within bounds"), "{msg}")
            }
            other => panic!("{other:?}"),
        }
    }
}
