//! Virtual tangential-field measurement by voltage scaling, its least-squares
//! fit, and emulated radial probing.

use crate::compensation::{find_rotation_voltages_with, RotationOptions};
use crate::constants::TWO_PI;
use crate::crystal::environment;
use crate::fields::{local_minimum, modes_at, FieldError, Landscape, VoltageSet};
use crate::geometry::{RingSite, TrapModel};
use crate::scalar::dot3;
use crate::stray::StrayFieldModel;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetrologyError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("well at {site} lost at alpha = {alpha}: {reason}")]
    WellLost {
        site: String,
        alpha: f64,
        reason: String,
    },
    #[error("need at least 3 distinct alphas, got {0}")]
    TooFewPoints(usize),
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Default scalings of the well voltages. At alpha = 2 the tangential
/// frequency reaches the rf secular frequency and the axial well keeps only a
/// few microns of anharmonic margin, which a 40 V/m axial stray overcomes.
pub const DEFAULT_ALPHAS: [f64; 5] = [0.5, 0.7, 1.0, 1.25, 1.5];
/// Scalings used for the large-alpha reference position.
pub const REFERENCE_ALPHAS: [f64; 2] = [16.0, 32.0];
/// Tangential frequency of the measurement well at alpha = 1, rad/s.
pub const MEASUREMENT_OMEGA_T: f64 = TWO_PI * 1.0e6;
/// Voltage bound for building the measurement well, V.
pub const MEASUREMENT_BOUND: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Gaussian position noise, m.
    pub sigma_x: f64,
    /// Relative Gaussian noise on omega_T.
    pub omega_rel: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn off() -> Self {
        Self {
            sigma_x: 0.0,
            omega_rel: 0.0,
            seed: 0,
        }
    }

    pub fn is_off(&self) -> bool {
        self.sigma_x == 0.0 && self.omega_rel == 0.0
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            sigma_x: 0.2e-6,
            omega_rel: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub site: String,
    /// Equilibrium at alpha = 1, m.
    pub position: [f64; 3],
    pub alphas: Vec<f64>,
    /// Signed tangential displacements from the large-alpha reference, m.
    pub displacements: Vec<f64>,
    /// Measured tangential frequency at alpha = 1, rad/s.
    pub omega_t_ref: f64,
    /// Ion mass over charge, kg/C.
    pub mass_over_charge: f64,
    pub noise: NoiseModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldEstimate {
    /// V/m.
    pub e_t: f64,
    /// V/m.
    pub sigma: f64,
    /// RMS fit residual, m.
    pub residual: f64,
}

/// Stray field components along R and Z with their probe uncertainties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialProbe {
    pub e_r: f64,
    pub e_z: f64,
    pub sigma_r: f64,
    pub sigma_z: f64,
    pub position: [f64; 3],
}

/// Detection thresholds of the radial probes, V/m.
pub const DEFAULT_THRESHOLDS: (f64, f64) = (1.0, 5.0);

fn check_alphas(alphas: &[f64]) -> Result<(), MetrologyError> {
    if alphas.is_empty() {
        return Err(MetrologyError::Invalid("no alphas".into()));
    }
    if alphas.iter().any(|a| !(a.is_finite() && *a > 0.0))
        || alphas.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(MetrologyError::Invalid(
            "alphas must be positive and strictly increasing".into(),
        ));
    }
    Ok(())
}

fn azimuth(p: [f64; 3]) -> f64 {
    p[1].atan2(p[0])
}

fn wrap(a: f64) -> f64 {
    (a + 0.5 * TWO_PI).rem_euclid(TWO_PI) - 0.5 * TWO_PI
}

/// Energy minimum along the circle of radius `r` at height `z`, by Newton
/// steps in azimuth from `phi`.
fn azimuthal_minimum(
    landscape: &Landscape,
    r: f64,
    z: f64,
    mut phi: f64,
    max_step: f64,
) -> Result<f64, String> {
    for _ in 0..200 {
        let (s, c) = phi.sin_cos();
        let p = [r * c, r * s, z];
        let (_, g, h) = landscape.hessian(p);
        let t = [-s, c, 0.0];
        let rh = [c, s, 0.0];
        let d1 = r * dot3(g, t);
        let d2 = r * r * (0..3).map(|a| t[a] * dot3(h[a], t)).sum::<f64>() - r * dot3(g, rh);
        if !(d2 > 0.0) {
            return Err("no azimuthal confinement".into());
        }
        let step = (-d1 / d2).clamp(-max_step, max_step);
        phi += step;
        if step.abs() < 1e-14 {
            return Ok(phi);
        }
    }
    Err("azimuthal search did not converge".into())
}

/// Scans all of `volts` by each alpha; see [`virtual_displacement_scan_with`].
pub fn virtual_displacement_scan(
    model: &TrapModel<f64>,
    volts: &VoltageSet,
    stray: Option<&StrayFieldModel>,
    site: &RingSite<f64>,
    alphas: &[f64],
    noise: &NoiseModel,
) -> Result<MeasurementRecord, MetrologyError> {
    virtual_displacement_scan_with(model, volts, &VoltageSet::new(), stray, site, alphas, noise)
}

/// Single-ion equilibria under `alpha * well + fixed` for each alpha, as
/// tangential displacements from the alpha -> infinity position.
///
/// The reference is extrapolated from solves at [`REFERENCE_ALPHAS`]
/// restricted to the azimuthal circle through the equilibrium at the
/// largest scan alpha; stiff wells are not radially stable on their own.
pub fn virtual_displacement_scan_with(
    model: &TrapModel<f64>,
    well: &VoltageSet,
    fixed: &VoltageSet,
    stray: Option<&StrayFieldModel>,
    site: &RingSite<f64>,
    alphas: &[f64],
    noise: &NoiseModel,
) -> Result<MeasurementRecord, MetrologyError> {
    check_alphas(alphas)?;
    if !(noise.sigma_x >= 0.0 && noise.omega_rel >= 0.0) {
        return Err(MetrologyError::Invalid(
            "noise levels must be non-negative".into(),
        ));
    }
    let half_pitch = 0.5 * model.site_pitch();
    let lost = |alpha: f64, reason: String| MetrologyError::WellLost {
        site: site.label.clone(),
        alpha,
        reason,
    };
    let build = |alpha: f64| -> Result<Landscape, MetrologyError> {
        environment(model, &well.scale(alpha).add(fixed), stray, None).map_err(|e| match e {
            crate::crystal::CrystalError::Field(f) => MetrologyError::Field(f),
            other => MetrologyError::Invalid(other.to_string()),
        })
    };
    let solve = |alpha: f64, start: [f64; 3]| -> Result<([f64; 3], Landscape), MetrologyError> {
        let l = build(alpha)?;
        if std::env::var("LMTRACE").is_ok() {
            eprintln!("alpha {alpha} start {:?}", start.map(|x| x * 1e6));
        }
        let p = local_minimum(&l, start, &site.label).map_err(|e| lost(alpha, e.to_string()))?;
        if wrap(azimuth(p) - site.azimuth).abs() > 2.0 * half_pitch {
            return Err(lost(alpha, "ion left the site".into()));
        }
        Ok((p, l))
    };

    let mut eq = vec![[0.0; 3]; alphas.len()];
    let mut start = site.position;
    for (k, &a) in alphas.iter().enumerate().rev() {
        let (p, l) = solve(a, start)?;
        modes_at(&l, site, p).map_err(|e| lost(a, e.to_string()))?;
        eq[k] = p;
        start = p;
    }
    let top = eq[alphas.len() - 1];
    let (r_top, z_top) = (top[0].hypot(top[1]), top[2]);
    let mut phi_ref = [0.0; 2];
    let mut phi = azimuth(top);
    for (i, &a) in REFERENCE_ALPHAS.iter().enumerate() {
        let l = build(a)?;
        phi = azimuthal_minimum(&l, r_top, z_top, phi, 0.1 * half_pitch).map_err(|e| lost(a, e))?;
        phi_ref[i] = phi;
    }
    let phi_inf = 2.0 * phi_ref[1] - phi_ref[0];

    let (p1, l1) = match alphas.iter().position(|&a| a == 1.0) {
        Some(k) => (eq[k], build(1.0)?),
        None => solve(1.0, site.position)?,
    };
    let omega_true = modes_at(&l1, site, p1)
        .map_err(|e| lost(1.0, e.to_string()))?
        .omega_t;

    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    rng.set_stream(site.index as u64);
    let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
    let omega_t_ref = omega_true * (1.0 + noise.omega_rel * gauss());
    let displacements = eq
        .iter()
        .map(|p| p[0].hypot(p[1]) * wrap(azimuth(*p) - phi_inf) + noise.sigma_x * gauss())
        .collect();
    let s = model.species();
    Ok(MeasurementRecord {
        site: site.label.clone(),
        position: p1,
        alphas: alphas.to_vec(),
        displacements,
        omega_t_ref,
        mass_over_charge: s.mass / s.charge,
        noise: *noise,
    })
}

/// Weighted least-squares slope of displacement against 1/alpha through the
/// origin, converted to a tangential field with the alpha = 1 frequency.
pub fn fit_tangential_field(record: &MeasurementRecord) -> Result<FieldEstimate, MetrologyError> {
    let n = record.alphas.len();
    if record.displacements.len() != n {
        return Err(MetrologyError::Invalid(
            "alphas and displacements differ in length".into(),
        ));
    }
    let mut distinct = record.alphas.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(MetrologyError::TooFewPoints(distinct.len()));
    }
    if record
        .alphas
        .iter()
        .chain(&record.displacements)
        .any(|v| !v.is_finite())
        || record.alphas.iter().any(|a| *a <= 0.0)
        || !(record.omega_t_ref > 0.0)
    {
        return Err(MetrologyError::Invalid(
            "non-finite or non-positive record entries".into(),
        ));
    }
    // Equal weights: the position noise is the same at every alpha.
    let u: Vec<f64> = record.alphas.iter().map(|a| 1.0 / a).collect();
    let suu: f64 = u.iter().map(|v| v * v).sum();
    let sux: f64 = u
        .iter()
        .zip(&record.displacements)
        .map(|(a, b)| a * b)
        .sum();
    let slope = sux / suu;
    let residual = (u
        .iter()
        .zip(&record.displacements)
        .map(|(a, x)| (x - slope * a).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt();
    let k = record.omega_t_ref * record.omega_t_ref * record.mass_over_charge;
    let e_t = slope * k;
    let sigma_pos = record.noise.sigma_x / suu.sqrt() * k;
    let sigma_omega = 2.0 * record.noise.omega_rel * e_t.abs();
    Ok(FieldEstimate {
        e_t,
        sigma: sigma_pos.hypot(sigma_omega),
        residual,
    })
}

/// Stray field along R and Z at the single-ion equilibrium near `site`.
pub fn probe_radial_components(
    model: &TrapModel<f64>,
    volts: &VoltageSet,
    stray: &StrayFieldModel,
    site: &RingSite<f64>,
    thresholds: (f64, f64),
) -> Result<RadialProbe, MetrologyError> {
    let l = environment(model, volts, Some(stray), None)
        .map_err(|e| MetrologyError::Invalid(e.to_string()))?;
    let p = local_minimum(&l, site.position, &site.label)?;
    let e = stray
        .field(p)
        .map_err(|e| MetrologyError::Invalid(e.to_string()))?;
    let (s, c) = azimuth(p).sin_cos();
    Ok(RadialProbe {
        e_r: e[0] * c + e[1] * s,
        e_z: e[2],
        sigma_r: thresholds.0,
        sigma_z: thresholds.1,
        position: p,
    })
}

/// Local well used for the scans: tangential frequency
/// [`MEASUREMENT_OMEGA_T`], radial axes unrotated.
pub fn measurement_well(
    model: &TrapModel<f64>,
    site: &RingSite<f64>,
) -> Result<VoltageSet, MetrologyError> {
    let opts = RotationOptions {
        bound: MEASUREMENT_BOUND,
        flatten: true,
        ..RotationOptions::default()
    };
    find_rotation_voltages_with(
        model,
        &VoltageSet::new(),
        site,
        0.0,
        MEASUREMENT_OMEGA_T,
        &opts,
    )
    .map_err(|e| MetrologyError::Invalid(format!("no measurement well at {}: {e}", site.label)))
}

/// Outcome of measuring one site.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteMeasurement {
    pub site: String,
    pub result: Result<(MeasurementRecord, FieldEstimate), MetrologyError>,
}

/// Builds a measurement well at each site and scans it on top of `fixed`.
pub fn measure_sites(
    model: &TrapModel<f64>,
    fixed: &VoltageSet,
    stray: Option<&StrayFieldModel>,
    sites: &[String],
    alphas: &[f64],
    noise: &NoiseModel,
) -> Vec<SiteMeasurement> {
    crate::par::map_indexed(sites.len(), |i| {
        let label = &sites[i];
        let result = (|| {
            let site = model
                .site(label)
                .ok_or_else(|| MetrologyError::Invalid(format!("unknown site {label}")))?;
            let well = measurement_well(model, site)?;
            let rec =
                virtual_displacement_scan_with(model, &well, fixed, stray, site, alphas, noise)?;
            let est = fit_tangential_field(&rec)?;
            Ok((rec, est))
        })();
        SiteMeasurement {
            site: label.clone(),
            result,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(e_t: f64, noise: NoiseModel) -> MeasurementRecord {
        let mq = crate::constants::CALCIUM_40_ION_MASS / crate::constants::ELEMENTARY_CHARGE;
        let w = MEASUREMENT_OMEGA_T;
        MeasurementRecord {
            site: "g01".into(),
            position: [0.0; 3],
            alphas: DEFAULT_ALPHAS.to_vec(),
            displacements: DEFAULT_ALPHAS
                .iter()
                .map(|a| e_t / (mq * w * w * a))
                .collect(),
            omega_t_ref: w,
            mass_over_charge: mq,
            noise,
        }
    }

    #[test]
    fn exact_record_is_recovered() {
        let est = fit_tangential_field(&record(50.0, NoiseModel::off())).unwrap();
        assert!((est.e_t - 50.0).abs() < 50.0 * 1e-6);
        assert_eq!(est.sigma, 0.0);
    }

    #[test]
    fn zero_record_has_noise_floor_sigma() {
        let est = fit_tangential_field(&record(0.0, NoiseModel::default())).unwrap();
        assert_eq!(est.e_t, 0.0);
        assert!(est.sigma > 0.0);
    }

    #[test]
    fn too_few_alphas_rejected() {
        let mut r = record(1.0, NoiseModel::off());
        r.alphas = vec![1.0, 1.0, 2.0];
        r.displacements.truncate(3);
        assert_eq!(
            fit_tangential_field(&r),
            Err(MetrologyError::TooFewPoints(2))
        );
    }
}
