//! Tangential response matrix of the control electrodes at the ring sites,
//! ridge-regularized cancellation of measured stray fields, suppression
//! reports, and local well shaping (principal-axis rotation).

mod closed_loop;
mod rotation;

pub use closed_loop::{closed_loop, LoopOptions, LoopOutcome};
pub use rotation::{
    find_rotation_voltages, find_rotation_voltages_with, RotationOptions, PAPER_SPLIT_RATIO,
};

use crate::fields::{FieldError, VoltageSet};
use crate::geometry::{ElectrodeRole, TrapModel};
use crate::metrology::FieldEstimate;
use crate::par::map_indexed;
use crate::scalar::dot3;
use nalgebra::{DMatrix, DVector, SVD};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompensationError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("unknown site {0}")]
    UnknownSite(String),
    #[error("electrode {0} is not a drivable control electrode")]
    NotDrivable(String),
    #[error("{0} measured values for {1} sites")]
    Mismatch(usize, usize),
    #[error("bound of {bound} V cannot be met: electrode {electrode} needs {required:.4} V")]
    Infeasible {
        electrode: String,
        required: f64,
        bound: f64,
    },
    #[error("target not reachable: {0}")]
    Unreachable(String),
    #[error("site lists differ: {0}")]
    SiteMismatch(String),
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// The 39 sites measured by default: g00-g19 and g25-g43.
pub fn default_sites() -> Vec<String> {
    (0..20)
        .chain(25..44)
        .map(crate::geometry::site_label)
        .collect()
}

/// Tangential field per volt, rows = sites, columns = electrodes (V/m/V).
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    pub sites: Vec<String>,
    pub electrodes: Vec<String>,
    pub matrix: DMatrix<f64>,
    /// Radial and vertical field per volt at the same sites.
    pub radial: DMatrix<f64>,
    pub vertical: DMatrix<f64>,
}

impl ResponseMatrix {
    /// Tangential field at each site produced by `volts` (relative to the
    /// reference), V/m.
    pub fn apply(&self, volts: &VoltageSet) -> Vec<f64> {
        let v = DVector::from_iterator(
            self.electrodes.len(),
            self.electrodes
                .iter()
                .map(|id| volts.get(id) - volts.reference()),
        );
        (&self.matrix * v).iter().copied().collect()
    }
}

/// Builds the response matrix. Shorted, rf and ground electrodes are
/// rejected.
pub fn response_matrix(
    model: &TrapModel<f64>,
    sites: &[String],
    electrodes: &[String],
) -> Result<ResponseMatrix, CompensationError> {
    let mut idx = Vec::with_capacity(electrodes.len());
    for id in electrodes {
        let i = model
            .electrode_index(id)
            .ok_or_else(|| CompensationError::Field(FieldError::UnknownElectrode(id.clone())))?;
        let e = &model.electrodes()[i];
        if e.shorted {
            return Err(FieldError::ShortedElectrode(id.clone()).into());
        }
        if e.role != ElectrodeRole::Control {
            return Err(CompensationError::NotDrivable(id.clone()));
        }
        idx.push(i);
    }
    let mut points = Vec::with_capacity(sites.len());
    for s in sites {
        let site = model
            .site(s)
            .ok_or_else(|| CompensationError::UnknownSite(s.clone()))?;
        crate::fields::check_point(site.position)?;
        points.push((site.position, site.frame()));
    }
    let rows = map_indexed(points.len(), |r| {
        let (p, f) = points[r];
        idx.iter()
            .map(|&j| {
                let g = model.boundary(j).gradient(p);
                f.map(|axis| -dot3(g, axis))
            })
            .collect::<Vec<[f64; 3]>>()
    });
    let (m, n) = (sites.len(), electrodes.len());
    Ok(ResponseMatrix {
        sites: sites.to_vec(),
        electrodes: electrodes.to_vec(),
        matrix: DMatrix::from_fn(m, n, |r, c| rows[r][c][1]),
        radial: DMatrix::from_fn(m, n, |r, c| rows[r][c][0]),
        vertical: DMatrix::from_fn(m, n, |r, c| rows[r][c][2]),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompensationOptions {
    /// Ridge weight in (V/m/V)^2; `None` uses `RELATIVE_RIDGE` times the
    /// largest squared singular value.
    pub lambda: Option<f64>,
    /// Per-electrode bound on the voltage change, V.
    pub bound: f64,
    /// Weight on the radial and vertical field change at the sites. Zero
    /// leaves them free.
    pub radial_weight: f64,
    /// Also cancel the field at model sites that were not measured, using
    /// [`fourier_interpolant`] of the measured fields as their targets.
    /// Needs the model; see [`solve_compensation_in`].
    pub fill_unmeasured: bool,
}

pub const RELATIVE_RIDGE: f64 = 1e-6;

impl Default for CompensationOptions {
    fn default() -> Self {
        Self {
            lambda: None,
            bound: 10.0,
            radial_weight: 0.0,
            fill_unmeasured: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompensationPlan {
    pub response: ResponseMatrix,
    pub measured: Vec<FieldEstimate>,
    pub delta_volts: VoltageSet,
    /// `A v + E_meas` at the measured sites, V/m.
    pub predicted_residual: Vec<f64>,
    /// Ridge weight actually used.
    pub lambda: f64,
    pub bound: f64,
}

impl CompensationPlan {
    /// Field of the voltage change at arbitrary sites (for example the
    /// unmeasured ones), V/m.
    pub fn applied_field(
        &self,
        model: &TrapModel<f64>,
        sites: &[String],
    ) -> Result<Vec<f64>, CompensationError> {
        let r = response_matrix(model, sites, &self.response.electrodes)?;
        Ok(r.apply(&self.delta_volts))
    }

    /// Predicted residual at every model site. Measured sites use the
    /// measured field; unmeasured ones use [`fourier_interpolant`] of it.
    pub fn predicted_residual_all(
        &self,
        model: &TrapModel<f64>,
    ) -> Result<Vec<(String, f64, bool)>, CompensationError> {
        let labels: Vec<String> = model.sites().iter().map(|s| s.label.clone()).collect();
        let applied = self.applied_field(model, &labels)?;
        let interp = self.measured_interpolant(model)?;
        Ok(model
            .sites()
            .iter()
            .zip(applied)
            .map(|(s, a)| {
                if let Some(i) = self.response.sites.iter().position(|l| *l == s.label) {
                    (s.label.clone(), self.predicted_residual[i], true)
                } else {
                    (s.label.clone(), a + interp(s.azimuth), false)
                }
            })
            .collect())
    }
}

impl CompensationPlan {
    fn measured_interpolant(
        &self,
        model: &TrapModel<f64>,
    ) -> Result<impl Fn(f64) -> f64, CompensationError> {
        let mut az = Vec::with_capacity(self.measured.len());
        for s in &self.response.sites {
            az.push(
                model
                    .site(s)
                    .ok_or_else(|| CompensationError::UnknownSite(s.clone()))?
                    .azimuth,
            );
        }
        let values: Vec<f64> = self.measured.iter().map(|m| m.e_t).collect();
        Ok(fourier_interpolant(&az, &values, FILL_ORDER))
    }
}

/// Highest harmonic order used to interpolate measured fields.
pub const FILL_ORDER: usize = 5;

/// Least-squares Fourier series in azimuth through `(azimuths, values)`,
/// orders 1 to `max_order` (fewer when there are not enough points). There
/// is no constant term: a static field has no circulation around the ring.
pub fn fourier_interpolant(
    azimuths: &[f64],
    values: &[f64],
    max_order: usize,
) -> impl Fn(f64) -> f64 {
    let k = max_order.min(azimuths.len().saturating_sub(1) / 2);
    let basis =
        move |t: f64| (1..=k).flat_map(move |j| [(j as f64 * t).cos(), (j as f64 * t).sin()]);
    let coef = if k == 0 {
        DVector::zeros(0)
    } else {
        let a = DMatrix::from_row_iterator(
            azimuths.len(),
            2 * k,
            azimuths.iter().flat_map(|&t| basis(t)),
        );
        let b = DVector::from_column_slice(values);
        let qr = a.qr();
        qr.r()
            .solve_upper_triangular(&(qr.q().transpose() * b))
            .unwrap_or_else(|| DVector::zeros(2 * k))
    };
    move |t: f64| basis(t).zip(coef.iter()).map(|(x, c)| x * c).sum()
}

/// Ridge solution `v = argmin |A v + E|^2 + lambda |v|^2` via the SVD.
fn ridge(
    svd: &SVD<f64, nalgebra::Dyn, nalgebra::Dyn>,
    e: &DVector<f64>,
    lambda: f64,
) -> DVector<f64> {
    let u = svd.u.as_ref().expect("u computed");
    let vt = svd.v_t.as_ref().expect("v_t computed");
    let mut v = DVector::zeros(vt.ncols());
    for k in 0..svd.singular_values.len() {
        let s = svd.singular_values[k];
        let denom = s * s + lambda;
        if denom == 0.0 || s == 0.0 {
            continue;
        }
        let c = -s / denom * u.column(k).dot(e);
        v.axpy(c, &vt.row(k).transpose(), 1.0);
    }
    v
}

/// Box-constrained ridge problem by cyclic coordinate descent.
fn bounded_ridge(
    a: &DMatrix<f64>,
    e: &DVector<f64>,
    lambda: f64,
    bound: f64,
    start: &DVector<f64>,
) -> DVector<f64> {
    let mut v = start.map(|x| x.clamp(-bound, bound));
    let mut r = a * &v + e;
    let col_sq: Vec<f64> = (0..a.ncols())
        .map(|j| a.column(j).norm_squared() + lambda)
        .collect();
    for _ in 0..20_000 {
        let mut change = 0.0f64;
        for j in 0..a.ncols() {
            if col_sq[j] == 0.0 {
                continue;
            }
            let g = a.column(j).dot(&r) + lambda * v[j];
            let new = (v[j] - g / col_sq[j]).clamp(-bound, bound);
            let d = new - v[j];
            if d != 0.0 {
                r.axpy(d, &a.column(j).into_owned(), 1.0);
                v[j] = new;
                change = change.max(d.abs());
            }
        }
        if change < 1e-13 * bound {
            break;
        }
    }
    v
}

/// Voltage change cancelling the measured tangential fields, `A v = -E`.
/// `fill_unmeasured` needs the model and is rejected here.
pub fn solve_compensation(
    response: &ResponseMatrix,
    measured: &[FieldEstimate],
    options: &CompensationOptions,
) -> Result<CompensationPlan, CompensationError> {
    if options.fill_unmeasured {
        return Err(CompensationError::Invalid(
            "filling unmeasured sites needs the trap model".into(),
        ));
    }
    solve_rows(response, measured, None, options)
}

/// [`solve_compensation`] with access to the model, so that unmeasured
/// sites can be filled in.
pub fn solve_compensation_in(
    model: &TrapModel<f64>,
    response: &ResponseMatrix,
    measured: &[FieldEstimate],
    options: &CompensationOptions,
) -> Result<CompensationPlan, CompensationError> {
    if !options.fill_unmeasured {
        return solve_rows(response, measured, None, options);
    }
    if measured.len() != response.sites.len() {
        return Err(CompensationError::Mismatch(
            measured.len(),
            response.sites.len(),
        ));
    }
    let missing: Vec<String> = model
        .sites()
        .iter()
        .map(|s| s.label.clone())
        .filter(|l| !response.sites.contains(l))
        .collect();
    if missing.is_empty() {
        return solve_rows(response, measured, None, options);
    }
    let extra = response_matrix(model, &missing, &response.electrodes)?;
    let partial = CompensationPlan {
        response: response.clone(),
        measured: measured.to_vec(),
        delta_volts: VoltageSet::new(),
        predicted_residual: Vec::new(),
        lambda: 0.0,
        bound: options.bound,
    };
    let interp = partial.measured_interpolant(model)?;
    let targets = DVector::from_iterator(
        missing.len(),
        missing
            .iter()
            .map(|l| interp(model.site(l).expect("model site").azimuth)),
    );
    solve_rows(response, measured, Some((&extra.matrix, &targets)), options)
}

fn solve_rows(
    response: &ResponseMatrix,
    measured: &[FieldEstimate],
    extra: Option<(&DMatrix<f64>, &DVector<f64>)>,
    options: &CompensationOptions,
) -> Result<CompensationPlan, CompensationError> {
    let (m, n) = response.matrix.shape();
    if measured.len() != m {
        return Err(CompensationError::Mismatch(measured.len(), m));
    }
    if !(options.bound > 0.0) {
        return Err(CompensationError::Invalid(
            "voltage bound must be positive".into(),
        ));
    }
    if !(options.radial_weight >= 0.0) {
        return Err(CompensationError::Invalid(
            "radial weight must be non-negative".into(),
        ));
    }
    let e = DVector::from_iterator(m, measured.iter().map(|f| f.e_t));
    let (mut a, mut e_all) = if options.radial_weight > 0.0 {
        let w = options.radial_weight;
        let mut a = DMatrix::zeros(3 * m, n);
        a.rows_mut(0, m).copy_from(&response.matrix);
        a.rows_mut(m, m).copy_from(&(&response.radial * w));
        a.rows_mut(2 * m, m).copy_from(&(&response.vertical * w));
        let mut e_all = DVector::zeros(3 * m);
        e_all.rows_mut(0, m).copy_from(&e);
        (a, e_all)
    } else {
        (response.matrix.clone(), e.clone())
    };
    if let Some((rows, targets)) = extra {
        let k = a.nrows();
        a = a.insert_rows(k, rows.nrows(), 0.0);
        a.rows_mut(k, rows.nrows()).copy_from(rows);
        e_all = e_all.insert_rows(k, targets.len(), 0.0);
        e_all.rows_mut(k, targets.len()).copy_from(targets);
    }
    let smax = SVD::new(response.matrix.clone(), false, false)
        .singular_values
        .max();
    let lambda = options.lambda.unwrap_or(RELATIVE_RIDGE * smax * smax);
    if !(lambda >= 0.0) {
        return Err(CompensationError::Invalid(
            "ridge weight must be non-negative".into(),
        ));
    }
    let svd = SVD::new(a.clone(), true, true);
    let mut v = ridge(&svd, &e_all, lambda);
    let worst = (0..n).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()));
    if let Some(w) = worst.filter(|&w| v[w].abs() > options.bound) {
        let free_obj = (&a * &v + &e_all).norm_squared() + lambda * v.norm_squared();
        let bounded = bounded_ridge(&a, &e_all, lambda, options.bound, &v);
        let obj = (&a * &bounded + &e_all).norm_squared() + lambda * bounded.norm_squared();
        let scale = e.norm_squared().max(f64::MIN_POSITIVE);
        if obj - free_obj > 1e-6 * scale {
            return Err(CompensationError::Infeasible {
                electrode: response.electrodes[w].clone(),
                required: v[w],
                bound: options.bound,
            });
        }
        v = bounded;
    }
    let residual = &response.matrix * &v + &e;
    let mut delta = VoltageSet::new();
    for (id, x) in response.electrodes.iter().zip(v.iter()) {
        delta.set(id.clone(), *x);
    }
    Ok(CompensationPlan {
        response: response.clone(),
        measured: measured.to_vec(),
        delta_volts: delta,
        predicted_residual: residual.iter().copied().collect(),
        lambda,
        bound: options.bound,
    })
}

/// Reported when the after-RMS is zero.
pub const RATIO_CAP: f64 = 1e9;

#[derive(Debug, Clone, PartialEq)]
pub struct SuppressionRow {
    pub site: String,
    pub e_before: Option<f64>,
    pub sigma_before: Option<f64>,
    pub e_after: Option<f64>,
    pub sigma_after: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuppressionReport {
    pub rows: Vec<SuppressionRow>,
    /// RMS over sites present both before and after, V/m.
    pub rms_before: f64,
    pub rms_after: f64,
    /// `rms_before / rms_after`, capped at [`RATIO_CAP`].
    pub ratio: f64,
}

/// Before/after comparison over matching site lists; `None` marks a site
/// whose measurement failed.
pub fn suppression_report(
    before: &[(String, Option<FieldEstimate>)],
    after: &[(String, Option<FieldEstimate>)],
) -> Result<SuppressionReport, CompensationError> {
    if before.len() != after.len() || before.iter().zip(after).any(|(a, b)| a.0 != b.0) {
        return Err(CompensationError::SiteMismatch(format!(
            "{} sites before, {} after",
            before.len(),
            after.len()
        )));
    }
    let mut rows = Vec::with_capacity(before.len());
    let (mut sb, mut sa, mut k) = (0.0, 0.0, 0usize);
    for ((site, b), (_, a)) in before.iter().zip(after) {
        if let (Some(b), Some(a)) = (b, a) {
            sb += b.e_t * b.e_t;
            sa += a.e_t * a.e_t;
            k += 1;
        }
        rows.push(SuppressionRow {
            site: site.clone(),
            e_before: b.map(|f| f.e_t),
            sigma_before: b.map(|f| f.sigma),
            e_after: a.map(|f| f.e_t),
            sigma_after: a.map(|f| f.sigma),
        });
    }
    let (rms_before, rms_after) = if k == 0 {
        (0.0, 0.0)
    } else {
        ((sb / k as f64).sqrt(), (sa / k as f64).sqrt())
    };
    let ratio = if rms_after > 0.0 {
        (rms_before / rms_after).min(RATIO_CAP)
    } else if rms_before > 0.0 {
        RATIO_CAP
    } else {
        1.0
    };
    Ok(SuppressionReport {
        rows,
        rms_before,
        rms_after,
        ratio,
    })
}
