use super::{
    response_matrix, solve_compensation_in, suppression_report, CompensationError,
    CompensationOptions, CompensationPlan, SuppressionReport,
};
use crate::fields::VoltageSet;
use crate::geometry::TrapModel;
use crate::metrology::{measure_sites, FieldEstimate, NoiseModel, SiteMeasurement, DEFAULT_ALPHAS};
use crate::stray::StrayFieldModel;

#[derive(Debug, Clone, PartialEq)]
pub struct LoopOptions {
    pub sites: Vec<String>,
    pub alphas: Vec<f64>,
    /// Noise of the first measurement; the second uses `seed + 1`.
    pub noise: NoiseModel,
    pub compensation: CompensationOptions,
}

impl Default for LoopOptions {
    fn default() -> Self {
        Self {
            sites: super::default_sites(),
            alphas: DEFAULT_ALPHAS.to_vec(),
            noise: NoiseModel::default(),
            compensation: CompensationOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopOutcome {
    pub before: Vec<SiteMeasurement>,
    pub plan: CompensationPlan,
    pub after: Vec<SiteMeasurement>,
    pub report: SuppressionReport,
}

fn estimates(m: &[SiteMeasurement]) -> Vec<(String, Option<FieldEstimate>)> {
    m.iter()
        .map(|s| (s.site.clone(), s.result.as_ref().ok().map(|r| r.1)))
        .collect()
}

/// Measure, solve, apply the voltage change on top of `base`, re-measure.
/// Sites whose first measurement fails are left out of the solve.
pub fn closed_loop(
    model: &TrapModel<f64>,
    base: &VoltageSet,
    stray: Option<&StrayFieldModel>,
    opts: &LoopOptions,
) -> Result<LoopOutcome, CompensationError> {
    let before = measure_sites(model, base, stray, &opts.sites, &opts.alphas, &opts.noise);
    let (used, measured): (Vec<String>, Vec<FieldEstimate>) = estimates(&before)
        .into_iter()
        .filter_map(|(s, e)| e.map(|e| (s, e)))
        .unzip();
    if used.is_empty() {
        return Err(CompensationError::Invalid(
            "every site measurement failed".into(),
        ));
    }
    let response = response_matrix(model, &used, &model.drivable_ids())?;
    let plan = solve_compensation_in(model, &response, &measured, &opts.compensation)?;
    let noise = NoiseModel {
        seed: opts.noise.seed.wrapping_add(1),
        ..opts.noise
    };
    let after = measure_sites(
        model,
        &base.add(&plan.delta_volts),
        stray,
        &opts.sites,
        &opts.alphas,
        &noise,
    );
    let report = suppression_report(&estimates(&before), &estimates(&after))?;
    Ok(LoopOutcome {
        before,
        plan,
        after,
        report,
    })
}
