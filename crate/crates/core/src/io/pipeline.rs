//! Seeded end-to-end run: layout, minimum ring, measurement, compensation,
//! re-measurement, crystal and spacing report, then a manifest.

use super::config::{RunConfig, StrayRef};
use super::{hex, layout, tables, write_atomic, IoError};
use crate::compensation::{
    response_matrix, solve_compensation_in, suppression_report, SuppressionReport,
};
use crate::constants::ELEMENTARY_CHARGE;
use crate::crystal::{
    solve_crystal_with, spacing_report, HolePerturbation, SolverOptions, SpacingReport,
    SpacingStats, HOLE_FREQUENCY_HZ,
};
use crate::fields::{find_minimum_ring, locate_sites, VoltageSet};
use crate::geometry::{IonSpecies, RfDrive, TrapModel};
use crate::metrology::{measure_sites, FieldEstimate, NoiseModel, SiteMeasurement};
use crate::stray::StrayFieldModel;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const MANIFEST_NAME: &str = "manifest.json";

/// Azimuth samples of the minimum-ring export.
const RING_SAMPLES: usize = 176;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration or input file.
    Usage,
    /// A solver or physical check failed.
    Numerical,
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("{stage}: {message}")]
pub struct PipelineError {
    pub stage: String,
    pub kind: ErrorKind,
    pub message: String,
}

impl PipelineError {
    pub fn usage(stage: &str, e: impl std::fmt::Display) -> Self {
        Self {
            stage: stage.into(),
            kind: ErrorKind::Usage,
            message: e.to_string(),
        }
    }

    pub fn numerical(stage: &str, e: impl std::fmt::Display) -> Self {
        Self {
            stage: stage.into(),
            kind: ErrorKind::Numerical,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// "ok" or "FAILED".
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config_hash: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    pub files: Vec<ManifestFile>,
}

#[derive(Debug, Clone)]
pub struct PipelineSummary {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    pub report: SuppressionReport,
    pub delta_volts: VoltageSet,
    pub spacing: SpacingReport,
    /// Spacing statistics outside the excluded arcs.
    pub outside_excluded: SpacingStats,
}

/// SHA-256 over the canonical configuration text and the bytes of every
/// file it refers to.
pub fn config_hash(config: &RunConfig) -> Result<String, IoError> {
    let mut h = Sha256::new();
    h.update(config.to_toml().as_bytes());
    for p in [config.layout_path(), config.stray_path()]
        .into_iter()
        .flatten()
    {
        h.update([0u8]);
        h.update(std::fs::read(&p).map_err(|source| IoError::Io {
            path: p.clone(),
            source,
        })?);
    }
    Ok(hex(&h.finalize()))
}

/// Layout from the configuration, with rf and species overrides applied and
/// sites on the pseudopotential minimum.
pub fn build_model(config: &RunConfig) -> Result<TrapModel<f64>, PipelineError> {
    const STAGE: &str = "layout";
    let usage = |e: &dyn std::fmt::Display| PipelineError::usage(STAGE, e);
    let file = match (config.layout_path(), &config.params) {
        (Some(p), _) => {
            let text = super::read_text(&p).map_err(|e| usage(&e))?;
            toml::from_str::<layout::LayoutFile>(&text)
                .map_err(|e| usage(&format!("{}: {e}", p.display())))?
        }
        (None, params) => layout::LayoutFile {
            params: Some(params.clone().unwrap_or_default()),
            ..Default::default()
        },
    };
    let (mut model, explicit) = file.build(STAGE).map_err(|e| usage(&e))?;
    if config.rf_volts.is_some() || config.rf_mhz.is_some() {
        let d = model.rf_drive();
        let amp = config.rf_volts.unwrap_or(d.amplitude);
        let omega = config
            .rf_mhz
            .map_or(d.omega, |f| crate::constants::TWO_PI * f * 1e6);
        model = model.with_rf_drive(RfDrive::new(amp, omega).map_err(|e| usage(&e))?);
    }
    if let Some(s) = &config.species {
        let sp = IonSpecies::new(
            s.mass_u * crate::constants::ATOMIC_MASS_UNIT,
            s.charge_e * ELEMENTARY_CHARGE,
        )
        .map_err(|e| usage(&e))?;
        model = model.with_species(sp);
    }
    let overridden = config.rf_volts.is_some() || config.rf_mhz.is_some();
    if !explicit || overridden {
        model = locate_sites(&model).map_err(|e| PipelineError::numerical(STAGE, e))?;
    }
    Ok(model)
}

/// Stray model from the configuration (`None` when it has none).
pub fn build_stray(
    config: &RunConfig,
    model: &TrapModel<f64>,
) -> Result<Option<StrayFieldModel>, PipelineError> {
    const STAGE: &str = "stray";
    let spec = match &config.stray {
        None => return Ok(None),
        Some(StrayRef::Inline(s)) => (s.clone(), "config [stray]".to_string()),
        Some(StrayRef::Path(_)) => {
            let p = config.stray_path().expect("path variant");
            (
                super::load_stray(&p).map_err(|e| PipelineError::usage(STAGE, e))?,
                p.display().to_string(),
            )
        }
    };
    spec.0
        .build(model, config.seed, &spec.1)
        .map(Some)
        .map_err(|e| PipelineError::usage(STAGE, e))
}

fn estimates(m: &[SiteMeasurement]) -> Vec<(String, Option<FieldEstimate>)> {
    m.iter()
        .map(|s| (s.site.clone(), s.result.as_ref().ok().map(|r| r.1)))
        .collect()
}

#[derive(Serialize)]
struct JsonMeasurement<'a> {
    site: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    record: Option<&'a crate::metrology::MeasurementRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    estimate: Option<&'a FieldEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// Per-site records as pretty JSON.
pub fn measurements_json(m: &[SiteMeasurement]) -> String {
    let rows: Vec<JsonMeasurement> = m
        .iter()
        .map(|s| match &s.result {
            Ok((r, e)) => JsonMeasurement {
                site: &s.site,
                record: Some(r),
                estimate: Some(e),
                error: None,
            },
            Err(e) => JsonMeasurement {
                site: &s.site,
                record: None,
                estimate: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&rows).expect("records serialize");
    text.push('\n');
    text
}

struct Writer {
    dir: PathBuf,
    files: Vec<ManifestFile>,
}

impl Writer {
    fn put(&mut self, stage: &str, name: &str, text: &str) -> Result<(), PipelineError> {
        write_atomic(&self.dir.join(name), text.as_bytes())
            .map_err(|e| PipelineError::usage(stage, e))?;
        self.files.push(ManifestFile {
            name: name.into(),
            sha256: hex(&Sha256::digest(text.as_bytes())),
        });
        Ok(())
    }
}

/// Runs every stage and writes the artifacts into the output directory.
/// On failure the files written so far are kept and the manifest records
/// the failed stage.
pub fn run_pipeline(config: &RunConfig) -> Result<PipelineSummary, PipelineError> {
    config
        .validate()
        .map_err(|e| PipelineError::usage("config", e))?;
    let hash = config_hash(config).map_err(|e| PipelineError::usage("config", e))?;
    let dir = config.out_dir();
    std::fs::create_dir_all(&dir)
        .map_err(|e| PipelineError::usage("config", format!("{}: {e}", dir.display())))?;
    let mut w = Writer {
        dir: dir.clone(),
        files: Vec::new(),
    };
    let result = stages(config, &mut w);
    let mut versions = BTreeMap::new();
    versions.insert(
        "ringtrap".to_string(),
        env!("CARGO_PKG_VERSION").to_string(),
    );
    versions.insert("manifest".to_string(), "1".to_string());
    let manifest = Manifest {
        status: if result.is_ok() { "ok" } else { "FAILED" }.into(),
        failed_stage: result.as_ref().err().map(|e| e.stage.clone()),
        error: result.as_ref().err().map(|e| e.message.clone()),
        config_hash: hash,
        seed: config.seed,
        versions,
        files: w.files.clone(),
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write_atomic(&dir.join(MANIFEST_NAME), text.as_bytes())
        .map_err(|e| PipelineError::usage("manifest", e))?;
    let (report, delta_volts, spacing, outside_excluded) = result?;
    Ok(PipelineSummary {
        out_dir: dir,
        manifest,
        report,
        delta_volts,
        spacing,
        outside_excluded,
    })
}

type StageOutput = (SuppressionReport, VoltageSet, SpacingReport, SpacingStats);

fn stages(config: &RunConfig, w: &mut Writer) -> Result<StageOutput, PipelineError> {
    let model = build_model(config)?;
    w.put("layout", "layout.toml", &super::layout_to_toml(&model))?;

    let ring = find_minimum_ring(&model, RING_SAMPLES)
        .map_err(|e| PipelineError::numerical("minimum_ring", e))?;
    w.put("minimum_ring", "minimum_ring.csv", &tables::ring_csv(&ring))?;

    let stray = build_stray(config, &model)?;
    let sites = config
        .site_list()
        .map_err(|e| PipelineError::usage("measure", e))?;
    for s in &sites {
        if model.site(s).is_none() {
            return Err(PipelineError::usage(
                "measure",
                format!("layout has no site {s}"),
            ));
        }
    }
    let noise = config.noise();
    let alphas = &config.measurement.alphas;
    let before = measure_sites(
        &model,
        &VoltageSet::new(),
        stray.as_ref(),
        &sites,
        alphas,
        &noise,
    );
    w.put("measure", "measurements.json", &measurements_json(&before))?;
    w.put(
        "measure",
        "measurements_before.csv",
        &tables::estimates_csv(&before),
    )?;

    let (used, measured): (Vec<String>, Vec<FieldEstimate>) = estimates(&before)
        .into_iter()
        .filter_map(|(s, e)| e.map(|e| (s, e)))
        .unzip();
    if used.is_empty() {
        return Err(PipelineError::numerical(
            "compensate",
            "every site measurement failed",
        ));
    }
    let response = response_matrix(&model, &used, &model.drivable_ids())
        .map_err(|e| PipelineError::numerical("compensate", e))?;
    let plan = solve_compensation_in(&model, &response, &measured, &config.compensation_options())
        .map_err(|e| PipelineError::numerical("compensate", e))?;
    w.put(
        "compensate",
        "compensation_plan.csv",
        &tables::voltages_csv(&response.electrodes, &plan.delta_volts),
    )?;
    w.put(
        "compensate",
        "response.csv",
        &tables::response_csv(&response),
    )?;
    let residual = plan
        .predicted_residual_all(&model)
        .map_err(|e| PipelineError::numerical("compensate", e))?;
    w.put(
        "compensate",
        "predicted_residual.csv",
        &tables::residual_csv(&residual),
    )?;

    let after_noise = NoiseModel {
        seed: noise.seed.wrapping_add(1),
        ..noise
    };
    let after = measure_sites(
        &model,
        &plan.delta_volts,
        stray.as_ref(),
        &sites,
        alphas,
        &after_noise,
    );
    w.put(
        "remeasure",
        "measurements_after.csv",
        &tables::estimates_csv(&after),
    )?;
    let report = suppression_report(&estimates(&before), &estimates(&after))
        .map_err(|e| PipelineError::numerical("remeasure", e))?;
    w.put(
        "remeasure",
        "suppression.csv",
        &tables::suppression_csv(&report),
    )?;
    w.put(
        "remeasure",
        "suppression_summary.csv",
        &tables::suppression_summary_csv(&report),
    )?;

    let k = &config.crystal;
    let hole = if k.hole && model.loading_hole().is_some() {
        Some(
            HolePerturbation::calibrated(&model, HOLE_FREQUENCY_HZ)
                .map_err(|e| PipelineError::numerical("crystal", e))?,
        )
    } else {
        None
    };
    let opts = SolverOptions {
        max_iterations: k.max_iterations,
        ..SolverOptions::default()
    };
    let crystal = solve_crystal_with(
        &model,
        &plan.delta_volts,
        stray.as_ref(),
        hole,
        k.n,
        config.seed,
        &opts,
    )
    .map_err(|e| PipelineError::numerical("crystal", e))?;
    w.put(
        "crystal",
        "positions.csv",
        &tables::positions_csv(&crystal.positions),
    )?;

    let spacing = spacing_report(&crystal).map_err(|e| PipelineError::numerical("spacing", e))?;
    let outside = spacing
        .stats_excluding_sites(&model, &k.exclude, k.exclude_pitches)
        .map_err(|e| PipelineError::usage("spacing", e))?;
    w.put("spacing", "spacing.csv", &tables::spacing_csv(&spacing))?;
    w.put(
        "spacing",
        "spacing_summary.csv",
        &tables::spacing_summary_csv(&spacing, &[("outside_excluded".to_string(), outside)]),
    )?;
    Ok((report, plan.delta_volts, spacing, outside))
}

/// Reads the manifest of an output directory.
pub fn read_manifest(dir: &Path) -> Result<Manifest, IoError> {
    let p = dir.join(MANIFEST_NAME);
    serde_json::from_str(&super::read_text(&p)?)
        .map_err(|e| IoError::format(p.display().to_string(), e))
}
