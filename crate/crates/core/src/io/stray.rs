//! Stray-field specification files (TOML).
//!
//! ```toml
//! seed = 7
//! [random]
//! peak_V_per_m = 5.0
//!
//! [[charge]]
//! x_um = 625.2
//! y_um = 0.0
//! z_um = 5.0
//! charge_fC = 0.2
//!
//! [[harmonic]]
//! order = 1
//! amp_V_per_m = 20.0
//! phase_deg = 0.0
//! ```
//!
//! The optional `[random]` table draws a seeded random model scaled to the
//! given peak tangential field; explicit charges and harmonics are added on
//! top, unscaled.

use super::IoError;
use crate::constants::MICRO;
use crate::geometry::TrapModel;
use crate::stray::{mean_site_radius, Harmonic, PointCharge, RandomStrayOptions, StrayFieldModel};
use serde::{Deserialize, Serialize};
use std::path::Path;

const FEMTO: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChargeSpec {
    pub x_um: f64,
    pub y_um: f64,
    pub z_um: f64,
    #[serde(rename = "charge_fC")]
    pub charge_fc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarmonicSpec {
    pub order: u32,
    #[serde(rename = "amp_V_per_m")]
    pub amp_v_per_m: f64,
    #[serde(default)]
    pub phase_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSpec {
    #[serde(rename = "peak_V_per_m")]
    pub peak_v_per_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_charges: Option<usize>,
    #[serde(
        default,
        rename = "charge_peak_V_per_m",
        skip_serializing_if = "Option::is_none"
    )]
    pub charge_peak_v_per_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_order: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StraySpec {
    /// Seed of the random part; the run seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Radius where harmonic amplitudes apply; the mean site radius when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_radius_um: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<RandomSpec>,
    #[serde(default, rename = "charge", skip_serializing_if = "Vec::is_empty")]
    pub charges: Vec<ChargeSpec>,
    #[serde(default, rename = "harmonic", skip_serializing_if = "Vec::is_empty")]
    pub harmonics: Vec<HarmonicSpec>,
}

impl StraySpec {
    /// Explicit description of `stray` (no random part).
    pub fn from_model(stray: &StrayFieldModel) -> Self {
        Self {
            seed: Some(stray.seed),
            reference_radius_um: Some(stray.reference_radius / MICRO),
            random: None,
            charges: stray
                .charges
                .iter()
                .map(|c| ChargeSpec {
                    x_um: c.position[0] / MICRO,
                    y_um: c.position[1] / MICRO,
                    z_um: c.position[2] / MICRO,
                    charge_fc: c.charge / FEMTO,
                })
                .collect(),
            harmonics: stray
                .harmonics
                .iter()
                .map(|h| HarmonicSpec {
                    order: h.order,
                    amp_v_per_m: h.amplitude,
                    phase_deg: h.phase.to_degrees(),
                })
                .collect(),
        }
    }

    pub fn build(
        &self,
        model: &TrapModel<f64>,
        run_seed: u64,
        origin: &str,
    ) -> Result<StrayFieldModel, IoError> {
        let seed = self.seed.unwrap_or(run_seed);
        let r0 = self
            .reference_radius_um
            .map_or_else(|| mean_site_radius(model), |r| r * MICRO);
        let bad = |e: crate::stray::StrayError| IoError::format(origin, e);
        if self.random.is_some() && self.reference_radius_um.is_some() {
            return Err(IoError::format(
                origin,
                "reference_radius_um cannot be combined with [random]",
            ));
        }
        let mut base = match &self.random {
            Some(r) => {
                let d = RandomStrayOptions::default();
                let opts = RandomStrayOptions {
                    peak_tangential: r.peak_v_per_m,
                    n_charges: r.n_charges.unwrap_or(d.n_charges),
                    charge_peak_field: r.charge_peak_v_per_m.unwrap_or(d.charge_peak_field),
                    max_order: r.max_order.unwrap_or(d.max_order),
                    ..d
                };
                if !(opts.peak_tangential >= 0.0) {
                    return Err(IoError::format(
                        format!("{origin} [random]"),
                        "peak_V_per_m must be non-negative",
                    ));
                }
                StrayFieldModel::random(model, &opts, seed).map_err(bad)?
            }
            None => StrayFieldModel::empty(),
        };
        base.charges
            .extend(self.charges.iter().map(|c| PointCharge {
                position: [c.x_um * MICRO, c.y_um * MICRO, c.z_um * MICRO],
                charge: c.charge_fc * FEMTO,
            }));
        base.harmonics
            .extend(self.harmonics.iter().map(|h| Harmonic {
                order: h.order,
                amplitude: h.amp_v_per_m,
                phase: h.phase_deg.to_radians(),
            }));
        if self.random.is_none() {
            base.reference_radius = r0;
        }
        StrayFieldModel::new(base.charges, base.harmonics, base.reference_radius, seed).map_err(bad)
    }
}

pub fn stray_from_str(text: &str, origin: &str) -> Result<StraySpec, IoError> {
    toml::from_str(text).map_err(|e| IoError::format(origin, e))
}

pub fn load_stray(path: &Path) -> Result<StraySpec, IoError> {
    stray_from_str(&super::read_text(path)?, &path.display().to_string())
}
