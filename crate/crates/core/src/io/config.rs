//! Run configuration (TOML). Relative paths are resolved against the
//! directory of the configuration file.
//!
//! ```toml
//! seed = 7
//! out = "out"
//! sites = "g00..g19,g25..g43"
//! stray = "stray.toml"          # or an inline [stray] table
//!
//! [measurement]
//! noise = false
//!
//! [crystal]
//! n = 400
//! ```

use super::layout::{ParamsSpec, SpeciesSpec};
use super::stray::StraySpec;
use super::IoError;
use crate::compensation::CompensationOptions;
use crate::constants::MICRO;
use crate::metrology::{NoiseModel, DEFAULT_ALPHAS};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Stray specification given as a file path or inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StrayRef {
    Path(PathBuf),
    Inline(StraySpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasurementConfig {
    pub alphas: Vec<f64>,
    pub noise: bool,
    pub sigma_x_um: f64,
    pub omega_rel: f64,
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        let n = NoiseModel::default();
        Self {
            alphas: DEFAULT_ALPHAS.to_vec(),
            noise: true,
            sigma_x_um: n.sigma_x / MICRO,
            omega_rel: n.omega_rel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompensationConfig {
    /// Absolute ridge weight; relative default when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub vbound: f64,
    pub radial_weight: f64,
    /// Cancel interpolated fields at the unmeasured sites too.
    pub fill_unmeasured: bool,
}

impl Default for CompensationConfig {
    fn default() -> Self {
        let c = CompensationOptions::default();
        Self {
            lambda: c.lambda,
            vbound: c.bound,
            radial_weight: c.radial_weight,
            fill_unmeasured: c.fill_unmeasured,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrystalConfig {
    pub n: usize,
    /// Apply the loading-hole perturbation when the layout has a hole.
    pub hole: bool,
    /// Sites whose surroundings are left out of the uniformity statistic.
    pub exclude: Vec<String>,
    /// Half-width of each excluded arc, in site pitches.
    pub exclude_pitches: f64,
    pub max_iterations: usize,
}

impl Default for CrystalConfig {
    fn default() -> Self {
        Self {
            n: 400,
            hole: true,
            exclude: vec!["g00".into()],
            exclude_pitches: 1.0,
            max_iterations: crate::crystal::SolverOptions::default().max_iterations,
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_sites() -> String {
    "g00..g19,g25..g43".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Layout file; the generated default (or `params`) when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ParamsSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rf_volts: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rf_mhz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub species: Option<SpeciesSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stray: Option<StrayRef>,
    #[serde(default = "default_sites")]
    pub sites: String,
    #[serde(default)]
    pub measurement: MeasurementConfig,
    #[serde(default)]
    pub compensation: CompensationConfig,
    #[serde(default)]
    pub crystal: CrystalConfig,
    /// Directory that relative paths refer to.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: default_out(),
            layout: None,
            params: None,
            rf_volts: None,
            rf_mhz: None,
            species: None,
            stray: None,
            sites: default_sites(),
            measurement: MeasurementConfig::default(),
            compensation: CompensationConfig::default(),
            crystal: CrystalConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str, base_dir: &Path) -> Result<Self, IoError> {
        let mut c: Self = toml::from_str(text).map_err(|e| IoError::format(origin, e))?;
        c.base_dir = base_dir.to_path_buf();
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&super::read_text(path)?, &path.display().to_string(), &base)
    }

    /// Canonical text of the settings (comments and layout of the original
    /// file do not survive).
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.out)
    }

    pub fn layout_path(&self) -> Option<PathBuf> {
        self.layout.as_deref().map(|p| self.resolve(p))
    }

    pub fn stray_path(&self) -> Option<PathBuf> {
        match &self.stray {
            Some(StrayRef::Path(p)) => Some(self.resolve(p)),
            _ => None,
        }
    }

    pub fn site_list(&self) -> Result<Vec<String>, IoError> {
        super::parse_site_list(&self.sites)
    }

    pub fn noise(&self) -> NoiseModel {
        if self.measurement.noise {
            NoiseModel {
                sigma_x: self.measurement.sigma_x_um * MICRO,
                omega_rel: self.measurement.omega_rel,
                seed: self.seed,
            }
        } else {
            NoiseModel {
                seed: self.seed,
                ..NoiseModel::off()
            }
        }
    }

    pub fn compensation_options(&self) -> CompensationOptions {
        CompensationOptions {
            lambda: self.compensation.lambda,
            bound: self.compensation.vbound,
            radial_weight: self.compensation.radial_weight,
            fill_unmeasured: self.compensation.fill_unmeasured,
        }
    }

    /// Checks every setting and input path without computing anything.
    pub fn validate(&self) -> Result<(), IoError> {
        let bad =
            |field: &str, msg: String| IoError::format(format!("config field '{field}'"), msg);
        let must_be_file = |field: &str, p: PathBuf| {
            if p.is_file() {
                Ok(())
            } else {
                Err(bad(
                    field,
                    format!("{} is not a readable file", p.display()),
                ))
            }
        };
        if let Some(p) = self.layout_path() {
            must_be_file("layout", p)?;
            if self.params.is_some() {
                return Err(bad(
                    "params",
                    "cannot be combined with a layout file".into(),
                ));
            }
        }
        if let Some(p) = self.stray_path() {
            must_be_file("stray", p)?;
        }
        let out = self.out_dir();
        if out.exists() && !out.is_dir() {
            return Err(bad(
                "out",
                format!("{} exists and is not a directory", out.display()),
            ));
        }
        self.site_list().map_err(|e| bad("sites", e.to_string()))?;
        for (f, v) in [("rf_volts", self.rf_volts), ("rf_mhz", self.rf_mhz)] {
            if let Some(v) = v {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(bad(f, format!("must be positive, got {v}")));
                }
            }
        }
        let m = &self.measurement;
        if m.alphas.len() < 2 || m.alphas.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(bad(
                "measurement.alphas",
                "need at least two positive scale factors".into(),
            ));
        }
        if !(m.sigma_x_um >= 0.0) || !(m.omega_rel >= 0.0) {
            return Err(bad(
                "measurement",
                "noise levels must be non-negative".into(),
            ));
        }
        let c = &self.compensation;
        if !(c.vbound > 0.0) {
            return Err(bad(
                "compensation.vbound",
                format!("must be positive, got {}", c.vbound),
            ));
        }
        if let Some(l) = c.lambda {
            if !(l >= 0.0) {
                return Err(bad(
                    "compensation.lambda",
                    format!("must be non-negative, got {l}"),
                ));
            }
        }
        if !(c.radial_weight >= 0.0) {
            return Err(bad(
                "compensation.radial_weight",
                "must be non-negative".into(),
            ));
        }
        let k = &self.crystal;
        if k.n < 2 {
            return Err(bad(
                "crystal.n",
                format!("need at least two ions, got {}", k.n),
            ));
        }
        if !(k.exclude_pitches >= 0.0) {
            return Err(bad(
                "crystal.exclude_pitches",
                "must be non-negative".into(),
            ));
        }
        for l in &k.exclude {
            if crate::geometry::parse_site_label(l).is_none() {
                return Err(bad("crystal.exclude", format!("'{l}' is not a site label")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_inline_stray() {
        let c = RunConfig::from_toml(
            "seed = 3\n[stray]\nseed = 4\n[stray.random]\npeak_V_per_m = 5.0\n",
            "c",
            Path::new("/tmp"),
        )
        .unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.crystal.n, 400);
        assert!(matches!(c.stray, Some(StrayRef::Inline(ref s)) if s.seed == Some(4)));
        c.validate().unwrap();
        let back = RunConfig::from_toml(&c.to_toml(), "c", Path::new("/tmp")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn validation_names_the_field() {
        let c = RunConfig::from_toml("stray = \"missing.toml\"\n", "c", Path::new("/nonexistent"))
            .unwrap();
        let e = c.validate().unwrap_err().to_string();
        assert!(e.contains("'stray'") && e.contains("missing.toml"), "{e}");
        let e = RunConfig::from_toml("[crystal]\nn = 1\n", "c", Path::new("."))
            .unwrap()
            .validate()
            .unwrap_err();
        assert!(e.to_string().contains("crystal.n"));
        let e = RunConfig::from_toml("sede = 1\n", "c.toml", Path::new("."))
            .unwrap_err()
            .to_string();
        assert!(e.contains("c.toml") && e.contains("sede"), "{e}");
    }
}
