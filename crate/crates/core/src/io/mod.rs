//! File formats and the end-to-end pipeline.
//!
//! Text formats only: TOML for layouts, stray specifications and run
//! configurations, CSV with units in the column names for tables, JSON for
//! raw measurement records and the run manifest. Lengths in files are in
//! micrometers, angles in degrees, frequencies in MHz.

mod config;
mod layout;
mod pipeline;
mod stray;
mod tables;

use std::fs;
use std::path::{Path, PathBuf};

pub use config::{CompensationConfig, CrystalConfig, MeasurementConfig, RunConfig, StrayRef};
pub use layout::{
    layout_from_str, layout_to_toml, load_layout, ElectrodeSpec, GapSpec, HoleSpec, LayoutFile,
    ParamsSpec, RfSpec, SiteSpec, SpeciesSpec,
};
pub use pipeline::{
    build_model, build_stray, config_hash, measurements_json, read_manifest, run_pipeline,
    ErrorKind, Manifest, ManifestFile, PipelineError, PipelineSummary, MANIFEST_NAME,
};
pub use stray::{load_stray, stray_from_str, ChargeSpec, HarmonicSpec, RandomSpec, StraySpec};
pub use tables::*;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Malformed input; `origin` names the file (and line or field).
    #[error("{origin}: {message}")]
    Format { origin: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

impl IoError {
    pub(crate) fn format(origin: impl Into<String>, message: impl std::fmt::Display) -> Self {
        Self::Format {
            origin: origin.into(),
            message: message.to_string(),
        }
    }
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let err = |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    };
    let name = path
        .file_name()
        .ok_or_else(|| IoError::Invalid(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(err)?;
    fs::rename(&tmp, path).map_err(err)
}

/// Parses a site list such as `g00..g19,g25..g43`. Ranges are inclusive and
/// may run downward; order is kept and duplicates are rejected.
pub fn parse_site_list(text: &str) -> Result<Vec<String>, IoError> {
    let bad = |m: String| IoError::format("site list", m);
    let label = |s: &str| {
        crate::geometry::parse_site_label(s.trim())
            .ok_or_else(|| bad(format!("'{}' is not a site label like g07", s.trim())))
    };
    let mut out: Vec<String> = Vec::new();
    for part in text.split(',').filter(|p| !p.trim().is_empty()) {
        let idx: Vec<usize> = match part.split_once("..") {
            Some((a, b)) => {
                let (a, b) = (label(a)?, label(b)?);
                if a <= b {
                    (a..=b).collect()
                } else {
                    (b..=a).rev().collect()
                }
            }
            None => vec![label(part)?],
        };
        for i in idx {
            let l = crate::geometry::site_label(i);
            if out.contains(&l) {
                return Err(bad(format!("{l} listed twice")));
            }
            out.push(l);
        }
    }
    if out.is_empty() {
        return Err(bad("empty".into()));
    }
    Ok(out)
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn site_ranges() {
        let s = parse_site_list("g00..g19,g25..g43").unwrap();
        assert_eq!(s.len(), 39);
        assert_eq!(s[19], "g19");
        assert_eq!(s[20], "g25");
        assert_eq!(
            parse_site_list("g03..g01, g07").unwrap(),
            ["g03", "g02", "g01", "g07"]
        );
        assert!(parse_site_list("g00..g02,g01").is_err());
        assert!(parse_site_list("x1").is_err());
        assert!(parse_site_list("").is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
