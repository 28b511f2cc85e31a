//! Layout files (TOML). Either a `[params]` table for the generated ring
//! layout or explicit `[[electrode]]`, `[[gap]]` and `[[site]]` entries.
//! Lengths in micrometers, angles in degrees.
//!
//! ```toml
//! [rf]
//! amplitude_V = 80.0
//! frequency_MHz = 52.9
//!
//! [params]
//! ring_radius_um = 625.0
//! shorted = ["e22", "e67", "e89"]
//! ```

use super::IoError;
use crate::constants::{ATOMIC_MASS_UNIT, ELEMENTARY_CHARGE, MICRO, TWO_PI};
use crate::geometry::{
    build_ring_layout, Electrode, ElectrodeRole, IonSpecies, LoadingHole, Polygon, RfDrive,
    RingLayoutParams, RingSite, TrapModel,
};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfSpec {
    #[serde(rename = "amplitude_V")]
    pub amplitude_v: f64,
    #[serde(rename = "frequency_MHz")]
    pub frequency_mhz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesSpec {
    /// Ion mass in unified atomic mass units.
    pub mass_u: f64,
    /// Charge in elementary charges.
    pub charge_e: f64,
}

/// Generated-layout parameters; omitted keys take the default layout's
/// values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsSpec {
    pub ring_radius_um: f64,
    pub n_segments: usize,
    pub rf_rail_width_um: f64,
    pub rf_rail_separation_um: f64,
    pub gap_width_um: f64,
    pub loading_hole: bool,
    pub loading_hole_diameter_um: f64,
    pub inner_control_width_um: f64,
    pub outer_control_width_um: f64,
    /// Arc vertices per degree; derived from a 0.1 um chord sagitta when
    /// absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arc_resolution_per_deg: Option<f64>,
    pub shorted: Vec<String>,
}

impl Default for ParamsSpec {
    fn default() -> Self {
        let p = RingLayoutParams::<f64>::default();
        Self {
            ring_radius_um: p.ring_radius / MICRO,
            n_segments: p.n_segments,
            rf_rail_width_um: p.rf_rail_width / MICRO,
            rf_rail_separation_um: p.rf_rail_separation / MICRO,
            gap_width_um: p.gap_width / MICRO,
            loading_hole: p.loading_hole,
            loading_hole_diameter_um: p.loading_hole_diameter / MICRO,
            inner_control_width_um: p.inner_control_width / MICRO,
            outer_control_width_um: p.outer_control_width / MICRO,
            arc_resolution_per_deg: None,
            shorted: p.shorted,
        }
    }
}

impl ParamsSpec {
    pub fn to_params(&self) -> RingLayoutParams<f64> {
        let mut p = RingLayoutParams {
            ring_radius: self.ring_radius_um * MICRO,
            n_segments: self.n_segments,
            rf_rail_width: self.rf_rail_width_um * MICRO,
            rf_rail_separation: self.rf_rail_separation_um * MICRO,
            gap_width: self.gap_width_um * MICRO,
            loading_hole_diameter: self.loading_hole_diameter_um * MICRO,
            loading_hole: self.loading_hole,
            inner_control_width: self.inner_control_width_um * MICRO,
            outer_control_width: self.outer_control_width_um * MICRO,
            shorted: self.shorted.clone(),
            ..RingLayoutParams::default()
        };
        p.arc_resolution = match self.arc_resolution_per_deg {
            Some(r) => r,
            None => p.resolution_for_sagitta(crate::geometry::DEFAULT_SAGITTA),
        };
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectrodeSpec {
    pub id: String,
    pub role: ElectrodeRole,
    #[serde(default)]
    pub shorted: bool,
    /// Covers the plane outside its polygons.
    #[serde(default)]
    pub unbounded: bool,
    pub polygons_um: Vec<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapSpec {
    pub vertices_um: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteSpec {
    pub index: usize,
    pub azimuth_deg: f64,
    pub x_um: f64,
    pub y_um: f64,
    pub z_um: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoleSpec {
    pub x_um: f64,
    pub y_um: f64,
    pub diameter_um: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rf: Option<RfSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub species: Option<SpeciesSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ParamsSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loading_hole: Option<HoleSpec>,
    #[serde(default, rename = "electrode", skip_serializing_if = "Vec::is_empty")]
    pub electrodes: Vec<ElectrodeSpec>,
    #[serde(default, rename = "gap", skip_serializing_if = "Vec::is_empty")]
    pub gaps: Vec<GapSpec>,
    #[serde(default, rename = "site", skip_serializing_if = "Vec::is_empty")]
    pub sites: Vec<SiteSpec>,
}

fn um(p: [f64; 2]) -> [f64; 2] {
    [p[0] / MICRO, p[1] / MICRO]
}

fn polygon(v: &[[f64; 2]], at: &str) -> Result<Polygon<f64>, IoError> {
    Polygon::new(v.iter().map(|p| [p[0] * MICRO, p[1] * MICRO]).collect())
        .map_err(|e| IoError::format(at.to_string(), e))
}

impl LayoutFile {
    /// Explicit description of `model`.
    pub fn from_model(model: &TrapModel<f64>) -> Self {
        let rf = model.rf_drive();
        let s = model.species();
        Self {
            rf: Some(RfSpec {
                amplitude_v: rf.amplitude,
                frequency_mhz: rf.omega / TWO_PI / 1e6,
            }),
            species: Some(SpeciesSpec {
                mass_u: s.mass / ATOMIC_MASS_UNIT,
                charge_e: s.charge / ELEMENTARY_CHARGE,
            }),
            params: None,
            loading_hole: model.loading_hole().map(|h| HoleSpec {
                x_um: h.center[0] / MICRO,
                y_um: h.center[1] / MICRO,
                diameter_um: h.diameter / MICRO,
            }),
            electrodes: model
                .electrodes()
                .iter()
                .map(|e| ElectrodeSpec {
                    id: e.id.clone(),
                    role: e.role,
                    shorted: e.shorted,
                    unbounded: e.unbounded,
                    polygons_um: e
                        .shapes
                        .iter()
                        .map(|p| p.vertices().iter().copied().map(um).collect())
                        .collect(),
                })
                .collect(),
            gaps: model
                .gaps()
                .iter()
                .map(|g| GapSpec {
                    vertices_um: g.vertices().iter().copied().map(um).collect(),
                })
                .collect(),
            sites: model
                .sites()
                .iter()
                .map(|s| SiteSpec {
                    index: s.index,
                    azimuth_deg: s.azimuth.to_degrees(),
                    x_um: s.position[0] / MICRO,
                    y_um: s.position[1] / MICRO,
                    z_um: s.position[2] / MICRO,
                })
                .collect(),
        }
    }

    /// Builds the model. Returns it with a flag telling whether the site
    /// positions were given explicitly (otherwise they are the generator's
    /// estimates and should be refined with `locate_sites`).
    pub fn build(&self, origin: &str) -> Result<(TrapModel<f64>, bool), IoError> {
        let rf = match &self.rf {
            Some(r) => Some(
                RfDrive::new(r.amplitude_v, TWO_PI * r.frequency_mhz * 1e6)
                    .map_err(|e| IoError::format(format!("{origin} [rf]"), e))?,
            ),
            None => None,
        };
        let species = match &self.species {
            Some(s) => Some(
                IonSpecies::new(s.mass_u * ATOMIC_MASS_UNIT, s.charge_e * ELEMENTARY_CHARGE)
                    .map_err(|e| IoError::format(format!("{origin} [species]"), e))?,
            ),
            None => None,
        };
        if let Some(p) = &self.params {
            if !self.electrodes.is_empty() || !self.gaps.is_empty() || self.loading_hole.is_some() {
                return Err(IoError::format(
                    origin,
                    "[params] cannot be combined with explicit electrodes, gaps or loading_hole",
                ));
            }
            let mut params = p.to_params();
            if let Some(rf) = rf {
                params.rf_drive = rf;
            }
            if let Some(s) = species {
                params.species = s;
            }
            let model = build_ring_layout(&params)
                .map_err(|e| IoError::format(format!("{origin} [params]"), e))?;
            return if self.sites.is_empty() {
                Ok((model, false))
            } else {
                let sites = self.site_list();
                Ok((model.with_sites(sites), true))
            };
        }
        if self.electrodes.is_empty() {
            return Err(IoError::format(
                origin,
                "needs either [params] or at least one [[electrode]]",
            ));
        }
        let mut electrodes = Vec::with_capacity(self.electrodes.len());
        for e in &self.electrodes {
            let at = format!("{origin} electrode {}", e.id);
            let shapes = e
                .polygons_um
                .iter()
                .map(|v| polygon(v, &at))
                .collect::<Result<Vec<_>, _>>()?;
            let mut el = Electrode::new(e.id.clone(), e.role, shapes);
            el.shorted = e.shorted;
            el.unbounded = e.unbounded;
            electrodes.push(el);
        }
        let gaps = self
            .gaps
            .iter()
            .enumerate()
            .map(|(i, g)| polygon(&g.vertices_um, &format!("{origin} gap {}", i + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        let hole = self.loading_hole.as_ref().map(|h| LoadingHole {
            center: [h.x_um * MICRO, h.y_um * MICRO],
            diameter: h.diameter_um * MICRO,
        });
        let model = TrapModel::new(
            electrodes,
            gaps,
            rf.unwrap_or_default(),
            species.unwrap_or_default(),
            self.site_list(),
            hole,
        )
        .map_err(|e| IoError::format(origin, e))?;
        Ok((model, true))
    }

    fn site_list(&self) -> Vec<RingSite<f64>> {
        self.sites
            .iter()
            .map(|s| {
                RingSite::new(
                    s.index,
                    s.azimuth_deg.to_radians(),
                    [s.x_um * MICRO, s.y_um * MICRO, s.z_um * MICRO],
                )
            })
            .collect()
    }
}

/// Explicit TOML description of `model` (the `layout export` format).
pub fn layout_to_toml(model: &TrapModel<f64>) -> String {
    toml::to_string(&LayoutFile::from_model(model)).expect("layout serializes")
}

/// Parses a layout file; see [`LayoutFile::build`] for the flag.
pub fn layout_from_str(text: &str, origin: &str) -> Result<(TrapModel<f64>, bool), IoError> {
    let file: LayoutFile = toml::from_str(text).map_err(|e| IoError::format(origin, e))?;
    file.build(origin)
}

pub fn load_layout(path: &Path) -> Result<(TrapModel<f64>, bool), IoError> {
    layout_from_str(&super::read_text(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn export_round_trip() {
        let m = build_ring_layout(&RingLayoutParams::default()).unwrap();
        let text = layout_to_toml(&m);
        let (back, explicit) = layout_from_str(&text, "layout.toml").unwrap();
        assert!(explicit);
        assert_eq!(back.electrodes().len(), m.electrodes().len());
        assert_eq!(back.gaps().len(), m.gaps().len());
        assert_eq!(back.sites().len(), 44);
        let (a, b) = (&m.electrodes()[5], &back.electrodes()[5]);
        assert_eq!(a.id, b.id);
        let close = |x: f64, y: f64| (x - y).abs() <= 2.0 * f64::EPSILON * x.abs().max(y.abs());
        for (p, q) in a.shapes[0].vertices().iter().zip(b.shapes[0].vertices()) {
            assert!(close(p[0], q[0]) && close(p[1], q[1]), "{p:?} {q:?}");
        }
        assert!(back.electrode("e22").unwrap().shorted);
        assert!(close(back.rf_drive().omega, m.rf_drive().omega));
        assert!(close(back.species().mass, m.species().mass));
    }

    #[test]
    fn params_file_and_errors() {
        let (m, explicit) = layout_from_str(
            "[params]\nring_radius_um = 600.0\n[rf]\namplitude_V = 50\nfrequency_MHz = 40\n",
            "l",
        )
        .unwrap();
        assert!(!explicit);
        assert_eq!(m.rf_drive().amplitude, 50.0);
        assert!((m.sites()[0].radius() - 600e-6).abs() < 1e-9);
        let err = layout_from_str("[params]\nring_radius = 600.0\n", "l.toml")
            .unwrap_err()
            .to_string();
        assert!(
            err.contains("l.toml") && err.contains("ring_radius") && err.contains("line 2"),
            "{err}"
        );
        assert!(layout_from_str("", "l").is_err());
    }
}
