//! Electrode layout of the ring trap: planar polygons in the z = 0 plane,
//! the RF drive, the trapped species and the g-site coordinate frames.

mod layout;
mod polygon;
mod validate;

pub use layout::{build_ring_layout, RingLayoutParams, DEFAULT_SAGITTA};
pub use polygon::{arc_polygon, Polygon};
pub use validate::{validate, ValidationReport, Violation};

use crate::constants::{CALCIUM_40_ION_MASS, ELEMENTARY_CHARGE};
use crate::fields::kernel::Boundary;
use crate::scalar::Real;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon has non-finite coordinates")]
    NonFinite,
    #[error("degenerate radii: r_in = {r_in}, r_out = {r_out}")]
    DegenerateRadii { r_in: f64, r_out: f64 },
    #[error("degenerate angles: theta0 = {theta0}, theta1 = {theta1}")]
    DegenerateAngles { theta0: f64, theta1: f64 },
    #[error("arc resolution must be at least one chord")]
    ZeroResolution,
    #[error("invalid layout parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error(
        "gap of {gap_um} um consumes the electrode pitch ({pitch_um} um) at radius {radius_um} um"
    )]
    GapConsumesElectrode {
        gap_um: f64,
        pitch_um: f64,
        radius_um: f64,
    },
    #[error("duplicate electrode id {0}")]
    DuplicateElectrode(String),
    #[error("unknown electrode {0}")]
    UnknownElectrode(String),
    #[error("invalid rf drive: {0}")]
    InvalidDrive(String),
    #[error("invalid ion species: {0}")]
    InvalidSpecies(String),
    #[error("layout has validation violations: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElectrodeRole {
    Control,
    Rf,
    Ground,
}

/// One conducting region of the trap surface.
///
/// An `unbounded` electrode covers the whole plane outside its polygons
/// (the outer ground plane).
#[derive(Debug, Clone, PartialEq)]
pub struct Electrode<T: Real> {
    pub id: String,
    pub role: ElectrodeRole,
    pub shorted: bool,
    pub unbounded: bool,
    pub shapes: Vec<Polygon<T>>,
}

impl<T: Real> Electrode<T> {
    pub fn new(id: impl Into<String>, role: ElectrodeRole, shapes: Vec<Polygon<T>>) -> Self {
        Self {
            id: id.into(),
            role,
            shorted: false,
            unbounded: false,
            shapes,
        }
    }

    /// Control electrodes that are not shorted can be driven.
    pub fn is_drivable(&self) -> bool {
        self.role == ElectrodeRole::Control && !self.shorted
    }

    pub fn area(&self) -> T {
        self.shapes.iter().fold(T::zero(), |acc, p| acc + p.area())
    }
}

/// RF drive: amplitude in volts and angular frequency in rad/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RfDrive<T: Real> {
    pub amplitude: T,
    pub omega: T,
}

impl<T: Real> RfDrive<T> {
    pub fn new(amplitude: T, omega: T) -> Result<Self, GeometryError> {
        if !(amplitude >= T::zero()) || !amplitude.is_finite() {
            return Err(GeometryError::InvalidDrive(format!(
                "amplitude {amplitude:?}"
            )));
        }
        if !(omega > T::zero()) || !omega.is_finite() {
            return Err(GeometryError::InvalidDrive(format!("omega {omega:?}")));
        }
        Ok(Self { amplitude, omega })
    }
}

impl<T: Real> Default for RfDrive<T> {
    /// 80 V at 2 pi x 52.9 MHz.
    fn default() -> Self {
        Self {
            amplitude: T::lit(80.0),
            omega: T::lit(2.0 * std::f64::consts::PI * 52.9e6),
        }
    }
}

/// Trapped ion species: mass in kg, charge in C.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IonSpecies<T: Real> {
    pub mass: T,
    pub charge: T,
}

impl<T: Real> IonSpecies<T> {
    pub fn new(mass: T, charge: T) -> Result<Self, GeometryError> {
        if !(mass > T::zero()) || !mass.is_finite() {
            return Err(GeometryError::InvalidSpecies(format!("mass {mass:?}")));
        }
        if charge == T::zero() || !charge.is_finite() {
            return Err(GeometryError::InvalidSpecies(format!("charge {charge:?}")));
        }
        Ok(Self { mass, charge })
    }

    /// Singly ionized calcium-40.
    pub fn calcium40() -> Self {
        Self {
            mass: T::lit(CALCIUM_40_ION_MASS),
            charge: T::lit(ELEMENTARY_CHARGE),
        }
    }

    /// Charge in units of the elementary charge.
    pub fn charge_number(&self) -> T {
        self.charge / T::lit(ELEMENTARY_CHARGE)
    }
}

impl<T: Real> Default for IonSpecies<T> {
    fn default() -> Self {
        Self::calcium40()
    }
}

/// A trapping location on a gap bisector, with its local R-T-Z frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RingSite<T: Real> {
    pub label: String,
    pub index: usize,
    pub azimuth: T,
    pub position: [T; 3],
}

impl<T: Real> RingSite<T> {
    pub fn new(index: usize, azimuth: T, position: [T; 3]) -> Self {
        Self {
            label: site_label(index),
            index,
            azimuth,
            position,
        }
    }

    /// Radially outward unit vector.
    pub fn r_hat(&self) -> [T; 3] {
        let (s, c) = self.azimuth.sin_cos();
        [c, s, T::zero()]
    }

    /// Tangential unit vector, counterclockwise positive.
    pub fn t_hat(&self) -> [T; 3] {
        let (s, c) = self.azimuth.sin_cos();
        [-s, c, T::zero()]
    }

    pub fn z_hat(&self) -> [T; 3] {
        [T::zero(), T::zero(), T::one()]
    }

    /// Rows `[R, T, Z]`; `R x T = Z`.
    pub fn frame(&self) -> [[T; 3]; 3] {
        [self.r_hat(), self.t_hat(), self.z_hat()]
    }

    pub fn radius(&self) -> T {
        self.position[0].hypot(self.position[1])
    }

    pub fn height(&self) -> T {
        self.position[2]
    }
}

pub fn site_label(index: usize) -> String {
    format!("g{index:02}")
}

/// Parses a site label such as `g07` into its index.
pub fn parse_site_label(label: &str) -> Option<usize> {
    let digits = label.trim().strip_prefix('g')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Through-chip loading hole, centered on the g00 gap bisector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadingHole<T: Real> {
    pub center: [T; 2],
    pub diameter: T,
}

/// The simulated device. Immutable once built; derived copies are created
/// with the `with_*` methods.
#[derive(Debug, Clone)]
pub struct TrapModel<T: Real> {
    electrodes: Vec<Electrode<T>>,
    gaps: Vec<Polygon<T>>,
    rf_drive: RfDrive<T>,
    species: IonSpecies<T>,
    sites: Vec<RingSite<T>>,
    loading_hole: Option<LoadingHole<T>>,
    boundaries: Vec<Boundary<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> TrapModel<T> {
    pub fn new(
        electrodes: Vec<Electrode<T>>,
        gaps: Vec<Polygon<T>>,
        rf_drive: RfDrive<T>,
        species: IonSpecies<T>,
        sites: Vec<RingSite<T>>,
        loading_hole: Option<LoadingHole<T>>,
    ) -> Result<Self, GeometryError> {
        let mut index = HashMap::with_capacity(electrodes.len());
        for (i, e) in electrodes.iter().enumerate() {
            if index.insert(e.id.clone(), i).is_some() {
                return Err(GeometryError::DuplicateElectrode(e.id.clone()));
            }
        }
        let boundaries = electrodes.iter().map(Boundary::from_electrode).collect();
        Ok(Self {
            electrodes,
            gaps,
            rf_drive,
            species,
            sites,
            loading_hole,
            boundaries,
            index,
        })
    }

    pub fn electrodes(&self) -> &[Electrode<T>] {
        &self.electrodes
    }

    /// Grounded gap strips between electrodes.
    pub fn gaps(&self) -> &[Polygon<T>] {
        &self.gaps
    }

    pub fn rf_drive(&self) -> RfDrive<T> {
        self.rf_drive
    }

    pub fn species(&self) -> IonSpecies<T> {
        self.species
    }

    pub fn sites(&self) -> &[RingSite<T>] {
        &self.sites
    }

    pub fn site(&self, label: &str) -> Option<&RingSite<T>> {
        let idx = parse_site_label(label)?;
        self.sites.iter().find(|s| s.index == idx)
    }

    pub fn loading_hole(&self) -> Option<LoadingHole<T>> {
        self.loading_hole
    }

    pub fn electrode_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn electrode(&self, id: &str) -> Option<&Electrode<T>> {
        self.electrode_index(id).map(|i| &self.electrodes[i])
    }

    pub(crate) fn boundary(&self, idx: usize) -> &Boundary<T> {
        &self.boundaries[idx]
    }

    /// Indices of electrodes with the RF role.
    pub fn rf_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.electrodes
            .iter()
            .enumerate()
            .filter(|(_, e)| e.role == ElectrodeRole::Rf)
            .map(|(i, _)| i)
    }

    /// Ids of control electrodes that can be driven, in layout order.
    pub fn drivable_ids(&self) -> Vec<String> {
        self.electrodes
            .iter()
            .filter(|e| e.is_drivable())
            .map(|e| e.id.clone())
            .collect()
    }

    /// Azimuthal pitch between neighbouring sites.
    pub fn site_pitch(&self) -> T {
        T::TAU() / T::from_usize(self.sites.len().max(1)).unwrap()
    }

    pub fn with_rf_drive(&self, rf_drive: RfDrive<T>) -> Self {
        let mut m = self.clone();
        m.rf_drive = rf_drive;
        m
    }

    pub fn with_species(&self, species: IonSpecies<T>) -> Self {
        let mut m = self.clone();
        m.species = species;
        m
    }

    pub fn with_sites(&self, sites: Vec<RingSite<T>>) -> Self {
        let mut m = self.clone();
        m.sites = sites;
        m
    }

    pub fn without_loading_hole(&self) -> Self {
        let mut m = self.clone();
        m.loading_hole = None;
        m
    }

    /// Copy with extra electrodes appended (used to build test fixtures).
    pub fn with_extra_electrodes(&self, extra: Vec<Electrode<T>>) -> Result<Self, GeometryError> {
        let mut electrodes = self.electrodes.clone();
        electrodes.extend(extra);
        Self::new(
            electrodes,
            self.gaps.clone(),
            self.rf_drive,
            self.species,
            self.sites.clone(),
            self.loading_hole,
        )
    }
}
