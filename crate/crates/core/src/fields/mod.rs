//! Static and rf fields of a trap model in the gapless-plane approximation,
//! the rf pseudopotential, minimum-ring search, secular modes and trap depth.

mod depth;
pub(crate) mod kernel;
mod landscape;
mod modes;
mod pseudo;
mod ring;

pub use depth::{trap_depth, trap_depth_in, DepthOptions, TrapDepth};
pub use kernel::Boundary;
pub use landscape::{ExternalPotential, Landscape};
pub use modes::{
    local_minimum, modes_at, secular_modes, secular_modes_in, ModeAxis, SecularModes, SOFT_MODE_HZ,
};
pub use pseudo::{rf_field, rf_field_jacobian, rf_pseudopotential, rf_pseudopotential_gradient};
pub use ring::{find_minimum_ring, locate_sites, MinimumRing, RingPoint};

use crate::geometry::{Electrode, ElectrodeRole, TrapModel};
use crate::scalar::Real;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("field point must lie above the electrode plane (z = {0} m)")]
    OnPlane(f64),
    #[error("unknown electrode {0}")]
    UnknownElectrode(String),
    #[error("electrode {0} is shorted and cannot be driven")]
    ShortedElectrode(String),
    #[error("ground electrode {0} follows the voltage reference")]
    GroundElectrode(String),
    #[error("non-finite voltage on {0}")]
    NonFinite(String),
    #[error("rf amplitude is zero; there is no pseudopotential minimum")]
    NoRf,
    #[error("minimum search did not converge at azimuth {azimuth_deg:.3} deg: {reason}")]
    NoConvergence { azimuth_deg: f64, reason: String },
    #[error("no local minimum near {site}: {reason}")]
    NoMinimum { site: String, reason: String },
    #[error("stationary point near {site} is a saddle; unstable direction {direction:?}, eigenvalue {eigenvalue:.4e} V/m^2")]
    Saddle {
        site: String,
        direction: [f64; 3],
        eigenvalue: f64,
    },
    #[error("no escape saddle found within the search bounds around {0}")]
    NoSaddle(String),
}

/// DC voltages keyed by electrode id.
///
/// Electrodes without an entry sit at `reference`, as do ground planes, gap
/// strips and shorted electrodes. The reference is 0 V unless the whole set is
/// offset.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VoltageSet {
    volts: BTreeMap<String, f64>,
    reference: f64,
}

impl VoltageSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every conductor, including grounds and gaps, at `v`.
    pub fn uniform(v: f64) -> Self {
        Self {
            volts: BTreeMap::new(),
            reference: v,
        }
    }

    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut s = Self::new();
        for (id, v) in pairs {
            s.set(id, v);
        }
        s
    }

    pub fn set(&mut self, id: impl Into<String>, v: f64) {
        self.volts.insert(id.into(), v);
    }

    pub fn with(mut self, id: impl Into<String>, v: f64) -> Self {
        self.set(id, v);
        self
    }

    /// Voltage of `id`; absent entries read as the reference.
    pub fn get(&self, id: &str) -> f64 {
        self.volts.get(id).copied().unwrap_or(self.reference)
    }

    pub fn reference(&self) -> f64 {
        self.reference
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.volts.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.volts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volts.is_empty()
    }

    /// Multiplies every voltage, the reference included, by `alpha`.
    pub fn scale(&self, alpha: f64) -> Self {
        Self {
            volts: self
                .volts
                .iter()
                .map(|(k, &v)| (k.clone(), v * alpha))
                .collect(),
            reference: self.reference * alpha,
        }
    }

    /// Entry-wise sum; the references add.
    pub fn add(&self, other: &VoltageSet) -> Self {
        let mut out = self.clone();
        for (k, v) in other.volts.iter() {
            out.volts.insert(k.clone(), self.get(k) + *v);
        }
        out.reference = self.reference + other.reference;
        for (k, v) in out.volts.iter_mut() {
            if !other.volts.contains_key(k) {
                *v += other.reference;
            }
        }
        out
    }

    /// Shifts every conductor by `offset`; fields are unchanged.
    pub fn offset(&self, offset: f64) -> Self {
        Self {
            volts: self
                .volts
                .iter()
                .map(|(k, &v)| (k.clone(), v + offset))
                .collect(),
            reference: self.reference + offset,
        }
    }

    /// Largest absolute entry (reference included).
    pub fn max_abs(&self) -> f64 {
        self.volts
            .values()
            .fold(self.reference.abs(), |m, v| m.max(v.abs()))
    }

    /// Per-electrode voltages relative to the reference, checked against the
    /// model: unknown ids, driven shorted electrodes and driven grounds are
    /// rejected.
    pub fn relative_to_reference<T: Real>(
        &self,
        model: &TrapModel<T>,
    ) -> Result<Vec<f64>, FieldError> {
        let mut out = vec![0.0; model.electrodes().len()];
        for (id, &v) in &self.volts {
            if !v.is_finite() {
                return Err(FieldError::NonFinite(id.clone()));
            }
            let idx = model
                .electrode_index(id)
                .ok_or_else(|| FieldError::UnknownElectrode(id.clone()))?;
            let e = &model.electrodes()[idx];
            let rel = v - self.reference;
            if rel != 0.0 {
                if e.shorted {
                    return Err(FieldError::ShortedElectrode(id.clone()));
                }
                if e.role == ElectrodeRole::Ground {
                    return Err(FieldError::GroundElectrode(id.clone()));
                }
            }
            out[idx] = rel;
        }
        Ok(out)
    }
}

/// Potential and field at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample<T: Real> {
    pub position: [T; 3],
    pub potential: T,
    pub e_field: [T; 3],
}

pub(crate) fn check_point<T: Real>(p: [T; 3]) -> Result<(), FieldError> {
    if p[2] > T::zero() && p.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(FieldError::OnPlane(p[2].as_f64()))
    }
}

/// Solid angle subtended by the electrode from `p`, over 2 pi.
pub fn unit_potential<T: Real>(electrode: &Electrode<T>, p: [T; 3]) -> Result<T, FieldError> {
    check_point(p)?;
    Ok(Boundary::from_electrode(electrode).value(p))
}

/// Unit potential of electrode `idx` of the model, using its cached boundary.
pub fn unit_potential_of<T: Real>(
    model: &TrapModel<T>,
    idx: usize,
    p: [T; 3],
) -> Result<T, FieldError> {
    check_point(p)?;
    Ok(model.boundary(idx).value(p))
}

/// Gradient of the unit potential of electrode `idx` (1/m).
pub fn unit_gradient_of<T: Real>(
    model: &TrapModel<T>,
    idx: usize,
    p: [T; 3],
) -> Result<[T; 3], FieldError> {
    check_point(p)?;
    Ok(model.boundary(idx).gradient(p))
}

/// A voltage set folded into a single weighted boundary, for repeated
/// evaluation.
#[derive(Debug, Clone)]
pub struct StaticField<T: Real> {
    boundary: Boundary<T>,
}

impl<T: Real> StaticField<T> {
    pub fn new(model: &TrapModel<T>, volts: &VoltageSet) -> Result<Self, FieldError> {
        let rel = volts.relative_to_reference(model)?;
        let mut boundary = Boundary::combine(
            rel.iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (model.boundary(i), T::lit(*v))),
        );
        boundary.add_offset(T::lit(volts.reference()));
        Ok(Self { boundary })
    }

    /// Potential in volts.
    pub fn potential(&self, p: [T; 3]) -> T {
        self.boundary.value(p)
    }

    /// Electric field in V/m.
    pub fn e_field(&self, p: [T; 3]) -> [T; 3] {
        let g = self.boundary.gradient(p);
        [-g[0], -g[1], -g[2]]
    }

    /// Potential (V), gradient (V/m) and Hessian (V/m^2).
    pub fn hessian(&self, p: [T; 3]) -> (T, [T; 3], [[T; 3]; 3]) {
        self.boundary.hessian(p)
    }

    pub fn sample(&self, p: [T; 3]) -> FieldSample<T> {
        FieldSample {
            position: p,
            potential: self.potential(p),
            e_field: self.e_field(p),
        }
    }
}

/// Potential in volts: sum of electrode voltages times unit potentials.
pub fn potential<T: Real>(
    model: &TrapModel<T>,
    volts: &VoltageSet,
    p: [T; 3],
) -> Result<T, FieldError> {
    check_point(p)?;
    let rel = volts.relative_to_reference(model)?;
    let mut acc = T::lit(volts.reference());
    for (i, &v) in rel.iter().enumerate() {
        if v != 0.0 {
            acc = acc + T::lit(v) * model.boundary(i).value(p);
        }
    }
    Ok(acc)
}

/// Electric field in V/m, minus the potential gradient.
pub fn e_field<T: Real>(
    model: &TrapModel<T>,
    volts: &VoltageSet,
    p: [T; 3],
) -> Result<[T; 3], FieldError> {
    check_point(p)?;
    let rel = volts.relative_to_reference(model)?;
    let mut e = [T::zero(); 3];
    for (i, &v) in rel.iter().enumerate() {
        if v != 0.0 {
            let g = model.boundary(i).gradient(p);
            let v = T::lit(v);
            for k in 0..3 {
                e[k] = e[k] - v * g[k];
            }
        }
    }
    Ok(e)
}

/// Potential and field at `p`.
pub fn field_sample<T: Real>(
    model: &TrapModel<T>,
    volts: &VoltageSet,
    p: [T; 3],
) -> Result<FieldSample<T>, FieldError> {
    Ok(FieldSample {
        position: p,
        potential: potential(model, volts, p)?,
        e_field: e_field(model, volts, p)?,
    })
}
