//! Modeling toolkit for a segmented ring surface ion trap.
//!
//! The electrode plane is treated in the gapless-plane approximation. On top
//! of it the crate computes the rf pseudopotential and its minimum ring,
//! single-ion secular modes and trap depth, ring Coulomb crystals, a virtual
//! stray-field measurement, and a least-squares compensation of the
//! tangential field at the ring sites.
//!
//! Geometry and field kernels are generic over the float type; the
//! higher-level solvers work in `f64`. Type aliases below fix the common
//! `f64` instantiations.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop, clippy::type_complexity)]

pub mod compensation;
pub mod constants;
pub mod crystal;
pub mod fields;
pub mod geometry;
pub mod io;
pub mod metrology;
pub mod par;
pub mod scalar;
pub mod stray;

pub use fields::{FieldError, VoltageSet};
pub use scalar::Real;

pub type Polygon = geometry::Polygon<f64>;
pub type Electrode = geometry::Electrode<f64>;
pub type RfDrive = geometry::RfDrive<f64>;
pub type IonSpecies = geometry::IonSpecies<f64>;
pub type RingSite = geometry::RingSite<f64>;
pub type TrapModel = geometry::TrapModel<f64>;
pub type RingLayoutParams = geometry::RingLayoutParams<f64>;
pub type FieldSample = fields::FieldSample<f64>;
pub type StaticField = fields::StaticField<f64>;
