//! Physical constants (CODATA 2018 exact or recommended values, SI).

/// Elementary charge, C.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;

/// Unified atomic mass unit, kg.
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;

/// Electron rest mass, kg.
pub const ELECTRON_MASS: f64 = 9.109_383_701_5e-31;

/// Vacuum permittivity, F/m.
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;

/// Coulomb constant 1/(4 pi eps0), N m^2 / C^2.
pub const COULOMB_CONSTANT: f64 = 1.0 / (4.0 * std::f64::consts::PI * VACUUM_PERMITTIVITY);

/// Atomic mass of neutral 40Ca, u (AME2020).
pub const CALCIUM_40_ATOMIC_MASS: f64 = 39.962_590_851;

/// Mass of a singly ionized 40Ca ion, kg.
pub const CALCIUM_40_ION_MASS: f64 = CALCIUM_40_ATOMIC_MASS * ATOMIC_MASS_UNIT - ELECTRON_MASS;

pub const MICRO: f64 = 1e-6;

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
