//! Ring Coulomb crystals: many-ion energy and forces, equilibrium search,
//! spacing statistics and per-ion tangential confinement.

mod report;
mod solve;

pub use report::{
    spacing_report, spacing_report_positions, IonSpacing, SpacingReport, SpacingStats,
};
pub use solve::{initial_ring, solve_crystal, solve_crystal_with, solve_from, SolverOptions};

use crate::constants::{COULOMB_CONSTANT, ELEMENTARY_CHARGE};
use crate::fields::{ExternalPotential, FieldError, Landscape, VoltageSet};
use crate::geometry::{IonSpecies, TrapModel};
use crate::par::map_indexed;
use crate::scalar::{dot3, sub3};
use crate::stray::{StrayFieldModel, StrayPotential};
use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrystalError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("ions {0} and {1} coincide")]
    Coincident(usize, usize),
    #[error("ion {0} is not above the electrode plane")]
    BelowPlane(usize),
    #[error("crystal is not converged (max force {max_force:.3e} eV/m)")]
    NotConverged { max_force: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Equilibrium (or best effort) configuration of `n` ions.
#[derive(Debug, Clone, PartialEq)]
pub struct IonCrystal {
    pub n: usize,
    /// m.
    pub positions: Vec<[f64; 3]>,
    /// eV.
    pub energy: f64,
    /// Largest per-ion force magnitude, eV/m.
    pub max_force: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Energy after each accepted step, starting with the initial energy.
    pub energy_history: Vec<f64>,
    /// Why the solver stopped, when it did not converge.
    pub diagnostic: Option<String>,
}

/// Single-ion potential energy with derivatives (eV, eV/m, eV/m^2).
pub trait IonPotential: Sync {
    fn energy(&self, p: [f64; 3]) -> f64;
    fn gradient(&self, p: [f64; 3]) -> [f64; 3];
    fn hessian(&self, p: [f64; 3]) -> (f64, [f64; 3], [[f64; 3]; 3]);
}

impl IonPotential for Landscape<'_> {
    fn energy(&self, p: [f64; 3]) -> f64 {
        Landscape::energy(self, p)
    }
    fn gradient(&self, p: [f64; 3]) -> [f64; 3] {
        Landscape::gradient(self, p)
    }
    fn hessian(&self, p: [f64; 3]) -> (f64, [f64; 3], [[f64; 3]; 3]) {
        Landscape::hessian(self, p)
    }
}

/// Phenomenological loading-hole term: a Gaussian in arc length along the
/// ring, centered on the hole's site.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolePerturbation {
    pub center: [f64; 3],
    /// Peak energy, eV.
    pub amplitude: f64,
    /// Gaussian width (standard deviation in arc length), m.
    pub width: f64,
}

/// Harmonic frequency the loading-hole bump is calibrated to, Hz.
pub const HOLE_FREQUENCY_HZ: f64 = 9.0e3;

impl HolePerturbation {
    pub fn new(center: [f64; 3], amplitude: f64, width: f64) -> Result<Self, CrystalError> {
        if !(width > 0.0) || !amplitude.is_finite() || center[0].hypot(center[1]) == 0.0 {
            return Err(CrystalError::Invalid(
                "hole bump needs a positive width and an off-axis center".into(),
            ));
        }
        Ok(Self {
            center,
            amplitude,
            width,
        })
    }

    /// Bump centered on site g00 with width equal to the hole diameter and
    /// a peak tangential curvature of `m (2 pi f)^2`.
    pub fn calibrated(model: &TrapModel<f64>, frequency_hz: f64) -> Result<Self, CrystalError> {
        let hole = model
            .loading_hole()
            .ok_or_else(|| CrystalError::Invalid("model has no loading hole".into()))?;
        let site = model
            .site("g00")
            .ok_or_else(|| CrystalError::Invalid("model has no site g00".into()))?;
        let w = crate::constants::TWO_PI * frequency_hz;
        let width = hole.diameter;
        let amplitude = model.species().mass * w * w * width * width / ELEMENTARY_CHARGE;
        Self::new(site.position, amplitude, width)
    }

    /// |d2U/ds2| at the peak, eV/m^2.
    pub fn peak_curvature(&self) -> f64 {
        self.amplitude.abs() / (self.width * self.width)
    }

    fn arc(&self, p: [f64; 3]) -> (f64, f64) {
        let rc = self.center[0].hypot(self.center[1]);
        let tc = self.center[1].atan2(self.center[0]);
        let mut d = p[1].atan2(p[0]) - tc;
        d -= crate::constants::TWO_PI * (d / crate::constants::TWO_PI).round();
        (rc * d, rc)
    }

    fn profile(&self, s: f64) -> (f64, f64, f64) {
        let w2 = self.width * self.width;
        let u = self.amplitude * (-0.5 * s * s / w2).exp();
        (u, -s / w2 * u, (s * s / (w2 * w2) - 1.0 / w2) * u)
    }
}

impl ExternalPotential for HolePerturbation {
    fn energy(&self, p: [f64; 3]) -> f64 {
        self.profile(self.arc(p).0).0
    }

    fn gradient(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, rc) = self.arc(p);
        let (_, d1, _) = self.profile(s);
        let r2 = p[0] * p[0] + p[1] * p[1];
        [-d1 * rc * p[1] / r2, d1 * rc * p[0] / r2, 0.0]
    }

    fn hessian(&self, p: [f64; 3]) -> [[f64; 3]; 3] {
        let (s, rc) = self.arc(p);
        let (_, d1, d2) = self.profile(s);
        let (x, y) = (p[0], p[1]);
        let r2 = x * x + y * y;
        let r4 = r2 * r2;
        let gt = [-y / r2, x / r2];
        let ht = [
            [2.0 * x * y / r4, (y * y - x * x) / r4],
            [(y * y - x * x) / r4, -2.0 * x * y / r4],
        ];
        let mut h = [[0.0; 3]; 3];
        for a in 0..2 {
            for b in 0..2 {
                h[a][b] = d2 * rc * rc * gt[a] * gt[b] + d1 * rc * ht[a][b];
            }
        }
        h
    }
}

/// Single-ion landscape with optional stray field and hole bump.
pub fn environment<'a>(
    model: &'a TrapModel<f64>,
    volts: &VoltageSet,
    stray: Option<&'a StrayFieldModel>,
    hole: Option<HolePerturbation>,
) -> Result<Landscape<'a>, CrystalError> {
    let mut l = Landscape::new(model, volts)?;
    if let Some(s) = stray {
        s.check()
            .map_err(|e| CrystalError::Invalid(e.to_string()))?;
        let charge_number = model.species().charge_number();
        l = l.with_external(StrayPotential {
            model: s,
            charge_number,
        });
    }
    if let Some(h) = hole {
        l = l.with_external(h);
    }
    Ok(l)
}

/// N ions in a single-ion potential with pairwise Coulomb repulsion.
pub struct CrystalSystem<'a> {
    potential: &'a dyn IonPotential,
    /// k_C q^2 in eV m.
    coulomb: f64,
    /// e / m, converts eV/m^2 curvature to rad^2/s^2.
    curvature_to_omega2: f64,
}

impl<'a> CrystalSystem<'a> {
    pub fn new(potential: &'a dyn IonPotential, species: IonSpecies<f64>) -> Self {
        Self {
            potential,
            coulomb: COULOMB_CONSTANT * species.charge * species.charge / ELEMENTARY_CHARGE,
            curvature_to_omega2: ELEMENTARY_CHARGE / species.mass,
        }
    }

    pub fn check(&self, positions: &[[f64; 3]]) -> Result<(), CrystalError> {
        for (i, p) in positions.iter().enumerate() {
            if !(p[2] > 0.0) || !p.iter().all(|v| v.is_finite()) {
                return Err(CrystalError::BelowPlane(i));
            }
        }
        for i in 0..positions.len() {
            for j in i + 1..positions.len() {
                if positions[i] == positions[j] {
                    return Err(CrystalError::Coincident(i, j));
                }
            }
        }
        Ok(())
    }

    fn coulomb_energy_of(&self, positions: &[[f64; 3]], i: usize) -> f64 {
        let pi = positions[i];
        let mut e = 0.0;
        for pj in &positions[i + 1..] {
            let d = sub3(pi, *pj);
            e += 1.0 / dot3(d, d).sqrt();
        }
        self.coulomb * e
    }

    /// Total energy, eV.
    pub fn energy(&self, positions: &[[f64; 3]]) -> Result<f64, CrystalError> {
        self.check(positions)?;
        Ok(self.energy_unchecked(positions))
    }

    pub(crate) fn energy_unchecked(&self, positions: &[[f64; 3]]) -> f64 {
        let parts = map_indexed(positions.len(), |i| {
            self.potential.energy(positions[i]) + self.coulomb_energy_of(positions, i)
        });
        parts.iter().sum()
    }

    fn coulomb_force_on(&self, positions: &[[f64; 3]], i: usize) -> [f64; 3] {
        let pi = positions[i];
        let mut f = [0.0; 3];
        for (j, pj) in positions.iter().enumerate() {
            if j == i {
                continue;
            }
            let d = sub3(pi, *pj);
            let r2 = dot3(d, d);
            let inv3 = 1.0 / (r2 * r2.sqrt());
            for k in 0..3 {
                f[k] += d[k] * inv3;
            }
        }
        f.map(|v| self.coulomb * v)
    }

    /// Forces, eV/m.
    pub fn forces(&self, positions: &[[f64; 3]]) -> Result<Vec<[f64; 3]>, CrystalError> {
        self.check(positions)?;
        Ok(self.forces_unchecked(positions))
    }

    pub(crate) fn forces_unchecked(&self, positions: &[[f64; 3]]) -> Vec<[f64; 3]> {
        map_indexed(positions.len(), |i| {
            let g = self.potential.gradient(positions[i]);
            let c = self.coulomb_force_on(positions, i);
            [c[0] - g[0], c[1] - g[1], c[2] - g[2]]
        })
    }

    /// Energy, forces and the full 3N x 3N Hessian.
    pub fn hessian(
        &self,
        positions: &[[f64; 3]],
    ) -> Result<(f64, Vec<[f64; 3]>, DMatrix<f64>), CrystalError> {
        self.check(positions)?;
        Ok(self.hessian_unchecked(positions))
    }

    pub(crate) fn hessian_unchecked(
        &self,
        positions: &[[f64; 3]],
    ) -> (f64, Vec<[f64; 3]>, DMatrix<f64>) {
        let n = positions.len();
        let local = map_indexed(n, |i| {
            let (u, g, h) = self.potential.hessian(positions[i]);
            let c = self.coulomb_force_on(positions, i);
            let e = u + self.coulomb_energy_of(positions, i);
            (e, [c[0] - g[0], c[1] - g[1], c[2] - g[2]], h)
        });
        let mut m = DMatrix::zeros(3 * n, 3 * n);
        let mut energy = 0.0;
        let mut forces = Vec::with_capacity(n);
        for (i, (e, f, h)) in local.into_iter().enumerate() {
            energy += e;
            forces.push(f);
            for a in 0..3 {
                for b in 0..3 {
                    m[(3 * i + a, 3 * i + b)] = h[a][b];
                }
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                let b = self.pair_block(positions[i], positions[j]);
                for a in 0..3 {
                    for c in 0..3 {
                        m[(3 * i + a, 3 * i + c)] += b[a][c];
                        m[(3 * j + a, 3 * j + c)] += b[a][c];
                        m[(3 * i + a, 3 * j + c)] -= b[a][c];
                        m[(3 * j + a, 3 * i + c)] -= b[a][c];
                    }
                }
            }
        }
        (energy, forces, m)
    }

    /// Second derivative of k q^2 / |r| with respect to r = pi - pj.
    fn pair_block(&self, pi: [f64; 3], pj: [f64; 3]) -> [[f64; 3]; 3] {
        let d = sub3(pi, pj);
        let r2 = dot3(d, d);
        let r = r2.sqrt();
        let inv3 = 1.0 / (r2 * r);
        let inv5 = inv3 / r2;
        let mut b = [[0.0; 3]; 3];
        for a in 0..3 {
            for c in 0..3 {
                let delta = if a == c { 1.0 } else { 0.0 };
                b[a][c] = self.coulomb * (3.0 * d[a] * d[c] * inv5 - delta * inv3);
            }
        }
        b
    }

    /// Tangential diagonal Hessian entry of each ion (others held fixed),
    /// eV/m^2, split into (single-ion, Coulomb) parts.
    pub fn tangential_curvatures(&self, positions: &[[f64; 3]]) -> Vec<(f64, f64)> {
        map_indexed(positions.len(), |i| {
            let p = positions[i];
            let th = p[1].atan2(p[0]);
            let t = [-th.sin(), th.cos(), 0.0];
            let (_, _, h) = self.potential.hessian(p);
            let single: f64 = (0..3).map(|a| t[a] * dot3(h[a], t)).sum();
            let mut coul = 0.0;
            for (j, q) in positions.iter().enumerate() {
                if j != i {
                    let b = self.pair_block(p, *q);
                    coul += (0..3).map(|a| t[a] * dot3(b[a], t)).sum::<f64>();
                }
            }
            (single, coul)
        })
    }

    /// Per-ion tangential confinement frequency, rad/s.
    pub fn tangential_strength(&self, positions: &[[f64; 3]]) -> Vec<f64> {
        self.tangential_curvatures(positions)
            .into_iter()
            .map(|(s, c)| ((s + c) * self.curvature_to_omega2).max(0.0).sqrt())
            .collect()
    }

    /// Normal-mode angular frequencies in ascending order, rad/s. Unstable
    /// modes are reported with a negative sign.
    pub fn normal_mode_frequencies(
        &self,
        positions: &[[f64; 3]],
    ) -> Result<Vec<f64>, CrystalError> {
        let (_, _, h) = self.hessian(positions)?;
        let eig = SymmetricEigen::new(h);
        let mut w: Vec<f64> = eig
            .eigenvalues
            .iter()
            .map(|&l| {
                let w2 = l * self.curvature_to_omega2;
                w2.signum() * w2.abs().sqrt()
            })
            .collect();
        w.sort_by(f64::total_cmp);
        Ok(w)
    }
}

/// Total energy of `positions`, eV.
pub fn total_energy(
    model: &TrapModel<f64>,
    volts: &VoltageSet,
    stray: Option<&StrayFieldModel>,
    hole: Option<HolePerturbation>,
    positions: &[[f64; 3]],
) -> Result<f64, CrystalError> {
    let l = environment(model, volts, stray, hole)?;
    CrystalSystem::new(&l, model.species()).energy(positions)
}

/// Forces on each ion, eV/m.
pub fn forces(
    model: &TrapModel<f64>,
    volts: &VoltageSet,
    stray: Option<&StrayFieldModel>,
    hole: Option<HolePerturbation>,
    positions: &[[f64; 3]],
) -> Result<Vec<[f64; 3]>, CrystalError> {
    let l = environment(model, volts, stray, hole)?;
    CrystalSystem::new(&l, model.species()).forces(positions)
}

/// Per-ion tangential confinement frequency (rad/s) of a converged crystal
/// under rf plus `volts`.
pub fn ion_ion_strength(
    crystal: &IonCrystal,
    model: &TrapModel<f64>,
    volts: &VoltageSet,
) -> Result<Vec<f64>, CrystalError> {
    if !crystal.converged {
        return Err(CrystalError::NotConverged {
            max_force: crystal.max_force,
        });
    }
    let l = environment(model, volts, None, None)?;
    let sys = CrystalSystem::new(&l, model.species());
    sys.check(&crystal.positions)?;
    Ok(sys.tangential_strength(&crystal.positions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_ring_layout, RingLayoutParams};

    /// Anisotropic harmonic well centered at `c`.
    struct Harmonic {
        c: [f64; 3],
        k: [f64; 3],
    }

    impl IonPotential for Harmonic {
        fn energy(&self, p: [f64; 3]) -> f64 {
            (0..3)
                .map(|a| 0.5 * self.k[a] * (p[a] - self.c[a]).powi(2))
                .sum()
        }
        fn gradient(&self, p: [f64; 3]) -> [f64; 3] {
            [0, 1, 2].map(|a| self.k[a] * (p[a] - self.c[a]))
        }
        fn hessian(&self, p: [f64; 3]) -> (f64, [f64; 3], [[f64; 3]; 3]) {
            let mut h = [[0.0; 3]; 3];
            for a in 0..3 {
                h[a][a] = self.k[a];
            }
            (self.energy(p), self.gradient(p), h)
        }
    }

    #[test]
    fn two_ions_at_ten_microns() {
        let free = Harmonic {
            c: [0.0; 3],
            k: [0.0; 3],
        };
        let sys = CrystalSystem::new(&free, IonSpecies::calcium40());
        let d = 10e-6;
        let e = sys.energy(&[[0.0, 0.0, 1e-4], [d, 0.0, 1e-4]]).unwrap();
        // 1/(4 pi eps0) * e / d in eV.
        let oracle = 1.602_176_634e-19 / (4.0 * std::f64::consts::PI * 8.854_187_812_8e-12 * d);
        assert!((e - oracle).abs() < 1e-12 * oracle);
    }

    #[test]
    fn coincident_ions_are_rejected() {
        let free = Harmonic {
            c: [0.0; 3],
            k: [0.0; 3],
        };
        let sys = CrystalSystem::new(&free, IonSpecies::calcium40());
        let p = [1e-5, 0.0, 1e-4];
        assert_eq!(sys.energy(&[p, p]), Err(CrystalError::Coincident(0, 1)));
    }

    #[test]
    fn two_ion_relative_mode_is_sqrt3_times_common() {
        let s = IonSpecies::calcium40();
        let k = |f: f64| s.mass * (crate::constants::TWO_PI * f).powi(2) / ELEMENTARY_CHARGE;
        let well = Harmonic {
            c: [0.0, 0.0, 1e-4],
            k: [k(200e3), k(2e6), k(2.2e6)],
        };
        let sys = CrystalSystem::new(&well, s);
        // Equilibrium: k x = k_C q^2 / (2x)^2.
        let x = (sys.coulomb / (4.0 * well.k[0])).cbrt();
        let pos = [[-x, 0.0, 1e-4], [x, 0.0, 1e-4]];
        let f = sys.forces(&pos).unwrap();
        assert!(f
            .iter()
            .flatten()
            .all(|v| v.abs() < 1e-9 * sys.coulomb / (4.0 * x * x)));
        let w = sys.normal_mode_frequencies(&pos).unwrap();
        assert!((w[1] / w[0] - 3f64.sqrt()).abs() < 1e-9);
        assert!((w[0] - crate::constants::TWO_PI * 200e3).abs() < 1e-9 * w[0]);
    }

    #[test]
    fn hole_bump_is_calibrated_and_consistent() {
        let m = build_ring_layout(&RingLayoutParams::default()).unwrap();
        let hole = HolePerturbation::calibrated(&m, HOLE_FREQUENCY_HZ).unwrap();
        let s = m.species();
        let w = crate::constants::TWO_PI * HOLE_FREQUENCY_HZ;
        assert!((hole.peak_curvature() * ELEMENTARY_CHARGE / s.mass - w * w).abs() < 1e-9 * w * w);
        let c = hole.center;
        let th = c[1].atan2(c[0]);
        let t = [-th.sin(), th.cos(), 0.0];
        let h = hole.hessian(c);
        let htt: f64 = (0..3).map(|a| t[a] * dot3(h[a], t)).sum();
        assert!((htt + hole.peak_curvature()).abs() < 1e-9 * hole.peak_curvature());
        let p = [c[0] - 1e-6, c[1] + 4e-6, c[2]];
        let g = hole.gradient(p);
        let step = 1e-9;
        for a in 0..3 {
            let mut hi = p;
            let mut lo = p;
            hi[a] += step;
            lo[a] -= step;
            let fd = (hole.energy(hi) - hole.energy(lo)) / (2.0 * step);
            let scale = hole.amplitude / hole.width;
            assert!((fd - g[a]).abs() < 1e-6 * scale);
        }
    }
}
