//! Synthetic stray electric fields: point charges above the grounded
//! electrode plane (each with its mirror image) and purely tangential
//! azimuthal harmonics along the ring.

use crate::constants::{COULOMB_CONSTANT, MICRO};
use crate::fields::ExternalPotential;
use crate::geometry::TrapModel;
use crate::scalar::{dot3, sub3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StrayError {
    #[error("field point must lie above the electrode plane (z = {0} m)")]
    OnPlane(f64),
    #[error("field point coincides with the charge at {0:?}")]
    AtCharge([f64; 3]),
    #[error("field point on the ring axis, where harmonics are undefined")]
    OnAxis,
    #[error("invalid stray model: {0}")]
    Invalid(String),
}

/// Point charge at `position` (m, z > 0), charge in C. Its image sits at the
/// mirror point below the plane with opposite sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointCharge {
    pub position: [f64; 3],
    pub charge: f64,
}

/// Tangential field `E_T = amplitude * (R0 / r) * cos(order * theta - phase)`,
/// derived from the potential `-(amplitude R0 / order) sin(order theta - phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub order: u32,
    /// V/m at the reference radius.
    pub amplitude: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StrayFieldModel {
    pub charges: Vec<PointCharge>,
    pub harmonics: Vec<Harmonic>,
    /// Radius at which harmonic amplitudes are quoted, m.
    pub reference_radius: f64,
    pub seed: u64,
}

impl StrayFieldModel {
    pub fn new(
        charges: Vec<PointCharge>,
        harmonics: Vec<Harmonic>,
        reference_radius: f64,
        seed: u64,
    ) -> Result<Self, StrayError> {
        let m = Self {
            charges,
            harmonics,
            reference_radius,
            seed,
        };
        m.check()?;
        Ok(m)
    }

    pub fn empty() -> Self {
        Self {
            reference_radius: 625.0 * MICRO,
            ..Default::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.charges.is_empty() && self.harmonics.is_empty()
    }

    pub fn check(&self) -> Result<(), StrayError> {
        for c in &self.charges {
            if !(c.position[2] > 0.0)
                || !c.position.iter().all(|v| v.is_finite())
                || !c.charge.is_finite()
            {
                return Err(StrayError::Invalid(format!(
                    "charge at {:?} must sit above the plane",
                    c.position
                )));
            }
        }
        for h in &self.harmonics {
            if h.order == 0 {
                return Err(StrayError::Invalid(
                    "harmonic order must be at least 1".into(),
                ));
            }
            if !h.amplitude.is_finite() || !h.phase.is_finite() {
                return Err(StrayError::Invalid("non-finite harmonic".into()));
            }
        }
        if !self.harmonics.is_empty() && !(self.reference_radius > 0.0) {
            return Err(StrayError::Invalid(
                "reference radius must be positive".into(),
            ));
        }
        Ok(())
    }

    /// All charges and harmonic amplitudes multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        let mut m = self.clone();
        for c in m.charges.iter_mut() {
            c.charge *= k;
        }
        for h in m.harmonics.iter_mut() {
            h.amplitude *= k;
        }
        m
    }

    pub fn with_reference_radius(&self, r: f64) -> Self {
        let mut m = self.clone();
        m.reference_radius = r;
        m
    }

    fn check_point(&self, p: [f64; 3]) -> Result<(), StrayError> {
        if !(p[2] > 0.0) {
            return Err(StrayError::OnPlane(p[2]));
        }
        for c in &self.charges {
            let d = sub3(p, c.position);
            if dot3(d, d) == 0.0 {
                return Err(StrayError::AtCharge(c.position));
            }
        }
        if !self.harmonics.is_empty() && p[0] == 0.0 && p[1] == 0.0 {
            return Err(StrayError::OnAxis);
        }
        Ok(())
    }

    /// Electric field, V/m.
    pub fn field(&self, p: [f64; 3]) -> Result<[f64; 3], StrayError> {
        self.check_point(p)?;
        Ok(self.field_unchecked(p))
    }

    /// Potential, V.
    pub fn potential(&self, p: [f64; 3]) -> Result<f64, StrayError> {
        self.check_point(p)?;
        Ok(self.potential_unchecked(p))
    }

    pub(crate) fn potential_unchecked(&self, p: [f64; 3]) -> f64 {
        let mut phi = 0.0;
        for c in &self.charges {
            let (d, di) = charge_offsets(p, c);
            phi +=
                COULOMB_CONSTANT * c.charge * (1.0 / dot3(d, d).sqrt() - 1.0 / dot3(di, di).sqrt());
        }
        let theta = p[1].atan2(p[0]);
        for h in &self.harmonics {
            let n = h.order as f64;
            phi -= h.amplitude * self.reference_radius / n * (n * theta - h.phase).sin();
        }
        phi
    }

    pub(crate) fn field_unchecked(&self, p: [f64; 3]) -> [f64; 3] {
        let mut e = [0.0; 3];
        for c in &self.charges {
            let (d, di) = charge_offsets(p, c);
            let r3 = dot3(d, d).powf(1.5);
            let ri3 = dot3(di, di).powf(1.5);
            for k in 0..3 {
                e[k] += COULOMB_CONSTANT * c.charge * (d[k] / r3 - di[k] / ri3);
            }
        }
        if !self.harmonics.is_empty() {
            let r = p[0].hypot(p[1]);
            let theta = p[1].atan2(p[0]);
            let t_hat = [-theta.sin(), theta.cos()];
            let mut et = 0.0;
            for h in &self.harmonics {
                let n = h.order as f64;
                et += h.amplitude * self.reference_radius / r * (n * theta - h.phase).cos();
            }
            e[0] += et * t_hat[0];
            e[1] += et * t_hat[1];
        }
        e
    }

    /// Hessian of the potential, V/m^2 (minus the field Jacobian).
    pub(crate) fn potential_hessian_unchecked(&self, p: [f64; 3]) -> [[f64; 3]; 3] {
        let mut h = [[0.0; 3]; 3];
        for c in &self.charges {
            let (d, di) = charge_offsets(p, c);
            for (v, sign) in [(d, 1.0), (di, -1.0)] {
                let r2 = dot3(v, v);
                let r = r2.sqrt();
                let r3 = r2 * r;
                let r5 = r3 * r2;
                let kq = sign * COULOMB_CONSTANT * c.charge;
                for a in 0..3 {
                    for b in 0..3 {
                        let delta = if a == b { 1.0 } else { 0.0 };
                        h[a][b] += kq * (3.0 * v[a] * v[b] / r5 - delta / r3);
                    }
                }
            }
        }
        if !self.harmonics.is_empty() {
            let (x, y) = (p[0], p[1]);
            let r2 = x * x + y * y;
            let r4 = r2 * r2;
            let theta = y.atan2(x);
            let grad_t = [-y / r2, x / r2];
            let hess_t = [
                [2.0 * x * y / r4, (y * y - x * x) / r4],
                [(y * y - x * x) / r4, -2.0 * x * y / r4],
            ];
            let (mut g1, mut g2) = (0.0, 0.0);
            for hm in &self.harmonics {
                let n = hm.order as f64;
                let arg = n * theta - hm.phase;
                g1 -= hm.amplitude * self.reference_radius * arg.cos();
                g2 += hm.amplitude * self.reference_radius * n * arg.sin();
            }
            for a in 0..2 {
                for b in 0..2 {
                    h[a][b] += g2 * grad_t[a] * grad_t[b] + g1 * hess_t[a][b];
                }
            }
        }
        h
    }

    /// Tangential component at `p` along the local counterclockwise direction.
    pub fn tangential(&self, p: [f64; 3]) -> Result<f64, StrayError> {
        let e = self.field(p)?;
        let theta = p[1].atan2(p[0]);
        Ok(-theta.sin() * e[0] + theta.cos() * e[1])
    }

    /// Largest |E_T| over the model's sites.
    pub fn peak_tangential(&self, model: &TrapModel<f64>) -> Result<f64, StrayError> {
        let mut peak = 0.0f64;
        for s in model.sites() {
            peak = peak.max(self.tangential(s.position)?.abs());
        }
        Ok(peak)
    }

    /// Seeded random stray model: surface charges near the ring plus
    /// low-order harmonics, scaled so the peak tangential field over the
    /// model's sites equals `options.peak_tangential`. Before the final
    /// scaling the charges alone give a peak field magnitude of
    /// `options.charge_peak_field`.
    pub fn random(
        model: &TrapModel<f64>,
        options: &RandomStrayOptions,
        seed: u64,
    ) -> Result<Self, StrayError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ring_r = mean_site_radius(model);
        let mut charges = Vec::with_capacity(options.n_charges);
        while charges.len() < options.n_charges {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let offset = rng.random_range(options.min_offset..options.max_offset);
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let r = ring_r + side * offset;
            let z = rng.random_range(options.height_range.0..options.height_range.1);
            let q = rng.random_range(-1.0..1.0);
            charges.push(PointCharge {
                position: [r * theta.cos(), r * theta.sin(), z],
                charge: q * 1e-15,
            });
        }
        let harmonics: Vec<Harmonic> = (1..=options.max_order)
            .map(|order| Harmonic {
                order,
                amplitude: rng.random_range(-1.0..1.0) / order as f64,
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            })
            .collect();
        let mut charge_part = Self::new(charges, vec![], ring_r, seed)?;
        let mut peak_field = 0.0f64;
        for s in model.sites() {
            let e = charge_part.field(s.position)?;
            peak_field = peak_field.max(dot3(e, e).sqrt());
        }
        if peak_field > 0.0 {
            charge_part = charge_part.scaled(options.charge_peak_field / peak_field);
        }
        let mut harmonic_part = Self::new(vec![], harmonics, ring_r, seed)?;
        let peak = harmonic_part.peak_tangential(model)?;
        if peak > 0.0 {
            harmonic_part = harmonic_part.scaled(options.peak_tangential / peak);
        }
        let raw = Self::new(charge_part.charges, harmonic_part.harmonics, ring_r, seed)?;
        let peak = raw.peak_tangential(model)?;
        if peak == 0.0 {
            return Ok(raw);
        }
        Ok(raw.scaled(options.peak_tangential / peak))
    }
}

fn charge_offsets(p: [f64; 3], c: &PointCharge) -> ([f64; 3], [f64; 3]) {
    let image = [c.position[0], c.position[1], -c.position[2]];
    (sub3(p, c.position), sub3(p, image))
}

pub(crate) fn mean_site_radius(model: &TrapModel<f64>) -> f64 {
    let sites = model.sites();
    if sites.is_empty() {
        return 625.0 * MICRO;
    }
    sites.iter().map(|s| s.radius()).sum::<f64>() / sites.len() as f64
}

/// Parameters of [`StrayFieldModel::random`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomStrayOptions {
    pub n_charges: usize,
    /// Radial distance of charges from the ring, m.
    pub min_offset: f64,
    pub max_offset: f64,
    /// Charge heights above the plane, m.
    pub height_range: (f64, f64),
    pub max_order: u32,
    /// Target peak tangential field over the sites, V/m.
    pub peak_tangential: f64,
    /// Peak field magnitude of the charges alone, V/m.
    pub charge_peak_field: f64,
}

impl Default for RandomStrayOptions {
    fn default() -> Self {
        Self {
            n_charges: 12,
            min_offset: 150.0 * MICRO,
            max_offset: 500.0 * MICRO,
            height_range: (2.0 * MICRO, 20.0 * MICRO),
            max_order: 5,
            peak_tangential: 500.0,
            charge_peak_field: 80.0,
        }
    }
}

/// Stray potential energy of an ion, `q phi_stray`, in eV.
#[derive(Debug, Clone, Copy)]
pub struct StrayPotential<'a> {
    pub model: &'a StrayFieldModel,
    pub charge_number: f64,
}

impl ExternalPotential for StrayPotential<'_> {
    fn energy(&self, p: [f64; 3]) -> f64 {
        self.charge_number * self.model.potential_unchecked(p)
    }

    fn gradient(&self, p: [f64; 3]) -> [f64; 3] {
        let e = self.model.field_unchecked(p);
        [
            -self.charge_number * e[0],
            -self.charge_number * e[1],
            -self.charge_number * e[2],
        ]
    }

    fn hessian(&self, p: [f64; 3]) -> [[f64; 3]; 3] {
        let h = self.model.potential_hessian_unchecked(p);
        h.map(|row| row.map(|v| self.charge_number * v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_model_has_no_field() {
        let m = StrayFieldModel::empty();
        assert_eq!(m.field([1e-4, 2e-4, 5e-5]).unwrap(), [0.0; 3]);
    }

    #[test]
    fn charge_below_point_matches_two_charge_arithmetic() {
        let (h, big_h, q) = (5e-6, 80e-6, 2e-15);
        let m = StrayFieldModel::new(
            vec![PointCharge {
                position: [1e-4, 0.0, h],
                charge: q,
            }],
            vec![],
            1.0,
            0,
        )
        .unwrap();
        let e = m.field([1e-4, 0.0, big_h]).unwrap();
        let k = 8.987_551_792_3e9;
        let oracle =
            k * q * (1.0 / ((big_h - h) * (big_h - h)) - 1.0 / ((big_h + h) * (big_h + h)));
        assert!((e[2] - oracle).abs() < 1e-9 * oracle.abs());
        assert!(e[0].abs() < 1e-12 * oracle.abs() && e[1].abs() < 1e-12 * oracle.abs());
    }

    #[test]
    fn image_cancels_tangential_field_on_plane() {
        let m = StrayFieldModel::new(
            vec![PointCharge {
                position: [0.0, 0.0, 3e-6],
                charge: 1e-15,
            }],
            vec![],
            1.0,
            0,
        )
        .unwrap();
        let peak = m.field([0.0, 0.0, 1e-6]).unwrap()[2].abs();
        let e = m.field_unchecked([4e-6, -2e-6, 0.0]);
        assert!(e[0].abs() < 1e-6 * peak && e[1].abs() < 1e-6 * peak);
    }

    #[test]
    fn order_one_harmonic_is_cosine_at_reference_radius() {
        let (a, phase, r0) = (40.0, 0.3, 625e-6);
        let m = StrayFieldModel::new(
            vec![],
            vec![Harmonic {
                order: 1,
                amplitude: a,
                phase,
            }],
            r0,
            0,
        )
        .unwrap();
        for k in 0..44 {
            let th = std::f64::consts::TAU * k as f64 / 44.0;
            let et = m.tangential([r0 * th.cos(), r0 * th.sin(), 9e-5]).unwrap();
            assert!((et - a * (th - phase).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(StrayFieldModel::new(
            vec![],
            vec![Harmonic {
                order: 0,
                amplitude: 1.0,
                phase: 0.0
            }],
            1.0,
            0
        )
        .is_err());
        let m = StrayFieldModel::new(
            vec![PointCharge {
                position: [0.0, 1e-5, 1e-5],
                charge: 1e-15,
            }],
            vec![],
            1.0,
            0,
        )
        .unwrap();
        assert!(matches!(
            m.field([0.0, 1e-5, 1e-5]),
            Err(StrayError::AtCharge(_))
        ));
        assert!(matches!(
            m.field([0.0, 1e-5, 0.0]),
            Err(StrayError::OnPlane(_))
        ));
    }

    #[test]
    fn field_and_hessian_are_potential_derivatives() {
        let m = StrayFieldModel::new(
            vec![PointCharge {
                position: [6.1e-4, 1e-4, 4e-6],
                charge: -1.5e-15,
            }],
            vec![Harmonic {
                order: 3,
                amplitude: 25.0,
                phase: 1.1,
            }],
            6.2e-4,
            0,
        )
        .unwrap();
        let p = [6.3e-4, 0.8e-4, 9e-5];
        let e = m.field(p).unwrap();
        let h = m.potential_hessian_unchecked(p);
        let step = 1e-8;
        for a in 0..3 {
            let mut hi = p;
            let mut lo = p;
            hi[a] += step;
            lo[a] -= step;
            let fd = -(m.potential(hi).unwrap() - m.potential(lo).unwrap()) / (2.0 * step);
            assert!((fd - e[a]).abs() < 1e-6 * e.iter().fold(0.0f64, |s, v| s.max(v.abs())));
            let (eh, el) = (m.field(hi).unwrap(), m.field(lo).unwrap());
            for b in 0..3 {
                let fd = -(eh[b] - el[b]) / (2.0 * step);
                let scale = h.iter().flatten().fold(0.0f64, |s, v| s.max(v.abs()));
                assert!((fd - h[a][b]).abs() < 1e-6 * scale);
            }
        }
    }
}
