use super::pseudo::pseudo_scale;
use super::{check_point, Boundary, FieldError, StaticField, VoltageSet};
use crate::geometry::TrapModel;

/// Additional single-ion potential energy term in eV (stray fields, the
/// loading-hole bump).
pub trait ExternalPotential: Send + Sync {
    fn energy(&self, p: [f64; 3]) -> f64;
    /// eV/m.
    fn gradient(&self, p: [f64; 3]) -> [f64; 3];
    /// eV/m^2.
    fn hessian(&self, p: [f64; 3]) -> [[f64; 3]; 3];
}

impl<T: ExternalPotential + ?Sized> ExternalPotential for &T {
    fn energy(&self, p: [f64; 3]) -> f64 {
        (**self).energy(p)
    }
    fn gradient(&self, p: [f64; 3]) -> [f64; 3] {
        (**self).gradient(p)
    }
    fn hessian(&self, p: [f64; 3]) -> [[f64; 3]; 3] {
        (**self).hessian(p)
    }
}

/// Total single-ion potential energy: pseudopotential, control-electrode
/// potential energy and any external terms. Energies in eV, lengths in m.
pub struct Landscape<'a> {
    model: &'a TrapModel<f64>,
    rf: Boundary<f64>,
    control: StaticField<f64>,
    psi_scale: f64,
    charge_number: f64,
    extras: Vec<Box<dyn ExternalPotential + 'a>>,
}

/// Step for differencing the rf field Jacobian.
const JACOBIAN_STEP: f64 = 1e-7;

impl<'a> Landscape<'a> {
    pub fn new(model: &'a TrapModel<f64>, volts: &VoltageSet) -> Result<Self, FieldError> {
        let amp = model.rf_drive().amplitude;
        let rf = Boundary::combine(model.rf_indices().map(|i| (model.boundary(i), amp)));
        Ok(Self {
            model,
            rf,
            control: StaticField::new(model, volts)?,
            psi_scale: pseudo_scale(model),
            charge_number: model.species().charge_number(),
            extras: Vec::new(),
        })
    }

    pub fn with_external(mut self, extra: impl ExternalPotential + 'a) -> Self {
        self.extras.push(Box::new(extra));
        self
    }

    pub fn model(&self) -> &'a TrapModel<f64> {
        self.model
    }

    pub fn control(&self) -> &StaticField<f64> {
        &self.control
    }

    /// Charge in units of e; converts volts to eV.
    pub fn charge_number(&self) -> f64 {
        self.charge_number
    }

    /// Rf field amplitude and its Jacobian.
    pub fn rf_jacobian(&self, p: [f64; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
        let (_, g, h) = self.rf.hessian(p);
        let e = [-g[0], -g[1], -g[2]];
        let mut j = [[0.0; 3]; 3];
        for r in 0..3 {
            for k in 0..3 {
                j[r][k] = -h[r][k];
            }
        }
        (e, j)
    }

    pub fn pseudopotential(&self, p: [f64; 3]) -> f64 {
        let g = self.rf.gradient(p);
        self.psi_scale * (g[0] * g[0] + g[1] * g[1] + g[2] * g[2])
    }

    pub fn checked_energy(&self, p: [f64; 3]) -> Result<f64, FieldError> {
        check_point(p)?;
        Ok(self.energy(p))
    }

    /// Energy in eV.
    pub fn energy(&self, p: [f64; 3]) -> f64 {
        let mut u = self.pseudopotential(p) + self.charge_number * self.control.potential(p);
        for x in &self.extras {
            u += x.energy(p);
        }
        u
    }

    /// Energy gradient in eV/m.
    pub fn gradient(&self, p: [f64; 3]) -> [f64; 3] {
        let (e, j) = self.rf_jacobian(p);
        let c = 2.0 * self.psi_scale;
        let ge = self.control.e_field(p);
        let mut g = [0.0; 3];
        for k in 0..3 {
            let mut acc = 0.0;
            for i in 0..3 {
                acc += j[i][k] * e[i];
            }
            g[k] = c * acc - self.charge_number * ge[k];
        }
        for x in &self.extras {
            let gx = x.gradient(p);
            for k in 0..3 {
                g[k] += gx[k];
            }
        }
        g
    }

    /// Energy, gradient and Hessian (eV, eV/m, eV/m^2).
    ///
    /// The pseudopotential Hessian is `2c (J^T J + sum_k E_k d2E_k)`; the
    /// second-derivative term is taken by central differences of `J`.
    pub fn hessian(&self, p: [f64; 3]) -> (f64, [f64; 3], [[f64; 3]; 3]) {
        let (e, j) = self.rf_jacobian(p);
        let c = 2.0 * self.psi_scale;
        let (phi, gphi, hphi) = self.control.hessian(p);
        let mut u = 0.5 * c * (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]) + self.charge_number * phi;
        let mut g = [0.0; 3];
        let mut h = [[0.0; 3]; 3];
        for a in 0..3 {
            for i in 0..3 {
                g[a] += c * j[i][a] * e[i];
            }
            g[a] += self.charge_number * gphi[a];
            for b in 0..3 {
                let mut jj = 0.0;
                for i in 0..3 {
                    jj += j[i][a] * j[i][b];
                }
                h[a][b] = c * jj + self.charge_number * hphi[a][b];
            }
        }
        let step = JACOBIAN_STEP;
        for b in 0..3 {
            let mut hi = p;
            let mut lo = p;
            hi[b] += step;
            lo[b] -= step;
            let (_, jh) = self.rf_jacobian(hi);
            let (_, jl) = self.rf_jacobian(lo);
            for a in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += e[k] * (jh[k][a] - jl[k][a]) / (2.0 * step);
                }
                h[a][b] += 0.5 * c * acc;
                h[b][a] += 0.5 * c * acc;
            }
        }
        for x in &self.extras {
            u += x.energy(p);
            let gx = x.gradient(p);
            let hx = x.hessian(p);
            for a in 0..3 {
                g[a] += gx[a];
                for b in 0..3 {
                    h[a][b] += hx[a][b];
                }
            }
        }
        for a in 0..3 {
            for b in a + 1..3 {
                let m = 0.5 * (h[a][b] + h[b][a]);
                h[a][b] = m;
                h[b][a] = m;
            }
        }
        (u, g, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{potential, rf_pseudopotential};
    use crate::geometry::{build_ring_layout, RingLayoutParams};

    #[test]
    fn matches_field_module_terms() {
        let m = build_ring_layout(&RingLayoutParams::default()).unwrap();
        let vs = VoltageSet::from_pairs([("e01", 0.8), ("e45", -0.4)]);
        let l = Landscape::new(&m, &vs).unwrap();
        let p = [615e-6, 20e-6, 88e-6];
        let direct = rf_pseudopotential(&m, p).unwrap() + potential(&m, &vs, p).unwrap();
        assert!((l.energy(p) - direct).abs() < 1e-12 * direct.abs().max(1.0));
    }

    #[test]
    fn hessian_matches_second_differences() {
        let m = build_ring_layout(&RingLayoutParams::default()).unwrap();
        let vs = VoltageSet::from_pairs([("e03", 1.2), ("e48", -0.6)]);
        let l = Landscape::new(&m, &vs).unwrap();
        let p = [630e-6, 40e-6, 90e-6];
        let (u, g, h) = l.hessian(p);
        assert!((u - l.energy(p)).abs() < 1e-12);
        let scale = h.iter().flatten().fold(0.0f64, |s, v| s.max(v.abs()));
        // Richardson-extrapolated central differences of the gradient.
        let diff = |a: usize, step: f64| {
            let mut hi = p;
            let mut lo = p;
            hi[a] += step;
            lo[a] -= step;
            let (gh, gl) = (l.gradient(hi), l.gradient(lo));
            [0, 1, 2].map(|b| (gh[b] - gl[b]) / (2.0 * step))
        };
        for a in 0..3 {
            let (coarse, fine) = (diff(a, 4e-7), diff(a, 2e-7));
            for b in 0..3 {
                let fd = (4.0 * fine[b] - coarse[b]) / 3.0;
                assert!(
                    (fd - h[a][b]).abs() < 1e-6 * scale,
                    "{a}{b}: {fd} vs {}",
                    h[a][b]
                );
            }
            assert!((g[a] - l.gradient(p)[a]).abs() < 1e-12 * scale);
        }
    }
}
