use super::{environment, CrystalError, CrystalSystem, HolePerturbation, IonCrystal};
use crate::constants::TWO_PI;
use crate::fields::VoltageSet;
use crate::geometry::TrapModel;
use crate::scalar::{dot3, sub3};
use crate::stray::StrayFieldModel;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Levenberg-Marquardt settings for the crystal solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Largest per-ion force at convergence, eV/m.
    pub force_tolerance: f64,
    /// Largest per-ion displacement in one step, m.
    pub max_step: f64,
    /// Random displacement added to the initial ring, m.
    pub jitter: f64,
    /// Closest allowed approach of two ions, m.
    pub min_separation: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 300,
            force_tolerance: 1e-4,
            max_step: 2e-6,
            jitter: 1e-9,
            min_separation: 0.1e-6,
        }
    }
}

/// `n` ions equally spaced on the ring through the model's sites, with a
/// seeded random rotation of the whole ring and a small per-ion jitter.
pub fn initial_ring(model: &TrapModel<f64>, n: usize, seed: u64, jitter: f64) -> Vec<[f64; 3]> {
    let sites = model.sites();
    let (r, z) = if sites.is_empty() {
        (625e-6, 90e-6)
    } else {
        let k = sites.len() as f64;
        (
            sites.iter().map(|s| s.radius()).sum::<f64>() / k,
            sites.iter().map(|s| s.height()).sum::<f64>() / k,
        )
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pitch = TWO_PI / n as f64;
    let phase = rng.random_range(0.0..pitch);
    (0..n)
        .map(|i| {
            let th = phase + pitch * i as f64;
            let mut j = [0.0; 3];
            for v in j.iter_mut() {
                *v = jitter * rng.random_range(-1.0..1.0);
            }
            [r * th.cos() + j[0], r * th.sin() + j[1], z + j[2]]
        })
        .collect()
}

fn max_force(f: &[[f64; 3]]) -> f64 {
    f.iter().map(|v| dot3(*v, *v).sqrt()).fold(0.0, f64::max)
}

fn too_close(positions: &[[f64; 3]], min_sep: f64) -> bool {
    let m2 = min_sep * min_sep;
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            let d = sub3(positions[i], positions[j]);
            if dot3(d, d) < m2 {
                return true;
            }
        }
    }
    false
}

/// Relaxes `start` to a local energy minimum by Levenberg-Marquardt steps
/// on the full 3N-dimensional Hessian. Returns an unconverged crystal with
/// a diagnostic when the budget runs out or no descent step is found.
pub fn solve_from(
    system: &CrystalSystem,
    start: Vec<[f64; 3]>,
    opts: &SolverOptions,
) -> Result<IonCrystal, CrystalError> {
    system.check(&start)?;
    let n = start.len();
    if n == 0 {
        return Err(CrystalError::Invalid("need at least one ion".into()));
    }
    let mut x = start;
    let mut history = Vec::new();
    let mut mu: Option<f64> = None;
    let mut iterations = 0;
    let (mut energy, mut f, mut h) = system.hessian_unchecked(&x);
    history.push(energy);
    let diagnostic = loop {
        let fmax = max_force(&f);
        if fmax < opts.force_tolerance {
            return Ok(IonCrystal {
                n,
                positions: x,
                energy,
                max_force: fmax,
                converged: true,
                iterations,
                energy_history: history,
                diagnostic: None,
            });
        }
        if iterations >= opts.max_iterations {
            break format!("iteration budget of {} exhausted", opts.max_iterations);
        }
        iterations += 1;
        let scale = (0..3 * n).map(|i| h[(i, i)].abs()).sum::<f64>() / (3 * n) as f64;
        let floor = 1e-12 * scale;
        let mut damping = mu.unwrap_or(1e-6 * scale).max(floor);
        let g = DVector::from_iterator(3 * n, f.iter().flatten().map(|v| -v));
        // Rounding allowance on the total energy.
        let noise =
            1e-14 * history.iter().last().map_or(0.0, |e| e.abs()).max(1e-6) * (n as f64).sqrt();
        let mut accepted = false;
        for _ in 0..60 {
            let mut a: DMatrix<f64> = h.clone();
            for i in 0..3 * n {
                a[(i, i)] += damping;
            }
            let Some(chol) = Cholesky::new(a) else {
                damping *= 10.0;
                continue;
            };
            let d = chol.solve(&(-&g));
            let mut step_scale = 1.0f64;
            for i in 0..n {
                let len = (d[3 * i].powi(2) + d[3 * i + 1].powi(2) + d[3 * i + 2].powi(2)).sqrt();
                if len * step_scale > opts.max_step {
                    step_scale = opts.max_step / len;
                }
            }
            let trial: Vec<[f64; 3]> = (0..n)
                .map(|i| [0, 1, 2].map(|k| x[i][k] + step_scale * d[3 * i + k]))
                .collect();
            if trial.iter().any(|p| !(p[2] > 0.0)) || too_close(&trial, opts.min_separation) {
                damping *= 4.0;
                continue;
            }
            let e_new = system.energy_unchecked(&trial);
            let ok = if e_new < energy {
                true
            } else if e_new <= energy + noise {
                max_force(&system.forces_unchecked(&trial)) < fmax
            } else {
                false
            };
            if ok {
                x = trial;
                (energy, f, h) = system.hessian_unchecked(&x);
                history.push(energy);
                mu = Some((damping / 3.0).max(floor));
                accepted = true;
                break;
            }
            damping *= 4.0;
        }
        if !accepted {
            break format!("no descent step found at max force {fmax:.3e} eV/m");
        }
    };
    let fmax = max_force(&f);
    Ok(IonCrystal {
        n,
        positions: x,
        energy,
        max_force: fmax,
        converged: false,
        iterations,
        energy_history: history,
        diagnostic: Some(diagnostic),
    })
}

/// Equilibrium of `n` ions under rf, control voltages, optional stray field
/// and optional loading-hole bump, started from [`initial_ring`].
pub fn solve_crystal(
    model: &TrapModel<f64>,
    volts: &VoltageSet,
    stray: Option<&StrayFieldModel>,
    hole: Option<HolePerturbation>,
    n: usize,
    seed: u64,
) -> Result<IonCrystal, CrystalError> {
    solve_crystal_with(
        model,
        volts,
        stray,
        hole,
        n,
        seed,
        &SolverOptions::default(),
    )
}

pub fn solve_crystal_with(
    model: &TrapModel<f64>,
    volts: &VoltageSet,
    stray: Option<&StrayFieldModel>,
    hole: Option<HolePerturbation>,
    n: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<IonCrystal, CrystalError> {
    if n == 0 {
        return Err(CrystalError::Invalid("need at least one ion".into()));
    }
    let landscape = environment(model, volts, stray, hole)?;
    let system = CrystalSystem::new(&landscape, model.species());
    let start = initial_ring(model, n, seed, opts.jitter);
    let (ring, mut history) = relax_on_ring(&system, start, opts);
    let mut crystal = solve_from(&system, ring, opts)?;
    history.pop();
    history.append(&mut crystal.energy_history);
    crystal.energy_history = history;
    Ok(crystal)
}

/// Coulomb energy of two ions on a circle of radius r0 as a function of
/// their azimuth difference, with first and second derivatives.
fn ring_pair(k: f64, r0: f64, delta: f64) -> (f64, f64, f64) {
    let half = 0.5 * delta.rem_euclid(TWO_PI);
    let (s, c) = half.sin_cos();
    let a = k / (2.0 * r0);
    (
        a / s,
        -0.5 * a * c / (s * s),
        0.25 * a * (1.0 + c * c) / (s * s * s),
    )
}

/// Pre-relaxation over azimuths only, with every ion held on the circle
/// through its starting radius and height (their means). Cheap compared with
/// the full solve and brings strongly perturbed crystals close to
/// equilibrium. Returns the relaxed positions and the energies of accepted
/// steps, starting with the energy of the projected start.
fn relax_on_ring(
    system: &CrystalSystem,
    start: Vec<[f64; 3]>,
    opts: &SolverOptions,
) -> (Vec<[f64; 3]>, Vec<f64>) {
    let n = start.len();
    let r0 = start.iter().map(|p| p[0].hypot(p[1])).sum::<f64>() / n as f64;
    let z0 = start.iter().map(|p| p[2]).sum::<f64>() / n as f64;
    let place = |th: &[f64]| -> Vec<[f64; 3]> {
        th.iter()
            .map(|t| [r0 * t.cos(), r0 * t.sin(), z0])
            .collect()
    };
    // Unwrapped azimuths in ring order; steps may not reorder the ions.
    let mut order: Vec<usize> = (0..n).collect();
    let raw: Vec<f64> = start.iter().map(|p| p[1].atan2(p[0])).collect();
    order.sort_by(|&a, &b| raw[a].total_cmp(&raw[b]));
    let mut theta = raw;
    let ordered = |th: &[f64]| {
        (0..n).all(|k| {
            let next = if k + 1 < n {
                th[order[k + 1]]
            } else {
                th[order[0]] + TWO_PI
            };
            next > th[order[k]]
        })
    };
    let mut x = place(&theta);
    let mut energy = system.energy_unchecked(&x);
    let mut history = vec![energy];
    if n < 2 {
        return (x, history);
    }
    let k = system.coulomb;
    let derivatives = |th: &[f64], x: &[[f64; 3]]| {
        let local = crate::par::map_indexed(n, |i| {
            let (_, g, h) = system.potential.hessian(x[i]);
            let (s, c) = th[i].sin_cos();
            let t = [-s, c, 0.0];
            let r = [c, s, 0.0];
            let gt = r0 * dot3(g, t);
            let htt = r0 * r0 * (0..3).map(|a| t[a] * dot3(h[a], t)).sum::<f64>() - r0 * dot3(g, r);
            (gt, htt)
        });
        let mut grad = DVector::from_iterator(n, local.iter().map(|v| v.0));
        let mut hess =
            DMatrix::from_diagonal(&DVector::from_iterator(n, local.iter().map(|v| v.1)));
        for i in 0..n {
            for j in i + 1..n {
                let (_, d1, d2) = ring_pair(k, r0, th[j] - th[i]);
                grad[i] -= d1;
                grad[j] += d1;
                hess[(i, i)] += d2;
                hess[(j, j)] += d2;
                hess[(i, j)] -= d2;
                hess[(j, i)] -= d2;
            }
        }
        (grad, hess)
    };
    let tol = opts.force_tolerance * r0;
    let mut mu: Option<f64> = None;
    for _ in 0..opts.max_iterations {
        let (g, h) = derivatives(&theta, &x);
        let gmax = g.amax();
        if gmax < tol {
            break;
        }
        let scale = (0..n).map(|i| h[(i, i)].abs()).sum::<f64>() / n as f64;
        let floor = 1e-12 * scale;
        let mut damping = mu.unwrap_or(1e-6 * scale).max(floor);
        let mut accepted = false;
        for _ in 0..60 {
            let mut a = h.clone();
            for i in 0..n {
                a[(i, i)] += damping;
            }
            let Some(chol) = Cholesky::new(a) else {
                damping *= 10.0;
                continue;
            };
            let d = chol.solve(&(-&g));
            let trial: Vec<f64> = (0..n).map(|i| theta[i] + d[i]).collect();
            let tx = place(&trial);
            if !ordered(&trial) || too_close(&tx, opts.min_separation) {
                damping *= 4.0;
                continue;
            }
            let e_new = system.energy_unchecked(&tx);
            if e_new < energy {
                theta = trial;
                x = tx;
                energy = e_new;
                history.push(energy);
                mu = Some((damping / 3.0).max(floor));
                accepted = true;
                break;
            }
            damping *= 4.0;
        }
        if !accepted {
            break;
        }
    }
    (x, history)
}
