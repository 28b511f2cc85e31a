#![allow(clippy::needless_range_loop)]

mod common;

use proptest::prelude::*;
use ringtrap::constants::{MICRO, TWO_PI};
use ringtrap::fields::{
    e_field, potential, rf_field, rf_field_jacobian, rf_pseudopotential,
    rf_pseudopotential_gradient, unit_potential, Landscape, StaticField,
};
use ringtrap::geometry::ElectrodeRole;
use ringtrap::{Electrode, VoltageSet};

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn volts_from(ids: &[String], vals: &[f64], reference: f64) -> VoltageSet {
    let mut v = VoltageSet::uniform(reference);
    for (id, x) in ids.iter().zip(vals) {
        v.set(id.clone(), *x);
    }
    v
}

/// Fourth-order central difference of `f` along axis `k`.
fn d4(f: &dyn Fn([f64; 3]) -> f64, p: [f64; 3], k: usize, h: f64) -> f64 {
    let at = |s: f64| {
        let mut q = p;
        q[k] += s * h;
        f(q)
    };
    (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * h)
}

fn point() -> impl Strategy<Value = [f64; 3]> {
    (0.0f64..TWO_PI, 300.0f64..950.0, 20.0f64..300.0)
        .prop_map(|(t, r, z)| [r * MICRO * t.cos(), r * MICRO * t.sin(), z * MICRO])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn field_is_linear_in_voltages(
        a in prop::collection::vec(-10.0f64..10.0, 86),
        b in prop::collection::vec(-10.0f64..10.0, 86),
        s in -3.0f64..3.0,
        p in point(),
    ) {
        let m = common::model();
        let ids = m.drivable_ids();
        let (va, vb) = (volts_from(&ids, &a, 0.0), volts_from(&ids, &b, 0.0));
        let combined = e_field(m, &va.scale(s).add(&vb), p).unwrap();
        let (ea, eb) = (e_field(m, &va, p).unwrap(), e_field(m, &vb, p).unwrap());
        let scale = s.abs() * norm(ea) + norm(eb);
        for k in 0..3 {
            prop_assert!((combined[k] - (s * ea[k] + eb[k])).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn potential_just_above_an_electrode_is_its_voltage(
        which in 0usize..88,
        vals in prop::collection::vec(-10.0f64..10.0, 86),
    ) {
        let m = common::model();
        let ids = m.drivable_ids();
        let volts = volts_from(&ids, &vals, 0.0);
        let id = format!("e{:02}", which + 1);
        let e = m.electrode(&id).unwrap();
        prop_assume!(!e.shorted);
        let shape = &e.shapes[0];
        let n = shape.len() as f64;
        let c = shape.vertices().iter().fold([0.0, 0.0], |a, v| [a[0] + v[0] / n, a[1] + v[1] / n]);
        prop_assert!(shape.contains_strictly(c, 0.0));
        let phi = potential(m, &volts, [c[0], c[1], 1e-9]).unwrap();
        let max = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        prop_assert!((phi - volts.get(&id)).abs() <= 1e-4 * max, "{} vs {}", phi, volts.get(&id));
    }

    #[test]
    fn unit_potentials_tile_to_one(t in 0.0f64..TWO_PI, r in 0.0f64..1500.0, z in 0.5f64..2000.0) {
        let m = common::model();
        let p = [r * MICRO * t.cos(), r * MICRO * t.sin(), z * MICRO];
        let mut sum: f64 = m.electrodes().iter().map(|e| unit_potential(e, p).unwrap()).sum();
        for g in m.gaps() {
            sum += unit_potential(&Electrode::new("gap", ElectrodeRole::Ground, vec![g.clone()]), p).unwrap();
        }
        prop_assert!((sum - 1.0).abs() < 1e-9, "{}", sum);
    }

    #[test]
    fn pseudopotential_has_the_segment_symmetry(p in point(), k in 1usize..44) {
        let m = common::symmetric_model();
        let (s, c) = (TWO_PI * k as f64 / 44.0).sin_cos();
        let q = [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]];
        let (a, b) = (rf_pseudopotential(m, p).unwrap(), rf_pseudopotential(m, q).unwrap());
        prop_assert!(common::rel_err(b, a) < 1e-9, "{} vs {}", a, b);
    }

    #[test]
    fn analytic_derivatives_match_differences(
        p in point(),
        vals in prop::collection::vec(-10.0f64..10.0, 86),
    ) {
        let m = common::model();
        let volts = volts_from(&m.drivable_ids(), &vals, 0.0);
        let h = 1e-7;

        let e = e_field(m, &volts, p).unwrap();
        let phi = |q: [f64; 3]| potential(m, &volts, q).unwrap();
        let fd: Vec<f64> = (0..3).map(|k| -d4(&phi, p, k, h)).collect();
        for k in 0..3 {
            prop_assert!((e[k] - fd[k]).abs() <= 1e-6 * norm(e), "E{}: {} vs {}", k, e[k], fd[k]);
        }

        let g = rf_pseudopotential_gradient(m, p).unwrap();
        let psi = |q: [f64; 3]| rf_pseudopotential(m, q).unwrap();
        for k in 0..3 {
            let fd = d4(&psi, p, k, h);
            prop_assert!((g[k] - fd).abs() <= 1e-6 * norm(g), "grad psi {}: {} vs {}", k, g[k], fd);
        }

        let control = StaticField::new(m, &volts).unwrap();
        let (_, _, hc) = control.hessian(p);
        let scale = hc.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        for k in 0..3 {
            let ek = |q: [f64; 3]| -control.e_field(q)[k];
            for l in 0..3 {
                let fd = d4(&ek, p, l, h);
                prop_assert!((hc[k][l] - fd).abs() <= 1e-6 * scale, "d2phi {}{}: {} vs {}", k, l, hc[k][l], fd);
            }
        }

        let (erf, jac) = rf_field_jacobian(m, p).unwrap();
        let scale = jac.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        for k in 0..3 {
            let fk = |q: [f64; 3]| rf_field(m, q).unwrap()[k];
            prop_assert!((erf[k] - fk(p)).abs() <= 1e-12 * norm(erf));
            for l in 0..3 {
                let fd = d4(&fk, p, l, h);
                prop_assert!((jac[k][l] - fd).abs() <= 1e-6 * scale, "J{}{}: {} vs {}", k, l, jac[k][l], fd);
            }
        }

        // The pseudopotential curvature inside the landscape differences the
        // rf Jacobian once, so it only holds to about 1e-4.
        let land = Landscape::new(m, &volts).unwrap();
        let (_, _, hess) = land.hessian(p);
        let scale = hess.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        for k in 0..3 {
            let gk = |q: [f64; 3]| land.gradient(q)[k];
            for l in 0..3 {
                let fd = d4(&gk, p, l, h);
                prop_assert!((hess[k][l] - fd).abs() <= 1e-3 * scale, "H{}{}: {} vs {}", k, l, hess[k][l], fd);
            }
        }
    }
}
