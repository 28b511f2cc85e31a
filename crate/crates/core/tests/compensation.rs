mod common;

use nalgebra::DVector;
use proptest::prelude::*;
use ringtrap::compensation::{
    closed_loop, default_sites, response_matrix, solve_compensation, solve_compensation_in,
    CompensationOptions, LoopOptions, ResponseMatrix,
};
use ringtrap::fields::e_field;
use ringtrap::io::{suppression_csv, Table};
use ringtrap::metrology::{FieldEstimate, NoiseModel};
use ringtrap::stray::{Harmonic, RandomStrayOptions, StrayFieldModel};
use ringtrap::VoltageSet;
use std::sync::OnceLock;

fn estimates(values: &[f64]) -> Vec<FieldEstimate> {
    values
        .iter()
        .map(|&e_t| FieldEstimate {
            e_t,
            sigma: 0.0,
            residual: 0.0,
        })
        .collect()
}

fn default_response() -> &'static ResponseMatrix {
    static R: OnceLock<ResponseMatrix> = OnceLock::new();
    R.get_or_init(|| {
        let m = common::model();
        response_matrix(m, &default_sites(), &m.drivable_ids()).unwrap()
    })
}

fn tangential(p: [f64; 3], e: [f64; 3]) -> f64 {
    let t = p[1].atan2(p[0]);
    -t.sin() * e[0] + t.cos() * e[1]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn site_fields_ignore_a_global_offset(
        vals in prop::collection::vec(-10.0f64..10.0, 86),
        offset in -100.0f64..100.0,
    ) {
        let m = common::model();
        let mut volts = VoltageSet::uniform(0.0);
        for (id, v) in m.drivable_ids().into_iter().zip(&vals) {
            volts.set(id, *v);
        }
        let shifted = volts.offset(offset);
        for s in m.sites() {
            let (a, b) = (e_field(m, &volts, s.position).unwrap(), e_field(m, &shifted, s.position).unwrap());
            for k in 0..3 {
                prop_assert!((a[k] - b[k]).abs() < 1e-10, "{}: {} vs {}", s.label, a[k], b[k]);
            }
        }
        let r = default_response();
        for (a, b) in r.apply(&volts).iter().zip(r.apply(&shifted)) {
            prop_assert!((a - b).abs() < 1e-10, "{} vs {}", a, b);
        }
    }

    #[test]
    fn voltage_norm_shrinks_as_lambda_grows(e in prop::collection::vec(-50.0f64..50.0, 39)) {
        let r = default_response();
        let measured = estimates(&e);
        let mut last = f64::INFINITY;
        for k in -10..=2 {
            let opts = CompensationOptions {
                lambda: Some(10f64.powi(k)),
                bound: 1e9,
                ..CompensationOptions::default()
            };
            let plan = solve_compensation(r, &measured, &opts).unwrap();
            let norm = plan.delta_volts.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
            prop_assert!(norm <= last * (1.0 + 1e-12), "lambda 1e{}: {} > {}", k, norm, last);
            last = norm;
        }
    }

    #[test]
    fn predicted_residual_is_response_times_voltages_plus_measurement(e in prop::collection::vec(-50.0f64..50.0, 39)) {
        let r = default_response();
        let plan = solve_compensation(r, &estimates(&e), &CompensationOptions::default()).unwrap();
        let v = DVector::from_iterator(r.electrodes.len(), r.electrodes.iter().map(|id| plan.delta_volts.get(id)));
        let direct = &r.matrix * v + DVector::from_vec(e.clone());
        prop_assert_eq!(plan.predicted_residual, direct.iter().copied().collect::<Vec<_>>());
    }
}

#[test]
fn symmetric_response_is_circulant() {
    let m = common::symmetric_model();
    let sites: Vec<String> = m.sites().iter().map(|s| s.label.clone()).collect();
    assert_eq!(sites.len(), 44);
    for ring in [1, 45] {
        let ids: Vec<String> = (ring..ring + 44).map(|k| format!("e{k:02}")).collect();
        let a = response_matrix(m, &sites, &ids).unwrap().matrix;
        let scale = a.amax();
        for i in 0..44 {
            for j in 0..44 {
                let d = a[(i, j)] - a[(0, (j + 44 - i) % 44)];
                assert!(d.abs() < 1e-9 * scale, "e{}: ({i}, {j}) off by {d}", ring);
            }
        }
    }
}

fn harmonic_fields(order: u32, phase: f64) -> Vec<f64> {
    let m = common::model();
    let stray = StrayFieldModel::new(
        vec![],
        vec![Harmonic {
            order,
            amplitude: 100.0,
            phase,
        }],
        625e-6,
        0,
    )
    .unwrap();
    default_response()
        .sites
        .iter()
        .map(|l| {
            let p = m.site(l).unwrap().position;
            tangential(p, stray.field(p).unwrap())
        })
        .collect()
}

/// Largest |predicted residual| over the unmeasured sites and the RMS over
/// the measured ones.
fn gap_and_rms(options: &CompensationOptions, e: &[f64]) -> (f64, f64) {
    let m = common::model();
    let plan = solve_compensation_in(m, default_response(), &estimates(e), options).unwrap();
    let all = plan.predicted_residual_all(m).unwrap();
    let measured: Vec<f64> = all.iter().filter(|x| x.2).map(|x| x.1).collect();
    let rms = (measured.iter().map(|x| x * x).sum::<f64>() / measured.len() as f64).sqrt();
    let gap = all
        .iter()
        .filter(|x| !x.2)
        .map(|x| x.1.abs())
        .fold(0.0, f64::max);
    (gap, rms)
}

/// The measured sites are fit down to the ridge floor (about 1e-6 of the
/// stray), so the unmeasured residual is bounded against the stray
/// amplitude (100 V/m) instead of against that floor.
#[test]
fn filled_solve_compensates_the_unmeasured_sites() {
    let opts = CompensationOptions {
        fill_unmeasured: true,
        ..CompensationOptions::default()
    };
    for order in 1..=5 {
        for phase in [0.0, 1.0, 2.5] {
            let (gap, rms) = gap_and_rms(&opts, &harmonic_fields(order, phase));
            assert!(
                gap < 1e-2 && rms < 1e-2,
                "order {order} phase {phase}: gap {gap:.3e}, rms {rms:.3e}"
            );
        }
    }
}

/// The plain minimum-norm solve has no equation at g20-g24, so the field
/// there is left largely in place.
#[test]
fn measured_only_solve_leaves_the_gap_uncompensated() {
    let (gap, rms) = gap_and_rms(&CompensationOptions::default(), &harmonic_fields(2, 1.0));
    assert!(rms < 1e-2 && gap > 10.0, "gap {gap:.3e}, rms {rms:.3e}");
}

/// Seeded closed loop on ten sites compared with the stored report.
/// `UPDATE_GOLDEN=1` rewrites the file.
#[test]
fn suppression_report_matches_golden_file() {
    let m = common::model();
    let stray = StrayFieldModel::random(
        m,
        &RandomStrayOptions {
            peak_tangential: 20.0,
            ..RandomStrayOptions::default()
        },
        5,
    )
    .unwrap();
    let opts = LoopOptions {
        sites: (0..10).map(ringtrap::geometry::site_label).collect(),
        noise: NoiseModel {
            seed: 9,
            ..NoiseModel::default()
        },
        ..LoopOptions::default()
    };
    let out = closed_loop(m, &VoltageSet::uniform(0.0), Some(&stray), &opts).unwrap();
    let text = suppression_csv(&out.report);
    let path =
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/suppression.csv");
    if std::env::var("UPDATE_GOLDEN").as_deref() == Ok("1") {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &text).unwrap();
    }
    let golden =
        std::fs::read_to_string(&path).expect("golden file missing; run with UPDATE_GOLDEN=1");
    let (a, b) = (
        Table::parse(&text, "run", &[]).unwrap(),
        Table::parse(&golden, "golden", &[]).unwrap(),
    );
    assert_eq!(a.header(), b.header());
    assert_eq!(a.len(), b.len());
    for row in 0..a.len() {
        assert_eq!(a.text(row, 0), b.text(row, 0));
        for col in 1..a.header().len() {
            let (x, y) = (a.optional(row, col).unwrap(), b.optional(row, col).unwrap());
            match (x, y) {
                (Some(x), Some(y)) => assert!(
                    (x - y).abs() <= 1e-9 * y.abs().max(1.0),
                    "row {row} {col}: {x} vs {y}"
                ),
                (x, y) => assert_eq!(x, y, "row {row} {col}"),
            }
        }
    }
}
