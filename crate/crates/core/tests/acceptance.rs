//! Acceptance criteria, one PASS/FAIL line each. Failures are reported, not
//! raised, unless `ACCEPTANCE_STRICT=1`.

mod common;

use ringtrap::compensation::{closed_loop, default_sites, find_rotation_voltages, LoopOptions};
use ringtrap::constants::{MICRO, TWO_PI};
use ringtrap::crystal::{
    environment, ion_ion_strength, solve_crystal, spacing_report, CrystalSystem,
};
use ringtrap::fields::{e_field, find_minimum_ring, potential, secular_modes, trap_depth};
use ringtrap::io::{run_pipeline, RunConfig};
use ringtrap::metrology::{measure_sites, NoiseModel, DEFAULT_ALPHAS};
use ringtrap::stray::{RandomStrayOptions, StrayFieldModel};
use ringtrap::VoltageSet;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

struct Outcome {
    id: &'static str,
    pass: bool,
    detail: String,
}

/// Written straight to stderr so the lines show without `--nocapture`.
fn emit(line: &str) {
    let mut e = std::io::stderr();
    let _ = writeln!(e, "{line}");
}

fn rel(a: f64, b: f64) -> f64 {
    common::rel_err(a, b)
}

fn random_stray(peak: f64, seed: u64) -> StrayFieldModel {
    let opts = RandomStrayOptions {
        peak_tangential: peak,
        ..RandomStrayOptions::default()
    };
    StrayFieldModel::random(common::model(), &opts, seed).unwrap()
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let ring = find_minimum_ring(common::model(), 176).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let (r, h) = (ring.mean_radius / MICRO, ring.mean_height / MICRO);
    let (er, eh) = (rel(r, 624.0), rel(h, 82.0));
    Outcome {
        id: "1 minimum ring",
        pass: er < 0.05 && eh < 0.05 && secs < 60.0,
        detail: format!(
            "radius {r:.1} um ({:.1}%), height {h:.1} um ({:.1}%), {secs:.1} s",
            100.0 * er,
            100.0 * eh
        ),
    }
}

fn criterion_2() -> Outcome {
    let m = common::model();
    let site = m.site("g07").unwrap();
    let modes = secular_modes(m, &VoltageSet::new(), site).unwrap();
    let mhz = |w: f64| w / TWO_PI / 1e6;
    let (wr, wz) = (mhz(modes.omega_r), mhz(modes.omega_z));
    let (er, ez) = (rel(wr, 2.12), rel(wz, 2.17));
    let target = TWO_PI * 290e3;
    let verify = find_rotation_voltages(m, site, 15f64.to_radians(), target)
        .map_err(|e| e.to_string())
        .and_then(|v| secular_modes(m, &v, site).map_err(|e| e.to_string()));
    let (et, tdetail) = match verify {
        Ok(v) => {
            let e = rel(v.omega_t, target);
            (
                e,
                format!(
                    "omega_T {:.1} kHz ({:.2}%), angle {:.2} deg",
                    v.omega_t / TWO_PI / 1e3,
                    100.0 * e,
                    v.rotation_angle.to_degrees()
                ),
            )
        }
        Err(e) => (f64::INFINITY, format!("rotation solve failed: {e}")),
    };
    Outcome {
        id: "2 secular frequencies",
        pass: er < 0.15 && ez < 0.15 && et < 0.02,
        detail: format!(
            "omega_R {wr:.3} MHz ({:.1}%), omega_Z {wz:.3} MHz ({:.1}%); {tdetail}",
            100.0 * er,
            100.0 * ez
        ),
    }
}

fn criterion_3() -> Outcome {
    let m = common::model();
    let d = trap_depth(m, &VoltageSet::new(), m.site("g07").unwrap()).unwrap();
    let mev = d.depth * 1e3;
    let e = rel(mev, 17.0);
    Outcome {
        id: "3 trap depth",
        pass: e < 0.30,
        detail: format!("{mev:.2} meV ({:.1}%)", 100.0 * e),
    }
}

fn criterion_4() -> Outcome {
    let m = common::model();
    let volts = VoltageSet::new();
    let c = solve_crystal(m, &volts, None, None, 400, 1).unwrap();
    let spacing = spacing_report(&c)
        .map(|r| r.stats.mean / MICRO)
        .unwrap_or(f64::NAN);
    let w = ion_ion_strength(&c, m, &volts).unwrap();
    let mean = w.iter().sum::<f64>() / w.len() as f64 / TWO_PI / 1e3;
    let e = rel(mean, 360.0);
    Outcome {
        id: "4 ion-ion strength",
        pass: e < 0.25,
        detail: format!(
            "{mean:.0} kHz per ion ({:.0}%) at {spacing:.2} um spacing",
            100.0 * e
        ),
    }
}

fn criterion_5() -> Outcome {
    let m = common::symmetric_model();
    let c = solve_crystal(m, &VoltageSet::new(), None, None, 400, 1).unwrap();
    let r = spacing_report(&c).unwrap();
    let found = find_minimum_ring(m, 176).unwrap().mean_radius;
    let expected = TWO_PI * found / 400.0;
    let (rs, e) = (r.stats.relative_std(), rel(r.stats.mean, expected));
    Outcome {
        id: "5 crystal spacing",
        pass: rs < 1e-6 && e < 0.02,
        detail: format!(
            "std/mean {rs:.2e}, mean {:.4} um vs {:.4} um ({:.3}%)",
            r.stats.mean / MICRO,
            expected / MICRO,
            100.0 * e
        ),
    }
}

fn criterion_6() -> Outcome {
    let m = common::model();
    let sites = default_sites();
    let mut lines = Vec::new();
    let mut recovered = 0.0f64;
    let mut all_ok = true;
    for peak in [50.0, 200.0, 500.0, 1000.0, 3000.0] {
        let stray = random_stray(peak, 1);
        let meas = measure_sites(
            m,
            &VoltageSet::new(),
            Some(&stray),
            &sites,
            &DEFAULT_ALPHAS,
            &NoiseModel::off(),
        );
        let (mut worst, mut lost) = (0.0f64, 0usize);
        for s in &meas {
            match &s.result {
                Ok((rec, est)) => {
                    let truth = stray.tangential(rec.position).unwrap();
                    // Sites near a zero of the field are judged against a tenth
                    // of the peak instead of their own tiny value.
                    worst = worst.max((est.e_t - truth).abs() / truth.abs().max(0.1 * peak));
                }
                Err(_) => lost += 1,
            }
        }
        let ok = lost == 0 && worst < 0.02;
        all_ok &= ok;
        if all_ok {
            recovered = peak;
        }
        lines.push(format!(
            "{peak:.0} V/m: worst {:.2}%, {lost} wells lost",
            100.0 * worst
        ));
    }

    // Noise on: 1000 site measurements, coverage of the 2 sigma interval.
    let stray = random_stray(200.0, 2);
    let (mut inside, mut total) = (0usize, 0usize);
    let mut seed = 0;
    while total < 1000 {
        let noise = NoiseModel {
            seed,
            ..NoiseModel::default()
        };
        for s in measure_sites(
            m,
            &VoltageSet::new(),
            Some(&stray),
            &sites,
            &DEFAULT_ALPHAS,
            &noise,
        ) {
            if total == 1000 {
                break;
            }
            if let Ok((rec, est)) = s.result {
                let truth = stray.tangential(rec.position).unwrap();
                inside += usize::from((est.e_t - truth).abs() <= 2.0 * est.sigma);
            }
            total += 1;
        }
        seed += 1;
    }
    let coverage = inside as f64 / total as f64;
    Outcome {
        id: "6 metrology recovery",
        pass: all_ok && coverage >= 0.93,
        detail: format!(
            "noise off: {} (recovered within 2% up to {recovered:.0} V/m); noise on: {:.1}% of 1000 within 2 sigma",
            lines.join("; "),
            100.0 * coverage
        ),
    }
}

fn loop_ratio(peak: f64, noise: NoiseModel) -> Result<(f64, f64, f64), String> {
    let m = common::model();
    let stray = random_stray(peak, 3);
    let opts = LoopOptions {
        noise,
        ..LoopOptions::default()
    };
    let out = closed_loop(m, &VoltageSet::new(), Some(&stray), &opts).map_err(|e| e.to_string())?;
    let lost = out.after.iter().filter(|s| s.result.is_err()).count();
    if lost > 0 {
        return Err(format!(
            "{lost} of {} wells lost after compensation",
            out.after.len()
        ));
    }
    Ok((
        out.report.rms_before,
        out.report.rms_after,
        out.report.ratio,
    ))
}

fn criterion_7() -> Outcome {
    let noise = NoiseModel {
        seed: 3,
        ..NoiseModel::default()
    };
    let main = loop_ratio(500.0, noise);
    let low = loop_ratio(50.0, noise);
    let show = |r: &Result<(f64, f64, f64), String>| match r {
        Ok((b, a, q)) => format!("rms {b:.1} -> {a:.2} V/m, {q:.0}x"),
        Err(e) => e.clone(),
    };
    Outcome {
        id: "7 closed-loop suppression",
        pass: matches!(main, Ok((_, _, q)) if q >= 20.0),
        detail: format!(
            "500 V/m peak: {}; 50 V/m peak (info): {}",
            show(&main),
            show(&low)
        ),
    }
}

fn criterion_8() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/demo.toml");
    let mut c = RunConfig::load(&path).unwrap();
    c.out = tmp.path().join("demo");
    let s = match run_pipeline(&c) {
        Ok(s) => s,
        Err(e) => {
            return Outcome {
                id: "8 loading hole",
                pass: false,
                detail: format!("demo run failed: {e}"),
            }
        }
    };
    let m = common::model();
    let g00 = m.site("g00").unwrap();
    let hw = c.crystal.exclude_pitches * m.site_pitch();
    let gap = s
        .spacing
        .spacings
        .iter()
        .filter(|x| {
            let d = (x.midpoint() - g00.azimuth + 0.5 * TWO_PI).rem_euclid(TWO_PI) - 0.5 * TWO_PI;
            d.abs() <= hw
        })
        .map(|x| x.spacing)
        .fold(0.0, f64::max);
    let mean = s.spacing.stats.mean;
    let rs = s.outside_excluded.relative_std();
    Outcome {
        id: "8 loading hole",
        pass: gap > 2.0 * mean && rs < 0.05,
        detail: format!(
            "gap at g00 {:.1} um vs mean {:.2} um; std/mean outside excluded arc {:.2}%; suppression {:.0}x",
            gap / MICRO,
            mean / MICRO,
            100.0 * rs,
            s.report.ratio
        ),
    }
}

fn criterion_9() -> Outcome {
    let m = common::model();
    let mut volts = VoltageSet::new();
    for (k, id) in m.drivable_ids().into_iter().enumerate() {
        volts.set(id, ((k * 37 % 19) as f64 - 9.0) * 0.7);
    }
    let h = 1e-7;
    let mut field_err = 0.0f64;
    for (r, t, z) in [(600.0, 0.3, 90.0), (650.0, 2.0, 60.0), (700.0, 4.4, 150.0)] {
        let p = [r * MICRO * f64::cos(t), r * MICRO * f64::sin(t), z * MICRO];
        let e = e_field(m, &volts, p).unwrap();
        let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        for k in 0..3 {
            let at = |s: f64| {
                let mut q = p;
                q[k] += s * h;
                potential(m, &volts, q).unwrap()
            };
            let fd = -(-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * h);
            field_err = field_err.max((e[k] - fd).abs() / norm);
        }
    }

    let land = environment(m, &volts, None, None).unwrap();
    let sys = CrystalSystem::new(&land, m.species());
    let pos: Vec<[f64; 3]> = (0..5)
        .map(|i| {
            let t = 0.1 + 0.013 * i as f64 + 0.002 * (i * i) as f64;
            [
                625e-6 * t.cos(),
                625e-6 * t.sin(),
                (88.0 + 3.0 * i as f64) * MICRO,
            ]
        })
        .collect();
    let f = sys.forces(&pos).unwrap();
    let scale = f.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut force_err = 0.0f64;
    for i in 0..5 {
        for k in 0..3 {
            let at = |s: f64| {
                let mut q = pos.clone();
                q[i][k] += s * h;
                sys.energy(&q).unwrap()
            };
            let fd = -(-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * h);
            force_err = force_err.max((f[i][k] - fd).abs() / scale);
        }
    }

    let other = volts.scale(-0.4).offset(0.0);
    let p = [610e-6, 40e-6, 85e-6];
    let (a, b, ab) = (
        e_field(m, &volts, p).unwrap(),
        e_field(m, &other, p).unwrap(),
        e_field(m, &volts.scale(2.5).add(&other), p).unwrap(),
    );
    let scale = (0..3)
        .map(|k| 2.5 * a[k].abs() + b[k].abs())
        .fold(0.0, f64::max);
    let lin_err = (0..3)
        .map(|k| (ab[k] - (2.5 * a[k] + b[k])).abs() / scale)
        .fold(0.0, f64::max);

    let tmp = tempfile::tempdir().unwrap();
    let text = "seed = 4\nout = \"run\"\nsites = \"g01..g04\"\n[stray.random]\npeak_V_per_m = 20.0\n[crystal]\nn = 40\n";
    let c = RunConfig::from_toml(text, "determinism", tmp.path()).unwrap();
    let snapshot = || -> Vec<(String, Vec<u8>)> {
        run_pipeline(&c).unwrap();
        let mut v: Vec<_> = std::fs::read_dir(c.out_dir())
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().to_string_lossy().into_owned(),
                    std::fs::read(e.path()).unwrap(),
                )
            })
            .collect();
        v.sort();
        v
    };
    let identical = snapshot() == snapshot();

    Outcome {
        id: "9 numerical hygiene",
        pass: field_err <= 1e-6 && force_err <= 1e-6 && lin_err <= 1e-12 && identical,
        detail: format!(
            "field vs FD {field_err:.1e}, forces vs FD {force_err:.1e}, linearity {lin_err:.1e}, repeat run identical: {identical}"
        ),
    }
}

#[test]
fn acceptance_criteria() {
    let start = Instant::now();
    let checks: [fn() -> Outcome; 9] = [
        criterion_1,
        criterion_2,
        criterion_3,
        criterion_4,
        criterion_5,
        criterion_6,
        criterion_7,
        criterion_8,
        criterion_9,
    ];
    let mut failed = Vec::new();
    for check in checks {
        let t = Instant::now();
        let o = check();
        emit(&format!(
            "ACCEPTANCE {} {}: {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.id,
            o.detail,
            t.elapsed().as_secs_f64()
        ));
        if !o.pass {
            failed.push(o.id);
        }
    }
    emit(&format!(
        "ACCEPTANCE summary: {} of 9 pass; acceptance run {:.0} s",
        9 - failed.len(),
        start.elapsed().as_secs_f64()
    ));
    if std::env::var("ACCEPTANCE_STRICT").as_deref() == Ok("1") {
        assert!(failed.is_empty(), "failing criteria: {failed:?}");
    }
}
