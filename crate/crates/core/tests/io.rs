use ringtrap::io::{
    config_hash, read_manifest, read_voltages, run_pipeline, RunConfig, MANIFEST_NAME,
};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

/// A quick pipeline: six sites, 60 ions.
const SMALL: &str = r#"
seed = 4
out = "run"
sites = "g01..g06"

[stray]
seed = 2
[stray.random]
peak_V_per_m = 20.0

[crystal]
n = 60
"#;

fn config(dir: &Path, text: &str) -> RunConfig {
    RunConfig::from_toml(text, "test.toml", dir).unwrap()
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

#[test]
fn same_config_gives_byte_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let c = config(tmp.path(), SMALL);
    run_pipeline(&c).unwrap();
    let first = snapshot(&c.out_dir());
    run_pipeline(&c).unwrap();
    let second = snapshot(&c.out_dir());
    assert_eq!(
        first.keys().collect::<Vec<_>>(),
        second.keys().collect::<Vec<_>>()
    );
    for (name, bytes) in &first {
        assert!(bytes == &second[name], "{name} differs between runs");
    }
    assert!(first.len() >= 14, "{:?}", first.keys());

    let m = read_manifest(&c.out_dir()).unwrap();
    assert_eq!(m.status, "ok");
    assert_eq!(m.seed, 4);
    assert_eq!(m.files.len(), first.len() - 1);
}

#[test]
fn hash_follows_content_only() {
    let tmp = tempfile::tempdir().unwrap();
    let base = config_hash(&config(tmp.path(), SMALL)).unwrap();
    let reformatted = SMALL.replace("seed = 4", "# a comment\nseed    =   4\n");
    assert_eq!(
        config_hash(&config(tmp.path(), &reformatted)).unwrap(),
        base
    );
    let reseeded = SMALL.replace("seed = 4", "seed = 5");
    assert_ne!(config_hash(&config(tmp.path(), &reseeded)).unwrap(), base);
    let bigger = SMALL.replace("n = 60", "n = 61");
    assert_ne!(config_hash(&config(tmp.path(), &bigger)).unwrap(), base);

    // A referenced file is part of the content.
    fs::write(
        tmp.path().join("stray.toml"),
        "seed = 1\n[[harmonic]]\norder = 2\namp_V_per_m = 3.0\nphase_deg = 0.0\n",
    )
    .unwrap();
    let with_file = "stray = \"stray.toml\"\n";
    let h1 = config_hash(&config(tmp.path(), with_file)).unwrap();
    fs::write(
        tmp.path().join("stray.toml"),
        "seed = 1\n[[harmonic]]\norder = 2\namp_V_per_m = 4.0\nphase_deg = 0.0\n",
    )
    .unwrap();
    assert_ne!(config_hash(&config(tmp.path(), with_file)).unwrap(), h1);
}

#[test]
fn zero_stray_needs_no_compensation() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"
out = "zero"
sites = "g00..g19,g25..g43"
[[stray.harmonic]]
order = 1
amp_V_per_m = 0.0
phase_deg = 0.0
[measurement]
noise = false
[crystal]
n = 44
hole = false
"#;
    let c = config(tmp.path(), text);
    let s = run_pipeline(&c).unwrap();
    assert!(
        s.delta_volts.max_abs() < 1e-9,
        "{}",
        s.delta_volts.max_abs()
    );
    let plan = c.out_dir().join("compensation_plan.csv");
    let v = read_voltages(&fs::read_to_string(&plan).unwrap(), "plan").unwrap();
    assert!(v.iter().all(|(_, x)| x.abs() < 1e-9));
}

#[test]
fn failed_stage_is_named_and_earlier_outputs_kept() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL.replace("n = 60", "n = 60\nmax_iterations = 1");
    let c = config(tmp.path(), &text);
    let err = run_pipeline(&c).unwrap_err();
    assert_eq!(err.stage, "spacing");
    let m = read_manifest(&c.out_dir()).unwrap();
    assert_eq!(m.status, "FAILED");
    assert_eq!(m.failed_stage.as_deref(), Some("spacing"));
    assert!(m.error.unwrap().contains("not converged"));
    for f in [
        "layout.toml",
        "measurements.json",
        "compensation_plan.csv",
        "positions.csv",
    ] {
        assert!(c.out_dir().join(f).is_file(), "{f} missing");
        assert!(m.files.iter().any(|x| x.name == f));
    }
    assert!(!c.out_dir().join("spacing.csv").exists());
    assert!(c.out_dir().join(MANIFEST_NAME).is_file());
}

#[test]
fn bad_inputs_fail_before_any_output() {
    let tmp = tempfile::tempdir().unwrap();
    let c = config(tmp.path(), "out = \"never\"\nlayout = \"missing.toml\"\n");
    let err = run_pipeline(&c).unwrap_err();
    assert_eq!(err.stage, "config");
    assert!(!c.out_dir().exists());
}
