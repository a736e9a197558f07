use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cfdml::report::{self, RunManifest};

fn cfdml(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfdml")).args(args).output().expect("spawn cfdml")
}

fn run_step(dir: &Path, cmd: &str, config: &str, extra: &[&str]) -> Output {
    let cfg = dir.join(format!("{cmd}.json"));
    fs::write(&cfg, config).unwrap();
    let out = dir.join(cmd);
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    cfdml(&args)
}

#[test]
fn synth_then_estimate_records_input_digests() {
    let dir = tempfile::tempdir().unwrap();
    let synth = run_step(dir.path(), "synth", r#"{"design": "oracle", "oracle": {"n": 300}}"#, &["--seed", "3"]);
    assert_eq!(synth.status.code(), Some(0), "{}", String::from_utf8_lossy(&synth.stderr));
    let panel = dir.path().join("synth/panel.csv");
    assert!(panel.exists() && dir.path().join("synth/panel.schema.json").exists());

    let est = run_step(
        dir.path(),
        "estimate",
        r#"{"input": "synth/panel.csv", "dml": {"repetitions": 1, "outcome_learner": {"kind": "ols"}, "treatment_learner": {"kind": "ols"}}}"#,
        &[],
    );
    assert_eq!(est.status.code(), Some(0), "{}", String::from_utf8_lossy(&est.stderr));
    let rows = report::load_estimates(&dir.path().join("estimate/estimates.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].theta.is_finite() && rows[0].se > 0.0);

    let manifest = RunManifest::load(&dir.path().join("estimate/manifest.json")).unwrap();
    assert_eq!(manifest.command, "estimate");
    assert!(!manifest.input_digests.is_empty());
    for (path, digest) in &manifest.input_digests {
        assert_eq!(&report::sha256_file(Path::new(path)).unwrap(), digest, "{path}");
    }
    let panel_digest = report::sha256_file(&panel).unwrap();
    assert!(manifest.input_digests.values().any(|d| *d == panel_digest));
}

#[test]
fn seed_flag_is_recorded_and_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"design": "oracle", "oracle": {"n": 100}}"#;
    let a = run_step(dir.path(), "synth", cfg, &["--seed", "1"]);
    assert_eq!(a.status.code(), Some(0));
    let first = fs::read(dir.path().join("synth/panel.csv")).unwrap();
    let manifest = RunManifest::load(&dir.path().join("synth/manifest.json")).unwrap();
    assert_eq!(manifest.seed, 1);
    let b = run_step(dir.path(), "synth", cfg, &["--seed", "2"]);
    assert_eq!(b.status.code(), Some(0));
    assert_ne!(first, fs::read(dir.path().join("synth/panel.csv")).unwrap());
}

#[test]
fn missing_or_malformed_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = cfdml(&["estimate", "--config", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());

    let unknown = run_step(dir.path(), "synth", r#"{"design": "oracle", "bogus": 1}"#, &[]);
    assert_eq!(unknown.status.code(), Some(2));

    let no_inputs = run_step(dir.path(), "index", "{}", &[]);
    assert_eq!(no_inputs.status.code(), Some(2));

    assert_eq!(cfdml(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(cfdml(&["--help"]).status.code(), Some(0));
}

#[test]
fn every_subcommand_is_listed_in_help() {
    let help = String::from_utf8(cfdml(&["--help"]).stdout).unwrap();
    for cmd in [
        "ingest",
        "index",
        "synth",
        "vae-train",
        "vae-generate",
        "vae-validate",
        "merge",
        "estimate",
        "robustness",
        "heterogeneity",
        "temporal",
        "mediate",
        "baseline",
        "report",
    ] {
        assert!(help.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn validating_a_table_against_itself_passes() {
    let dir = tempfile::tempdir().unwrap();
    let synth = run_step(dir.path(), "synth", r#"{"panel": {"n_firms": 60, "n_years": 6}}"#, &[]);
    assert_eq!(synth.status.code(), Some(0));
    fs::copy(dir.path().join("synth/panel.csv"), dir.path().join("copy.csv")).unwrap();
    fs::copy(dir.path().join("synth/panel.schema.json"), dir.path().join("copy.schema.json")).unwrap();
    let out = run_step(dir.path(), "vae-validate", r#"{"real": "synth/panel.csv", "generated": "copy.csv"}"#, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let quality: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("vae-validate/quality.json")).unwrap()).unwrap();
    assert_eq!(quality["pass"], true);
}

#[test]
fn failed_quality_gate_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_step(dir.path(), "synth", r#"{"panel": {"n_firms": 60, "n_years": 6}}"#, &[]);
    assert_eq!(a.status.code(), Some(0));
    // a different treatment effect shifts the outcome distribution
    fs::write(
        dir.path().join("synth.json"),
        r#"{"panel": {"n_firms": 60, "n_years": 6, "theta": 3.0, "seed": 9}}"#,
    )
    .unwrap();
    let shifted = dir.path().join("shifted");
    let c = cfdml(&["synth", "--config", dir.path().join("synth.json").to_str().unwrap(), "--out", shifted.to_str().unwrap()]);
    assert_eq!(c.status.code(), Some(0));
    let out = run_step(
        dir.path(),
        "vae-validate",
        r#"{"real": "synth/panel.csv", "generated": "shifted/panel.csv", "gates": {"smd": 0.1, "mae": 0.1, "mse": 0.1}}"#,
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("quality gates failed"), "{}", String::from_utf8_lossy(&out.stderr));
}
