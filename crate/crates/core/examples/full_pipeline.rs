//! End to end through the command-line layer: synthesize, augment, estimate
//! and report into a scratch directory.
//!
//! `cargo run --release --example full_pipeline -- [out_dir]`

use std::fs;
use std::path::PathBuf;

fn main() {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "cfdml-pipeline".into()));
    fs::create_dir_all(&root).expect("create output directory");
    let steps = [
        ("synth", r#"{"panel": {"observed_rows": 1743}}"#),
        ("vae-train", r#"{"input": "synth/panel.csv", "vae": {"latent_dim": 16, "hidden": [64, 64], "beta": 0.001, "epochs": 150}}"#),
        ("vae-generate", r#"{"model": "vae-train/vae.json", "input": "synth/panel.csv"}"#),
        ("vae-validate", r#"{"real": "synth/panel.csv", "generated": "vae-generate/generated.csv"}"#),
        ("merge", r#"{"real": "synth/panel.csv", "generated": "vae-generate/generated.csv"}"#),
        ("estimate", r#"{"input": "merge/merged.csv", "dml": {"fe_keys": ["year", "industry"], "repetitions": 1}}"#),
        ("baseline", r#"{"input": "merge/merged.csv"}"#),
        ("report", r#"{"inputs": ["estimate/estimates.csv", "baseline/baseline.csv"], "template": "main"}"#),
    ];
    for (cmd, config) in steps {
        let path = root.join(format!("{cmd}.json"));
        fs::write(&path, config).expect("write config");
        let out = root.join(cmd);
        let code = cfdml::cli::run(["cfdml", cmd, "--config", path.to_str().unwrap(), "--seed", "7", "--out", out.to_str().unwrap()]);
        if code != 0 {
            eprintln!("{cmd} exited with {code}");
            std::process::exit(code);
        }
    }
    println!("\n{}", fs::read_to_string(root.join("report/report.md")).expect("read report"));
}
