//! Recover a planted effect from the nonlinear cross-section oracle and
//! compare nuisance learners on the same draw.
//!
//! `cargo run --release --example dml_oracle -- [seed] [learner...]`

use std::time::Instant;

use cfdml::dml::{self, DmlConfig};
use cfdml::learners::{LearnerKind, LearnerSpec};
use cfdml::synth::{self, OracleSpec};

fn parse(name: &str) -> Option<LearnerKind> {
    serde_json::from_value(serde_json::Value::String(name.to_string())).ok()
}

fn main() -> cfdml::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut kinds: Vec<LearnerKind> = args.filter_map(|a| parse(&a)).collect();
    if kinds.is_empty() {
        kinds = vec![LearnerKind::Gbdt, LearnerKind::Lasso, LearnerKind::Ols];
    }

    let spec = OracleSpec::default().with_seed(seed);
    let table = synth::generate_oracle(&spec)?;
    for kind in kinds {
        let config = DmlConfig { seed, repetitions: 1, ..DmlConfig::default() }.with_learner(LearnerSpec::new(kind));
        let started = Instant::now();
        let est = dml::estimate(&table, &config)?;
        println!(
            "{:<14} theta {:+.4} (truth {:+.4}), se {:.4}, n {}, {:.1}s",
            kind.label(),
            est.theta,
            spec.theta,
            est.se,
            est.n,
            started.elapsed().as_secs_f64()
        );
        for d in &est.diagnostics {
            println!("  fold {}: R2 outcome {:.3}, treatment {:.3}", d.fold, d.r2_outcome, d.r2_treatment);
        }
    }
    Ok(())
}
