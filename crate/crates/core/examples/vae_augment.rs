//! Train the tabular VAE on a synthetic panel, generate counterfactual
//! firm-years, check the quality gates and compare estimates before and
//! after merging.
//!
//! `cargo run --release --example vae_augment -- [epochs]`

use cfdml::dml::{self, DmlConfig};
use cfdml::synth::{self, DgpSpec};
use cfdml::vae::{self, GenerateOptions, VaeConfig};

fn main() -> cfdml::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(400);
    let spec = DgpSpec::raw_sample();
    let real = synth::generate_panel(&spec)?.table;

    let config = VaeConfig { latent_dim: 16, hidden: vec![64, 64], beta: 0.001, epochs, ..VaeConfig::default() };
    let trained = vae::train(&real, &config)?;
    for e in trained.trace.iter().step_by((epochs / 8).max(1)).chain(trained.trace.last()) {
        println!("epoch {:>4}: loss {:.4} (reconstruction {:.4}, kl {:.4})", e.epoch, e.loss, e.reconstruction, e.kl);
    }

    let generated = vae::generate_table(
        &trained.model,
        &real,
        real.n_rows(),
        GenerateOptions::new(config.mode, config.seed),
    )?;
    let quality = vae::validate(&real, &generated, &vae::default_columns(&real), config.gates)?;
    for c in &quality.columns {
        println!("{:<16} smd {:+.3}  mae {:.3}  mse {:.3}", c.name, c.smd, c.mae, c.mse);
    }
    println!("gates {}", if quality.pass { "passed" } else { "FAILED" });

    let merged = vae::merge(&real, &generated)?;
    let dml_config = DmlConfig { fe_keys: vec!["year".into(), "industry".into()], repetitions: 1, ..DmlConfig::default() };
    for (label, table) in [("real", &real), ("merged", &merged)] {
        let est = dml::estimate(table, &dml_config)?;
        println!("{label:<6} n {:>5}: theta {:+.4} se {:.4} (truth {:+.4})", est.n, est.theta, est.se, spec.theta);
    }
    Ok(())
}
