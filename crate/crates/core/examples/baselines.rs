//! Propensity-score matching and inverse-probability weighting on a
//! binary-treatment oracle with known ATT and ATE.

use cfdml::baseline::{self, BaselineConfig, BinarizeRule};
use cfdml::synth::{self, BinaryDgpSpec};

fn main() -> cfdml::Result<()> {
    let (table, truth) = synth::generate_binary(&BinaryDgpSpec::default())?;
    let config = BaselineConfig { rule: BinarizeRule::Threshold(0.5), ..BaselineConfig::default() };
    let report = baseline::run_baselines(&table, &config)?;
    println!(
        "treated {} / control {}, propensity ridge {}",
        report.treatment.n_treated, report.treatment.n_control, report.propensity.ridge
    );
    for (est, target) in [(&report.psm, truth.att), (&report.ipw, truth.ate)] {
        println!(
            "{:<4} {:+.4}{} (se {:.4}), truth {:+.4}, n {}",
            est.method,
            est.effect,
            est.stars(),
            est.se,
            target,
            est.n
        );
        for w in &est.warnings {
            println!("  warning: {w}");
        }
    }
    Ok(())
}
