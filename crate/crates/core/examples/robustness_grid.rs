//! Sweep learners, split ratios, winsorization and treatment definitions.

use cfdml::dml::grid::{robustness_grid, GridSpec};
use cfdml::dml::{DmlConfig, SplitRatio};
use cfdml::learners::{LearnerKind, LearnerSpec};
use cfdml::synth::{self, DgpSpec};

fn main() -> cfdml::Result<()> {
    let table = synth::generate_panel(&DgpSpec::merged_sample())?.table;
    let base = DmlConfig { fe_keys: vec!["year".into(), "industry".into()], repetitions: 1, ..DmlConfig::default() };
    let grid = GridSpec {
        learners: vec![LearnerSpec::new(LearnerKind::Ols), LearnerSpec::new(LearnerKind::Lasso)],
        split_ratios: vec![SplitRatio::new(1, 2)?, SplitRatio::new(1, 4)?],
        winsorize: vec![false, true],
        treatments: vec![synth::TREATMENT.into(), synth::TREATMENT_2TO5.into(), synth::TREATMENT_SECOND.into()],
    };
    for cell in robustness_grid(&table, &base, &grid)? {
        match (&cell.estimate, &cell.error) {
            (Some(e), _) => println!("{:<45} {:+.4}{:<3} ({:.4})", cell.label(), e.theta, e.stars(), e.se),
            (None, Some(err)) => println!("{:<45} failed: {err}", cell.label()),
            _ => {}
        }
    }
    Ok(())
}
