//! Subgroup estimates by region and by industry-chain segment.

use cfdml::dml::subgroup::{region_groups, segment_groups, subgroup_estimates};
use cfdml::dml::DmlConfig;
use cfdml::learners::{LearnerKind, LearnerSpec};
use cfdml::synth::{self, DgpSpec};

fn main() -> cfdml::Result<()> {
    let table = synth::generate_panel(&DgpSpec::merged_sample())?.table;
    let config = DmlConfig { fe_keys: vec!["year".into(), "industry".into()], repetitions: 1, ..DmlConfig::default() }
        .with_learner(LearnerSpec::new(LearnerKind::Ols));
    for (column, groups) in [("region", region_groups()), ("segment", segment_groups())] {
        println!("by {column}:");
        for r in subgroup_estimates(&table, &config, column, &groups)? {
            match (&r.estimate, &r.warning) {
                (Some(e), _) => println!("  {:<12} n {:>5}: {:+.4}{} ({:.4})", r.label, r.n, e.theta, e.stars(), e.se),
                (None, Some(w)) => println!("  {:<12} {w}", r.label),
                _ => {}
            }
        }
    }
    Ok(())
}
