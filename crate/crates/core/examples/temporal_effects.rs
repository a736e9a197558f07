//! Separate a lagged effect from a null contemporaneous one.

use cfdml::dml::temporal::{temporal_effects, GeneratedRowPolicy};
use cfdml::dml::DmlConfig;
use cfdml::learners::{LearnerKind, LearnerSpec};
use cfdml::synth::{self, DgpSpec};

fn main() -> cfdml::Result<()> {
    let spec = DgpSpec {
        theta: 0.0,
        lag_effects: vec![-0.3726],
        firm_effect_treatment: 0.0,
        control_persistence: 0.0,
        ..DgpSpec::merged_sample()
    };
    let table = synth::generate_panel(&spec)?.table;
    let config = DmlConfig { fe_keys: vec!["year".into(), "industry".into()], repetitions: 1, ..DmlConfig::default() }
        .with_learner(LearnerSpec::new(LearnerKind::Ols));
    let t = temporal_effects(&table, &config, 2, GeneratedRowPolicy::default())?;
    let show = |label: &str, e: &cfdml::dml::DmlEstimate| {
        println!("{label:<18} {:+.4}{:<3} ({:.4})  n {}", e.theta, e.stars(), e.se, e.n)
    };
    show("current", &t.current);
    for (k, e) in t.lags.iter().enumerate() {
        show(&format!("lag {}", k + 1), e);
    }
    show("cumulative", &t.cumulative);
    Ok(())
}
