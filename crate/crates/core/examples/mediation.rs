//! Fixed-effects regressions of the three mediators on the treatment,
//! rendered as a Markdown table.

use cfdml::dml::mediation::mediation_regression;
use cfdml::panel::FixedEffects;
use cfdml::report::{render_report, EstimateRow, Template};
use cfdml::synth::{self, DgpSpec, MediatorChain};

fn main() -> cfdml::Result<()> {
    let chain = MediatorChain { pressure: -0.0066, stability: 0.0057, media: 0.0117, t_target: 8.0 };
    let table = synth::generate_mediated(&DgpSpec::merged_sample(), chain)?.table;
    let mut rows = Vec::new();
    for (i, m) in [synth::PRESSURE, synth::STABILITY, synth::MEDIA].into_iter().enumerate() {
        let r = mediation_regression(&table, synth::TREATMENT, m, &[], FixedEffects::TWO_WAY)?;
        println!("{m:<10} {:+.5} (se {:.5}, p {:.3}, {} clusters)", r.coefficient, r.se, r.p_value, r.clusters);
        rows.push(EstimateRow::from_mediation(&format!("({})", i + 1), &r, false, &["firm".into(), "year".into()]));
    }
    println!("\n{}", render_report(&rows, Template::Mediation)?);
    Ok(())
}
