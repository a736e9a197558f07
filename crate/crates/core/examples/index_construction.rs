//! Build the firm-level indices from small inline inputs: greenwashing from
//! disclosure rubrics, city pollution by entropy-weight TOPSIS, executive
//! team stability, analyst pressure and media tone.

use cfdml::index::{self, DisclosureRecord, ForecastRow, RosterEntry, Rubric};

const CITIES: &str = "city,wastewater,so2,dust
Shanghai,21.3,1.8,2.2
Lanzhou,6.1,4.9,3.8
Kunming,4.4,0.9,1.1
";

const ROSTER: &str = "firm_id,year,member
F1,2020,chen
F1,2020,li
F1,2020,wang
F1,2021,chen
F1,2021,li
F1,2021,zhao
F2,2020,sun
F2,2021,sun
";

const FORECASTS: &str = "firm_id,year,forecast,actual,assets
F1,2020,1.10,0.95,120
F1,2020,1.30,0.95,120
F2,2020,0.40,0.52,80
";

fn main() -> cfdml::Result<()> {
    let maximal = index::substantive_score(&Rubric::maximal())?;
    println!("rubric ceiling: {maximal}");

    let rubric = |e: u8, credible: u8| Rubric { emissions: [e; 6], credibility: [credible; 5], ..Rubric::default() };
    let records = vec![
        DisclosureRecord { firm_id: "F1".into(), year: 2021, keyword_hits: 310, total_tokens: 9000, rubric: rubric(0, 0) },
        DisclosureRecord { firm_id: "F2".into(), year: 2021, keyword_hits: 120, total_tokens: 8000, rubric: rubric(2, 1) },
        DisclosureRecord { firm_id: "F3".into(), year: 2021, keyword_hits: 200, total_tokens: 7000, rubric: rubric(1, 1) },
    ];
    for s in index::greenwash_index(&records)? {
        println!("greenwash {} {}: words {:+.3}, deeds {:+.3}, gap {:+.3}", s.firm_id, s.year, s.mws, s.mrs, s.gw);
    }

    let (cities, matrix) = index::read_city_matrix(CITIES.as_bytes())?;
    let topsis = index::entropy_topsis(&matrix)?;
    println!("indicator weights {:.3?}", topsis.weights);
    for (city, c) in cities.iter().zip(&topsis.closeness) {
        println!("pollution {city}: {c:.3}");
    }

    let roster: Vec<RosterEntry> = index::read_roster(ROSTER.as_bytes())?;
    for v in index::roster_stability(&roster)? {
        println!("stability {} {}: {:.3}", v.firm_id, v.year, v.value);
    }

    let forecasts: Vec<ForecastRow> = index::read_forecasts(FORECASTS.as_bytes())?;
    for v in index::pressure_from_forecasts(&forecasts)? {
        println!("pressure {} {}: {:+.5}", v.firm_id, v.year, v.value);
    }

    for (e, c, t) in [(12, 3, 20), (2, 9, 15), (4, 4, 10)] {
        println!("media tone e={e} c={c} t={t}: {:+.3}", index::jf_coefficient(e, c, t)?);
    }
    Ok(())
}
