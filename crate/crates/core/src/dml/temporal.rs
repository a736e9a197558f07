//! Current, lagged and cumulative treatment effects.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{estimate, DmlConfig, DmlEstimate};
use crate::error::{Error, Result};
use crate::panel::{PanelTable, Role, RowOrigin};

/// How generated rows find their treatment history.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratedRowPolicy {
    /// Use the history of the real firm-year the row was generated from.
    #[default]
    SourceLinkage,
    /// Drop generated rows from every lagged or cumulative estimate.
    Exclude,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalEffects {
    pub current: DmlEstimate,
    /// Entry `k` is the effect of the treatment `k + 1` years earlier.
    pub lags: Vec<DmlEstimate>,
    /// Effect of the within-firm mean treatment over years `t - max_lag ..= t`.
    pub cumulative: DmlEstimate,
    pub max_lag: usize,
}

struct History {
    by_key: HashMap<(String, i32), f64>,
}

impl History {
    fn new(table: &PanelTable, treatment: &[f64]) -> Self {
        let mut by_key = HashMap::new();
        for i in 0..table.n_rows() {
            if table.origin(i) == RowOrigin::Real {
                by_key.insert((table.firm_ids()[i].clone(), table.years()[i]), treatment[i]);
            }
        }
        History { by_key }
    }

    /// Anchor firm and year whose history row `i` borrows.
    fn anchor(table: &PanelTable, i: usize, policy: GeneratedRowPolicy) -> Option<(String, i32)> {
        match table.origin(i) {
            RowOrigin::Real => Some((table.firm_ids()[i].clone(), table.years()[i])),
            RowOrigin::Generated { source_firm, source_year } => match policy {
                GeneratedRowPolicy::SourceLinkage => Some((source_firm, source_year)),
                GeneratedRowPolicy::Exclude => None,
            },
        }
    }

    fn get(&self, firm: &str, year: i32) -> Option<f64> {
        self.by_key.get(&(firm.to_string(), year)).copied()
    }
}

/// Table restricted to rows that have the needed history, with the
/// treatment column replaced by `value(row)`.
fn with_treatment(table: &PanelTable, treatment: &str, rows_values: Vec<(usize, f64)>) -> Result<PanelTable> {
    let rows: Vec<usize> = rows_values.iter().map(|p| p.0).collect();
    let mut sub = table.select_rows(&rows);
    sub.set_column(treatment, Role::Treatment, rows_values.into_iter().map(|p| p.1).collect())?;
    Ok(sub)
}

pub fn temporal_effects(
    table: &PanelTable,
    config: &DmlConfig,
    max_lag: usize,
    policy: GeneratedRowPolicy,
) -> Result<TemporalEffects> {
    let (_, treatment, _) = config.resolve(table)?;
    let years: BTreeSet<i32> = table.years().iter().copied().collect();
    let span = match (years.first(), years.last()) {
        (Some(a), Some(b)) => (b - a + 1) as usize,
        _ => 0,
    };
    if max_lag >= span {
        return Err(Error::Span { max_lag, span });
    }
    let d = table.column(&treatment)?;
    let history = History::new(table, d);
    let current = estimate(table, config)?;

    let anchors: Vec<Option<(String, i32)>> =
        (0..table.n_rows()).map(|i| History::anchor(table, i, policy)).collect();
    let lagged = |k: usize| -> Vec<(usize, f64)> {
        anchors
            .iter()
            .enumerate()
            .filter_map(|(i, a)| {
                let (firm, year) = a.as_ref()?;
                history.get(firm, year - k as i32).map(|v| (i, v))
            })
            .collect()
    };
    let mut lags = Vec::with_capacity(max_lag);
    for k in 1..=max_lag {
        let rows = lagged(k);
        log::info!("lag {k}: {} of {} rows have history", rows.len(), table.n_rows());
        lags.push(estimate(&with_treatment(table, &treatment, rows)?, config)?);
    }

    let cumulative = if max_lag == 0 {
        current.clone()
    } else {
        let rows: Vec<(usize, f64)> = anchors
            .iter()
            .enumerate()
            .filter_map(|(i, a)| {
                let (firm, year) = a.as_ref()?;
                let window: Option<Vec<f64>> =
                    (0..=max_lag).map(|k| history.get(firm, year - k as i32)).collect();
                let w = window?;
                // generated rows keep their own current treatment
                let own = d[i];
                let total: f64 = own + w[1..].iter().sum::<f64>();
                Some((i, total / w.len() as f64))
            })
            .collect();
        estimate(&with_treatment(table, &treatment, rows)?, config)?
    };
    Ok(TemporalEffects { current, lags, cumulative, max_lag })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{LearnerKind, LearnerSpec};
    use crate::panel::Column;
    use crate::synth::{self, DgpSpec};

    fn ols() -> DmlConfig {
        DmlConfig {
            add_quadratics: false,
            fe_keys: vec!["year".into(), "industry".into()],
            repetitions: 1,
            ..DmlConfig::default()
        }
        .with_learner(LearnerSpec::new(LearnerKind::Ols))
    }

    fn lag_spec(seed: u64) -> DgpSpec {
        DgpSpec {
            theta: 0.0,
            lag_effects: vec![-0.3726],
            firm_effect_treatment: 0.0,
            control_persistence: 0.0,
            seed,
            ..DgpSpec::merged_sample()
        }
    }

    #[test]
    fn lag_zero_matches_estimate() {
        let g = synth::generate_panel(&DgpSpec::raw_sample()).unwrap();
        let t = temporal_effects(&g.table, &ols(), 0, GeneratedRowPolicy::default()).unwrap();
        let e = estimate(&g.table, &ols()).unwrap();
        assert_eq!(t.current, e);
        assert_eq!(t.cumulative.theta, e.theta);
        assert!(t.lags.is_empty());
    }

    #[test]
    fn span_error() {
        let g = synth::generate_panel(&DgpSpec::raw_sample()).unwrap();
        let r = temporal_effects(&g.table, &ols(), 13, GeneratedRowPolicy::default());
        assert!(matches!(r, Err(Error::Span { max_lag: 13, span: 13 })));
    }

    #[test]
    fn lag_separation() {
        let g = synth::generate_panel(&lag_spec(1)).unwrap();
        let t = temporal_effects(&g.table, &ols(), 1, GeneratedRowPolicy::default()).unwrap();
        assert!(t.lags[0].p_value < 0.01);
        assert!(t.current.ci95.0 <= 0.0 && 0.0 <= t.current.ci95.1, "{:?}", t.current.ci95);
    }

    #[test]
    fn generated_rows_follow_policy() {
        let g = synth::generate_panel(&DgpSpec::raw_sample()).unwrap().table;
        // duplicate every row as a generated copy of itself
        let n = g.n_rows();
        let mut firm_ids = g.firm_ids().to_vec();
        firm_ids.extend(g.firm_ids().iter().map(|f| format!("{f}~gen")));
        let mut years = g.years().to_vec();
        years.extend_from_slice(g.years());
        let cols = g
            .columns()
            .iter()
            .map(|c| Column { name: c.name.clone(), role: c.role, values: [c.values.clone(), c.values.clone()].concat() })
            .collect();
        let mut origins = vec![RowOrigin::Real; n];
        origins.extend((0..n).map(|i| RowOrigin::Generated {
            source_firm: g.firm_ids()[i].clone(),
            source_year: g.years()[i],
        }));
        let merged = PanelTable::new(firm_ids, years, cols).unwrap().with_origins(origins).unwrap();
        let linked = temporal_effects(&merged, &ols(), 1, GeneratedRowPolicy::SourceLinkage).unwrap();
        let excluded = temporal_effects(&merged, &ols(), 1, GeneratedRowPolicy::Exclude).unwrap();
        assert_eq!(linked.lags[0].n, 2 * excluded.lags[0].n);
    }
}
