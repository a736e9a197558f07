//! Estimates within subgroups such as regions or supply-chain segments.

use serde::{Deserialize, Serialize};

use super::{estimate, DmlConfig, DmlEstimate};
use crate::error::Result;
use crate::panel::PanelTable;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgroupResult {
    pub label: String,
    pub n: usize,
    pub estimate: Option<DmlEstimate>,
    pub warning: Option<String>,
}

/// Runs `estimate` separately on the rows whose `split_column` takes one of
/// each group's values. Groups smaller than ten rows per fold are skipped
/// with a warning; fixed-effect dummies are rebuilt inside every group.
pub fn subgroup_estimates(
    table: &PanelTable,
    config: &DmlConfig,
    split_column: &str,
    groups: &[(String, Vec<f64>)],
) -> Result<Vec<SubgroupResult>> {
    let key = table.column(split_column)?;
    let min_rows = 10 * config.split_ratio.folds();
    let mut out = Vec::with_capacity(groups.len());
    for (label, values) in groups {
        let rows: Vec<usize> = (0..table.n_rows()).filter(|&i| values.contains(&key[i])).collect();
        let n = rows.len();
        if n < min_rows {
            let warning = if n == 0 {
                format!("group `{label}` is empty; skipped")
            } else {
                format!("group `{label}` has {n} rows, fewer than {min_rows}; skipped")
            };
            log::warn!("{warning}");
            out.push(SubgroupResult { label: label.clone(), n, estimate: None, warning: Some(warning) });
            continue;
        }
        let sub = table.select_rows(&rows);
        let est = estimate(&sub, config)?;
        out.push(SubgroupResult { label: label.clone(), n, estimate: Some(est), warning: None });
    }
    Ok(out)
}

/// Region groups 1/2/3 labelled east, central and west.
pub fn region_groups() -> Vec<(String, Vec<f64>)> {
    vec![
        ("Eastern".into(), vec![1.0]),
        ("Central".into(), vec![2.0]),
        ("Western".into(), vec![3.0]),
    ]
}

/// Segment groups 1/2/3 labelled upstream, midstream and downstream.
pub fn segment_groups() -> Vec<(String, Vec<f64>)> {
    vec![
        ("Upstream".into(), vec![1.0]),
        ("Midstream".into(), vec![2.0]),
        ("Downstream".into(), vec![3.0]),
    ]
}
