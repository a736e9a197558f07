//! Robustness grid over learners, split ratios, winsorization and
//! alternative treatment measures.

use serde::{Deserialize, Serialize};

use super::{estimate, DmlConfig, DmlEstimate, SplitRatio};
use crate::error::Result;
use crate::learners::LearnerSpec;
use crate::panel::{self, PanelTable, Role};

/// Winsorization percentiles applied when a cell asks for it.
pub const WINSOR_LOWER: f64 = 0.01;
pub const WINSOR_UPPER: f64 = 0.99;

/// Each empty dimension falls back to the base configuration's value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub learners: Vec<LearnerSpec>,
    pub split_ratios: Vec<SplitRatio>,
    pub winsorize: Vec<bool>,
    /// Column names to use as the treatment.
    pub treatments: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub index: usize,
    pub learner: String,
    pub split_ratio: SplitRatio,
    pub winsorized: bool,
    pub treatment: String,
    pub estimate: Option<DmlEstimate>,
    pub error: Option<String>,
}

impl GridCell {
    pub fn label(&self) -> String {
        format!(
            "{} {} {}{}",
            self.learner,
            self.split_ratio,
            self.treatment,
            if self.winsorized { " winsorized" } else { "" }
        )
    }
}

fn run_cell(table: &PanelTable, config: &DmlConfig, winsorize: bool, treatment: &str) -> Result<DmlEstimate> {
    let mut t = table.clone();
    if t.treatment_name().as_deref() != Some(treatment) {
        let values = t.column(treatment)?.to_vec();
        t.set_column(treatment, Role::Treatment, values)?;
    }
    let mut cfg = config.clone();
    cfg.treatment = Some(treatment.to_string());
    if winsorize {
        let (outcome, treatment, controls) = cfg.resolve(&t)?;
        let mut cols = vec![outcome, treatment];
        cols.extend(controls.into_iter().filter(|c| {
            t.column(c).map(|v| !panel::is_binary(v)).unwrap_or(false)
        }));
        t = panel::winsorize(&t, WINSOR_LOWER, WINSOR_UPPER, &cols)?;
    }
    estimate(&t, &cfg)
}

/// One estimate per cell of the Cartesian product, in learner-major order.
/// Every cell uses the base seed so cells are paired; a failing cell is
/// recorded with its error and the grid continues.
pub fn robustness_grid(table: &PanelTable, base: &DmlConfig, grid: &GridSpec) -> Result<Vec<GridCell>> {
    base.validate()?;
    let (_, base_treatment, _) = base.resolve(table)?;
    let learners: Vec<(LearnerSpec, LearnerSpec)> = if grid.learners.is_empty() {
        vec![(base.outcome_learner.clone(), base.treatment_learner.clone())]
    } else {
        grid.learners.iter().map(|l| (l.clone(), l.clone())).collect()
    };
    let ratios = if grid.split_ratios.is_empty() { vec![base.split_ratio] } else { grid.split_ratios.clone() };
    let winsor = if grid.winsorize.is_empty() { vec![false] } else { grid.winsorize.clone() };
    let treatments = if grid.treatments.is_empty() { vec![base_treatment] } else { grid.treatments.clone() };

    let mut cells = Vec::new();
    for (outcome_learner, treatment_learner) in &learners {
        for &ratio in &ratios {
            for &w in &winsor {
                for treatment in &treatments {
                    let cfg = DmlConfig {
                        outcome_learner: outcome_learner.clone(),
                        treatment_learner: treatment_learner.clone(),
                        split_ratio: ratio,
                        ..base.clone()
                    };
                    let result = run_cell(table, &cfg, w, treatment);
                    if let Err(e) = &result {
                        log::warn!("grid cell {} failed: {e}", cells.len());
                    }
                    let learner = if outcome_learner == treatment_learner {
                        outcome_learner.kind.label().to_string()
                    } else {
                        format!("{}/{}", outcome_learner.kind.label(), treatment_learner.kind.label())
                    };
                    let (estimate, error) = match result {
                        Ok(e) => (Some(e), None),
                        Err(e) => (None, Some(e.to_string())),
                    };
                    cells.push(GridCell {
                        index: cells.len(),
                        learner,
                        split_ratio: ratio,
                        winsorized: w,
                        treatment: treatment.clone(),
                        estimate,
                        error,
                    });
                }
            }
        }
    }
    Ok(cells)
}
