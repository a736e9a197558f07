//! Cross-fitted partially linear estimation and the analyses built on it.

pub mod grid;
pub mod mediation;
pub mod subgroup;
pub mod temporal;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::learners::{self, LearnerKind, LearnerSpec};
use crate::panel::{self, PanelTable};

pub use grid::{robustness_grid, GridCell, GridSpec};
pub use mediation::{mediation_regression, MediationResult};
pub use subgroup::{subgroup_estimates, SubgroupResult};
pub use temporal::{temporal_effects, GeneratedRowPolicy, TemporalEffects};

/// Sample-splitting ratio `a:b`, read as `K = (a + b) / a` folds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitRatio {
    pub estimation: u32,
    pub rest: u32,
}

impl SplitRatio {
    pub const ONE_TO_FOUR: SplitRatio = SplitRatio { estimation: 1, rest: 4 };

    pub fn new(estimation: u32, rest: u32) -> Result<Self> {
        if estimation == 0 || rest == 0 {
            return Err(Error::Config(format!("split ratio {estimation}:{rest} needs positive parts")));
        }
        if !(estimation + rest).is_multiple_of(estimation) {
            return Err(Error::Config(format!(
                "split ratio {estimation}:{rest} does not give a whole number of folds"
            )));
        }
        Ok(SplitRatio { estimation, rest })
    }

    pub fn folds(&self) -> usize {
        ((self.estimation + self.rest) / self.estimation) as usize
    }
}

impl fmt::Display for SplitRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.estimation, self.rest)
    }
}

impl FromStr for SplitRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("split ratio `{s}` is not of the form a:b")))?;
        let parse = |p: &str| {
            p.trim()
                .parse::<u32>()
                .map_err(|_| Error::Config(format!("split ratio `{s}` has a non-integer part")))
        };
        SplitRatio::new(parse(a)?, parse(b)?)
    }
}

impl Serialize for SplitRatio {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for SplitRatio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn default_learner() -> LearnerSpec {
    LearnerSpec::new(LearnerKind::Gbdt)
}

fn default_repetitions() -> usize {
    5
}

fn default_true() -> bool {
    true
}

fn default_ratio() -> SplitRatio {
    SplitRatio::ONE_TO_FOUR
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DmlConfig {
    /// Defaults to the table's outcome column.
    #[serde(default)]
    pub outcome: Option<String>,
    /// Defaults to the table's treatment column.
    #[serde(default)]
    pub treatment: Option<String>,
    /// Defaults to every control-role column.
    #[serde(default)]
    pub controls: Option<Vec<String>>,
    #[serde(default = "default_true")]
    pub add_quadratics: bool,
    #[serde(default)]
    pub fe_keys: Vec<String>,
    #[serde(default = "default_ratio")]
    pub split_ratio: SplitRatio,
    #[serde(default = "default_learner")]
    pub outcome_learner: LearnerSpec,
    #[serde(default = "default_learner")]
    pub treatment_learner: LearnerSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub keep_residuals: bool,
}

impl Default for DmlConfig {
    fn default() -> Self {
        DmlConfig {
            outcome: None,
            treatment: None,
            controls: None,
            add_quadratics: true,
            fe_keys: Vec::new(),
            split_ratio: SplitRatio::ONE_TO_FOUR,
            outcome_learner: default_learner(),
            treatment_learner: default_learner(),
            seed: 0,
            repetitions: default_repetitions(),
            keep_residuals: false,
        }
    }
}

impl DmlConfig {
    /// Same learner for both nuisances.
    pub fn with_learner(mut self, spec: LearnerSpec) -> Self {
        self.outcome_learner = spec.clone();
        self.treatment_learner = spec;
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: DmlConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        self.outcome_learner.validate()?;
        self.treatment_learner.validate()
    }

    fn resolve(&self, table: &PanelTable) -> Result<(String, String, Vec<String>)> {
        panel::resolve_roles(table, self.outcome.as_deref(), self.treatment.as_deref(), self.controls.as_deref())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldDiagnostics {
    pub fold: usize,
    pub n: usize,
    pub r2_outcome: f64,
    pub r2_treatment: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub outcome: Vec<f64>,
    pub treatment: Vec<f64>,
    pub fold_of: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmlEstimate {
    pub theta: f64,
    pub se: f64,
    pub ci95: (f64, f64),
    pub p_value: f64,
    pub n: usize,
    pub folds: usize,
    pub repetitions: usize,
    /// (theta, se) of each cross-fitting repetition.
    pub per_repetition: Vec<(f64, f64)>,
    /// Out-of-fold fit quality of the first repetition.
    pub diagnostics: Vec<FoldDiagnostics>,
    pub residuals: Option<Residuals>,
    pub warnings: Vec<String>,
}

impl DmlEstimate {
    pub fn stars(&self) -> &'static str {
        stars(self.p_value)
    }
}

/// Two-sided normal p-value of `estimate / se`.
pub fn p_value(estimate: f64, se: f64) -> f64 {
    if !(se > 0.0) {
        return if estimate == 0.0 { 1.0 } else { 0.0 };
    }
    let z = (estimate / se).abs();
    2.0 * (1.0 - Normal::standard().cdf(z))
}

pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

pub const Z95: f64 = 1.96;

/// Residual-on-residual slope with its HC1 standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FinalStage {
    pub theta: f64,
    pub se: f64,
}

pub fn final_stage(outcome_residual: &[f64], treatment_residual: &[f64]) -> Result<FinalStage> {
    let n = outcome_residual.len();
    if n != treatment_residual.len() {
        return Err(Error::Shape("residual vectors differ in length".into()));
    }
    if n < 2 {
        return Err(Error::Size("need at least 2 residual pairs".into()));
    }
    let sxx: f64 = treatment_residual.iter().map(|d| d * d).sum();
    if !(sxx > 0.0) {
        return Err(Error::Degenerate("treatment residuals are identically zero".into()));
    }
    let sxy: f64 = treatment_residual.iter().zip(outcome_residual).map(|(d, y)| d * y).sum();
    let theta = sxy / sxx;
    let meat: f64 = treatment_residual
        .iter()
        .zip(outcome_residual)
        .map(|(d, y)| {
            let psi = d * (y - theta * d);
            psi * psi
        })
        .sum();
    let nf = n as f64;
    let var = nf / (nf - 1.0) * meat / (sxx * sxx);
    Ok(FinalStage { theta, se: var.sqrt() })
}

fn oof_r2(y: &[f64], pred: &[f64], rows: &[usize]) -> f64 {
    let m = rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len() as f64;
    let sst: f64 = rows.iter().map(|&i| (y[i] - m).powi(2)).sum();
    let sse: f64 = rows.iter().map(|&i| (y[i] - pred[i]).powi(2)).sum();
    if sst > 0.0 {
        1.0 - sse / sst
    } else {
        0.0
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

struct Repetition {
    stage: FinalStage,
    diagnostics: Vec<FoldDiagnostics>,
    residuals: Residuals,
    warnings: Vec<String>,
}

fn cross_fit(
    x: &DMatrix<f64>,
    y: &[f64],
    d: &[f64],
    config: &DmlConfig,
    rep: usize,
) -> Result<Repetition> {
    let n = y.len();
    let folds = config.split_ratio.folds();
    let rep_seed = learners::derive_seed(config.seed, rep as u64);
    let fold_of = learners::fold_assignment(n, folds, rep_seed)?;
    let stage_spec = |spec: &LearnerSpec, k: u64| LearnerSpec {
        seed: learners::derive_seed(rep_seed ^ spec.seed, k),
        ..spec.clone()
    };
    let l_hat = learners::oof_predict_with(&stage_spec(&config.outcome_learner, 1), x, y, &fold_of)?;
    let m_hat = learners::oof_predict_with(&stage_spec(&config.treatment_learner, 2), x, d, &fold_of)?;
    let y_res: Vec<f64> = y.iter().zip(&l_hat.predictions).map(|(a, b)| a - b).collect();
    let d_res: Vec<f64> = d.iter().zip(&m_hat.predictions).map(|(a, b)| a - b).collect();

    let ss_res: f64 = d_res.iter().map(|v| v * v).sum();
    let var_d = panel::sample_var(d);
    if ss_res < 1e-12 * n as f64 * var_d || var_d == 0.0 {
        return Err(Error::Degenerate(format!(
            "treatment is fully explained by the controls (residual sum of squares {ss_res:.3e})"
        )));
    }
    let stage = final_stage(&y_res, &d_res)?;
    let diagnostics = (0..folds)
        .map(|k| {
            let rows: Vec<usize> = (0..n).filter(|&i| fold_of[i] == k).collect();
            FoldDiagnostics {
                fold: k,
                n: rows.len(),
                r2_outcome: oof_r2(y, &l_hat.predictions, &rows),
                r2_treatment: oof_r2(d, &m_hat.predictions, &rows),
            }
        })
        .collect();
    let mut warnings = l_hat.warnings;
    warnings.extend(m_hat.warnings);
    Ok(Repetition {
        stage,
        diagnostics,
        residuals: Residuals {
            outcome: y_res,
            treatment: d_res,
            fold_of,
        },
        warnings,
    })
}

/// Partially linear DML estimate of the treatment effect.
pub fn estimate(table: &PanelTable, config: &DmlConfig) -> Result<DmlEstimate> {
    config.validate()?;
    let (outcome, treatment, controls) = config.resolve(table)?;
    let n = table.n_rows();
    let folds = config.split_ratio.folds();
    if n < 10 * folds {
        return Err(Error::Size(format!(
            "{n} rows are fewer than 10 x {folds} folds"
        )));
    }
    let design = panel::expand_design_with(table, &controls, config.add_quadratics, &config.fe_keys)?;
    let y = table.column(&outcome)?;
    let d = table.column(&treatment)?;
    let mut reps = Vec::with_capacity(config.repetitions);
    for r in 0..config.repetitions {
        reps.push(cross_fit(&design.matrix, y, d, config, r)?);
    }
    let per_repetition: Vec<(f64, f64)> = reps.iter().map(|r| (r.stage.theta, r.stage.se)).collect();
    let theta = median(&mut per_repetition.iter().map(|p| p.0).collect::<Vec<_>>());
    let se = median(&mut per_repetition.iter().map(|p| p.1).collect::<Vec<_>>());
    let mut warnings: Vec<String> = Vec::new();
    for r in &reps {
        for w in &r.warnings {
            if !warnings.contains(w) {
                warnings.push(w.clone());
            }
        }
    }
    let first = reps.swap_remove(0);
    Ok(DmlEstimate {
        theta,
        se,
        ci95: (theta - Z95 * se, theta + Z95 * se),
        p_value: p_value(theta, se),
        n,
        folds,
        repetitions: config.repetitions,
        per_repetition,
        diagnostics: first.diagnostics,
        residuals: config.keep_residuals.then_some(first.residuals),
        warnings,
    })
}
