//! Propensity score matching and inverse probability weighting on a
//! binarized treatment.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dml::{p_value, stars, Z95};
use crate::error::{Error, Result};
use crate::learners::logistic::{fit_logistic, LogisticParams};
use crate::panel::{self, PanelTable};

pub const PROPENSITY_MIN: f64 = 0.01;
pub const PROPENSITY_MAX: f64 = 0.99;
/// Ridge penalty used when the unpenalized fit separates.
pub const FALLBACK_RIDGE: f64 = 1.0;
const MIN_ARM: usize = 10;
const MIN_ESS: f64 = 10.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinarizeRule {
    #[default]
    MedianSplit,
    Threshold(f64),
}

/// Rows strictly above `cut` are treated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinarizedTreatment {
    pub rule: BinarizeRule,
    pub cut: f64,
    pub values: Vec<f64>,
    pub n_treated: usize,
    pub n_control: usize,
}

impl BinarizedTreatment {
    pub fn is_treated(&self, i: usize) -> bool {
        self.values[i] == 1.0
    }
}

pub fn binarize(treatment: &[f64], rule: BinarizeRule) -> Result<BinarizedTreatment> {
    let cut = match rule {
        BinarizeRule::MedianSplit => panel::median(treatment),
        BinarizeRule::Threshold(c) => c,
    };
    if !cut.is_finite() {
        return Err(Error::Domain(format!("binarization cut {cut} is not finite")));
    }
    let values: Vec<f64> = treatment.iter().map(|&d| if d > cut { 1.0 } else { 0.0 }).collect();
    let n_treated = values.iter().filter(|&&v| v == 1.0).count();
    let n_control = values.len() - n_treated;
    if n_treated == 0 || n_control == 0 {
        return Err(Error::Domain(format!(
            "cut {cut} leaves {n_treated} treated and {n_control} control rows; both arms must be nonempty"
        )));
    }
    Ok(BinarizedTreatment { rule, cut, values, n_treated, n_control })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Propensity {
    pub scores: Vec<f64>,
    /// Ridge penalty of the final fit; zero unless the fallback was needed.
    pub ridge: f64,
    pub warnings: Vec<String>,
}

/// Logistic propensities clipped to `[0.01, 0.99]`.
pub fn propensity_fit(features: &DMatrix<f64>, treatment: &BinarizedTreatment) -> Result<Propensity> {
    if features.nrows() != treatment.values.len() {
        return Err(Error::Shape(format!(
            "{} feature rows but {} treatment values",
            features.nrows(),
            treatment.values.len()
        )));
    }
    if treatment.n_treated < MIN_ARM || treatment.n_control < MIN_ARM {
        return Err(Error::Size(format!(
            "propensity model needs at least {MIN_ARM} rows per arm, got {} treated and {} control",
            treatment.n_treated, treatment.n_control
        )));
    }
    let mut warnings = Vec::new();
    let mut ridge = 0.0;
    let fit = match fit_logistic(features, &treatment.values, LogisticParams::default()) {
        Ok(f) => f,
        Err(Error::Convergence(msg)) => {
            let w = format!("propensity fit did not converge ({msg}); refitting with ridge {FALLBACK_RIDGE}");
            log::warn!("{w}");
            warnings.push(w);
            ridge = FALLBACK_RIDGE;
            fit_logistic(features, &treatment.values, LogisticParams { ridge, ..LogisticParams::default() })?
        }
        Err(e) => return Err(e),
    };
    let raw: Vec<f64> = (0..features.nrows()).map(|i| fit.probability(features, i)).collect();
    let clipped = raw.iter().filter(|&&p| !(PROPENSITY_MIN..=PROPENSITY_MAX).contains(&p)).count();
    if clipped > 0 {
        let w = format!("{clipped} propensities clipped to [{PROPENSITY_MIN}, {PROPENSITY_MAX}]");
        log::warn!("{w}");
        warnings.push(w);
    }
    let scores = raw.into_iter().map(|p| p.clamp(PROPENSITY_MIN, PROPENSITY_MAX)).collect();
    Ok(Propensity { scores, ridge, warnings })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineEstimate {
    pub method: String,
    pub effect: f64,
    pub se: f64,
    pub ci95: (f64, f64),
    pub p_value: f64,
    pub n: usize,
    /// Treated rows that found a match; equals `n` for weighting.
    pub matched: usize,
    pub warnings: Vec<String>,
}

impl BaselineEstimate {
    fn new(method: &str, effect: f64, se: f64, n: usize, matched: usize, warnings: Vec<String>) -> Self {
        BaselineEstimate {
            method: method.to_string(),
            effect,
            se,
            ci95: (effect - Z95 * se, effect + Z95 * se),
            p_value: p_value(effect, se),
            n,
            matched,
            warnings,
        }
    }

    pub fn stars(&self) -> &'static str {
        stars(self.p_value)
    }
}

fn check_inputs(outcome: &[f64], treatment: &BinarizedTreatment, propensities: &[f64]) -> Result<()> {
    if outcome.len() != treatment.values.len() || outcome.len() != propensities.len() {
        return Err(Error::Shape(format!(
            "outcome, treatment and propensity lengths differ: {}, {}, {}",
            outcome.len(),
            treatment.values.len(),
            propensities.len()
        )));
    }
    if let Some(p) = propensities.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::Domain(format!("propensity {p} is outside (0, 1)")));
    }
    Ok(())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One-to-one nearest-neighbour matching with replacement on the logit of
/// the propensity. The caliper is a multiple of the logit's SD; ties go to
/// the lowest row index.
pub fn psm_att(
    outcome: &[f64],
    treatment: &BinarizedTreatment,
    propensities: &[f64],
    caliper: f64,
) -> Result<BaselineEstimate> {
    check_inputs(outcome, treatment, propensities)?;
    if caliper.is_nan() || caliper <= 0.0 {
        return Err(Error::NoMatch);
    }
    let logits: Vec<f64> = propensities.iter().map(|&p| logit(p)).collect();
    let width = caliper * panel::sample_var(&logits).sqrt();
    let controls: Vec<usize> = (0..outcome.len()).filter(|&i| !treatment.is_treated(i)).collect();

    let mut diffs = Vec::with_capacity(treatment.n_treated);
    for t in (0..outcome.len()).filter(|&i| treatment.is_treated(i)) {
        let mut best: Option<(f64, usize)> = None;
        for &c in &controls {
            let dist = (logits[t] - logits[c]).abs();
            if best.is_none_or(|(d, _)| dist < d) {
                best = Some((dist, c));
            }
        }
        if let Some((dist, c)) = best {
            if dist <= width {
                diffs.push(outcome[t] - outcome[c]);
            }
        }
    }
    if diffs.is_empty() {
        return Err(Error::NoMatch);
    }
    let m = diffs.len();
    let att = panel::mean(&diffs);
    let se = if m > 1 { (panel::sample_var(&diffs) / m as f64).sqrt() } else { f64::NAN };
    let mut warnings = Vec::new();
    if m < treatment.n_treated {
        warnings.push(format!("{} of {} treated rows had no match within the caliper", treatment.n_treated - m, treatment.n_treated));
    }
    Ok(BaselineEstimate::new("psm", att, se, outcome.len(), m, warnings))
}

/// Kish effective sample size of a set of weights.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if s2 > 0.0 { s * s / s2 } else { 0.0 }
}

/// Normalized (Hajek) inverse probability weighting estimate of the ATE
/// with an influence-function standard error.
pub fn ipw_ate(outcome: &[f64], treatment: &BinarizedTreatment, propensities: &[f64]) -> Result<BaselineEstimate> {
    check_inputs(outcome, treatment, propensities)?;
    let n = outcome.len();
    let (mut w1, mut w0) = (vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        if treatment.is_treated(i) {
            w1[i] = 1.0 / propensities[i];
        } else {
            w0[i] = 1.0 / (1.0 - propensities[i]);
        }
    }
    let (s1, s0): (f64, f64) = (w1.iter().sum(), w0.iter().sum());
    let mu1 = (0..n).map(|i| w1[i] * outcome[i]).sum::<f64>() / s1;
    let mu0 = (0..n).map(|i| w0[i] * outcome[i]).sum::<f64>() / s0;
    let ate = mu1 - mu0;

    let nf = n as f64;
    let (m1, m0) = (s1 / nf, s0 / nf);
    let var = (0..n)
        .map(|i| {
            let psi = w1[i] * (outcome[i] - mu1) / m1 - w0[i] * (outcome[i] - mu0) / m0;
            psi * psi
        })
        .sum::<f64>()
        / (nf * nf);

    let mut warnings = Vec::new();
    for (label, w) in [("treated", &w1), ("control", &w0)] {
        let arm: Vec<f64> = w.iter().copied().filter(|&v| v > 0.0).collect();
        let ess = effective_sample_size(&arm);
        if ess < MIN_ESS {
            let msg = format!("{label} arm effective sample size {ess:.2} is below {MIN_ESS}; weights are unstable");
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    Ok(BaselineEstimate::new("ipw", ate, var.sqrt(), n, n, warnings))
}

fn default_caliper() -> f64 {
    0.2
}

fn default_fe() -> Vec<String> {
    vec![panel::YEAR_KEY.to_string(), "industry".to_string()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    #[serde(default)]
    pub outcome: Option<String>,
    #[serde(default)]
    pub treatment: Option<String>,
    #[serde(default)]
    pub controls: Option<Vec<String>>,
    #[serde(default)]
    pub rule: BinarizeRule,
    #[serde(default = "default_caliper")]
    pub caliper: f64,
    /// Fixed-effect dummies added to the propensity features. Keys missing
    /// from the table are skipped.
    #[serde(default = "default_fe")]
    pub fe_keys: Vec<String>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            outcome: None,
            treatment: None,
            controls: None,
            rule: BinarizeRule::default(),
            caliper: default_caliper(),
            fe_keys: default_fe(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub treatment: BinarizedTreatment,
    pub propensity: Propensity,
    pub psm: BaselineEstimate,
    pub ipw: BaselineEstimate,
}

/// Binarizes the treatment, fits propensities on controls and fixed-effect
/// dummies, then runs both estimators.
pub fn run_baselines(table: &PanelTable, config: &BaselineConfig) -> Result<BaselineReport> {
    let (outcome, treatment, controls) =
        panel::resolve_roles(table, config.outcome.as_deref(), config.treatment.as_deref(), config.controls.as_deref())?;
    let fe: Vec<String> = config
        .fe_keys
        .iter()
        .filter(|k| table.has_column(k) || k.as_str() == panel::YEAR_KEY)
        .cloned()
        .collect();
    let design = panel::expand_design_with(table, &controls, false, &fe)?;
    let binary = binarize(table.column(&treatment)?, config.rule)?;
    let propensity = propensity_fit(&design.matrix, &binary)?;
    let y = table.column(&outcome)?;
    let psm = psm_att(y, &binary, &propensity.scores, config.caliper)?;
    let ipw = ipw_ate(y, &binary, &propensity.scores)?;
    Ok(BaselineReport { treatment: binary, propensity, psm, ipw })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{self, BinaryDgpSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn arms(values: Vec<f64>) -> BinarizedTreatment {
        binarize(&values, BinarizeRule::Threshold(0.5)).unwrap()
    }

    #[test]
    fn median_split_and_empty_arm() {
        let b = binarize(&[1.0, 2.0, 3.0, 4.0], BinarizeRule::MedianSplit).unwrap();
        assert_eq!(b.cut, 2.5);
        assert_eq!(b.values, vec![0.0, 0.0, 1.0, 1.0]);
        assert!(matches!(binarize(&[1.0, 2.0], BinarizeRule::Threshold(5.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn independent_treatment_gives_flat_propensities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 20000;
        let x = DMatrix::from_fn(n, 3, |_, _| rng.random::<f64>());
        let t = arms((0..n).map(|_| if rng.random::<f64>() < 0.3 { 1.0 } else { 0.0 }).collect());
        let p = propensity_fit(&x, &t).unwrap();
        let (lo, hi) = p.scores.iter().fold((1.0_f64, 0.0_f64), |(a, b), &s| (a.min(s), b.max(s)));
        assert!(hi - lo < 0.05, "{lo}..{hi}");
        let share = t.n_treated as f64 / n as f64;
        assert!((panel::mean(&p.scores) - share).abs() < 1e-6);
    }

    #[test]
    fn constant_features_give_arm_share() {
        let x = DMatrix::from_element(40, 2, 1.5);
        let t = arms((0..40).map(|i| if i % 4 == 0 { 1.0 } else { 0.0 }).collect());
        let p = propensity_fit(&x, &t).unwrap();
        assert!(p.scores.iter().all(|&s| (s - 0.25).abs() < 1e-9));
    }

    #[test]
    fn separation_falls_back_with_warning() {
        let n = 60;
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64);
        let t = arms((0..n).map(|i| if i >= n / 2 { 1.0 } else { 0.0 }).collect());
        let p = propensity_fit(&x, &t).unwrap();
        assert_eq!(p.ridge, FALLBACK_RIDGE);
        assert!(!p.warnings.is_empty());
        assert_eq!(p.scores[0], PROPENSITY_MIN);
        assert_eq!(p.scores[n - 1], PROPENSITY_MAX);
    }

    #[test]
    fn perfect_matches_recover_gap() {
        // each treated row has a control twin with the same propensity
        let k = 15;
        let mut y = Vec::new();
        let mut t = Vec::new();
        let mut p = Vec::new();
        for i in 0..k {
            let base = i as f64;
            let score = 0.2 + 0.04 * i as f64;
            y.extend([base + 0.3, base]);
            t.extend([1.0, 0.0]);
            p.extend([score, score]);
        }
        let r = psm_att(&y, &arms(t), &p, 0.2).unwrap();
        assert!((r.effect - 0.3).abs() < 1e-12);
        assert_eq!(r.matched, k);
    }

    #[test]
    fn zero_caliper_is_no_match() {
        let t = arms(vec![1.0, 0.0, 1.0, 0.0]);
        assert!(matches!(psm_att(&[1.0, 0.0, 1.0, 0.0], &t, &[0.5; 4], 0.0), Err(Error::NoMatch)));
    }

    #[test]
    fn ties_go_to_lowest_row() {
        let t = arms(vec![1.0, 0.0, 0.0, 0.0]);
        let y = [10.0, 1.0, 2.0, 3.0];
        let r = psm_att(&y, &t, &[0.5, 0.4, 0.5, 0.5], f64::INFINITY).unwrap();
        assert_eq!(r.effect, 8.0);
    }

    #[test]
    fn uniform_propensities_give_mean_difference() {
        let t = arms(vec![1.0, 1.0, 0.0, 0.0, 0.0]);
        let y = [3.0, 5.0, 1.0, 2.0, 6.0];
        let r = ipw_ate(&y, &t, &[0.5; 5]).unwrap();
        assert!((r.effect - (4.0 - 3.0)).abs() < 1e-12);
        assert!(r.warnings.len() == 2, "tiny arms should warn: {:?}", r.warnings);
    }

    #[test]
    fn dominant_weight_warns() {
        let n = 40;
        let t = arms((0..n).map(|i| if i < 20 { 1.0 } else { 0.0 }).collect());
        let mut p = vec![0.5; n];
        p[0] = 0.01;
        let y: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let r = ipw_ate(&y, &t, &p).unwrap();
        assert!(r.warnings.iter().any(|w| w.contains("treated arm")), "{:?}", r.warnings);
    }

    #[test]
    fn shifting_outcome_leaves_effects_unchanged() {
        let (table, _) = synth::generate_binary(&BinaryDgpSpec { n: 600, ..BinaryDgpSpec::default() }).unwrap();
        let a = run_baselines(&table, &BaselineConfig::default()).unwrap();
        let mut shifted = table.clone();
        let y: Vec<f64> = table.column("y").unwrap().iter().map(|v| v + 7.0).collect();
        shifted.set_column("y", crate::panel::Role::Outcome, y).unwrap();
        let b = run_baselines(&shifted, &BaselineConfig::default()).unwrap();
        assert!((a.psm.effect - b.psm.effect).abs() < 1e-9);
        assert!((a.ipw.effect - b.ipw.effect).abs() < 1e-9);
    }

    #[test]
    fn binary_oracle_recovery() {
        let spec = BinaryDgpSpec::default();
        let (table, truth) = synth::generate_binary(&spec).unwrap();
        let cfg = BaselineConfig { rule: BinarizeRule::Threshold(0.5), ..BaselineConfig::default() };
        let r = run_baselines(&table, &cfg).unwrap();
        assert!((r.psm.effect - truth.att).abs() < 0.05, "psm {} vs {}", r.psm.effect, truth.att);
        assert!((r.ipw.effect - truth.ate).abs() < 0.05, "ipw {} vs {}", r.ipw.effect, truth.ate);
    }
}
