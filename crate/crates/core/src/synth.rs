//! Synthetic firm-year panels with planted effects.
//!
//! Controls follow the scale of a mining-chain panel (firm size around 23.6
//! in log assets, leverage around 0.52, and so on). The treatment is an
//! equity-balance ratio in `[0.0013, 1]` and the outcome a standardized
//! greenwashing score.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::logistic::sigmoid;
use crate::panel::{self, Column, PanelTable, Role, TreatmentVariant};

pub const OUTCOME: &str = "gw";
pub const TREATMENT: &str = "balance";
pub const TREATMENT_2TO5: &str = "balance_2to5";
pub const TREATMENT_SECOND: &str = "balance_second";
pub const PRESSURE: &str = "pressure";
pub const STABILITY: &str = "tmt_stability";
pub const MEDIA: &str = "media";

pub const D_MIN: f64 = 0.0013;
pub const D_MAX: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuisanceShape {
    Linear,
    Nonlinear,
}

impl NuisanceShape {
    /// Treatment and outcome nuisance values at `(x1, x2)`.
    pub fn eval(self, x1: f64, x2: f64) -> (f64, f64) {
        match self {
            NuisanceShape::Nonlinear => (x1.sin() + 0.3 * x2 * x2, x1.cos() + x2),
            NuisanceShape::Linear => (0.8 * x1 + 0.3 * x2, 0.5 * x1 + x2),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Marginal {
    Normal { mean: f64, sd: f64 },
    /// `min + LogNormal`, matched to the given mean and SD.
    ShiftedLogNormal { mean: f64, sd: f64 },
    Bernoulli(f64),
}

struct ControlDef {
    name: &'static str,
    marginal: Marginal,
    min: f64,
    max: f64,
}

const CONTROLS: [ControlDef; 12] = [
    ControlDef { name: "size", marginal: Marginal::Normal { mean: 23.5987, sd: 1.2046 }, min: 19.1979, max: 28.6365 },
    ControlDef { name: "lev", marginal: Marginal::Normal { mean: 0.5223, sd: 0.1478 }, min: 0.0156, max: 1.3986 },
    ControlDef { name: "rota", marginal: Marginal::Normal { mean: 0.0375, sd: 0.0600 }, min: -0.6438, max: 0.9533 },
    ControlDef { name: "growth", marginal: Marginal::Normal { mean: 0.1635, sd: 0.2933 }, min: -0.9913, max: 6.1752 },
    ControlDef { name: "indep", marginal: Marginal::Normal { mean: 0.3720, sd: 0.0397 }, min: 0.25, max: 0.6667 },
    ControlDef { name: "dual", marginal: Marginal::Bernoulli(0.1216), min: 0.0, max: 1.0 },
    ControlDef { name: "top1", marginal: Marginal::Normal { mean: 0.4212, sd: 0.1632 }, min: 0.0339, max: 0.8999 },
    ControlDef { name: "age", marginal: Marginal::Normal { mean: 2.9227, sd: 0.2574 }, min: 1.3863, max: 3.6636 },
    ControlDef { name: "incentive", marginal: Marginal::Normal { mean: 15.3584, sd: 0.6964 }, min: 11.3206, max: 18.5134 },
    ControlDef { name: "soe", marginal: Marginal::Bernoulli(0.6661), min: 0.0, max: 1.0 },
    ControlDef { name: "hhi", marginal: Marginal::ShiftedLogNormal { mean: 0.1922, sd: 0.1110 }, min: 0.0888, max: 0.9675 },
    ControlDef { name: "pollution", marginal: Marginal::ShiftedLogNormal { mean: 0.0750, sd: 0.0578 }, min: 0.0004, max: 0.5163 },
];

/// Names of the generated control columns, in column order.
pub fn control_names() -> Vec<String> {
    CONTROLS.iter().map(|c| c.name.to_string()).collect()
}

/// Target mean and SD of each generated control before range clipping.
pub fn control_targets() -> Vec<(String, f64, f64)> {
    CONTROLS
        .iter()
        .map(|c| {
            let (m, s) = match c.marginal {
                Marginal::Normal { mean, sd } | Marginal::ShiftedLogNormal { mean, sd } => (mean, sd),
                Marginal::Bernoulli(p) => (p, (p * (1.0 - p)).sqrt()),
            };
            (c.name.to_string(), m, s)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediatorChain {
    pub pressure: f64,
    pub stability: f64,
    pub media: f64,
    /// Planted t-statistic that sets each mediator's noise level.
    #[serde(default = "default_mediator_t")]
    pub t_target: f64,
}

fn default_mediator_t() -> f64 {
    8.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DgpSpec {
    pub n_firms: usize,
    pub n_years: usize,
    pub first_year: i32,
    pub theta: f64,
    /// Effects for regions 1 (east), 2 (central), 3 (west); overrides `theta`.
    pub theta_by_region: Option<[f64; 3]>,
    /// Effect of the treatment `k + 1` years earlier.
    pub lag_effects: Vec<f64>,
    pub nuisance: NuisanceShape,
    pub treatment_noise: f64,
    pub outcome_noise: f64,
    pub firm_effect_treatment: f64,
    pub firm_effect_outcome: f64,
    /// Scales how strongly controls and industry drive the treatment.
    pub confounding: f64,
    /// Share of each continuous control's variance that is a fixed firm trait.
    pub control_persistence: f64,
    pub n_industries: usize,
    pub dropout: f64,
    /// Exact number of observed rows; overrides `dropout`.
    pub observed_rows: Option<usize>,
    pub mediators: Option<MediatorChain>,
    pub seed: u64,
}

impl Default for DgpSpec {
    fn default() -> Self {
        DgpSpec {
            n_firms: 201,
            n_years: 13,
            first_year: 2010,
            theta: -0.3726,
            theta_by_region: None,
            lag_effects: Vec::new(),
            nuisance: NuisanceShape::Nonlinear,
            treatment_noise: 0.2,
            outcome_noise: 0.2,
            firm_effect_treatment: 0.05,
            firm_effect_outcome: 0.2,
            confounding: 1.0,
            control_persistence: 0.5,
            n_industries: 6,
            dropout: 1.0 / 3.0,
            observed_rows: None,
            mediators: None,
            seed: 0,
        }
    }
}

impl DgpSpec {
    /// The realized panel size used throughout: 1,743 observed firm-years.
    pub fn raw_sample() -> Self {
        DgpSpec {
            observed_rows: Some(1743),
            ..DgpSpec::default()
        }
    }

    /// A panel with as many rows as the merged real-plus-generated sample.
    pub fn merged_sample() -> Self {
        DgpSpec {
            n_firms: 402,
            observed_rows: Some(3486),
            ..DgpSpec::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: DgpSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn total_rows(&self) -> usize {
        self.n_firms * self.n_years
    }

    pub fn n_observed(&self) -> usize {
        self.observed_rows
            .unwrap_or_else(|| (self.total_rows() as f64 * (1.0 - self.dropout)).round() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_rows() < 50 {
            return Err(Error::Config(format!(
                "n_firms x n_years = {} is below 50",
                self.total_rows()
            )));
        }
        if !(self.treatment_noise > 0.0) {
            return Err(Error::Config("treatment_noise must be positive".into()));
        }
        for (name, v) in [
            ("outcome_noise", self.outcome_noise),
            ("firm_effect_treatment", self.firm_effect_treatment),
            ("firm_effect_outcome", self.firm_effect_outcome),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(0.0..=1.0).contains(&self.control_persistence) {
            return Err(Error::Config("control_persistence must lie in [0, 1]".into()));
        }
        if self.n_industries == 0 {
            return Err(Error::Config("n_industries must be positive".into()));
        }
        if let Some(n) = self.observed_rows {
            if n == 0 || n > self.total_rows() {
                return Err(Error::Config(format!(
                    "observed_rows {n} outside 1..={}",
                    self.total_rows()
                )));
            }
        }
        if self.lag_effects.len() >= self.n_years {
            return Err(Error::Config("more lag effects than years".into()));
        }
        let finite = std::iter::once(self.theta)
            .chain(self.theta_by_region.into_iter().flatten())
            .chain(self.lag_effects.iter().copied())
            .chain(self.mediators.iter().flat_map(|m| [m.pressure, m.stability, m.media, m.t_target]));
        for v in finite {
            if !v.is_finite() {
                return Err(Error::Config("planted coefficients must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Ground truth behind a generated panel, aligned with its rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub theta: f64,
    pub theta_by_region: Option<[f64; 3]>,
    pub lag_effects: Vec<f64>,
    pub mediators: Option<MediatorChain>,
    /// E[D | X] before clipping, per observed row.
    pub treatment_mean: Vec<f64>,
    /// Outcome component not driven by the treatment, per observed row
    /// (controls, industry and year effects, excluding firm effect and noise).
    pub outcome_nuisance: Vec<f64>,
    pub n_rows: usize,
    pub seed: u64,
}

impl GroundTruth {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug)]
pub struct Generated {
    pub table: PanelTable,
    pub truth: GroundTruth,
}

fn draw_marginal(def: &ControlDef, firm_z: f64, rho: f64, rng: &mut ChaCha8Rng) -> f64 {
    let e: f64 = rng.sample(StandardNormal);
    let z = rho.sqrt() * firm_z + (1.0 - rho).sqrt() * e;
    let v = match def.marginal {
        Marginal::Normal { mean, sd } => mean + sd * z,
        Marginal::ShiftedLogNormal { mean, sd } => {
            let m = mean - def.min;
            let s2 = (1.0 + (sd / m).powi(2)).ln();
            def.min + (m.ln() - 0.5 * s2 + s2.sqrt() * z).exp()
        }
        Marginal::Bernoulli(p) => {
            // threshold a latent normal so persistence carries over
            let u = 0.5 * (1.0 + statrs::function::erf::erf(z / 2f64.sqrt()));
            if u < p { 1.0 } else { 0.0 }
        }
    };
    v.clamp(def.min, def.max)
}

fn standardized(def: &ControlDef, v: f64) -> f64 {
    match def.marginal {
        Marginal::Normal { mean, sd } | Marginal::ShiftedLogNormal { mean, sd } => (v - mean) / sd,
        Marginal::Bernoulli(p) => (v - p) / (p * (1.0 - p)).sqrt(),
    }
}

/// Splits the second-to-tenth stakes (`balance * top1` in total) into nine
/// descending holdings.
fn stakes(top1: f64, balance: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut shares: Vec<f64> = (0..9).map(|_| -rng.random::<f64>().max(1e-12).ln()).collect();
    shares.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = shares.iter().sum();
    let mut out = vec![top1];
    out.extend(shares.iter().map(|s| balance * top1 * s / total));
    out
}

struct Layout {
    firm: Vec<usize>,
    year: Vec<usize>,
}

fn observed_layout(spec: &DgpSpec, rng: &mut ChaCha8Rng) -> Layout {
    let total = spec.total_rows();
    let mut keep = sample(rng, total, spec.n_observed()).into_vec();
    keep.sort_unstable();
    Layout {
        firm: keep.iter().map(|k| k / spec.n_years).collect(),
        year: keep.iter().map(|k| k % spec.n_years).collect(),
    }
}

/// Draws a panel from `spec`. Rows are ordered by firm then year.
pub fn generate_panel(spec: &DgpSpec) -> Result<Generated> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let nf = spec.n_firms;
    let ny = spec.n_years;
    let rho = spec.control_persistence;

    // firm-level traits
    let industry: Vec<usize> = (0..nf).map(|_| rng.random_range(0..spec.n_industries)).collect();
    let region: Vec<usize> = (0..nf).map(|_| rng.random_range(0..3)).collect();
    let segment: Vec<usize> = (0..nf).map(|_| rng.random_range(0..3)).collect();
    let firm_traits: Vec<Vec<f64>> = (0..nf)
        .map(|_| (0..CONTROLS.len()).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let fe_d = Normal::new(0.0, spec.firm_effect_treatment.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let fe_y = Normal::new(0.0, spec.firm_effect_outcome.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let firm_d: Vec<f64> = (0..nf).map(|_| fe_d.sample(&mut rng)).collect();
    let firm_y: Vec<f64> = (0..nf).map(|_| fe_y.sample(&mut rng)).collect();
    let industry_d: Vec<f64> = (0..spec.n_industries).map(|k| 0.06 * ((k as f64) * 1.7).sin()).collect();
    let industry_y: Vec<f64> = (0..spec.n_industries).map(|k| 0.4 * ((k as f64) * 1.7).sin()).collect();
    let year_y: Vec<f64> = (0..ny).map(|t| 0.3 * (2.0 * PI * t as f64 / ny as f64).sin()).collect();

    // full balanced panel, so that lagged treatments exist for every row
    let total = nf * ny;
    let mut controls = vec![vec![0.0; total]; CONTROLS.len()];
    let mut m = vec![0.0; total];
    let mut g = vec![0.0; total];
    let mut d = vec![0.0; total];
    let v_dist = Normal::new(0.0, spec.treatment_noise).map_err(|e| Error::Config(e.to_string()))?;
    for f in 0..nf {
        for t in 0..ny {
            let r = f * ny + t;
            for (c, def) in CONTROLS.iter().enumerate() {
                controls[c][r] = draw_marginal(def, firm_traits[f][c], rho, &mut rng);
            }
            let z: Vec<f64> = CONTROLS
                .iter()
                .enumerate()
                .map(|(c, def)| standardized(def, controls[c][r]))
                .collect();
            let (x1, x2) = (z[0], z[1]);
            let minor = 0.05 * (z[2] + z[6] - z[9]);
            let (mx, gx) = spec.nuisance.eval(x1, x2);
            m[r] = 0.3 + spec.confounding * (0.1 * mx + 0.5 * minor + industry_d[industry[f]]);
            g[r] = gx + minor + industry_y[industry[f]] + year_y[t];
            d[r] = (m[r] + firm_d[f] + v_dist.sample(&mut rng)).clamp(D_MIN, D_MAX);
        }
    }
    let u_dist = Normal::new(0.0, spec.outcome_noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut y = vec![0.0; total];
    for f in 0..nf {
        let theta = spec.theta_by_region.map_or(spec.theta, |t| t[region[f]]);
        for t in 0..ny {
            let r = f * ny + t;
            let mut v = theta * d[r] + g[r] + firm_y[f] + u_dist.sample(&mut rng);
            for (k, &effect) in spec.lag_effects.iter().enumerate() {
                if t > k {
                    v += effect * d[r - k - 1];
                }
            }
            y[r] = v;
        }
    }
    let stake_rows: Vec<Vec<f64>> = (0..total).map(|r| stakes(controls[6][r], d[r], &mut rng)).collect();

    let layout = observed_layout(spec, &mut rng);
    let rows: Vec<usize> = layout.firm.iter().zip(&layout.year).map(|(f, t)| f * ny + t).collect();
    let pick = |v: &[f64]| rows.iter().map(|&r| v[r]).collect::<Vec<f64>>();
    let observed_stakes: Vec<Vec<f64>> = rows.iter().map(|&r| stake_rows[r].clone()).collect();

    let mut columns = vec![
        Column { name: OUTCOME.into(), role: Role::Outcome, values: pick(&y) },
        Column { name: TREATMENT.into(), role: Role::Treatment, values: pick(&d) },
    ];
    for (c, def) in CONTROLS.iter().enumerate() {
        columns.push(Column { name: def.name.into(), role: Role::Control, values: pick(&controls[c]) });
    }
    for (name, variant) in [
        (TREATMENT_2TO5, TreatmentVariant::Top2to5OverTop1),
        (TREATMENT_SECOND, TreatmentVariant::SecondOverFirst),
    ] {
        let derived = panel::derive_treatment(&observed_stakes, variant)?;
        columns.push(Column { name: name.into(), role: Role::Auxiliary, values: derived.values });
    }
    let per_firm = |v: &[usize]| layout.firm.iter().map(|&f| (v[f] + 1) as f64).collect::<Vec<f64>>();
    columns.push(Column { name: "industry".into(), role: Role::FixedEffectKey, values: per_firm(&industry) });
    columns.push(Column { name: "region".into(), role: Role::FixedEffectKey, values: per_firm(&region) });
    columns.push(Column { name: "segment".into(), role: Role::FixedEffectKey, values: per_firm(&segment) });

    if let Some(chain) = spec.mediators {
        let observed_d = pick(&d);
        for (name, gamma, salt) in [
            (PRESSURE, chain.pressure, 1u64),
            (STABILITY, chain.stability, 2),
            (MEDIA, chain.media, 3),
        ] {
            let values = mediator_values(&observed_d, &layout, spec, gamma, chain.t_target, salt);
            columns.push(Column { name: name.into(), role: Role::Mediator, values });
        }
    }

    let firm_ids = layout.firm.iter().map(|f| format!("F{:04}", f + 1)).collect();
    let years = layout.year.iter().map(|&t| spec.first_year + t as i32).collect();
    let table = PanelTable::new(firm_ids, years, columns)?;
    let truth = GroundTruth {
        theta: spec.theta,
        theta_by_region: spec.theta_by_region,
        lag_effects: spec.lag_effects.clone(),
        mediators: spec.mediators,
        treatment_mean: pick(&m),
        outcome_nuisance: pick(&g),
        n_rows: rows.len(),
        seed: spec.seed,
    };
    Ok(Generated { table, truth })
}

/// `gamma * D + firm effect + year effect + noise`, with the noise SD chosen
/// so that the two-way within estimate of `gamma` has roughly `t_target`
/// as its t-statistic.
fn mediator_values(d: &[f64], layout: &Layout, spec: &DgpSpec, gamma: f64, t_target: f64, salt: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (0xA5A5_0000 + salt));
    let n = d.len();
    let firms: Vec<String> = layout.firm.iter().map(|f| f.to_string()).collect();
    let years: Vec<i32> = layout.year.iter().map(|&t| t as i32).collect();
    let within = panel::within_transform(d, &firms, &years, panel::FixedEffects::TWO_WAY);
    let sd_within = panel::sample_var(&within).sqrt();
    // a null chain still needs noise on the scale of the smallest planted effect
    let scale = if gamma != 0.0 { gamma.abs() } else { 0.005 };
    let noise_sd = scale * sd_within * (n as f64).sqrt() / t_target.abs().max(1e-6);
    let firm_fx: Vec<f64> = (0..spec.n_firms).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.05).collect();
    let year_fx: Vec<f64> = (0..spec.n_years).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.02).collect();
    (0..n)
        .map(|i| {
            let e: f64 = rng.sample(StandardNormal);
            gamma * d[i] + firm_fx[layout.firm[i]] + year_fx[layout.year[i]] + noise_sd * e
        })
        .collect()
}

/// Panel with the three mediators planted.
pub fn generate_mediated(spec: &DgpSpec, chain: MediatorChain) -> Result<Generated> {
    generate_panel(&DgpSpec {
        mediators: Some(chain),
        ..spec.clone()
    })
}

/// Planted effects of the binary-treatment design.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryTruth {
    pub ate: f64,
    pub att: f64,
    /// Treatment effect is `intercept + slope * x1`.
    pub intercept: f64,
    pub slope: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BinaryDgpSpec {
    pub n: usize,
    pub ate: f64,
    pub att: f64,
    /// Propensity is `sigmoid(alpha + gamma * x1)`.
    pub alpha: f64,
    pub gamma: f64,
    pub outcome_noise: f64,
    pub seed: u64,
}

impl Default for BinaryDgpSpec {
    fn default() -> Self {
        BinaryDgpSpec {
            n: 3486,
            ate: -0.3385,
            att: -0.2934,
            alpha: -0.2,
            gamma: 0.8,
            outcome_noise: 0.3,
            seed: 0,
        }
    }
}

/// `E[x1 | T = 1]` for `x1 ~ N(0, 1)` and `P(T = 1 | x1) = sigmoid(alpha + gamma x1)`,
/// by the trapezoid rule on `[-10, 10]`.
pub fn treated_mean_x1(alpha: f64, gamma: f64) -> f64 {
    let steps = 20_000;
    let h = 20.0 / steps as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..=steps {
        let x = -10.0 + k as f64 * h;
        let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
        let dens = (-0.5 * x * x).exp() * sigmoid(alpha + gamma * x);
        num += w * x * dens;
        den += w * dens;
    }
    num / den
}

impl BinaryDgpSpec {
    /// Effect heterogeneity that makes both the ATE and the ATT hold exactly.
    pub fn truth(&self) -> Result<BinaryTruth> {
        let shift = treated_mean_x1(self.alpha, self.gamma);
        if self.att != self.ate && shift.abs() < 1e-9 {
            return Err(Error::Config("ATT differs from ATE but the propensity ignores x1".into()));
        }
        let slope = if self.att == self.ate { 0.0 } else { (self.att - self.ate) / shift };
        Ok(BinaryTruth {
            ate: self.ate,
            att: self.att,
            intercept: self.ate,
            slope,
        })
    }
}

/// Cross-section (one year) with a binary treatment; columns `y`, `t`,
/// controls `x1`, `x2`, `x3`.
pub fn generate_binary(spec: &BinaryDgpSpec) -> Result<(PanelTable, BinaryTruth)> {
    if spec.n < 20 {
        return Err(Error::Config(format!("binary design needs at least 20 rows, got {}", spec.n)));
    }
    let truth = spec.truth()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut cols: Vec<Vec<f64>> = (0..5).map(|_| Vec::with_capacity(spec.n)).collect();
    let noise = Normal::new(0.0, spec.outcome_noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    for _ in 0..spec.n {
        let x1: f64 = rng.sample(StandardNormal);
        let x2: f64 = rng.sample(StandardNormal);
        let x3: f64 = LogNormal::new(0.0, 0.5).expect("valid").sample(&mut rng);
        let p = sigmoid(spec.alpha + spec.gamma * x1);
        let t = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
        let tau = truth.intercept + truth.slope * x1;
        let y = tau * t + x1.cos() + 0.3 * x2 + 0.1 * x3 + noise.sample(&mut rng);
        for (c, v) in cols.iter_mut().zip([y, t, x1, x2, x3]) {
            c.push(v);
        }
    }
    let roles = [Role::Outcome, Role::Treatment, Role::Control, Role::Control, Role::Control];
    let names = ["y", "t", "x1", "x2", "x3"];
    let columns = cols
        .into_iter()
        .zip(roles)
        .zip(names)
        .map(|((values, role), name)| Column { name: name.into(), role, values })
        .collect();
    let table = PanelTable::new(
        (0..spec.n).map(|i| format!("U{:05}", i + 1)).collect(),
        vec![2022; spec.n],
        columns,
    )?;
    Ok((table, truth))
}

/// Cross-sectional design with standard normal features:
/// `D = m(x1, x2) + v` and `Y = theta * D + g(x1, x2) + u`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSpec {
    pub n: usize,
    pub theta: f64,
    pub nuisance: NuisanceShape,
    pub treatment_noise: f64,
    pub outcome_noise: f64,
    /// Irrelevant standard normal features appended after `x1`, `x2`.
    pub extra_features: usize,
    pub seed: u64,
}

impl Default for OracleSpec {
    fn default() -> Self {
        OracleSpec {
            n: 3486,
            theta: -0.3726,
            nuisance: NuisanceShape::Nonlinear,
            treatment_noise: 1.0,
            outcome_noise: 1.0,
            extra_features: 3,
            seed: 0,
        }
    }
}

impl OracleSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Columns `y` (outcome), `d` (treatment) and controls `x1, x2, ...`.
/// Zero noise is allowed here so the exact linear case can be built.
pub fn generate_oracle(spec: &OracleSpec) -> Result<PanelTable> {
    if spec.n < 50 {
        return Err(Error::Config(format!("oracle design needs at least 50 rows, got {}", spec.n)));
    }
    if !(spec.treatment_noise >= 0.0 && spec.outcome_noise >= 0.0) || !spec.theta.is_finite() {
        return Err(Error::Config("oracle noise SDs must be non-negative and theta finite".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let p = 2 + spec.extra_features;
    let mut x = vec![Vec::with_capacity(spec.n); p];
    let (mut y, mut d) = (Vec::with_capacity(spec.n), Vec::with_capacity(spec.n));
    let mut row = vec![0.0; p];
    for _ in 0..spec.n {
        for (col, r) in x.iter_mut().zip(row.iter_mut()) {
            *r = rng.sample(StandardNormal);
            col.push(*r);
        }
        let v: f64 = rng.sample(StandardNormal);
        let u: f64 = rng.sample(StandardNormal);
        let (mx, gx) = spec.nuisance.eval(row[0], row[1]);
        let di = mx + spec.treatment_noise * v;
        d.push(di);
        y.push(spec.theta * di + gx + spec.outcome_noise * u);
    }
    let mut columns = vec![
        Column { name: "y".into(), role: Role::Outcome, values: y },
        Column { name: "d".into(), role: Role::Treatment, values: d },
    ];
    columns.extend(
        x.into_iter()
            .enumerate()
            .map(|(j, values)| Column { name: format!("x{}", j + 1), role: Role::Control, values }),
    );
    PanelTable::new((0..spec.n).map(|i| format!("U{:05}", i + 1)).collect(), vec![2022; spec.n], columns)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_dimensions() {
        let spec = DgpSpec::default();
        assert_eq!(spec.total_rows(), 2613);
        let g = generate_panel(&DgpSpec::raw_sample()).unwrap();
        assert_eq!(g.table.n_rows(), 1743);
        assert_eq!(g.truth.treatment_mean.len(), 1743);
        let g = generate_panel(&DgpSpec::merged_sample()).unwrap();
        assert_eq!(g.table.n_rows(), 3486);
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = DgpSpec { n_firms: 30, ..DgpSpec::default() }.with_seed(4);
        let a = generate_panel(&spec).unwrap();
        let b = generate_panel(&spec).unwrap();
        assert_eq!(a.table, b.table);
        let c = generate_panel(&spec.clone().with_seed(5)).unwrap();
        assert_ne!(a.table, c.table);
    }

    #[test]
    fn treatment_support_and_roles() {
        let g = generate_panel(&DgpSpec::raw_sample()).unwrap();
        let d = g.table.column(TREATMENT).unwrap();
        assert!(d.iter().all(|&v| (D_MIN..=D_MAX).contains(&v)));
        assert_eq!(g.table.treatment_name().as_deref(), Some(TREATMENT));
        assert_eq!(g.table.outcome_name().as_deref(), Some(OUTCOME));
        assert_eq!(g.table.names_with_role(Role::Control), control_names());
        // the second-largest ratio never exceeds the full ratio
        let second = g.table.column(TREATMENT_SECOND).unwrap();
        assert!(second.iter().zip(d).all(|(s, d)| *s <= d + 1e-12));
    }

    #[test]
    fn control_moments_match_targets() {
        let spec = DgpSpec {
            n_firms: 400,
            control_persistence: 0.0,
            dropout: 0.0,
            ..DgpSpec::default()
        };
        let g = generate_panel(&spec).unwrap();
        let n = g.table.n_rows() as f64;
        for (name, mean, sd) in control_targets() {
            let v = g.table.column(&name).unwrap();
            let se = sd / n.sqrt();
            assert!(
                (panel::mean(v) - mean).abs() < 3.0 * se,
                "{name}: {} vs {mean}",
                panel::mean(v)
            );
        }
    }

    #[test]
    fn rejects_tiny_panels() {
        let spec = DgpSpec { n_firms: 3, n_years: 10, ..DgpSpec::default() };
        assert!(matches!(generate_panel(&spec), Err(Error::Config(_))));
        let spec = DgpSpec { treatment_noise: 0.0, ..DgpSpec::default() };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn mediated_panel_has_mediators() {
        let chain = MediatorChain { pressure: -0.0066, stability: 0.0057, media: 0.0117, t_target: 8.0 };
        let g = generate_mediated(&DgpSpec::raw_sample(), chain).unwrap();
        assert_eq!(g.table.names_with_role(Role::Mediator), vec![PRESSURE, STABILITY, MEDIA]);
    }

    #[test]
    fn binary_truth_is_consistent() {
        let spec = BinaryDgpSpec::default();
        let truth = spec.truth().unwrap();
        let shift = treated_mean_x1(spec.alpha, spec.gamma);
        assert!(shift > 0.0);
        assert!((truth.intercept + truth.slope * shift - spec.att).abs() < 1e-12);
        // large sample check of the planted ATT
        let (table, _) = generate_binary(&BinaryDgpSpec { n: 200_000, ..spec }).unwrap();
        let t = table.column("t").unwrap();
        let x1 = table.column("x1").unwrap();
        let treated: Vec<f64> = (0..t.len()).filter(|&i| t[i] == 1.0).map(|i| x1[i]).collect();
        assert!((panel::mean(&treated) - shift).abs() < 0.01);
    }

    #[test]
    fn oracle_is_deterministic_and_shaped() {
        let spec = OracleSpec { n: 200, ..OracleSpec::default() }.with_seed(4);
        let a = generate_oracle(&spec).unwrap();
        assert_eq!(a, generate_oracle(&spec).unwrap());
        assert_eq!(a.n_rows(), 200);
        assert_eq!(a.names_with_role(Role::Control), vec!["x1", "x2", "x3", "x4", "x5"]);
        assert_eq!(a.treatment_name().as_deref(), Some("d"));
    }

    #[test]
    fn noiseless_oracle_outcome_is_exact() {
        let spec = OracleSpec { n: 100, nuisance: NuisanceShape::Linear, treatment_noise: 0.0, outcome_noise: 0.0, ..OracleSpec::default() };
        let t = generate_oracle(&spec).unwrap();
        let (y, d, x1, x2) = (t.column("y").unwrap(), t.column("d").unwrap(), t.column("x1").unwrap(), t.column("x2").unwrap());
        for i in 0..100 {
            assert!((d[i] - (0.8 * x1[i] + 0.3 * x2[i])).abs() < 1e-12);
            assert!((y[i] - (-0.3726 * d[i] + 0.5 * x1[i] + x2[i])).abs() < 1e-12);
        }
    }
}
