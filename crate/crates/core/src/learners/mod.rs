//! Nuisance regression learners behind one interface.

pub mod linear;
pub mod logistic;
pub mod tree;

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use linear::{LassoParams, LinearFit};
use logistic::{LogisticFit, LogisticParams};
use tree::{Presorted, RegressionTree, TreeParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Gbdt,
    GbdtAlt,
    RandomForest,
    Lasso,
    Ols,
    Logistic,
}

impl LearnerKind {
    pub fn label(self) -> &'static str {
        match self {
            LearnerKind::Gbdt => "gbdt",
            LearnerKind::GbdtAlt => "gbdt_alt",
            LearnerKind::RandomForest => "random_forest",
            LearnerKind::Lasso => "lasso",
            LearnerKind::Ols => "ols",
            LearnerKind::Logistic => "logistic",
        }
    }
}

/// Optional overrides; anything left out takes the per-kind default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparameters {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trees: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_leaf: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subsample: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_features: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoostingParams {
    pub trees: usize,
    pub depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    pub subsample: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForestParams {
    pub trees: usize,
    pub depth: usize,
    pub min_leaf: usize,
    /// `None` means ceil(sqrt(p)) at fit time.
    pub max_features: Option<usize>,
    pub subsample: f64,
}

impl LearnerSpec {
    pub fn new(kind: LearnerKind) -> Self {
        LearnerSpec {
            kind,
            hyperparameters: Hyperparameters::default(),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_hyperparameters(mut self, hp: Hyperparameters) -> Self {
        self.hyperparameters = hp;
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: LearnerSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("learner spec serializes")
    }

    /// Rejects keys that do not apply to the kind and values outside their ranges.
    pub fn validate(&self) -> Result<()> {
        let hp = &self.hyperparameters;
        let allowed: &[&str] = match self.kind {
            LearnerKind::Gbdt | LearnerKind::GbdtAlt => {
                &["trees", "depth", "learning_rate", "min_leaf", "subsample"]
            }
            LearnerKind::RandomForest => &["trees", "depth", "min_leaf", "subsample", "max_features"],
            LearnerKind::Lasso => &["lambda", "iterations"],
            LearnerKind::Logistic => &["lambda", "iterations"],
            LearnerKind::Ols => &[],
        };
        let present = [
            ("trees", hp.trees.is_some()),
            ("depth", hp.depth.is_some()),
            ("learning_rate", hp.learning_rate.is_some()),
            ("min_leaf", hp.min_leaf.is_some()),
            ("subsample", hp.subsample.is_some()),
            ("max_features", hp.max_features.is_some()),
            ("lambda", hp.lambda.is_some()),
            ("iterations", hp.iterations.is_some()),
        ];
        for (key, set) in present {
            if set && !allowed.contains(&key) {
                return Err(Error::Config(format!(
                    "hyperparameter `{key}` does not apply to {}",
                    self.kind.label()
                )));
            }
        }
        let positive = |key: &str, v: Option<usize>| match v {
            Some(0) => Err(Error::Config(format!("`{key}` must be positive"))),
            _ => Ok(()),
        };
        positive("trees", hp.trees)?;
        positive("min_leaf", hp.min_leaf)?;
        positive("max_features", hp.max_features)?;
        positive("iterations", hp.iterations)?;
        if let Some(d) = hp.depth {
            if d > 30 {
                return Err(Error::Config(format!("`depth` {d} exceeds 30")));
            }
        }
        if let Some(lr) = hp.learning_rate {
            if !(lr > 0.0 && lr <= 1.0) {
                return Err(Error::Config(format!("`learning_rate` {lr} outside (0, 1]")));
            }
        }
        if let Some(s) = hp.subsample {
            if !(s > 0.0 && s <= 1.0) {
                return Err(Error::Config(format!("`subsample` {s} outside (0, 1]")));
            }
        }
        if let Some(l) = hp.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("`lambda` {l} must be finite and non-negative")));
            }
        }
        Ok(())
    }

    pub fn boosting(&self) -> BoostingParams {
        let hp = &self.hyperparameters;
        let alt = self.kind == LearnerKind::GbdtAlt;
        BoostingParams {
            trees: hp.trees.unwrap_or(if alt { 400 } else { 200 }),
            depth: hp.depth.unwrap_or(if alt { 6 } else { 3 }),
            learning_rate: hp.learning_rate.unwrap_or(if alt { 0.05 } else { 0.1 }),
            min_leaf: hp.min_leaf.unwrap_or(20),
            subsample: hp.subsample.unwrap_or(1.0),
        }
    }

    pub fn forest(&self) -> ForestParams {
        let hp = &self.hyperparameters;
        ForestParams {
            trees: hp.trees.unwrap_or(300),
            depth: hp.depth.unwrap_or(12),
            min_leaf: hp.min_leaf.unwrap_or(5),
            max_features: hp.max_features,
            subsample: hp.subsample.unwrap_or(1.0),
        }
    }

    pub fn lasso(&self) -> LassoParams {
        LassoParams {
            lambda: self.hyperparameters.lambda.unwrap_or(1e-3),
            max_sweeps: self.hyperparameters.iterations.unwrap_or(100_000),
            tol: 1e-7,
        }
    }

    pub fn logistic(&self) -> LogisticParams {
        LogisticParams {
            max_iterations: self.hyperparameters.iterations.unwrap_or(100),
            ridge: self.hyperparameters.lambda.unwrap_or(0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FittedModel {
    Boosted {
        base: f64,
        learning_rate: f64,
        trees: Vec<RegressionTree>,
    },
    Forest {
        trees: Vec<RegressionTree>,
    },
    Linear {
        intercept: f64,
        coefficients: Vec<f64>,
    },
    Logistic(LogisticFit),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedLearner {
    pub kind: LearnerKind,
    pub n_features: usize,
    pub model: FittedModel,
    pub warnings: Vec<String>,
}

const MODEL_MAGIC: &[u8; 8] = b"CFDMLFIT";
const MODEL_VERSION: u32 = 1;

fn check_inputs(x: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!("{} feature rows but {} targets", x.nrows(), y.len())));
    }
    if x.nrows() < 2 {
        return Err(Error::Size(format!("need at least 2 rows, got {}", x.nrows())));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        let n = x.nrows();
        return Err(Error::NonFinite(format!("feature cell ({}, {})", i % n, i / n)));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("target row {i}")));
    }
    Ok(())
}

/// Seed for the `k`-th independent task under a master seed.
pub fn derive_seed(master: u64, k: u64) -> u64 {
    master.wrapping_add(k.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub fn fit(spec: &LearnerSpec, x: &DMatrix<f64>, y: &[f64]) -> Result<FittedLearner> {
    spec.validate()?;
    check_inputs(x, y)?;
    let mut warnings = Vec::new();
    let model = match spec.kind {
        LearnerKind::Gbdt | LearnerKind::GbdtAlt => fit_boosted(spec.boosting(), x, y, spec.seed),
        LearnerKind::RandomForest => fit_forest(spec.forest(), x, y, spec.seed),
        LearnerKind::Lasso => {
            let LinearFit {
                intercept,
                coefficients,
                ..
            } = linear::lasso(x, y, spec.lasso())?;
            FittedModel::Linear {
                intercept,
                coefficients,
            }
        }
        LearnerKind::Ols => {
            let fit = linear::ols(x, y)?;
            if !fit.dropped.is_empty() {
                warnings.push(format!("dropped linearly dependent columns {:?}", fit.dropped));
            }
            FittedModel::Linear {
                intercept: fit.intercept,
                coefficients: fit.coefficients,
            }
        }
        LearnerKind::Logistic => FittedModel::Logistic(logistic::fit_logistic(x, y, spec.logistic())?),
    };
    Ok(FittedLearner {
        kind: spec.kind,
        n_features: x.ncols(),
        model,
        warnings,
    })
}

fn fit_boosted(params: BoostingParams, x: &DMatrix<f64>, y: &[f64], seed: u64) -> FittedModel {
    let n = x.nrows();
    let presorted = Presorted::new(x);
    let base = y.iter().sum::<f64>() / n as f64;
    let mut current = vec![base; n];
    let mut residual = vec![0.0; n];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tree_params = TreeParams {
        max_depth: params.depth,
        min_leaf: params.min_leaf,
        max_features: None,
    };
    let keep = ((params.subsample * n as f64).round() as usize).clamp(1, n);
    let mut trees = Vec::with_capacity(params.trees);
    for _ in 0..params.trees {
        for i in 0..n {
            residual[i] = y[i] - current[i];
        }
        let weights: Vec<u32> = if keep == n {
            vec![1; n]
        } else {
            let mut w = vec![0; n];
            for i in rand::seq::index::sample(&mut rng, n, keep).into_iter() {
                w[i] = 1;
            }
            w
        };
        let tree = tree::grow(x, &presorted, &residual, &weights, tree_params, &mut rng);
        for (i, c) in current.iter_mut().enumerate() {
            *c += params.learning_rate * tree.predict_row(x, i);
        }
        trees.push(tree);
    }
    FittedModel::Boosted {
        base,
        learning_rate: params.learning_rate,
        trees,
    }
}

fn fit_forest(params: ForestParams, x: &DMatrix<f64>, y: &[f64], seed: u64) -> FittedModel {
    let n = x.nrows();
    let p = x.ncols();
    let presorted = Presorted::new(x);
    let max_features = params
        .max_features
        .unwrap_or_else(|| (p as f64).sqrt().ceil() as usize)
        .clamp(1, p.max(1));
    let tree_params = TreeParams {
        max_depth: params.depth,
        min_leaf: params.min_leaf,
        max_features: Some(max_features),
    };
    let draws = ((params.subsample * n as f64).round() as usize).max(1);
    let trees = (0..params.trees)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, t as u64));
            let mut weights = vec![0u32; n];
            for _ in 0..draws {
                weights[rng.random_range(0..n)] += 1;
            }
            tree::grow(x, &presorted, y, &weights, tree_params, &mut rng)
        })
        .collect();
    FittedModel::Forest { trees }
}

impl FittedLearner {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::Shape(format!(
                "model trained on {} features, got {}",
                self.n_features,
                x.ncols()
            )));
        }
        let rows = 0..x.nrows();
        Ok(match &self.model {
            FittedModel::Boosted {
                base,
                learning_rate,
                trees,
            } => rows
                .map(|i| base + learning_rate * trees.iter().map(|t| t.predict_row(x, i)).sum::<f64>())
                .collect(),
            FittedModel::Forest { trees } => rows
                .map(|i| trees.iter().map(|t| t.predict_row(x, i)).sum::<f64>() / trees.len() as f64)
                .collect(),
            FittedModel::Linear {
                intercept,
                coefficients,
            } => rows
                .map(|i| intercept + coefficients.iter().enumerate().map(|(j, b)| b * x[(i, j)]).sum::<f64>())
                .collect(),
            FittedModel::Logistic(fit) => rows.map(|i| fit.probability(x, i)).collect(),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = MODEL_MAGIC.to_vec();
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        let body = bincode::serialize(self).map_err(|e| Error::Encoding(e.to_string()))?;
        out.extend(body);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MODEL_MAGIC {
            return Err(Error::Encoding("not a fitted-learner file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != MODEL_VERSION {
            return Err(Error::Encoding(format!(
                "fitted-learner format version {version}, expected {MODEL_VERSION}"
            )));
        }
        bincode::deserialize(&bytes[12..]).map_err(|e| Error::Encoding(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Seeded permutation of rows cut into `folds` near-equal contiguous parts.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::Size(format!("need at least 2 folds, got {folds}")));
    }
    if folds > n {
        return Err(Error::Size(format!("{folds} folds exceed {n} rows")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; n];
    for k in 0..folds {
        for &row in &perm[k * n / folds..(k + 1) * n / folds] {
            fold_of[row] = k;
        }
    }
    Ok(fold_of)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutOfFold {
    pub predictions: Vec<f64>,
    pub fold_of: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Out-of-fold predictions for a given fold assignment.
pub fn oof_predict_with(
    spec: &LearnerSpec,
    x: &DMatrix<f64>,
    y: &[f64],
    fold_of: &[usize],
) -> Result<OutOfFold> {
    check_inputs(x, y)?;
    let n = x.nrows();
    let folds = fold_of.iter().max().map_or(0, |m| m + 1);
    let mut predictions = vec![f64::NAN; n];
    let mut warnings = Vec::new();
    for k in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != k).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == k).collect();
        if test.is_empty() {
            continue;
        }
        let xt = x.select_rows(train.iter());
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let fold_spec = LearnerSpec {
            seed: derive_seed(spec.seed, k as u64),
            ..spec.clone()
        };
        let model = fit(&fold_spec, &xt, &yt)?;
        warnings.extend(model.warnings.iter().map(|w| format!("fold {k}: {w}")));
        let pred = model.predict(&x.select_rows(test.iter()))?;
        for (&i, v) in test.iter().zip(pred) {
            predictions[i] = v;
        }
    }
    Ok(OutOfFold {
        predictions,
        fold_of: fold_of.to_vec(),
        warnings,
    })
}

pub fn kfold_oof_predict(
    spec: &LearnerSpec,
    x: &DMatrix<f64>,
    y: &[f64],
    folds: usize,
    seed: u64,
) -> Result<OutOfFold> {
    let fold_of = fold_assignment(x.nrows(), folds, seed)?;
    oof_predict_with(spec, x, y, &fold_of)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp() -> Hyperparameters {
        Hyperparameters::default()
    }

    #[test]
    fn one_stump_of_depth_zero_predicts_mean() {
        let x = DMatrix::from_fn(10, 2, |i, j| (i * (j + 1)) as f64);
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let spec = LearnerSpec::new(LearnerKind::Gbdt).with_hyperparameters(Hyperparameters {
            trees: Some(1),
            depth: Some(0),
            ..hp()
        });
        let pred = fit(&spec, &x, &y).unwrap().predict(&x).unwrap();
        assert!(pred.iter().all(|&p| (p - 4.5).abs() < 1e-12));
    }

    #[test]
    fn boosting_recovers_step() {
        let x = DMatrix::from_fn(100, 1, |i, _| i as f64);
        let y: Vec<f64> = (0..100).map(|i| if i < 40 { 0.0 } else { 1.0 }).collect();
        let spec = LearnerSpec::new(LearnerKind::Gbdt).with_hyperparameters(Hyperparameters {
            trees: Some(100),
            depth: Some(1),
            min_leaf: Some(1),
            ..hp()
        });
        let pred = fit(&spec, &x, &y).unwrap().predict(&x).unwrap();
        // residual shrinks by (1 - lr) per tree
        for (p, t) in pred.iter().zip(&y) {
            assert!((p - t).abs() < 1e-3, "{p} vs {t}");
        }
    }

    #[test]
    fn forest_on_constant_target_is_constant() {
        let x = DMatrix::from_fn(50, 3, |i, j| ((i * 13 + j * 7) % 17) as f64);
        let spec = LearnerSpec::new(LearnerKind::RandomForest).with_hyperparameters(Hyperparameters {
            trees: Some(10),
            ..hp()
        });
        let pred = fit(&spec, &x, &[3.25; 50]).unwrap().predict(&x).unwrap();
        assert!(pred.iter().all(|&p| p == 3.25));
    }

    #[test]
    fn predict_rejects_wrong_layout() {
        let x = DMatrix::from_fn(10, 2, |i, j| (i + j) as f64);
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let model = fit(&LearnerSpec::new(LearnerKind::Ols), &x, &y).unwrap();
        let wide = DMatrix::zeros(3, 3);
        assert!(matches!(model.predict(&wide), Err(Error::Shape(_))));
    }

    #[test]
    fn spec_json_rejects_unknown_and_inapplicable_keys() {
        assert!(LearnerSpec::from_json(r#"{"kind":"gbdt","hyperparameters":{"trees":5}}"#).is_ok());
        assert!(LearnerSpec::from_json(r#"{"kind":"gbdt","hyperparameters":{"leaves":5}}"#).is_err());
        assert!(LearnerSpec::from_json(r#"{"kind":"ols","hyperparameters":{"trees":5}}"#).is_err());
        assert!(LearnerSpec::from_json(r#"{"kind":"gbdt","hyperparameters":{"learning_rate":0}}"#).is_err());
        assert!(LearnerSpec::from_json(r#"{"kind":"lasso","hyperparameters":{"lambda":-1}}"#).is_err());
    }

    #[test]
    fn loo_ols_on_linear_data() {
        let x = DMatrix::from_fn(12, 2, |i, j| ((i * 5 + j * 3) % 7) as f64 + j as f64 * i as f64 * 0.1);
        let y: Vec<f64> = (0..12).map(|i| 2.0 - x[(i, 0)] + 0.5 * x[(i, 1)]).collect();
        let oof = kfold_oof_predict(&LearnerSpec::new(LearnerKind::Ols), &x, &y, 12, 1).unwrap();
        for (p, t) in oof.predictions.iter().zip(&y) {
            assert!((p - t).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_target_oof_is_constant() {
        let x = DMatrix::from_fn(30, 2, |i, j| (i * (j + 2)) as f64);
        for kind in [LearnerKind::Ols, LearnerKind::Gbdt, LearnerKind::Lasso] {
            let oof = kfold_oof_predict(&LearnerSpec::new(kind), &x, &[1.5; 30], 3, 9).unwrap();
            assert!(oof.predictions.iter().all(|&p| (p - 1.5).abs() < 1e-12), "{kind:?}");
        }
    }

    #[test]
    fn fold_assignment_is_seeded_and_balanced() {
        let a = fold_assignment(103, 5, 42).unwrap();
        assert_eq!(a, fold_assignment(103, 5, 42).unwrap());
        let mut sizes = [0; 5];
        for &k in &a {
            sizes[k] += 1;
        }
        assert!(sizes.iter().all(|&s| s == 20 || s == 21));
        assert!(matches!(fold_assignment(3, 4, 0), Err(Error::Size(_))));
    }

    #[test]
    fn binary_roundtrip() {
        let x = DMatrix::from_fn(40, 2, |i, j| ((i * 3 + j) % 11) as f64);
        let y: Vec<f64> = (0..40).map(|i| (i % 5) as f64).collect();
        let spec = LearnerSpec::new(LearnerKind::Gbdt).with_hyperparameters(Hyperparameters {
            trees: Some(5),
            min_leaf: Some(2),
            ..hp()
        });
        let model = fit(&spec, &x, &y).unwrap();
        let back = FittedLearner::from_bytes(&model.to_bytes().unwrap()).unwrap();
        assert_eq!(model, back);
        let mut bad = model.to_bytes().unwrap();
        bad[8] = 9;
        assert!(matches!(FittedLearner::from_bytes(&bad), Err(Error::Encoding(_))));
    }
}
