//! A small dense feed-forward network with exact reverse-mode gradients,
//! an Adam optimizer, and a central-difference gradient checker.
//!
//! Batches are row-major in meaning: one row per sample. Weights are stored
//! as `inputs x outputs` so a layer computes `act(A W + b)`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub seed: u64,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases. `dims` lists every layer width
    /// including input and output; `activations` has one entry per layer.
    pub fn new(dims: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::Shape(format!(
                "{} widths need {} activations, got {}",
                dims.len(),
                dims.len().saturating_sub(1),
                activations.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Dense {
                    weights: DMatrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-limit..=limit)),
                    bias: DVector::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        Ok(Mlp { layers, seed })
    }

    /// Hidden layers share one activation, the output layer is linear.
    pub fn with_hidden(
        input: usize,
        hidden: &[usize],
        output: usize,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        let mut acts = vec![activation; hidden.len()];
        acts.push(Activation::Identity);
        Mlp::new(&dims, &acts, seed)
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weights.nrows())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weights.ncols())
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All activations, starting with the input batch itself.
    pub fn forward(&self, batch: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} columns, network expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(batch.clone());
        for layer in &self.layers {
            let mut z = acts.last().unwrap() * &layer.weights;
            for (j, mut col) in z.column_iter_mut().enumerate() {
                let b = layer.bias[j];
                col.apply(|v| *v = layer.activation.apply(*v + b));
            }
            acts.push(z);
        }
        Ok(acts)
    }

    pub fn predict(&self, batch: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.forward(batch)?.pop().unwrap())
    }

    /// Gradients of a scalar loss given `d loss / d output`.
    pub fn backward(&self, acts: &[DMatrix<f64>], loss_grad: &DMatrix<f64>) -> Result<Gradients> {
        if acts.len() != self.layers.len() + 1 {
            return Err(Error::Shape(format!(
                "expected {} activation matrices, got {}",
                self.layers.len() + 1,
                acts.len()
            )));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let (a, out) = (&acts[l], &acts[l + 1]);
            if a.ncols() != layer.weights.nrows()
                || out.ncols() != layer.weights.ncols()
                || a.nrows() != out.nrows()
            {
                return Err(Error::Shape(format!("stale activations at layer {l}")));
            }
        }
        let last = acts.last().unwrap();
        if loss_grad.shape() != last.shape() {
            return Err(Error::Shape(format!(
                "loss gradient {:?} does not match output {:?}",
                loss_grad.shape(),
                last.shape()
            )));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut upstream = loss_grad.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let out = &acts[l + 1];
            let delta = upstream.zip_map(out, |g, y| g * layer.activation.derivative_from_output(y));
            let weights = acts[l].transpose() * &delta;
            let bias = DVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum()));
            upstream = &delta * layer.weights.transpose();
            layers.push(LayerGrad { weights, bias });
        }
        layers.reverse();
        Ok(Gradients {
            layers,
            input: upstream,
        })
    }

    /// Parameters flattened layer by layer, weights (column-major) then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            v.extend(l.weights.iter());
            v.extend(l.bias.iter());
        }
        v
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::Shape(format!(
                "{} parameters given, network has {}",
                params.len(),
                self.n_params()
            )));
        }
        let mut k = 0;
        for l in self.layers.iter_mut() {
            for w in l.weights.iter_mut() {
                *w = params[k];
                k += 1;
            }
            for b in l.bias.iter_mut() {
                *b = params[k];
                k += 1;
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> MlpCheckpoint {
        MlpCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            seed: self.seed,
            layers: self
                .layers
                .iter()
                .map(|l| LayerCheckpoint {
                    inputs: l.weights.nrows(),
                    outputs: l.weights.ncols(),
                    activation: l.activation,
                    // row-major: all weights leaving input 0, then input 1, ...
                    weights: (0..l.weights.nrows())
                        .flat_map(|i| l.weights.row(i).iter().copied().collect::<Vec<_>>())
                        .collect(),
                    bias: l.bias.iter().copied().collect(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &MlpCheckpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Encoding(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let mut layers = Vec::with_capacity(ck.layers.len());
        let mut prev: Option<usize> = None;
        for (i, l) in ck.layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::Encoding(format!("layer {i} payload has the wrong length")));
            }
            if prev.is_some_and(|p| p != l.inputs) {
                return Err(Error::Encoding(format!("layer {i} does not chain")));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::Encoding(format!("layer {i} has non-finite weights")));
            }
            prev = Some(l.outputs);
            layers.push(Dense {
                weights: DMatrix::from_row_slice(l.inputs, l.outputs, &l.weights),
                bias: DVector::from_column_slice(&l.bias),
                activation: l.activation,
            });
        }
        Ok(Mlp {
            layers,
            seed: ck.seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Mlp::from_checkpoint(&serde_json::from_str(&text)?)
    }
}

const CHECKPOINT_FORMAT: &str = "cfdml-mlp";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCheckpoint {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub layers: Vec<LayerCheckpoint>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    /// Gradient with respect to the input batch.
    pub input: DMatrix<f64>,
}

impl Gradients {
    /// Same ordering as [`Mlp::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for l in &self.layers {
            v.extend(l.weights.iter());
            v.extend(l.bias.iter());
        }
        v
    }

    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: DMatrix::zeros(l.weights.nrows(), l.weights.ncols()),
                    bias: DVector::zeros(l.bias.len()),
                })
                .collect(),
            input: DMatrix::zeros(0, net.input_dim()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<LayerGrad>,
    second: Vec<LayerGrad>,
}

impl OptimizerState {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        let zeros = Gradients::zeros_like(net).layers;
        OptimizerState {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }
}

/// One bias-corrected adaptive-moment update, in place.
pub fn adam_step(net: &mut Mlp, grads: &Gradients, state: &mut OptimizerState) -> Result<()> {
    if grads.layers.len() != net.layers.len() || state.first.len() != net.layers.len() {
        return Err(Error::Shape("gradient/optimizer layer count mismatch".into()));
    }
    for (i, (g, l)) in grads.layers.iter().zip(&net.layers).enumerate() {
        if g.weights.shape() != l.weights.shape() || g.bias.len() != l.bias.len() {
            return Err(Error::Shape(format!("gradient shape mismatch at layer {i}")));
        }
        let max_abs = g
            .weights
            .iter()
            .chain(g.bias.iter())
            .fold(0.0f64, |a, v| if v.is_finite() { a.max(v.abs()) } else { f64::NAN });
        if !max_abs.is_finite() {
            let finite_max = g
                .weights
                .iter()
                .chain(g.bias.iter())
                .filter(|v| v.is_finite())
                .fold(0.0f64, |a, v| a.max(v.abs()));
            return Err(Error::NonFinite(format!(
                "gradient at layer {i} (max finite |g| = {finite_max:e})"
            )));
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = c.beta1 * *m + (1.0 - c.beta1) * g;
        *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
        let mhat = *m / bc1;
        let vhat = *v / bc2;
        *p -= c.learning_rate * mhat / (vhat.sqrt() + c.epsilon);
    };
    for (((layer, g), m), v) in net
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        for (((p, &gi), mi), vi) in layer
            .weights
            .iter_mut()
            .zip(g.weights.iter())
            .zip(m.weights.iter_mut())
            .zip(v.weights.iter_mut())
        {
            update(p, gi, mi, vi);
        }
        for (((p, &gi), mi), vi) in layer
            .bias
            .iter_mut()
            .zip(g.bias.iter())
            .zip(m.bias.iter_mut())
            .zip(v.bias.iter_mut())
        {
            update(p, gi, mi, vi);
        }
    }
    Ok(())
}

/// Central-difference step used by the gradient checks.
pub const FD_STEP: f64 = 1e-5;

/// Maximum relative error between `analytic` and central differences of
/// `loss` over a seeded sample of at least `min_samples` coordinates (all of
/// them when there are fewer). The relative error denominator is floored at
/// `1e-6` so that coordinates with vanishing gradient are judged on absolute
/// error instead of amplifying round-off.
pub fn finite_difference_check<F>(
    params: &[f64],
    analytic: &[f64],
    mut loss: F,
    min_samples: usize,
    seed: u64,
) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let n = params.len();
    if n == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, min_samples.min(n)).into_vec();
    idx.sort_unstable();
    let mut work = params.to_vec();
    let mut worst = 0.0f64;
    for k in idx {
        let orig = work[k];
        work[k] = orig + FD_STEP;
        let up = loss(&work);
        work[k] = orig - FD_STEP;
        let down = loss(&work);
        work[k] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let denom = analytic[k].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[k] - numeric).abs() / denom);
    }
    worst
}

/// A differentiable scalar objective of the network output.
pub trait Objective {
    /// Loss value and its gradient with respect to the output batch.
    fn evaluate(&self, output: &DMatrix<f64>) -> (f64, DMatrix<f64>);
}

/// Mean squared error against a fixed target, averaged over all entries.
pub struct SquaredError<'a> {
    pub target: &'a DMatrix<f64>,
}

impl Objective for SquaredError<'_> {
    fn evaluate(&self, output: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let diff = output - self.target;
        let n = diff.len() as f64;
        (diff.norm_squared() / n, diff * (2.0 / n))
    }
}

/// Compares backpropagated gradients of `loss` against central differences
/// on at least 100 parameters.
pub fn grad_check(net: &Mlp, loss: &dyn Objective, batch: &DMatrix<f64>) -> Result<f64> {
    let acts = net.forward(batch)?;
    let (_, g) = loss.evaluate(acts.last().unwrap());
    let analytic = net.backward(&acts, &g)?.flatten();
    let mut probe = net.clone();
    Ok(finite_difference_check(
        &net.flat_params(),
        &analytic,
        |p| {
            probe.set_flat_params(p).expect("same parameter count");
            let out = probe.predict(batch).expect("shape checked above");
            loss.evaluate(&out).0
        },
        100,
        net.seed ^ 0x9e37_79b9,
    ))
}
