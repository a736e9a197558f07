//! Variational autoencoder over whole panel rows, used to generate
//! counterfactual rows that are validated and merged back into the panel.

use std::path::Path;

use nalgebra::{DMatrix, Dyn, Matrix, Storage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Activation, AdamConfig, Gradients, Mlp, MlpCheckpoint, OptimizerState};
use crate::panel::{self, Column, PanelTable, Role, RowOrigin};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    PriorSampling,
    #[default]
    EncodeResample,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Gates {
    pub smd: f64,
    pub mae: f64,
    pub mse: f64,
}

impl Default for Gates {
    fn default() -> Self {
        Gates {
            smd: 0.1,
            mae: 0.1,
            mse: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub gates: Gates,
    pub mode: GenerationMode,
    /// Columns to model; by default outcome, treatment and controls.
    pub columns: Option<Vec<String>>,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            latent_dim: 4,
            hidden: vec![32, 32],
            beta: 1.0,
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
            gates: Gates::default(),
            mode: GenerationMode::EncodeResample,
            columns: None,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be positive".into()));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: VaeConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Standardization and post-processing facts about one modeled column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
    pub binary: bool,
}

impl FeatureNorm {
    pub fn from_values(name: &str, values: &[f64]) -> Self {
        let sd = panel::sample_var(values).sqrt();
        FeatureNorm {
            name: name.to_string(),
            mean: panel::mean(values),
            sd: if sd > 0.0 && sd.is_finite() { sd } else { 1.0 },
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            binary: panel::is_binary(values),
        }
    }

    pub fn standardize(&self, v: f64) -> f64 {
        (v - self.mean) / self.sd
    }

    pub fn destandardize(&self, z: f64) -> f64 {
        z * self.sd + self.mean
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub latent_dim: usize,
    pub beta: f64,
    pub norms: Vec<FeatureNorm>,
    /// Per-column SD of the reconstruction error in standardized units,
    /// used as observation noise when generating.
    pub residual_sd: Vec<f64>,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElboParts {
    pub loss: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub model: VaeModel,
    pub trace: Vec<EpochLoss>,
}

struct Pass {
    parts: ElboParts,
    encoder: Gradients,
    decoder: Gradients,
}

impl VaeModel {
    pub fn new(width: usize, config: &VaeConfig, norms: Vec<FeatureNorm>) -> Result<Self> {
        config.validate()?;
        if norms.len() != width {
            return Err(Error::Shape(format!("{} norms for {width} columns", norms.len())));
        }
        let l = config.latent_dim;
        Ok(VaeModel {
            encoder: Mlp::with_hidden(width, &config.hidden, 2 * l, Activation::Tanh, config.seed)?,
            decoder: Mlp::with_hidden(l, &config.hidden, width, Activation::Tanh, config.seed.wrapping_add(1))?,
            latent_dim: l,
            beta: config.beta,
            residual_sd: vec![0.0; width],
            norms,
            seed: config.seed,
        })
    }

    pub fn width(&self) -> usize {
        self.norms.len()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.norms.iter().map(|n| n.name.clone()).collect()
    }

    /// Standardized copy of the modeled columns of `table`.
    pub fn standardize_table(&self, table: &PanelTable) -> Result<DMatrix<f64>> {
        let cols: Vec<&[f64]> = self
            .norms
            .iter()
            .map(|n| table.column(&n.name))
            .collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(table.n_rows(), self.width(), |i, j| {
            self.norms[j].standardize(cols[j][i])
        }))
    }

    /// Latent mean and log-variance for a standardized batch.
    pub fn encode(&self, batch: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let out = self.encoder.predict(batch)?;
        let l = self.latent_dim;
        Ok((out.columns(0, l).into_owned(), out.columns(l, l).into_owned()))
    }

    fn pass(&self, batch: &DMatrix<f64>, noise: &DMatrix<f64>, with_grads: bool) -> Result<Pass> {
        let l = self.latent_dim;
        let b = batch.nrows();
        if noise.shape() != (b, l) {
            return Err(Error::Shape(format!(
                "noise is {:?}, expected ({b}, {l})",
                noise.shape()
            )));
        }
        let enc_acts = self.encoder.forward(batch)?;
        let enc_out = enc_acts.last().unwrap();
        let mu = enc_out.columns(0, l);
        let logvar = enc_out.columns(l, l);
        let std = logvar.map(|v| (0.5 * v).exp());
        let z = mu + std.component_mul(noise);
        let dec_acts = self.decoder.forward(&z)?;
        let recon = dec_acts.last().unwrap();

        let bf = b as f64;
        let diff = recon - batch;
        let reconstruction = diff.norm_squared() / diff.len() as f64;
        let kl = gaussian_kl(&mu, &logvar);
        for (name, v) in [("reconstruction", reconstruction), ("kl", kl)] {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("ELBO {name} term is {v}")));
            }
        }
        let parts = ElboParts {
            loss: reconstruction + self.beta * kl,
            reconstruction,
            kl,
        };
        if !with_grads {
            return Ok(Pass {
                parts,
                encoder: Gradients::zeros_like(&self.encoder),
                decoder: Gradients::zeros_like(&self.decoder),
            });
        }
        let d_recon = diff * (2.0 / (bf * batch.ncols() as f64));
        let decoder = self.decoder.backward(&dec_acts, &d_recon)?;
        let dz = &decoder.input;
        let mut d_out = DMatrix::zeros(b, 2 * l);
        for i in 0..b {
            for j in 0..l {
                let (m, lv) = (mu[(i, j)], logvar[(i, j)]);
                d_out[(i, j)] = dz[(i, j)] + self.beta * m / bf;
                d_out[(i, l + j)] = dz[(i, j)] * noise[(i, j)] * 0.5 * std[(i, j)]
                    - self.beta * 0.5 * (1.0 - lv.exp()) / bf;
            }
        }
        let encoder = self.encoder.backward(&enc_acts, &d_out)?;
        Ok(Pass {
            parts,
            encoder,
            decoder,
        })
    }

    /// Loss on a standardized batch with fixed reparameterization noise.
    pub fn elbo_loss(&self, batch: &DMatrix<f64>, noise: &DMatrix<f64>) -> Result<ElboParts> {
        Ok(self.pass(batch, noise, false)?.parts)
    }

    /// Maximum relative error of the backpropagated ELBO gradient against
    /// central differences, over at least 100 encoder and decoder parameters.
    pub fn elbo_grad_check(&self, batch: &DMatrix<f64>, noise: &DMatrix<f64>) -> Result<f64> {
        let pass = self.pass(batch, noise, true)?;
        let mut analytic = pass.encoder.flatten();
        analytic.extend(pass.decoder.flatten());
        let mut params = self.encoder.flat_params();
        let split = params.len();
        params.extend(self.decoder.flat_params());
        let mut probe = self.clone();
        Ok(nn::finite_difference_check(
            &params,
            &analytic,
            |p| {
                probe.encoder.set_flat_params(&p[..split]).expect("encoder size");
                probe.decoder.set_flat_params(&p[split..]).expect("decoder size");
                probe.elbo_loss(batch, noise).map(|e| e.loss).unwrap_or(f64::NAN)
            },
            100,
            self.seed ^ 0x5eed,
        ))
    }

    /// Root mean squared error per column of one reparameterized
    /// reconstruction of `data`.
    fn reconstruction_sd(&self, data: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let (mu, logvar) = self.encode(data)?;
        let eps = standard_normal(data.nrows(), self.latent_dim, rng);
        let z = DMatrix::from_fn(data.nrows(), self.latent_dim, |i, j| {
            mu[(i, j)] + (0.5 * logvar[(i, j)]).exp() * eps[(i, j)]
        });
        let diff = self.decoder.predict(&z)? - data;
        let n = data.nrows() as f64;
        Ok(diff.column_iter().map(|c| (c.norm_squared() / n).sqrt()).collect())
    }

    /// Maps decoder output back to original units, then thresholds binary
    /// columns at 0.5 and clips every column to its observed range.
    pub fn postprocess(&self, standardized: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(standardized.nrows(), standardized.ncols(), |i, j| {
            let n = &self.norms[j];
            let v = n.destandardize(standardized[(i, j)]);
            if n.binary {
                if v >= 0.5 { 1.0 } else { 0.0 }
            } else {
                v.clamp(n.min, n.max)
            }
        })
    }

    pub fn to_checkpoint(&self) -> VaeCheckpoint {
        VaeCheckpoint {
            format: VAE_FORMAT.into(),
            version: VAE_VERSION,
            latent_dim: self.latent_dim,
            beta: self.beta,
            seed: self.seed,
            norms: self.norms.clone(),
            residual_sd: self.residual_sd.clone(),
            encoder: self.encoder.to_checkpoint(),
            decoder: self.decoder.to_checkpoint(),
        }
    }

    pub fn from_checkpoint(ck: &VaeCheckpoint) -> Result<Self> {
        if ck.format != VAE_FORMAT || ck.version != VAE_VERSION {
            return Err(Error::Encoding(format!("unsupported VAE checkpoint {} v{}", ck.format, ck.version)));
        }
        let encoder = Mlp::from_checkpoint(&ck.encoder)?;
        let decoder = Mlp::from_checkpoint(&ck.decoder)?;
        let d = ck.norms.len();
        if ck.residual_sd.len() != d || ck.residual_sd.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Encoding("residual_sd must hold one non-negative value per column".into()));
        }
        if encoder.input_dim() != d
            || encoder.output_dim() != 2 * ck.latent_dim
            || decoder.input_dim() != ck.latent_dim
            || decoder.output_dim() != d
        {
            return Err(Error::Encoding("encoder/decoder widths disagree with latent_dim and columns".into()));
        }
        Ok(VaeModel {
            encoder,
            decoder,
            latent_dim: ck.latent_dim,
            beta: ck.beta,
            norms: ck.norms.clone(),
            residual_sd: ck.residual_sd.clone(),
            seed: ck.seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        VaeModel::from_checkpoint(&serde_json::from_str(&text)?)
    }
}

const VAE_FORMAT: &str = "cfdml-vae";
const VAE_VERSION: u32 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeCheckpoint {
    pub format: String,
    pub version: u32,
    pub latent_dim: usize,
    pub beta: f64,
    pub seed: u64,
    pub norms: Vec<FeatureNorm>,
    pub residual_sd: Vec<f64>,
    pub encoder: MlpCheckpoint,
    pub decoder: MlpCheckpoint,
}

/// KL divergence of `N(mu, exp(logvar))` from the standard normal, summed
/// over latent dimensions and averaged over rows.
pub fn gaussian_kl<S1, S2>(mu: &Matrix<f64, Dyn, Dyn, S1>, logvar: &Matrix<f64, Dyn, Dyn, S2>) -> f64
where
    S1: Storage<f64, Dyn, Dyn>,
    S2: Storage<f64, Dyn, Dyn>,
{
    let rows = mu.nrows().max(1) as f64;
    mu.iter()
        .zip(logvar.iter())
        .map(|(&m, &lv)| -0.5 * (1.0 + lv - m * m - lv.exp()))
        .sum::<f64>()
        / rows
}

/// Columns the VAE models when the config does not list them.
pub fn default_columns(table: &PanelTable) -> Vec<String> {
    table
        .columns()
        .iter()
        .filter(|c| matches!(c.role, Role::Outcome | Role::Treatment | Role::Control))
        .map(|c| c.name.clone())
        .collect()
}

fn standard_normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn train(table: &PanelTable, config: &VaeConfig) -> Result<Trained> {
    config.validate()?;
    if table.n_rows() < 2 {
        return Err(Error::Size(format!("need at least 2 rows, got {}", table.n_rows())));
    }
    let columns = config.columns.clone().unwrap_or_else(|| default_columns(table));
    if columns.is_empty() {
        return Err(Error::Schema("no columns to model".into()));
    }
    let norms = columns
        .iter()
        .map(|c| Ok(FeatureNorm::from_values(c, table.column(c)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut model = VaeModel::new(columns.len(), config, norms)?;
    let data = model.standardize_table(table)?;
    let n = data.nrows();
    let adam = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut enc_state = OptimizerState::new(&model.encoder, adam);
    let mut dec_state = OptimizerState::new(&model.decoder, adam);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut loss, mut rec, mut kl) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(config.batch_size) {
            let batch = data.select_rows(chunk.iter());
            let noise = standard_normal(chunk.len(), model.latent_dim, &mut rng);
            let pass = model
                .pass(&batch, &noise, true)
                .map_err(|e| Error::Training {
                    epoch,
                    message: e.to_string(),
                })?;
            let w = chunk.len() as f64 / n as f64;
            loss += w * pass.parts.loss;
            rec += w * pass.parts.reconstruction;
            kl += w * pass.parts.kl;
            let to_training = |e: Error| Error::Training {
                epoch,
                message: e.to_string(),
            };
            nn::adam_step(&mut model.encoder, &pass.encoder, &mut enc_state).map_err(to_training)?;
            nn::adam_step(&mut model.decoder, &pass.decoder, &mut dec_state).map_err(to_training)?;
        }
        log::debug!("vae epoch {epoch}: loss {loss:.5} (reconstruction {rec:.5}, kl {kl:.5})");
        trace.push(EpochLoss {
            epoch,
            loss,
            reconstruction: rec,
            kl,
        });
    }
    if config.epochs > 0 {
        model.residual_sd = model.reconstruction_sd(&data, &mut rng)?;
    }
    Ok(Trained { model, trace })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenerateOptions {
    pub mode: GenerationMode,
    pub seed: u64,
    /// Multiplies the latent and observation noise; 0 decodes the posterior
    /// mean without noise.
    pub noise_scale: f64,
}

impl GenerateOptions {
    pub fn new(mode: GenerationMode, seed: u64) -> Self {
        GenerateOptions {
            mode,
            seed,
            noise_scale: 1.0,
        }
    }
}

/// Generated rows in original units, one column per modeled feature.
pub fn generate(
    model: &VaeModel,
    n: usize,
    options: GenerateOptions,
    source: Option<&PanelTable>,
) -> Result<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let l = model.latent_dim;
    let z = match options.mode {
        GenerationMode::PriorSampling => standard_normal(n, l, &mut rng) * options.noise_scale,
        GenerationMode::EncodeResample => {
            let source = source.ok_or_else(|| Error::Config("encode_resample needs a source table".into()))?;
            if source.n_rows() == 0 {
                return Err(Error::Size("source table is empty".into()));
            }
            if n > source.n_rows() {
                return Err(Error::Size(format!(
                    "{n} rows requested from a {}-row source",
                    source.n_rows()
                )));
            }
            let rows: Vec<usize> = (0..n).collect();
            let x = model.standardize_table(&source.select_rows(&rows))?;
            let (mu, logvar) = model.encode(&x)?;
            let eps = standard_normal(n, l, &mut rng);
            DMatrix::from_fn(n, l, |i, j| {
                mu[(i, j)] + options.noise_scale * (0.5 * logvar[(i, j)]).exp() * eps[(i, j)]
            })
        }
    };
    let mut out = model.decoder.predict(&z)?;
    if options.noise_scale > 0.0 {
        let eps = standard_normal(n, model.width(), &mut rng);
        for j in 0..model.width() {
            let s = options.noise_scale * model.residual_sd[j];
            for i in 0..n {
                out[(i, j)] += s * eps[(i, j)];
            }
        }
    }
    Ok(model.postprocess(&out))
}

/// Generated rows as a panel. Row `i` takes its keys, fixed-effect labels
/// and unmodeled columns from source row `i` (cycling for prior sampling);
/// its firm id is the source firm with a `~gen` suffix.
pub fn generate_table(
    model: &VaeModel,
    source: &PanelTable,
    n: usize,
    options: GenerateOptions,
) -> Result<PanelTable> {
    if source.n_rows() == 0 {
        return Err(Error::Size("source table is empty".into()));
    }
    let values = generate(model, n, options, Some(source))?;
    let src_rows: Vec<usize> = (0..n).map(|i| i % source.n_rows()).collect();
    let base = source.select_rows(&src_rows);
    let names = model.column_names();
    let columns = base
        .columns()
        .iter()
        .map(|c| match names.iter().position(|m| *m == c.name) {
            Some(j) => Column {
                name: c.name.clone(),
                role: c.role,
                values: values.column(j).iter().copied().collect(),
            },
            None => c.clone(),
        })
        .collect();
    let firm_ids = base.firm_ids().iter().map(|f| format!("{f}~gen")).collect();
    let origins = src_rows
        .iter()
        .map(|&r| match source.origin(r) {
            RowOrigin::Generated {
                source_firm,
                source_year,
            } => RowOrigin::Generated {
                source_firm,
                source_year,
            },
            RowOrigin::Real => RowOrigin::Generated {
                source_firm: source.firm_ids()[r].clone(),
                source_year: source.years()[r],
            },
        })
        .collect();
    PanelTable::new(firm_ids, base.years().to_vec(), columns)?.with_origins(origins)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnQuality {
    pub name: String,
    pub smd: f64,
    pub mae: f64,
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub columns: Vec<ColumnQuality>,
    pub gates: Gates,
    pub pass: bool,
}

/// Standardized mean difference with pooled sample variances.
pub fn smd(real: &[f64], generated: &[f64]) -> f64 {
    let diff = panel::mean(real) - panel::mean(generated);
    let pooled = 0.5 * (panel::sample_var(real) + panel::sample_var(generated));
    if pooled > 0.0 {
        diff / pooled.sqrt()
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Mean absolute and squared differences between the sorted samples paired
/// at equal ranks, in units of the real column's SD. The shorter side is
/// resampled by nearest rank to the longer side's length.
pub fn quantile_matched_errors(real: &[f64], generated: &[f64]) -> (f64, f64) {
    if real.is_empty() || generated.is_empty() {
        return (f64::INFINITY, f64::INFINITY);
    }
    let sd = panel::sample_var(real).sqrt();
    let scale = if sd > 0.0 && sd.is_finite() { sd } else { 1.0 };
    let sorted = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s
    };
    let (a, b) = (sorted(real), sorted(generated));
    let m = a.len().max(b.len());
    let at = |s: &[f64], i: usize| {
        let rank = ((i + 1) * s.len()).div_ceil(m);
        s[rank.max(1) - 1]
    };
    let (mut mae, mut mse) = (0.0, 0.0);
    for i in 0..m {
        let d = (at(&a, i) - at(&b, i)) / scale;
        mae += d.abs();
        mse += d * d;
    }
    (mae / m as f64, mse / m as f64)
}

pub fn validate(real: &PanelTable, generated: &PanelTable, columns: &[String], gates: Gates) -> Result<QualityReport> {
    let mut out = Vec::with_capacity(columns.len());
    for name in columns {
        let r = real.column(name)?;
        let g = generated
            .column(name)
            .map_err(|_| Error::Schema(format!("generated rows lack column `{name}`")))?;
        let (mae, mse) = quantile_matched_errors(r, g);
        out.push(ColumnQuality {
            name: name.clone(),
            smd: smd(r, g),
            mae,
            mse,
        });
    }
    let pass = out
        .iter()
        .all(|c| c.smd.abs() <= gates.smd && c.mae <= gates.mae && c.mse <= gates.mse);
    Ok(QualityReport {
        columns: out,
        gates,
        pass,
    })
}

/// Stacks real and generated rows. Every row is tagged with its origin;
/// rows of `real` without origin information count as real.
pub fn merge(real: &PanelTable, generated: &PanelTable) -> Result<PanelTable> {
    let shape = |t: &PanelTable| -> Vec<(String, Role)> {
        t.columns().iter().map(|c| (c.name.clone(), c.role)).collect()
    };
    if generated.n_rows() > 0 && shape(real) != shape(generated) {
        return Err(Error::Schema(
            "generated rows do not have the real table's columns and roles".into(),
        ));
    }
    let mut firm_ids = real.firm_ids().to_vec();
    firm_ids.extend_from_slice(generated.firm_ids());
    let mut years = real.years().to_vec();
    years.extend_from_slice(generated.years());
    let columns = real
        .columns()
        .iter()
        .map(|c| {
            let mut values = c.values.clone();
            if generated.n_rows() > 0 {
                values.extend_from_slice(generated.column(&c.name)?);
            }
            Ok(Column {
                name: c.name.clone(),
                role: c.role,
                values,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut origins: Vec<RowOrigin> = (0..real.n_rows()).map(|i| real.origin(i)).collect();
    origins.extend((0..generated.n_rows()).map(|i| match generated.origin(i) {
        RowOrigin::Real => RowOrigin::Generated {
            source_firm: generated.firm_ids()[i].clone(),
            source_year: generated.years()[i],
        },
        g => g,
    }));
    PanelTable::new(firm_ids, years, columns)?.with_origins(origins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn tiny_config(latent: usize) -> VaeConfig {
        VaeConfig {
            latent_dim: latent,
            hidden: vec![8],
            ..VaeConfig::default()
        }
    }

    fn unit_norms(d: usize) -> Vec<FeatureNorm> {
        (0..d)
            .map(|j| FeatureNorm {
                name: format!("x{j}"),
                mean: 0.0,
                sd: 1.0,
                min: f64::NEG_INFINITY,
                max: f64::INFINITY,
                binary: false,
            })
            .collect()
    }

    /// Encoder emitting a constant (mu, logvar) regardless of input.
    fn constant_encoder(d: usize, mu: f64, logvar: f64) -> Mlp {
        let mut bias = DVector::zeros(2);
        bias[0] = mu;
        bias[1] = logvar;
        Mlp {
            layers: vec![nn::Dense {
                weights: DMatrix::zeros(d, 2),
                bias,
                activation: Activation::Identity,
            }],
            seed: 0,
        }
    }

    fn table_from(cols: &[(&str, Role, Vec<f64>)]) -> PanelTable {
        let n = cols[0].2.len();
        PanelTable::new(
            (0..n).map(|i| format!("f{i}")).collect(),
            vec![2015; n],
            cols.iter()
                .map(|(name, role, v)| Column {
                    name: name.to_string(),
                    role: *role,
                    values: v.clone(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn kl_closed_forms() {
        let d = 3;
        let mut model = VaeModel::new(d, &tiny_config(1), unit_norms(d)).unwrap();
        let batch = DMatrix::from_element(4, d, 0.3);
        let noise = DMatrix::from_element(4, 1, 0.7);
        model.encoder = constant_encoder(d, 0.0, 0.0);
        assert_eq!(model.elbo_loss(&batch, &noise).unwrap().kl, 0.0);
        model.encoder = constant_encoder(d, 1.0, 0.0);
        assert!((model.elbo_loss(&batch, &noise).unwrap().kl - 0.5).abs() < 1e-12);
    }

    #[test]
    fn exact_decoder_has_zero_reconstruction() {
        // latent of width d, zero variance, decoder = identity
        let d = 2;
        let mut model = VaeModel::new(d, &tiny_config(d), unit_norms(d)).unwrap();
        model.encoder = Mlp {
            layers: vec![nn::Dense {
                weights: DMatrix::from_fn(d, 2 * d, |i, j| if i == j { 1.0 } else { 0.0 }),
                bias: DVector::zeros(2 * d),
                activation: Activation::Identity,
            }],
            seed: 0,
        };
        model.decoder = Mlp {
            layers: vec![nn::Dense {
                weights: DMatrix::identity(d, d),
                bias: DVector::zeros(d),
                activation: Activation::Identity,
            }],
            seed: 0,
        };
        let batch = DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 2.0, 0.1]);
        let noise = DMatrix::zeros(2, 2);
        assert_eq!(model.elbo_loss(&batch, &noise).unwrap().reconstruction, 0.0);
        let noise_bad = DMatrix::zeros(2, 3);
        assert!(matches!(model.elbo_loss(&batch, &noise_bad), Err(Error::Shape(_))));
    }

    #[test]
    fn elbo_gradients_match_finite_differences() {
        let d = 5;
        let cfg = VaeConfig {
            latent_dim: 2,
            hidden: vec![6],
            beta: 0.7,
            seed: 3,
            ..VaeConfig::default()
        };
        let model = VaeModel::new(d, &cfg, unit_norms(d)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let batch = standard_normal(7, d, &mut rng);
        let noise = standard_normal(7, 2, &mut rng);
        let err = model.elbo_grad_check(&batch, &noise).unwrap();
        assert!(err <= 1e-4, "max relative error {err}");
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let t = table_from(&[("y", Role::Outcome, vec![1.0, 2.0, 3.0]), ("d", Role::Treatment, vec![0.1, 0.5, 0.2])]);
        let cfg = VaeConfig { epochs: 0, ..tiny_config(2) };
        let trained = train(&t, &cfg).unwrap();
        assert!(trained.trace.is_empty());
        let fresh = VaeModel::new(2, &cfg, trained.model.norms.clone()).unwrap();
        assert_eq!(trained.model, fresh);
    }

    #[test]
    fn repeated_row_is_reconstructed() {
        let t = table_from(&[
            ("y", Role::Outcome, vec![1.0; 50]),
            ("x", Role::Control, vec![-2.0; 50]),
        ]);
        let cfg = VaeConfig {
            epochs: 200,
            batch_size: 16,
            learning_rate: 1e-2,
            ..tiny_config(1)
        };
        let trained = train(&t, &cfg).unwrap();
        assert!(trained.trace.last().unwrap().reconstruction < 1e-3);
    }

    #[test]
    fn correlated_gaussian_benchmark() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 1000;
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for _ in 0..n {
            let u: f64 = rng.sample(StandardNormal);
            let v: f64 = rng.sample(StandardNormal);
            a.push(u);
            b.push(0.8 * u + 0.6 * v);
        }
        let t = table_from(&[("a", Role::Control, a), ("b", Role::Control, b)]);
        let cfg = VaeConfig {
            latent_dim: 2,
            beta: 0.1,
            epochs: 60,
            learning_rate: 3e-3,
            ..VaeConfig::default()
        };
        let trained = train(&t, &cfg).unwrap();
        let x = trained.model.standardize_table(&t).unwrap();
        let noise = DMatrix::zeros(n, 2);
        let parts = trained.model.elbo_loss(&x, &noise).unwrap();
        assert!(parts.reconstruction < 0.2, "{parts:?}");
    }

    #[test]
    fn encode_resample_without_noise_reconstructs() {
        let t = table_from(&[("y", Role::Outcome, vec![1.0, 2.0, 3.0, 4.0]), ("d", Role::Treatment, vec![0.0, 1.0, 0.0, 1.0])]);
        let trained = train(&t, &VaeConfig { epochs: 5, ..tiny_config(2) }).unwrap();
        let m = &trained.model;
        let opts = GenerateOptions { noise_scale: 0.0, ..GenerateOptions::new(GenerationMode::EncodeResample, 1) };
        let g = generate(m, 4, opts, Some(&t)).unwrap();
        let (mu, _) = m.encode(&m.standardize_table(&t).unwrap()).unwrap();
        let expected = m.postprocess(&m.decoder.predict(&mu).unwrap());
        assert_eq!(g, expected);
        // binary column stays binary
        assert!(g.column(1).iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(matches!(generate(m, 5, opts, Some(&t)), Err(Error::Size(_))));
        let again = generate(m, 4, GenerateOptions::new(GenerationMode::EncodeResample, 7), Some(&t)).unwrap();
        assert_eq!(again, generate(m, 4, GenerateOptions::new(GenerationMode::EncodeResample, 7), Some(&t)).unwrap());
    }

    #[test]
    fn prior_sampling_through_identity_decoder() {
        let d = 3;
        let mut model = VaeModel::new(d, &tiny_config(d), unit_norms(d)).unwrap();
        model.decoder = Mlp {
            layers: vec![nn::Dense {
                weights: DMatrix::identity(d, d),
                bias: DVector::zeros(d),
                activation: Activation::Identity,
            }],
            seed: 0,
        };
        let g = generate(&model, 10_000, GenerateOptions::new(GenerationMode::PriorSampling, 3), None).unwrap();
        for col in g.column_iter() {
            assert!((col.sum() / 10_000.0).abs() < 0.1);
        }
    }

    #[test]
    fn validation_metrics() {
        let real: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin()).collect();
        let t = table_from(&[("x", Role::Control, real.clone())]);
        let report = validate(&t, &t, &["x".into()], Gates::default()).unwrap();
        assert!(report.pass);
        let c = &report.columns[0];
        assert_eq!((c.smd, c.mae, c.mse), (0.0, 0.0, 0.0));

        let sd = panel::sample_var(&real).sqrt();
        let shifted = table_from(&[("x", Role::Control, real.iter().map(|v| v + sd).collect())]);
        let report = validate(&t, &shifted, &["x".into()], Gates::default()).unwrap();
        assert!((report.columns[0].smd + 1.0).abs() < 1e-9);
        assert!(!report.pass);

        // means 1 vs 0 with unit variances
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((smd(&[1.0 - h, 1.0 + h], &[-h, h]) - 1.0).abs() < 1e-12);
        assert_eq!(smd(&[2.0, 2.0], &[2.0, 2.0]), 0.0);
        assert_eq!(smd(&[2.0, 2.0], &[3.0, 3.0]), f64::INFINITY);
    }

    #[test]
    fn merge_counts_and_schema() {
        let real = table_from(&[("y", Role::Outcome, vec![1.0, 2.0]), ("x", Role::Control, vec![0.0, 1.0])]);
        let trained = train(&real, &VaeConfig { epochs: 1, ..tiny_config(1) }).unwrap();
        let gen = generate_table(&trained.model, &real, 2, GenerateOptions::new(GenerationMode::EncodeResample, 0)).unwrap();
        let merged = merge(&real, &gen).unwrap();
        assert_eq!(merged.n_rows(), 4);
        assert_eq!(merged.firm_ids()[2], "f0~gen");
        assert_eq!(merged.years()[3], 2015);
        assert!(merged.origin(3).is_generated());
        assert!(!merged.origin(0).is_generated());

        let empty = gen.select_rows(&[]);
        assert_eq!(merge(&real, &empty).unwrap().n_rows(), 2);
        let other = table_from(&[("y", Role::Outcome, vec![1.0]), ("z", Role::Control, vec![0.0])]);
        assert!(matches!(merge(&real, &other), Err(Error::Schema(_))));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let model = VaeModel::new(3, &tiny_config(2), unit_norms(3).into_iter().map(|mut n| { n.min = -5.0; n.max = 5.0; n }).collect()).unwrap();
        let back = VaeModel::from_checkpoint(&model.to_checkpoint()).unwrap();
        assert_eq!(model, back);
    }
}
