//! Finite-difference check of the VAE loss gradient and the closed-form KL
//! term on a small random network.

use cfdml::synth::{self, DgpSpec};
use cfdml::vae::{self, FeatureNorm, VaeConfig, VaeModel};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> cfdml::Result<()> {
    let data = synth::generate_panel(&DgpSpec { n_firms: 20, n_years: 5, dropout: 0.0, ..DgpSpec::default() })?;
    let columns = vae::default_columns(&data.table);
    let norms = columns
        .iter()
        .map(|c| Ok(FeatureNorm::from_values(c, data.table.column(c)?)))
        .collect::<cfdml::Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (latent, hidden) in [(2, vec![8]), (4, vec![16, 16]), (8, vec![32, 16])] {
        let config = VaeConfig { latent_dim: latent, hidden: hidden.clone(), ..VaeConfig::default() };
        let model = VaeModel::new(columns.len(), &config, norms.clone())?;
        let batch = model.standardize_table(&data.table)?.rows(0, 32).into_owned();
        let noise = DMatrix::from_fn(32, latent, |_, _| rng.random_range(-1.5..1.5));
        let err = model.elbo_grad_check(&batch, &noise)?;
        println!("latent {latent}, hidden {hidden:?}: max relative gradient error {err:.2e}");
    }

    let mu = DMatrix::from_element(1, 3, 1.0);
    let logvar = DMatrix::zeros(1, 3);
    println!("KL(N(1, 1) || N(0, 1)) over 3 dims: {}", vae::gaussian_kl(&mu, &logvar));
    Ok(())
}
