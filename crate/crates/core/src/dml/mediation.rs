//! Two-way fixed-effects regressions of a mediator on the treatment.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{p_value, Z95};
use crate::error::{Error, Result};
use crate::learners::linear;
use crate::panel::{self, FixedEffects, PanelTable};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MediationResult {
    pub mediator: String,
    pub treatment: String,
    pub coefficient: f64,
    /// Firm-clustered standard error.
    pub se: f64,
    pub ci95: (f64, f64),
    pub p_value: f64,
    /// R-squared of the regression on within-transformed data.
    pub r2: f64,
    /// Intercept of the transformed regression (grand-mean constant).
    pub constant: f64,
    pub n: usize,
    pub clusters: usize,
    /// Controls dropped because they carry no within variation.
    pub dropped_controls: Vec<String>,
}

/// Regresses `mediator` on `treatment` and `controls` after removing the
/// requested fixed effects, with standard errors clustered by firm.
pub fn mediation_regression(
    table: &PanelTable,
    treatment: &str,
    mediator: &str,
    controls: &[String],
    fe: FixedEffects,
) -> Result<MediationResult> {
    let n = table.n_rows();
    let firms = table.firm_ids();
    let years = table.years();
    let n_firms = firms.iter().collect::<std::collections::HashSet<_>>().len();
    let n_years = years.iter().collect::<std::collections::HashSet<_>>().len();
    if n_firms < 2 || n_years < 2 {
        return Err(Error::Size(format!(
            "need at least 2 firms and 2 years, got {n_firms} and {n_years}"
        )));
    }
    let transform = |name: &str| -> Result<Vec<f64>> {
        Ok(panel::within_transform(table.column(name)?, firms, years, fe))
    };
    let m = transform(mediator)?;
    let d_raw = table.column(treatment)?;
    let d = transform(treatment)?;
    let var_raw = panel::sample_var(d_raw);
    let var_within = panel::sample_var(&d);
    if !(var_within > 1e-12 * var_raw.max(f64::MIN_POSITIVE)) || var_raw == 0.0 {
        return Err(Error::NoVariation(treatment.to_string()));
    }
    let mut regressors = vec![d];
    for c in controls {
        regressors.push(transform(c)?);
    }
    let x = DMatrix::from_fn(n, regressors.len(), |i, j| regressors[j][i]);
    // find columns without independent within variation
    let probe = linear::ols(&x, &m)?;
    if probe.dropped.contains(&0) {
        return Err(Error::NoVariation(treatment.to_string()));
    }
    let kept: Vec<usize> = (0..regressors.len()).filter(|j| !probe.dropped.contains(j)).collect();
    let dropped_controls = probe.dropped.iter().map(|&j| controls[j - 1].clone()).collect();

    // design with intercept first
    let k = kept.len() + 1;
    let z = DMatrix::from_fn(n, k, |i, j| if j == 0 { 1.0 } else { regressors[kept[j - 1]][i] });
    let my = DVector::from_column_slice(&m);
    let ztz = z.transpose() * &z;
    let ztz_inv = ztz
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| ztz.try_inverse())
        .ok_or_else(|| Error::Degenerate("singular normal equations in mediation regression".into()))?;
    let beta = &ztz_inv * (z.transpose() * &my);
    let resid = &my - &z * &beta;

    let mut cluster_of: HashMap<&str, usize> = HashMap::new();
    for f in firms {
        let next = cluster_of.len();
        cluster_of.entry(f.as_str()).or_insert(next);
    }
    let g = cluster_of.len();
    let mut scores = DMatrix::zeros(g, k);
    for i in 0..n {
        let c = cluster_of[firms[i].as_str()];
        for j in 0..k {
            scores[(c, j)] += z[(i, j)] * resid[i];
        }
    }
    let meat = scores.transpose() * &scores;
    let (gf, nf, kf) = (g as f64, n as f64, k as f64);
    let factor = gf / (gf - 1.0) * (nf - 1.0) / (nf - kf);
    let vcov = &ztz_inv * meat * &ztz_inv * factor;
    let coefficient = beta[1];
    let se = vcov[(1, 1)].max(0.0).sqrt();

    let mean_m = panel::mean(&m);
    let sst: f64 = m.iter().map(|v| (v - mean_m).powi(2)).sum();
    let sse = resid.norm_squared();
    let r2 = if sst > 0.0 { 1.0 - sse / sst } else { 0.0 };
    Ok(MediationResult {
        mediator: mediator.to_string(),
        treatment: treatment.to_string(),
        coefficient,
        se,
        ci95: (coefficient - Z95 * se, coefficient + Z95 * se),
        p_value: p_value(coefficient, se),
        r2,
        constant: beta[0],
        n,
        clusters: g,
        dropped_controls,
    })
}
