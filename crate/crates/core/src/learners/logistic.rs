//! Logistic regression by damped Newton iterations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct LogisticParams {
    pub max_iterations: usize,
    /// Ridge penalty on the slopes (intercept is unpenalized).
    pub ridge: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        LogisticParams {
            max_iterations: 100,
            ridge: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// Column centering applied before fitting.
    means: Vec<f64>,
    scales: Vec<f64>,
}

pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl LogisticFit {
    pub fn linear_predictor(&self, x: &DMatrix<f64>, row: usize) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .enumerate()
                .map(|(j, b)| b * (x[(row, j)] - self.means[j]) / self.scales[j])
                .sum::<f64>()
    }

    pub fn probability(&self, x: &DMatrix<f64>, row: usize) -> f64 {
        sigmoid(self.linear_predictor(x, row))
    }
}

fn penalized_loglik(z: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>, ridge: f64) -> f64 {
    let eta = z * beta;
    let ll: f64 = eta
        .iter()
        .zip(y)
        .map(|(&e, &t)| {
            // log(1 + exp(e)) computed stably
            let softplus = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            t * e - softplus
        })
        .sum();
    ll - 0.5 * ridge * beta.iter().skip(1).map(|b| b * b).sum::<f64>()
}

/// Fits P(y = 1 | x) on standardized columns plus an intercept.
///
/// Each Newton step is halved until the penalized log-likelihood stops
/// decreasing. A slope growing past 1e3 on the standardized scale signals
/// separation and is reported as non-convergence.
pub fn fit_logistic(x: &DMatrix<f64>, y: &[f64], params: LogisticParams) -> Result<LogisticFit> {
    let n = x.nrows();
    let p = x.ncols();
    if y.len() != n {
        return Err(Error::Shape(format!("{} rows but {} targets", n, y.len())));
    }
    if y.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::Domain("logistic target must be 0/1".into()));
    }
    let nf = n as f64;
    let means: Vec<f64> = x.column_iter().map(|c| c.sum() / nf).collect();
    let scales: Vec<f64> = (0..p)
        .map(|j| {
            let s = (x.column(j).iter().map(|v| (v - means[j]).powi(2)).sum::<f64>() / nf).sqrt();
            if s > 1e-12 { s } else { 1.0 }
        })
        .collect();
    let z = DMatrix::from_fn(n, p + 1, |i, j| {
        if j == 0 { 1.0 } else { (x[(i, j - 1)] - means[j - 1]) / scales[j - 1] }
    });
    let share = y.iter().sum::<f64>() / nf;
    let mut beta = DVector::zeros(p + 1);
    if share > 0.0 && share < 1.0 {
        beta[0] = (share / (1.0 - share)).ln();
    }
    let mut ll = penalized_loglik(&z, y, &beta, params.ridge);
    // a tiny jitter keeps constant standardized columns (all zero) solvable
    let jitter = 1e-10;
    for iter in 0..params.max_iterations {
        let eta = &z * &beta;
        let prob: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let mut grad = DVector::zeros(p + 1);
        let mut hess = DMatrix::zeros(p + 1, p + 1);
        for i in 0..n {
            let w = prob[i] * (1.0 - prob[i]);
            let zi = z.row(i);
            for a in 0..=p {
                grad[a] += (y[i] - prob[i]) * zi[a];
                if w > 0.0 {
                    for b in a..=p {
                        hess[(a, b)] += w * zi[a] * zi[b];
                    }
                }
            }
        }
        for a in 0..=p {
            for b in 0..a {
                hess[(a, b)] = hess[(b, a)];
            }
            if a > 0 {
                grad[a] -= params.ridge * beta[a];
                hess[(a, a)] += params.ridge;
            }
            hess[(a, a)] += jitter;
        }
        let step = match hess.clone().cholesky() {
            Some(c) => c.solve(&grad),
            None => hess
                .lu()
                .solve(&grad)
                .ok_or_else(|| Error::Convergence("singular Hessian in logistic fit".into()))?,
        };
        let mut t = 1.0;
        let mut accepted = false;
        let mut candidate = beta.clone();
        for _ in 0..30 {
            candidate = &beta + t * &step;
            let cand_ll = penalized_loglik(&z, y, &candidate, params.ridge);
            if cand_ll >= ll - 1e-12 * ll.abs() {
                ll = cand_ll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        let change = (&candidate - &beta).amax();
        if accepted {
            beta = candidate;
        }
        if beta.iter().skip(1).any(|b| b.abs() > 1e3) {
            return Err(Error::Convergence(format!(
                "logistic slopes diverging after {} iterations (max |b| = {:.3e}); likely separation",
                iter + 1,
                beta.iter().skip(1).fold(0.0_f64, |m, b| m.max(b.abs()))
            )));
        }
        if !accepted || change < 1e-9 {
            return Ok(LogisticFit {
                intercept: beta[0],
                coefficients: beta.iter().skip(1).copied().collect(),
                means,
                scales,
            });
        }
    }
    Err(Error::Convergence(format!(
        "logistic fit hit the {} iteration cap (log-likelihood {ll:.6})",
        params.max_iterations
    )))
}
