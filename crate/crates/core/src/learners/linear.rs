//! Least squares and LASSO.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative residual norm under which a column counts as linearly dependent.
const RANK_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct LinearFit {
    pub intercept: f64,
    /// One entry per input column; dropped columns get 0.
    pub coefficients: Vec<f64>,
    pub dropped: Vec<usize>,
}

impl LinearFit {
    pub fn predict_row(&self, x: &DMatrix<f64>, row: usize) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .enumerate()
                .map(|(j, b)| b * x[(row, j)])
                .sum::<f64>()
    }
}

fn column_means(x: &DMatrix<f64>) -> Vec<f64> {
    let n = x.nrows() as f64;
    x.column_iter().map(|c| c.sum() / n).collect()
}

/// Least squares with an intercept.
///
/// Columns are centered, then admitted one at a time by modified Gram-Schmidt
/// with reorthogonalization; a column whose residual norm falls below
/// `RANK_TOL` of its centered norm is dropped. Coefficients of the retained
/// columns come from the resulting triangular system.
pub fn ols(x: &DMatrix<f64>, y: &[f64]) -> Result<LinearFit> {
    let n = x.nrows();
    let p = x.ncols();
    if y.len() != n {
        return Err(Error::Shape(format!("{} rows but {} targets", n, y.len())));
    }
    let means = column_means(x);
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let mut q: Vec<DVector<f64>> = Vec::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    // r[k] holds the upper-triangular column of the k-th kept column
    let mut r: Vec<Vec<f64>> = Vec::new();
    for j in 0..p {
        let mut v = DVector::from_fn(n, |i, _| x[(i, j)] - means[j]);
        let norm0 = v.norm();
        let mut coeffs = vec![0.0; q.len()];
        for _pass in 0..2 {
            for (k, qk) in q.iter().enumerate() {
                let c = qk.dot(&v);
                v.axpy(-c, qk, 1.0);
                coeffs[k] += c;
            }
        }
        let norm = v.norm();
        if norm0 == 0.0 || norm <= RANK_TOL * norm0 {
            dropped.push(j);
            continue;
        }
        v /= norm;
        coeffs.push(norm);
        q.push(v);
        r.push(coeffs);
        kept.push(j);
    }
    if !dropped.is_empty() {
        log::warn!("least squares dropped linearly dependent columns {dropped:?}");
    }
    let yc = DVector::from_fn(n, |i, _| y[i] - y_mean);
    let qty: Vec<f64> = q.iter().map(|qk| qk.dot(&yc)).collect();
    // back substitution on R b = Q'y
    let m = kept.len();
    let mut b = vec![0.0; m];
    for i in (0..m).rev() {
        let mut s = qty[i];
        for k in i + 1..m {
            s -= r[k][i] * b[k];
        }
        b[i] = s / r[i][i];
    }
    let mut coefficients = vec![0.0; p];
    for (i, &j) in kept.iter().enumerate() {
        coefficients[j] = b[i];
    }
    let intercept = y_mean - coefficients.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
    Ok(LinearFit {
        intercept,
        coefficients,
        dropped,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct LassoParams {
    pub lambda: f64,
    pub max_sweeps: usize,
    pub tol: f64,
}

/// LASSO minimizing `(1/2n)|y - Xb|^2 + lambda |b|_1` by cyclic coordinate
/// descent on standardized columns. Coefficients are returned on the
/// original scale; constant columns get 0.
pub fn lasso(x: &DMatrix<f64>, y: &[f64], params: LassoParams) -> Result<LinearFit> {
    let n = x.nrows();
    let p = x.ncols();
    if y.len() != n {
        return Err(Error::Shape(format!("{} rows but {} targets", n, y.len())));
    }
    let nf = n as f64;
    let means = column_means(x);
    let scales: Vec<f64> = (0..p)
        .map(|j| {
            let ss: f64 = x.column(j).iter().map(|v| (v - means[j]).powi(2)).sum();
            (ss / nf).sqrt()
        })
        .collect();
    let active: Vec<usize> = (0..p).filter(|&j| scales[j] > 1e-12 * (1.0 + means[j].abs())).collect();
    // standardized columns, stored contiguously
    let z: Vec<Vec<f64>> = active
        .iter()
        .map(|&j| x.column(j).iter().map(|v| (v - means[j]) / scales[j]).collect())
        .collect();
    let y_mean = y.iter().sum::<f64>() / nf;
    let mut resid: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let mut b = vec![0.0; active.len()];
    let mut converged = false;
    let mut last_change = f64::INFINITY;
    for _sweep in 0..params.max_sweeps {
        let mut max_change: f64 = 0.0;
        for (k, zk) in z.iter().enumerate() {
            let rho = zk.iter().zip(&resid).map(|(a, r)| a * r).sum::<f64>() / nf + b[k];
            let new = soft_threshold(rho, params.lambda);
            let delta = new - b[k];
            if delta != 0.0 {
                for (r, a) in resid.iter_mut().zip(zk) {
                    *r -= delta * a;
                }
                b[k] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        last_change = max_change;
        if max_change < params.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Convergence(format!(
            "lasso did not converge in {} sweeps (last max coefficient change {last_change:.3e}, lambda {})",
            params.max_sweeps, params.lambda
        )));
    }
    let mut coefficients = vec![0.0; p];
    for (k, &j) in active.iter().enumerate() {
        coefficients[j] = b[k] / scales[j];
    }
    let intercept = y_mean - coefficients.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
    let dropped = (0..p).filter(|j| !active.contains(j)).collect();
    Ok(LinearFit {
        intercept,
        coefficients,
        dropped,
    })
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_design(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| rng.random::<f64>() * 4.0 - 2.0)
    }

    #[test]
    fn ols_interpolates_noiseless_linear_data() {
        let x = random_design(50, 4, 1);
        let beta = [1.5, -2.0, 0.25, 3.0];
        let y: Vec<f64> = (0..50)
            .map(|i| 0.7 + (0..4).map(|j| beta[j] * x[(i, j)]).sum::<f64>())
            .collect();
        let fit = ols(&x, &y).unwrap();
        for i in 0..50 {
            assert!((fit.predict_row(&x, i) - y[i]).abs() < 1e-9);
        }
        assert!((fit.intercept - 0.7).abs() < 1e-9);
    }

    #[test]
    fn ols_drops_duplicate_column() {
        let mut x = random_design(30, 3, 2);
        for i in 0..30 {
            x[(i, 2)] = 2.0 * x[(i, 0)] - x[(i, 1)];
        }
        let y: Vec<f64> = (0..30).map(|i| x[(i, 0)] + 1.0).collect();
        let fit = ols(&x, &y).unwrap();
        assert_eq!(fit.dropped, vec![2]);
        assert_eq!(fit.coefficients[2], 0.0);
        assert!((fit.coefficients[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn lasso_zero_penalty_matches_ols() {
        let x = random_design(80, 5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y: Vec<f64> = (0..80)
            .map(|i| x[(i, 0)] - 0.5 * x[(i, 3)] + rng.random::<f64>())
            .collect();
        let a = ols(&x, &y).unwrap();
        let params = LassoParams { lambda: 0.0, max_sweeps: 100_000, tol: 1e-10 };
        let b = lasso(&x, &y, params).unwrap();
        for j in 0..5 {
            assert!((a.coefficients[j] - b.coefficients[j]).abs() < 1e-6);
        }
        assert!((a.intercept - b.intercept).abs() < 1e-6);
    }

    #[test]
    fn lasso_at_lambda_max_is_all_zero() {
        let x = random_design(60, 3, 5);
        let y: Vec<f64> = (0..60).map(|i| 2.0 * x[(i, 1)] + 0.1 * i as f64).collect();
        // lambda_max on the standardized scale the solver works in
        let n = 60.0;
        let ym = y.iter().sum::<f64>() / n;
        let lambda_max = (0..3)
            .map(|j| {
                let c = x.column(j);
                let m = c.sum() / n;
                let s = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
                (c.iter().zip(&y).map(|(v, t)| (v - m) / s * (t - ym)).sum::<f64>() / n).abs()
            })
            .fold(0.0, f64::max);
        let params = LassoParams { lambda: lambda_max, max_sweeps: 1000, tol: 1e-7 };
        let fit = lasso(&x, &y, params).unwrap();
        assert!(fit.coefficients.iter().all(|&b| b == 0.0));
        assert!((fit.intercept - ym).abs() < 1e-12);
    }

    #[test]
    fn lasso_sweep_cap_reports_convergence() {
        let x = random_design(40, 3, 6);
        let y: Vec<f64> = (0..40).map(|i| x[(i, 0)] + x[(i, 2)]).collect();
        let params = LassoParams { lambda: 1e-6, max_sweeps: 1, tol: 1e-12 };
        assert!(matches!(lasso(&x, &y, params), Err(Error::Convergence(_))));
    }
}
