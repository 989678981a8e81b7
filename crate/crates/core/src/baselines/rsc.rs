use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::sc::check_design;
use super::{Diagnostics, Method, ScWeights};
use crate::error::{validation, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RscConfig {
    /// Mixing values: 1 is the lasso, 0 is ridge.
    pub alphas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub folds: usize,
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for RscConfig {
    fn default() -> Self {
        let lambdas = (0..20).map(|k| 10f64.powf(1.0 - 5.0 * k as f64 / 19.0)).collect();
        Self { alphas: vec![0.1, 0.5, 0.9], lambdas, folds: 5, tolerance: 1e-10, max_sweeps: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElasticNetFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub sweeps: usize,
    pub converged: bool,
    pub max_change: f64,
}

/// Elastic net with an unpenalised intercept by cyclic coordinate descent.
///
/// Minimises `1/(2N) ||y - b - A w||^2 + lambda (alpha ||w||_1 + (1 - alpha)/2 ||w||^2)`
/// with samples as the rows of `a`. `warm` seeds the coefficients.
pub fn elastic_net(
    a: &DMatrix<f64>,
    y: &[f64],
    alpha: f64,
    lambda: f64,
    tolerance: f64,
    max_sweeps: usize,
    warm: Option<&[f64]>,
) -> ElasticNetFit {
    let (n, p) = a.shape();
    let nf = n as f64;
    let col_mean: Vec<f64> = (0..p).map(|j| a.column(j).sum() / nf).collect();
    let y_mean = y.iter().sum::<f64>() / nf;
    let ac = DMatrix::from_fn(n, p, |i, j| a[(i, j)] - col_mean[j]);
    let col_sq: Vec<f64> = (0..p).map(|j| ac.column(j).norm_squared() / nf).collect();

    let mut w = warm.map_or_else(|| vec![0.0; p], <[f64]>::to_vec);
    let mut resid: Vec<f64> = (0..n).map(|i| y[i] - y_mean - (0..p).map(|j| ac[(i, j)] * w[j]).sum::<f64>()).collect();
    let l1 = lambda * alpha;
    let l2 = lambda * (1.0 - alpha);
    let mut fit = ElasticNetFit { weights: Vec::new(), intercept: 0.0, sweeps: 0, converged: false, max_change: 0.0 };
    for sweep in 1..=max_sweeps {
        let mut max_change = 0.0f64;
        for j in 0..p {
            let denom = col_sq[j] + l2;
            if denom == 0.0 {
                continue;
            }
            let col = ac.column(j);
            let rho = col.iter().zip(&resid).map(|(c, r)| c * r).sum::<f64>() / nf + col_sq[j] * w[j];
            let updated = soft(rho, l1) / denom;
            let delta = updated - w[j];
            if delta != 0.0 {
                for (r, c) in resid.iter_mut().zip(col.iter()) {
                    *r -= c * delta;
                }
                w[j] = updated;
                max_change = max_change.max(delta.abs() * col_sq[j].sqrt());
            }
        }
        fit.sweeps = sweep;
        fit.max_change = max_change;
        if max_change <= tolerance {
            fit.converged = true;
            break;
        }
    }
    fit.intercept = y_mean - col_mean.iter().zip(&w).map(|(m, wj)| m * wj).sum::<f64>();
    fit.weights = w;
    fit
}

fn soft(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

pub fn fit_rsc(x: &DMatrix<f64>, y: &[f64]) -> Result<ScWeights> {
    fit_rsc_with(x, y, &RscConfig::default())
}

/// Elastic-net synthetic control with `(alpha, lambda)` picked by contiguous-fold CV.
pub fn fit_rsc_with(x: &DMatrix<f64>, y: &[f64], config: &RscConfig) -> Result<ScWeights> {
    check_design(x, y)?;
    if config.alphas.is_empty() || config.lambdas.is_empty() {
        return Err(validation("R-SC grids must be non-empty"));
    }
    if config.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) || config.lambdas.iter().any(|l| !(*l >= 0.0)) {
        return Err(validation("R-SC alphas must lie in [0, 1] and lambdas be non-negative"));
    }
    // Samples are pre-treatment time points, features are control units.
    let a = x.transpose();
    let m = a.nrows();
    if m < 2 {
        return Err(validation("R-SC needs at least 2 pre-treatment points"));
    }
    let mut folds = config.folds.max(2);
    if m < 2 * folds {
        let reduced = (m / 2).max(2).min(folds);
        log::warn!("R-SC: {m} pre-treatment points are too few for {folds} folds; using {reduced}");
        folds = reduced;
    }
    let mut lambdas = config.lambdas.clone();
    lambdas.sort_by(|a, b| b.total_cmp(a));

    let bounds: Vec<(usize, usize)> = (0..folds).map(|f| (f * m / folds, (f + 1) * m / folds)).collect();
    let mut best = (f64::INFINITY, config.alphas[0], lambdas[0]);
    for &alpha in &config.alphas {
        let mut cv_error = vec![0.0; lambdas.len()];
        for &(lo, hi) in &bounds {
            let train: Vec<usize> = (0..m).filter(|i| *i < lo || *i >= hi).collect();
            let a_train = a.select_rows(&train);
            let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let mut warm: Option<Vec<f64>> = None;
            for (k, &lambda) in lambdas.iter().enumerate() {
                let fit = elastic_net(&a_train, &y_train, alpha, lambda, config.tolerance, config.max_sweeps, warm.as_deref());
                let sse: f64 = (lo..hi)
                    .map(|i| {
                        let pred = fit.intercept + (0..a.ncols()).map(|j| a[(i, j)] * fit.weights[j]).sum::<f64>();
                        (y[i] - pred) * (y[i] - pred)
                    })
                    .sum();
                cv_error[k] += sse / m as f64;
                warm = Some(fit.weights);
            }
        }
        for (k, &err) in cv_error.iter().enumerate() {
            if err < best.0 {
                best = (err, alpha, lambdas[k]);
            }
        }
    }
    let (cv, alpha, lambda) = best;
    let fit = elastic_net(&a, y, alpha, lambda, config.tolerance, config.max_sweeps, None);
    if !fit.converged {
        log::warn!("R-SC coordinate descent stopped after {} sweeps at change {:.3e}", fit.sweeps, fit.max_change);
    }
    let objective = {
        let sse: f64 = (0..m)
            .map(|i| {
                let pred = fit.intercept + (0..a.ncols()).map(|j| a[(i, j)] * fit.weights[j]).sum::<f64>();
                (y[i] - pred) * (y[i] - pred)
            })
            .sum();
        let l1: f64 = fit.weights.iter().map(|w| w.abs()).sum();
        let l2: f64 = fit.weights.iter().map(|w| w * w).sum();
        sse / (2.0 * m as f64) + lambda * (alpha * l1 + 0.5 * (1.0 - alpha) * l2)
    };
    Ok(ScWeights {
        method: Method::Rsc,
        weights: fit.weights,
        intercept: fit.intercept,
        hyperparameters: BTreeMap::from([
            ("alpha".to_string(), alpha),
            ("lambda".to_string(), lambda),
            ("folds".to_string(), folds as f64),
            ("cv_error".to_string(), cv),
        ]),
        diagnostics: Diagnostics {
            iterations: fit.sweeps,
            converged: fit.converged,
            achieved_tolerance: fit.max_change,
            objective,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn zero_penalty_is_least_squares() {
        let a = gaussian(50, 5, 1);
        let y: Vec<f64> = gaussian(50, 1, 2).iter().copied().collect();
        let fit = elastic_net(&a, &y, 0.5, 0.0, 1e-14, 100_000, None);

        // OLS with intercept through the normal equations.
        let design = DMatrix::from_fn(50, 6, |i, j| if j == 0 { 1.0 } else { a[(i, j - 1)] });
        let beta = (design.transpose() * &design).cholesky().unwrap().solve(&(design.transpose() * DVector::from_vec(y.clone())));
        assert!((fit.intercept - beta[0]).abs() <= 1e-6);
        for j in 0..5 {
            assert!((fit.weights[j] - beta[j + 1]).abs() <= 1e-6);
        }
    }

    #[test]
    fn one_feature_lasso_is_soft_thresholding() {
        let a = gaussian(30, 1, 3);
        let y: Vec<f64> = (0..30).map(|i| 2.0 * a[(i, 0)] + 0.1 * (i as f64).sin() + 4.0).collect();
        let lambda = 0.3;
        let fit = elastic_net(&a, &y, 1.0, lambda, 1e-14, 1000, None);

        let n = 30.0;
        let xm = a.column(0).sum() / n;
        let ym = y.iter().sum::<f64>() / n;
        let sxy: f64 = (0..30).map(|i| (a[(i, 0)] - xm) * (y[i] - ym)).sum::<f64>() / n;
        let sxx: f64 = (0..30).map(|i| (a[(i, 0)] - xm).powi(2)).sum::<f64>() / n;
        let expect = soft(sxy, lambda) / sxx;
        assert!((fit.weights[0] - expect).abs() <= 1e-8);
        assert!((fit.intercept - (ym - xm * expect)).abs() <= 1e-8);
    }

    #[test]
    fn sparse_combination_support_is_recovered() {
        let x = gaussian(20, 200, 5);
        let y: Vec<f64> = (0..200).map(|j| 0.3 * x[(0, j)] + 0.7 * x[(1, j)]).collect();
        let fit = fit_rsc(&x, &y).unwrap();
        // The ridge part leaves residual correlation, so inactive weights are tiny rather than zero.
        let largest = fit.weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
        let support: Vec<usize> = (0..20).filter(|&i| fit.weights[i].abs() > 1e-3 * largest).collect();
        assert_eq!(support, vec![0, 1], "{:?}", fit.weights);
    }

    #[test]
    fn few_points_reduce_folds() {
        let x = gaussian(3, 6, 6);
        let y: Vec<f64> = (0..6).map(|j| x[(2, j)]).collect();
        let fit = fit_rsc(&x, &y).unwrap();
        assert_eq!(fit.hyperparameters["folds"], 3.0);
        assert!(fit_rsc(&gaussian(3, 1, 7), &[1.0]).is_err());
    }

    #[test]
    fn default_grid() {
        let c = RscConfig::default();
        assert_eq!(c.lambdas.len(), 20);
        assert!((c.lambdas[0] - 10.0).abs() <= 1e-12 && (c.lambdas[19] - 1e-4).abs() <= 1e-16);
    }
}
