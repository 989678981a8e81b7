use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::simplex::project_simplex;
use super::{Diagnostics, Method, ScWeights};
use crate::error::{shape, validation, Result};
use crate::linalg::max_eigenvalue_psd;

const TOLERANCE: f64 = 1e-8;
const MAX_ITERATIONS: usize = 50_000;

/// `||y - X^T w||^2` with controls as the rows of `x`.
pub fn sc_objective(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> f64 {
    let fitted = x.tr_mul(&DVector::from_column_slice(w));
    fitted.iter().zip(y).map(|(f, t)| (t - f) * (t - f)).sum()
}

pub(super) fn check_design(x: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    if x.nrows() == 0 {
        return Err(validation("no control units"));
    }
    if x.ncols() == 0 {
        return Err(validation("no pre-treatment columns"));
    }
    if x.ncols() != y.len() {
        return Err(shape(format!("controls have {} columns, target has {}", x.ncols(), y.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(validation("pre-treatment values must be finite"));
    }
    Ok(())
}

/// Simplex-constrained least squares by projected gradient with step `1/L`.
pub fn fit_sc(x: &DMatrix<f64>, y: &[f64]) -> Result<ScWeights> {
    check_design(x, y)?;
    let n = x.nrows();
    let gram = x * x.transpose();
    let xy = x * DVector::from_column_slice(y);
    let lipschitz = 2.0 * max_eigenvalue_psd(&gram) * 1.01;

    let mut w = DVector::from_element(n, 1.0 / n as f64);
    let mut diag = Diagnostics::default();
    if lipschitz == 0.0 {
        diag.converged = true;
    } else {
        for it in 1..=MAX_ITERATIONS {
            let grad = 2.0 * (&gram * &w - &xy);
            let stepped: Vec<f64> = w.iter().zip(grad.iter()).map(|(wi, gi)| wi - gi / lipschitz).collect();
            let next = DVector::from_vec(project_simplex(&stepped));
            let mapping = lipschitz * (&w - &next).norm();
            w = next;
            diag.iterations = it;
            diag.achieved_tolerance = mapping;
            if mapping <= TOLERANCE {
                diag.converged = true;
                break;
            }
        }
    }
    if !diag.converged {
        log::warn!(
            "SC projected gradient stopped after {} iterations at gradient-mapping norm {:.3e}",
            diag.iterations,
            diag.achieved_tolerance
        );
    }
    let weights: Vec<f64> = w.iter().copied().collect();
    diag.objective = sc_objective(x, y, &weights);
    Ok(ScWeights {
        method: Method::Sc,
        weights,
        intercept: 0.0,
        hyperparameters: BTreeMap::from([("lipschitz".to_string(), lipschitz)]),
        diagnostics: diag,
    })
}

/// Objective values along the projected-gradient path, for monotonicity checks.
#[cfg(test)]
pub(super) fn sc_objective_path(x: &DMatrix<f64>, y: &[f64], iterations: usize) -> Vec<f64> {
    let n = x.nrows();
    let gram = x * x.transpose();
    let xy = x * DVector::from_column_slice(y);
    let lipschitz = 2.0 * max_eigenvalue_psd(&gram) * 1.01;
    let mut w = DVector::from_element(n, 1.0 / n as f64);
    let mut path = vec![sc_objective(x, y, w.as_slice())];
    for _ in 0..iterations {
        let grad = 2.0 * (&gram * &w - &xy);
        let stepped: Vec<f64> = w.iter().zip(grad.iter()).map(|(wi, gi)| wi - gi / lipschitz).collect();
        w = DVector::from_vec(project_simplex(&stepped));
        path.push(sc_objective(x, y, w.as_slice()));
    }
    path
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_controls(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0))
    }

    fn feasible(w: &[f64]) -> bool {
        w.iter().all(|&v| v >= -1e-10) && (w.iter().sum::<f64>() - 1.0).abs() <= 1e-8
    }

    #[test]
    fn target_equal_to_a_control_gives_its_vertex() {
        let x = random_controls(5, 30, 1);
        let y: Vec<f64> = x.row(3).iter().copied().collect();
        let fit = fit_sc(&x, &y).unwrap();
        assert!(feasible(&fit.weights));
        for (i, w) in fit.weights.iter().enumerate() {
            let expect = if i == 3 { 1.0 } else { 0.0 };
            assert!((w - expect).abs() <= 1e-6, "{:?}", fit.weights);
        }
    }

    #[test]
    fn convex_combination_is_recovered() {
        let x = random_controls(6, 40, 2);
        let y: Vec<f64> = (0..40).map(|j| 0.3 * x[(0, j)] + 0.7 * x[(1, j)]).collect();
        let fit = fit_sc(&x, &y).unwrap();
        assert!(feasible(&fit.weights));
        assert!((fit.weights[0] - 0.3).abs() <= 1e-3);
        assert!((fit.weights[1] - 0.7).abs() <= 1e-3);
        assert!(fit.diagnostics.objective <= 1e-10);
    }

    #[test]
    fn objective_is_monotone() {
        let x = random_controls(8, 12, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
        let path = sc_objective_path(&x, &y, 500);
        assert!(path.windows(2).all(|p| p[1] <= p[0] + 1e-12));
        let fit = fit_sc(&x, &y).unwrap();
        assert!(feasible(&fit.weights));
    }

    #[test]
    fn shape_errors() {
        let x = random_controls(3, 4, 5);
        assert!(fit_sc(&x, &[1.0, 2.0]).is_err());
        assert!(fit_sc(&DMatrix::zeros(3, 0), &[]).is_err());
    }
}
