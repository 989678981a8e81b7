//! Dense helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Svd {
    /// `m x k` with orthonormal columns.
    pub u: DMatrix<f64>,
    /// Descending singular values, `k = min(m, n)` entries.
    pub s: Vec<f64>,
    /// `n x k` with orthonormal columns.
    pub v: DMatrix<f64>,
}

impl Svd {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.u.nrows(), self.s.len(), |i, j| self.u[(i, j)] * self.s[j]);
        scaled * self.v.transpose()
    }
}

/// One-sided Jacobi SVD.
///
/// Orthogonalises the columns of `A` (or of `A^T` when `A` is wide) by plane
/// rotations until every pair is orthogonal to relative precision `1e-15`.
pub fn jacobi_svd(a: &DMatrix<f64>) -> Result<Svd> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("SVD input contains non-finite entries".into()));
    }
    if a.nrows() < a.ncols() {
        let t = jacobi_svd(&a.transpose())?;
        return Ok(Svd { u: t.v, s: t.s, v: t.u });
    }
    let (m, n) = a.shape();
    let mut u = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    const MAX_SWEEPS: usize = 80;
    // Columns below this squared norm are numerically zero and never rotated.
    let negligible = (f64::EPSILON * a.norm()).powi(2);
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..m {
                    let (x, y) = (u[(i, p)], u[(i, q)]);
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if alpha <= negligible || beta <= negligible || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (x, y) = (u[(i, p)], u[(i, q)]);
                    u[(i, p)] = c * x - s * y;
                    u[(i, q)] = s * x + c * y;
                }
                for i in 0..n {
                    let (x, y) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * x - s * y;
                    v[(i, q)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical("Jacobi SVD did not converge".into()));
    }

    let mut order: Vec<(usize, f64)> = (0..n).map(|j| (j, u.column(j).norm())).collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut u_out = DMatrix::<f64>::zeros(m, n);
    let mut v_out = DMatrix::<f64>::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (k, &(j, sigma)) in order.iter().enumerate() {
        s.push(sigma);
        if sigma > 0.0 {
            u_out.set_column(k, &(u.column(j) / sigma));
        }
        v_out.set_column(k, &v.column(j));
    }
    Ok(Svd { u: u_out, s, v: v_out })
}

/// Largest eigenvalue of a symmetric positive semi-definite matrix by power iteration.
pub fn max_eigenvalue_psd(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    // Deterministic, non-degenerate start vector.
    let mut x = DVector::from_fn(n, |i, _| 1.0 + 0.1 * ((i * 7919) % 13) as f64);
    x /= x.norm();
    let mut lambda = 0.0;
    for _ in 0..1000 {
        let y = a * &x;
        let norm = y.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = x.dot(&y);
        x = y / norm;
        if (next - lambda).abs() <= 1e-12 * next.abs() {
            return next.max(norm);
        }
        lambda = next;
    }
    lambda
}

/// Solves `A x = b` for symmetric `A`, adding `ridge` to the diagonal when `A` is singular.
pub fn solve_symmetric(a: &DMatrix<f64>, b: &DVector<f64>, ridge: f64) -> Result<(DVector<f64>, bool)> {
    if let Some(chol) = a.clone().cholesky() {
        let x = chol.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Ok((x, false));
        }
    }
    let mut reg = a.clone();
    for i in 0..reg.nrows() {
        reg[(i, i)] += ridge;
    }
    let x = reg.lu().solve(b).ok_or_else(|| Error::Numerical("regularised system is singular".into()))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("regularised solve produced non-finite values".into()));
    }
    Ok((x, true))
}
