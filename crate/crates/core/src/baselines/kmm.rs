use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::sc::check_design;
use super::simplex::project_box_band;
use super::{Diagnostics, Method, ScWeights};
use crate::error::{validation, Error, Result};
use crate::linalg::max_eigenvalue_psd;

const TOLERANCE: f64 = 1e-8;
const MAX_ITERATIONS: usize = 50_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    #[default]
    Gaussian,
    /// Plain inner product; reduces the program to simplex-like least squares.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmmConfig {
    /// Gaussian bandwidth; `None` uses the median pairwise distance.
    pub bandwidth: Option<f64>,
    pub upper: f64,
    pub sum_tolerance: f64,
    pub kernel: KernelKind,
}

impl Default for KmmConfig {
    fn default() -> Self {
        Self { bandwidth: None, upper: 1.0, sum_tolerance: 0.01, kernel: KernelKind::Gaussian }
    }
}

impl KmmConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(b) = self.bandwidth {
            if !(b > 0.0 && b.is_finite()) {
                return Err(validation(format!("KMM bandwidth must be positive, got {b}")));
            }
        }
        if !(self.upper > 0.0) {
            return Err(validation("KMM upper bound must be positive"));
        }
        if !(self.sum_tolerance >= 0.0) {
            return Err(validation("KMM sum tolerance must be non-negative"));
        }
        Ok(())
    }
}

/// Median Euclidean distance over all unordered pairs of points.
pub fn median_pairwise_distance(points: &[&[f64]]) -> f64 {
    let mut distances = Vec::new();
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            distances.push(a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt());
        }
    }
    if distances.is_empty() {
        return 0.0;
    }
    distances.sort_by(f64::total_cmp);
    let mid = distances.len() / 2;
    if distances.len() % 2 == 1 {
        distances[mid]
    } else {
        0.5 * (distances[mid - 1] + distances[mid])
    }
}

/// Kernel mean matching of the treated unit's pre-treatment vector.
///
/// Minimises `w^T K w - 2 k^T w` over `0 <= w <= upper`, `|sum w - 1| <= sum_tolerance`,
/// where `K` is the kernel between control vectors and `k` between controls and the target.
pub fn fit_kmm_sc(x: &DMatrix<f64>, y: &[f64], config: &KmmConfig) -> Result<ScWeights> {
    check_design(x, y)?;
    config.validate()?;
    let n = x.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| x.row(i).iter().copied().collect()).collect();

    let mut hyper = BTreeMap::new();
    let (mut k_mat, k_vec) = match config.kernel {
        KernelKind::Linear => {
            let xy = x * DVector::from_column_slice(y);
            (x * x.transpose(), xy)
        }
        KernelKind::Gaussian => {
            let bandwidth = match config.bandwidth {
                Some(b) => b,
                None => {
                    let mut all: Vec<&[f64]> = vec![y];
                    all.extend(rows.iter().map(Vec::as_slice));
                    median_pairwise_distance(&all)
                }
            };
            if !(bandwidth > 0.0) {
                return Err(validation("median pairwise distance is zero; set a bandwidth explicitly"));
            }
            hyper.insert("bandwidth".to_string(), bandwidth);
            let kernel = |a: &[f64], b: &[f64]| {
                let sq: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
                (-sq / (2.0 * bandwidth * bandwidth)).exp()
            };
            let k_mat = DMatrix::from_fn(n, n, |i, j| kernel(&rows[i], &rows[j]));
            let k_vec = DVector::from_fn(n, |i, _| kernel(&rows[i], y));
            (k_mat, k_vec)
        }
    };

    let scale = (0..n).map(|i| k_mat[(i, i)]).fold(0.0, f64::max).max(1.0);
    let jitter = 1e-10 * scale;
    for i in 0..n {
        k_mat[(i, i)] += jitter;
    }
    if k_mat.clone().cholesky().is_none() {
        return Err(Error::Numerical("kernel matrix is not positive semi-definite after jitter".into()));
    }
    hyper.insert("jitter".to_string(), jitter);
    hyper.insert("upper".to_string(), config.upper);
    hyper.insert("sum_tolerance".to_string(), config.sum_tolerance);

    let lipschitz = 2.0 * max_eigenvalue_psd(&k_mat) * 1.01;
    let project = |v: &[f64]| DVector::from_vec(project_box_band(v, config.upper, config.sum_tolerance));
    let mut w = project(&vec![1.0 / n as f64; n]);
    let mut diag = Diagnostics::default();
    for it in 1..=MAX_ITERATIONS {
        let grad = 2.0 * (&k_mat * &w - &k_vec);
        let stepped: Vec<f64> = w.iter().zip(grad.iter()).map(|(wi, gi)| wi - gi / lipschitz).collect();
        let next = project(&stepped);
        let mapping = lipschitz * (&w - &next).norm();
        w = next;
        diag.iterations = it;
        diag.achieved_tolerance = mapping;
        if mapping <= TOLERANCE {
            diag.converged = true;
            break;
        }
    }
    if !diag.converged {
        log::warn!(
            "KMM projected gradient stopped after {} iterations at gradient-mapping norm {:.3e}",
            diag.iterations,
            diag.achieved_tolerance
        );
    }
    diag.objective = w.dot(&(&k_mat * &w)) - 2.0 * k_vec.dot(&w);
    Ok(ScWeights {
        method: Method::Kmm,
        weights: w.iter().copied().collect(),
        intercept: 0.0,
        hyperparameters: hyper,
        diagnostics: diag,
    })
}
