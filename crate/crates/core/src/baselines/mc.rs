use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AlignedPanel;
use crate::error::{shape, validation, Result};
use crate::linalg::jacobi_svd;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    /// Fixed shrinkage; `None` selects it on held-out observed cells.
    pub mu: Option<f64>,
    pub n_mu: usize,
    /// Smallest grid value relative to the largest singular value.
    pub mu_ratio: f64,
    pub validation_fraction: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { mu: None, n_mu: 12, mu_ratio: 1e-3, validation_fraction: 0.1, max_iterations: 500, tolerance: 1e-6, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McModel {
    /// Rows are units, columns `k * d + c` for grid index `k`, channel `c`.
    pub completed: DMatrix<f64>,
    pub mu: f64,
    pub rank: usize,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct SoftImpute {
    pub completed: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub rank: usize,
}

/// `1/2 ||P_obs(M - Z)||^2 + mu ||Z||_*`.
pub fn soft_impute_objective(m: &DMatrix<f64>, observed: &DMatrix<bool>, z: &DMatrix<f64>, mu: f64) -> Result<f64> {
    let mut fit = 0.0;
    for ((a, b), &o) in m.iter().zip(z.iter()).zip(observed.iter()) {
        if o {
            fit += (a - b) * (a - b);
        }
    }
    let nuclear: f64 = jacobi_svd(z)?.s.iter().sum();
    Ok(0.5 * fit + mu * nuclear)
}

fn shrink(x: &DMatrix<f64>, mu: f64) -> Result<(DMatrix<f64>, usize)> {
    let mut svd = jacobi_svd(x)?;
    let mut rank = 0;
    for s in &mut svd.s {
        *s = (*s - mu).max(0.0);
        if *s > 0.0 {
            rank += 1;
        }
    }
    Ok((svd.reconstruct(), rank))
}

/// Soft-impute: alternately fill unobserved cells from the current estimate and
/// soft-threshold the singular values by `mu`.
pub fn soft_impute(
    m: &DMatrix<f64>,
    observed: &DMatrix<bool>,
    mu: f64,
    max_iterations: usize,
    tolerance: f64,
    warm: Option<&DMatrix<f64>>,
) -> Result<SoftImpute> {
    if m.shape() != observed.shape() {
        return Err(shape("mask and matrix shapes differ"));
    }
    if !(mu >= 0.0) {
        return Err(validation("shrinkage must be non-negative"));
    }
    let mut z = warm.cloned().unwrap_or_else(|| DMatrix::zeros(m.nrows(), m.ncols()));
    if z.shape() != m.shape() {
        return Err(shape("warm start has the wrong shape"));
    }
    let mut out = SoftImpute { completed: z.clone(), iterations: 0, converged: false, rank: 0 };
    for it in 1..=max_iterations {
        let filled = m.zip_zip_map(&z, observed, |a, b, o| if o { a } else { b });
        let (next, rank) = shrink(&filled, mu)?;
        let change = (&next - &z).norm_squared();
        let scale = z.norm_squared();
        z = next;
        out.iterations = it;
        out.rank = rank;
        if change <= tolerance * tolerance * scale.max(f64::MIN_POSITIVE) || (scale == 0.0 && change == 0.0) {
            out.converged = true;
            break;
        }
    }
    out.completed = z;
    Ok(out)
}

/// Warm-started path over decreasing `mus`; returns one fit per value.
fn soft_impute_path(m: &DMatrix<f64>, observed: &DMatrix<bool>, mus: &[f64], config: &McConfig) -> Result<Vec<SoftImpute>> {
    let mut warm: Option<DMatrix<f64>> = None;
    mus.iter()
        .map(|&mu| {
            let fit = soft_impute(m, observed, mu, config.max_iterations, config.tolerance, warm.as_ref())?;
            warm = Some(fit.completed.clone());
            Ok(fit)
        })
        .collect()
}

fn mu_grid(m: &DMatrix<f64>, observed: &DMatrix<bool>, config: &McConfig) -> Result<Vec<f64>> {
    let filled = m.zip_map(observed, |a, o| if o { a } else { 0.0 });
    let top = jacobi_svd(&filled)?.s.first().copied().unwrap_or(0.0);
    let n = config.n_mu.max(1);
    Ok((0..n)
        .map(|k| {
            let frac = if n == 1 { 0.0 } else { k as f64 / (n - 1) as f64 };
            top * config.mu_ratio.powf(frac)
        })
        .collect())
}

/// Completes `m` on the unobserved cells, picking `mu` on held-out observed cells
/// unless the config fixes it.
pub fn complete_matrix(m: &DMatrix<f64>, observed: &DMatrix<bool>, config: &McConfig) -> Result<McModel> {
    if m.iter().zip(observed.iter()).any(|(v, &o)| o && !v.is_finite()) {
        return Err(validation("observed cells must be finite"));
    }
    let m = m.zip_map(observed, |a, o| if o { a } else { 0.0 });
    let grid = match config.mu {
        Some(mu) => vec![mu],
        None => mu_grid(&m, observed, config)?,
    };
    let mu = if grid.len() == 1 {
        grid[0]
    } else {
        let cells: Vec<usize> = observed.iter().enumerate().filter(|(_, &o)| o).map(|(i, _)| i).collect();
        let n_hold = ((cells.len() as f64 * config.validation_fraction).round() as usize).clamp(1, cells.len() - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let held: Vec<usize> = sample(&mut rng, cells.len(), n_hold).into_iter().map(|k| cells[k]).collect();
        let mut train_mask = observed.clone();
        for &i in &held {
            train_mask[i] = false;
        }
        let fits = soft_impute_path(&m, &train_mask, &grid, config)?;
        let errors: Vec<f64> = fits.iter().map(|f| held.iter().map(|&i| (f.completed[i] - m[i]).powi(2)).sum::<f64>()).collect();
        let best = errors.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(k, _)| k).unwrap_or(0);
        grid[best]
    };
    let path: Vec<f64> = grid.iter().copied().filter(|&g| g >= mu).collect();
    let fits = soft_impute_path(&m, observed, &path, config)?;
    let last = fits.into_iter().last().expect("path contains mu");
    if !last.converged {
        log::warn!("soft-impute stopped after {} iterations at mu = {mu:.3e}", last.iterations);
    }
    Ok(McModel { completed: last.completed, mu, rank: last.rank, iterations: last.iterations, converged: last.converged })
}

/// Matrix-completion synthetic control: the treated unit's post-treatment cells are masked.
pub fn fit_mc_sc(aligned: &AlignedPanel, config: &McConfig) -> Result<McModel> {
    let d = aligned.dims;
    let cols = aligned.grid.len() * d;
    let m = DMatrix::from_fn(aligned.n_units(), cols, |i, j| aligned.values[i][j]);
    let n_pre = aligned.n_pre();
    let observed = DMatrix::from_fn(aligned.n_units(), cols, |i, j| i != 0 || j / d < n_pre);
    complete_matrix(&m, &observed, config)
}
