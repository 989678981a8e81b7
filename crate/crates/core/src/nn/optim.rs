use serde::{Deserialize, Serialize};

use crate::error::{shape, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self { m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8, lr }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(shape(format!(
                "Adam state has {} entries, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Divergence(format!("non-finite gradient at parameter {i}")));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }

    /// Per-coordinate step length `lr / (sqrt(v_hat) + eps)` of the last update.
    pub fn step_size(&self, i: usize) -> f64 {
        if self.t == 0 {
            return self.lr / self.eps;
        }
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        self.lr / ((self.v[i] / c2).sqrt() + self.eps)
    }
}

pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    state.step(params, grads)
}

/// Soft thresholding `sign(v) * max(|v| - threshold, 0)`.
pub fn prox_l1(values: &[f64], threshold: f64) -> Vec<f64> {
    values.iter().map(|&v| soft_threshold(v, threshold)).collect()
}

/// Soft thresholding with one threshold per coordinate.
pub fn prox_l1_weighted(values: &[f64], thresholds: &[f64]) -> Vec<f64> {
    values.iter().zip(thresholds).map(|(&v, &t)| soft_threshold(v, t)).collect()
}

#[inline]
fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}
