//! Neural continuous synthetic control.
//!
//! The treated unit's untreated path is read out from a latent state `z`
//! solving the controlled differential equation
//!
//! ```text
//! z(t0) = g(y_1(t0)),   dz/dt = f(z) (W ⊙ dX/dt),   y_hat(t) = h(z(t))
//! ```
//!
//! where `X` stacks the spline reconstructions of every control unit plus a
//! shared time channel and `W` scales each control's channels by its own
//! weight. A control with weight zero has no influence on the solution.

mod checkpoint;
mod effect;
mod solver;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape, validation, Result};
use crate::nn::{Mlp, Tape};
use crate::panel::{fit_spline, Panel, SplinePath};

pub use checkpoint::{read_model, write_model, FitManifest, MODEL_MAGIC};
pub use effect::{covariate_relevance_weights, treatment_effect, TreatmentEffectSeries, RELEVANCE_FLOOR};
pub use solver::{predict, predict_with_path, solve_forward, LatentTrajectory, SolverGrid};
pub use train::{fit, loss, loss_gradients, FitResult, Gradients, LambdaScore, TrainConfig};

/// Weights with magnitude at or below this are reported as inactive.
pub const ACTIVE_EPS: f64 = 1e-6;
pub const DEFAULT_LATENT_DIM: usize = 5;
pub const HIDDEN: usize = 10;
/// Multiplier on the initial output layer of `f_theta`.
pub const FIELD_INIT_SCALE: f64 = 0.1;

/// Affine normalisation applied around the networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    /// Treated values enter `g` as `(y - shift) / scale`; `h` output is mapped back.
    pub treated_shift: Vec<f64>,
    pub treated_scale: Vec<f64>,
    /// Divides each driving channel's derivative, `n_controls * d + 1` entries
    /// with the shared time channel last.
    pub control_scale: Vec<f64>,
}

impl Scaling {
    pub fn identity(n_controls: usize, d: usize) -> Self {
        Self { treated_shift: vec![0.0; d], treated_scale: vec![1.0; d], control_scale: vec![1.0; n_controls * d + 1] }
    }

    /// Per-channel standardisation: treated statistics from `treated_rows`,
    /// each control from its own observations only. Time is measured in
    /// units of the training window `window`.
    pub fn standardising(treated_rows: &[Vec<f64>], window: (f64, f64), panel: &Panel) -> Self {
        let d = panel.dims;
        let stats = |rows: &mut dyn Iterator<Item = f64>| {
            let v: Vec<f64> = rows.collect();
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let sd = var.sqrt();
            (mean, if sd > 1e-8 { sd } else { 1.0 })
        };
        let mut treated_shift = Vec::with_capacity(d);
        let mut treated_scale = Vec::with_capacity(d);
        for k in 0..d {
            let (m, s) = stats(&mut treated_rows.iter().map(|r| r[k]));
            treated_shift.push(m);
            treated_scale.push(s);
        }
        let mut control_scale: Vec<f64> =
            panel.controls().iter().flat_map(|u| (0..d).map(move |k| stats(&mut u.values.iter().map(|r| r[k])).1)).collect();
        let span = window.1 - window.0;
        control_scale.push(if span > 0.0 && span.is_finite() { span } else { 1.0 });
        Self { treated_shift, treated_scale, control_scale }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcscModel {
    /// Embedding `d -> l`.
    pub g_eta: Mlp,
    /// Vector field `l -> l * (n_controls * d + 1)`, read as an `l x C` row-major matrix.
    pub f_theta: Mlp,
    /// Readout `l -> d`.
    pub h_nu: Mlp,
    pub w_diag: Vec<f64>,
    pub latent_dim: usize,
    pub n_controls: usize,
    pub d: usize,
    pub scaling: Scaling,
    /// Largest RK4 step used by [`solve_forward`].
    pub solver_step: f64,
}

impl NcscModel {
    /// Randomly initialised model with the default architecture and `W = 1/n_controls`.
    pub fn new<R: Rng + ?Sized>(n_controls: usize, d: usize, latent_dim: usize, solver_step: f64, rng: &mut R) -> Result<Self> {
        if n_controls == 0 || d == 0 || latent_dim == 0 {
            return Err(validation("model needs at least one control, dimension and latent dimension"));
        }
        let channels = n_controls * d + 1;
        let g_eta = Mlp::new(&[d, HIDDEN, latent_dim], rng)?;
        let mut f_theta = Mlp::new(&[latent_dim, HIDDEN, HIDDEN, latent_dim * channels], rng)?;
        // A quiet initial field keeps early trajectories near the embedding;
        // at full Glorot scale long horizons blow up before the first update.
        if let Some(last) = f_theta.layers_mut().last_mut() {
            last.weights.iter_mut().for_each(|w| *w *= FIELD_INIT_SCALE);
            last.bias.iter_mut().for_each(|b| *b *= FIELD_INIT_SCALE);
        }
        let h_nu = Mlp::new(&[latent_dim, HIDDEN, d], rng)?;
        Self::from_parts(
            g_eta,
            f_theta,
            h_nu,
            vec![1.0 / n_controls as f64; n_controls],
            Scaling::identity(n_controls, d),
            solver_step,
        )
    }

    pub fn from_parts(g_eta: Mlp, f_theta: Mlp, h_nu: Mlp, w_diag: Vec<f64>, scaling: Scaling, solver_step: f64) -> Result<Self> {
        let d = g_eta.input_dim();
        let latent_dim = g_eta.output_dim();
        let n_controls = w_diag.len();
        let channels = n_controls * d + 1;
        if f_theta.input_dim() != latent_dim || f_theta.output_dim() != latent_dim * channels {
            return Err(shape(format!(
                "vector field maps {} -> {}, expected {latent_dim} -> {}",
                f_theta.input_dim(),
                f_theta.output_dim(),
                latent_dim * channels
            )));
        }
        if h_nu.input_dim() != latent_dim || h_nu.output_dim() != d {
            return Err(shape(format!(
                "readout maps {} -> {}, expected {latent_dim} -> {d}",
                h_nu.input_dim(),
                h_nu.output_dim()
            )));
        }
        if w_diag.iter().any(|w| !w.is_finite()) {
            return Err(validation("w_diag must be finite"));
        }
        if scaling.treated_shift.len() != d
            || scaling.treated_scale.len() != d
            || scaling.control_scale.len() != n_controls * d + 1
        {
            return Err(shape("scaling does not match the model dimensions"));
        }
        if scaling.treated_scale.iter().chain(&scaling.control_scale).any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(validation("scales must be positive and finite"));
        }
        if !(solver_step > 0.0 && solver_step.is_finite()) {
            return Err(validation(format!("solver step must be positive, got {solver_step}")));
        }
        Ok(Self { g_eta, f_theta, h_nu, w_diag, latent_dim, n_controls, d, scaling, solver_step })
    }

    /// Number of driving channels: every control channel plus time.
    pub fn channels(&self) -> usize {
        self.n_controls * self.d + 1
    }

    /// Zero-based control indices with `|w| > ACTIVE_EPS`.
    pub fn active_set(&self) -> Vec<usize> {
        self.w_diag.iter().enumerate().filter(|(_, w)| w.abs() > ACTIVE_EPS).map(|(i, _)| i).collect()
    }

    pub fn n_params(&self) -> usize {
        self.g_eta.n_params() + self.f_theta.n_params() + self.h_nu.n_params() + self.n_controls
    }

    /// All parameters as `[g | f | h | w]`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.g_eta.params();
        p.extend(self.f_theta.params());
        p.extend(self.h_nu.params());
        p.extend_from_slice(&self.w_diag);
        p
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(shape(format!("expected {} parameters, got {}", self.n_params(), flat.len())));
        }
        let (ng, nf, nh) = (self.g_eta.n_params(), self.f_theta.n_params(), self.h_nu.n_params());
        self.g_eta.set_params(&flat[..ng])?;
        self.f_theta.set_params(&flat[ng..ng + nf])?;
        self.h_nu.set_params(&flat[ng + nf..ng + nf + nh])?;
        self.w_diag.copy_from_slice(&flat[ng + nf + nh..]);
        Ok(())
    }

    /// Offset of `w_diag` inside [`NcscModel::params`].
    pub fn w_offset(&self) -> usize {
        self.g_eta.n_params() + self.f_theta.n_params() + self.h_nu.n_params()
    }

    /// `z(t0) = g((y - shift) / scale)`.
    pub fn embed(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.g_eta.forward(&self.scale_treated(y)?)
    }

    pub(crate) fn scale_treated(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.d {
            return Err(shape(format!("treated value has {} entries, model expects {}", y.len(), self.d)));
        }
        Ok(y.iter().zip(&self.scaling.treated_shift).zip(&self.scaling.treated_scale).map(|((v, m), s)| (v - m) / s).collect())
    }

    /// `y_hat = shift + scale * h(z)`.
    pub fn readout(&self, z: &[f64]) -> Result<Vec<f64>> {
        let raw = self.h_nu.forward(z)?;
        Ok(self.unscale(&raw))
    }

    pub(crate) fn unscale(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().zip(&self.scaling.treated_shift).zip(&self.scaling.treated_scale).map(|((v, m), s)| m + s * v).collect()
    }

    /// `k = f(z) u` for a prepared driving vector `u`; records the forward pass in `tape`.
    pub(crate) fn field_apply(&self, z: &[f64], u: &[f64], tape: &mut Tape, out: &mut [f64]) -> Result<()> {
        self.f_theta.forward_with_tape(z, tape)?;
        let m = tape.output();
        let c = u.len();
        for (r, o) in out.iter_mut().enumerate() {
            let row = &m[r * c..(r + 1) * c];
            *o = row.iter().zip(u).map(|(a, x)| a * x).sum();
        }
        Ok(())
    }

    /// Fills `u = W ⊙ X'` from raw (already scaled) driving derivatives.
    /// Inactive controls contribute exact zeros regardless of their path.
    pub(crate) fn weight_drive(&self, dx: &[f64], u: &mut [f64]) {
        let d = self.d;
        for (i, &w) in self.w_diag.iter().enumerate() {
            for k in 0..d {
                let j = i * d + k;
                u[j] = if w == 0.0 { 0.0 } else { w * dx[j] };
            }
        }
        u[self.n_controls * d] = dx[self.n_controls * d];
    }
}

/// Stacked control splines with a shared time channel.
#[derive(Debug, Clone)]
pub struct DrivingPath {
    splines: Vec<SplinePath>,
    d: usize,
    span: (f64, f64),
}

impl DrivingPath {
    pub fn new(splines: Vec<SplinePath>) -> Result<Self> {
        let first = splines.first().ok_or_else(|| validation("driving path needs at least one control"))?;
        let d = first.channels() - 1;
        if let Some(i) = splines.iter().position(|s| s.channels() != d + 1) {
            return Err(shape(format!("control {i} has {} channels, expected {}", splines[i].channels(), d + 1)));
        }
        let span = splines.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| {
            let (lo, hi) = s.span();
            (a.min(lo), b.max(hi))
        });
        Ok(Self { splines, d, span })
    }

    pub fn from_panel(panel: &Panel) -> Result<Self> {
        Self::new(panel.controls().iter().map(fit_spline).collect::<Result<_>>()?)
    }

    pub fn n_controls(&self) -> usize {
        self.splines.len()
    }

    pub fn dims(&self) -> usize {
        self.d
    }

    pub fn channels(&self) -> usize {
        self.splines.len() * self.d + 1
    }

    pub fn span(&self) -> (f64, f64) {
        self.span
    }

    pub fn splines(&self) -> &[SplinePath] {
        &self.splines
    }

    /// `dX/dt` at `t` divided by `scale`, which covers the time channel too.
    /// Controls with `skip[i]` set are left at zero and never evaluated.
    pub fn derivative_into(&self, t: f64, scale: &[f64], skip: &[bool], out: &mut [f64]) -> Result<()> {
        if !t.is_finite() {
            return Err(validation(format!("cannot evaluate the driving path at t = {t}")));
        }
        let tol = 1e-9 * (1.0 + self.span.0.abs().max(self.span.1.abs()));
        if t < self.span.0 - tol || t > self.span.1 + tol {
            return Err(validation(format!("t = {t} lies outside every control span [{}, {}]", self.span.0, self.span.1)));
        }
        let d = self.d;
        let mut buf = vec![0.0; d + 1];
        for (i, s) in self.splines.iter().enumerate() {
            if skip.get(i).copied().unwrap_or(false) {
                out[i * d..(i + 1) * d].fill(0.0);
                continue;
            }
            s.derivative_into(t, &mut buf)?;
            for k in 0..d {
                out[i * d + k] = buf[k] / scale[i * d + k];
            }
        }
        out[self.splines.len() * d] = 1.0 / scale[self.splines.len() * d];
        Ok(())
    }

    /// Sorted, de-duplicated knots of the controls not in `skip`.
    pub fn knots(&self, skip: &[bool]) -> Vec<f64> {
        let mut all: Vec<f64> = self
            .splines
            .iter()
            .enumerate()
            .filter(|(i, _)| !skip.get(*i).copied().unwrap_or(false))
            .flat_map(|(_, s)| s.knots().iter().copied())
            .collect();
        all.sort_by(f64::total_cmp);
        all.dedup();
        all
    }
}

/// `dz/dt` at `(z, t)`.
pub fn cde_rhs(model: &NcscModel, z: &[f64], t: f64, path: &DrivingPath) -> Result<Vec<f64>> {
    if path.n_controls() != model.n_controls || path.dims() != model.d {
        return Err(shape("driving path does not match the model"));
    }
    if z.len() != model.latent_dim {
        return Err(shape(format!("latent state has {} entries, expected {}", z.len(), model.latent_dim)));
    }
    let c = model.channels();
    let skip: Vec<bool> = model.w_diag.iter().map(|&w| w == 0.0).collect();
    let mut dx = vec![0.0; c];
    path.derivative_into(t, &model.scaling.control_scale, &skip, &mut dx)?;
    let mut u = vec![0.0; c];
    model.weight_drive(&dx, &mut u);
    let mut out = vec![0.0; model.latent_dim];
    model.field_apply(z, &u, &mut Tape::default(), &mut out)?;
    Ok(out)
}
