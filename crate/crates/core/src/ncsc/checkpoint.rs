//! Model checkpoints and the JSON manifest written next to them.
//!
//! ```text
//! ctrlpath-ncsc 1
//! solver_step 1
//! w_diag 0.3 0 ...
//! treated_shift ...
//! treated_scale ...
//! control_scale ...
//! <g network> <f network> <h network>
//! ```
//!
//! Each network is a block in the plain network checkpoint format.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{FitResult, LambdaScore, NcscModel, Scaling};
use crate::error::{validation, Result};
use crate::nn::{read_mlp, write_mlp};

pub const MODEL_MAGIC: &str = "ctrlpath-ncsc 1";

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

pub fn write_model<W: Write>(model: &NcscModel, out: &mut W) -> Result<()> {
    writeln!(out, "{MODEL_MAGIC}")?;
    writeln!(out, "solver_step {}", model.solver_step)?;
    writeln!(out, "w_diag {}", join(&model.w_diag))?;
    writeln!(out, "treated_shift {}", join(&model.scaling.treated_shift))?;
    writeln!(out, "treated_scale {}", join(&model.scaling.treated_scale))?;
    writeln!(out, "control_scale {}", join(&model.scaling.control_scale))?;
    write_mlp(&model.g_eta, out)?;
    write_mlp(&model.f_theta, out)?;
    write_mlp(&model.h_nu, out)?;
    Ok(())
}

pub fn read_model(text: &str) -> Result<NcscModel> {
    let mut lines = text.lines();
    let magic = lines.next().map(str::trim);
    if magic != Some(MODEL_MAGIC) {
        return Err(validation(format!("unsupported model header {magic:?}")));
    }
    let mut field = |name: &str| -> Result<Vec<f64>> {
        let line = lines.next().ok_or_else(|| validation(format!("checkpoint ended before {name}")))?;
        let rest = line.trim().strip_prefix(name).ok_or_else(|| validation(format!("expected {name}, found {line:?}")))?;
        rest.split_whitespace()
            .map(|s| s.parse::<f64>().map_err(|e| validation(format!("{name}: bad value {s:?}: {e}"))))
            .collect()
    };
    let step = field("solver_step")?;
    let w_diag = field("w_diag")?;
    let scaling = Scaling {
        treated_shift: field("treated_shift")?,
        treated_scale: field("treated_scale")?,
        control_scale: field("control_scale")?,
    };
    let solver_step = match step.as_slice() {
        [s] => *s,
        _ => return Err(validation("solver_step needs exactly one value")),
    };
    let g_eta = read_mlp(&mut lines)?;
    let f_theta = read_mlp(&mut lines)?;
    let h_nu = read_mlp(&mut lines)?;
    NcscModel::from_parts(g_eta, f_theta, h_nu, w_diag, scaling, solver_step)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitManifest {
    pub latent_dim: usize,
    pub n_controls: usize,
    pub d: usize,
    pub w_diag: Vec<f64>,
    pub selected_lambda: f64,
    pub active_set: Vec<usize>,
    pub seed: u64,
    /// Checkpoint file name, relative to the manifest.
    pub checkpoint: String,
    pub train_error: f64,
    pub validation_error: f64,
    pub lambda_scores: Vec<LambdaScore>,
}

impl FitManifest {
    pub fn from_fit(fit: &FitResult, checkpoint: impl Into<String>) -> Self {
        Self {
            latent_dim: fit.model.latent_dim,
            n_controls: fit.model.n_controls,
            d: fit.model.d,
            w_diag: fit.model.w_diag.clone(),
            selected_lambda: fit.selected_lambda,
            active_set: fit.active_set.clone(),
            seed: fit.seed,
            checkpoint: checkpoint.into(),
            train_error: fit.train_error,
            validation_error: fit.validation_error,
            lambda_scores: fit.lambda_scores.clone(),
        }
    }
}
