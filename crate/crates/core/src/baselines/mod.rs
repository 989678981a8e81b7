//! Discrete-time synthetic control estimators.
//!
//! All of them work on a shared time grid: misaligned panels are first
//! evaluated on the grid through each unit's interpolating spline.
//!
//! * `sc`: weights on the probability simplex.
//! * `kmm`: kernel mean matching of pre-treatment outcomes.
//! * `rsc`: elastic net with intercept, tuned by cross-validation.
//! * `mc`: nuclear-norm matrix completion (soft-impute).

mod kmm;
mod mc;
mod rsc;
mod sc;
mod simplex;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{shape, validation, Error, Result};
use crate::panel::{fit_spline, Panel};

pub use kmm::{fit_kmm_sc, median_pairwise_distance, KernelKind, KmmConfig};
pub use mc::{fit_mc_sc, soft_impute, soft_impute_objective, McConfig, McModel};
pub use rsc::{elastic_net, fit_rsc, fit_rsc_with, RscConfig};
pub use sc::{fit_sc, sc_objective};
pub use simplex::{project_box_band, project_simplex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ncsc,
    Sc,
    Kmm,
    Rsc,
    Mc,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Ncsc, Method::Sc, Method::Kmm, Method::Rsc, Method::Mc];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ncsc => "ncsc",
            Method::Sc => "sc",
            Method::Kmm => "kmm",
            Method::Rsc => "rsc",
            Method::Mc => "mc",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| validation(format!("unknown method {s:?}; expected one of ncsc, sc, kmm, rsc, mc")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub converged: bool,
    /// Final value of the solver's stopping quantity.
    pub achieved_tolerance: f64,
    pub objective: f64,
}

/// Weights `w_2..w_n` of a linear synthetic control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScWeights {
    pub method: Method,
    pub weights: Vec<f64>,
    /// Non-zero only for `rsc`.
    pub intercept: f64,
    pub hyperparameters: BTreeMap<String, f64>,
    pub diagnostics: Diagnostics,
}

/// Panel values on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPanel {
    pub grid: Vec<f64>,
    pub dims: usize,
    /// `values[unit]` is row-major `(grid.len(), dims)`; unit 0 is treated.
    pub values: Vec<Vec<f64>>,
    pub treatment_time: f64,
}

impl AlignedPanel {
    pub fn n_units(&self) -> usize {
        self.values.len()
    }

    /// Number of grid points strictly before the treatment time.
    pub fn n_pre(&self) -> usize {
        self.grid.iter().filter(|&&t| t < self.treatment_time).count()
    }

    /// Value of `unit` at grid index `k`.
    pub fn at(&self, unit: usize, k: usize) -> &[f64] {
        &self.values[unit][k * self.dims..(k + 1) * self.dims]
    }

    /// Controls' first `n_cols` grid points as rows, and the treated unit's as target.
    pub fn design(&self, n_cols: usize) -> (DMatrix<f64>, Vec<f64>) {
        let p = n_cols * self.dims;
        let x = DMatrix::from_fn(self.n_units() - 1, p, |i, j| self.values[i + 1][j]);
        (x, self.values[0][..p].to_vec())
    }

    /// Controls and target restricted to the pre-treatment grid points.
    pub fn pre_treatment_design(&self) -> (DMatrix<f64>, Vec<f64>) {
        self.design(self.n_pre())
    }

    /// Grid index of `t`; times must lie exactly on the grid.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        self.grid.iter().position(|&g| g == t).ok_or_else(|| validation(format!("time {t} is not on the alignment grid")))
    }
}

/// Evaluates every unit's spline on `grid`.
pub fn align_panel(panel: &Panel, grid: &[f64]) -> Result<AlignedPanel> {
    if grid.is_empty() {
        return Err(validation("alignment grid is empty"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(validation("alignment grid must be strictly increasing"));
    }
    let d = panel.dims;
    let values = panel
        .units
        .iter()
        .map(|u| {
            let path = fit_spline(u)?;
            let mut buf = vec![0.0; d + 1];
            let mut row = Vec::with_capacity(grid.len() * d);
            for &t in grid {
                path.eval_into(t, &mut buf)?;
                row.extend_from_slice(&buf[..d]);
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AlignedPanel { grid: grid.to_vec(), dims: d, values, treatment_time: panel.treatment_time })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineFit {
    Weights(ScWeights),
    Completion(McModel),
}

impl BaselineFit {
    pub fn method(&self) -> Method {
        match self {
            BaselineFit::Weights(w) => w.method,
            BaselineFit::Completion(_) => Method::Mc,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub kmm: KmmConfig,
    pub rsc: RscConfig,
    pub mc: McConfig,
}

/// Fits one discrete estimator on the pre-treatment part of `aligned`.
pub fn fit_baseline(method: Method, aligned: &AlignedPanel, config: &BaselineConfig) -> Result<BaselineFit> {
    if aligned.n_pre() == 0 {
        return Err(validation("no pre-treatment grid points"));
    }
    let (x, y) = aligned.pre_treatment_design();
    Ok(match method {
        Method::Sc => BaselineFit::Weights(fit_sc(&x, &y)?),
        Method::Kmm => BaselineFit::Weights(fit_kmm_sc(&x, &y, &config.kmm)?),
        Method::Rsc => BaselineFit::Weights(fit_rsc_with(&x, &y, &config.rsc)?),
        Method::Mc => BaselineFit::Completion(fit_mc_sc(aligned, &config.mc)?),
        Method::Ncsc => return Err(validation("ncsc is not a discrete baseline")),
    })
}

/// Synthetic control at grid times, row-major `(times.len(), dims)`.
pub fn predict_baseline(fit: &BaselineFit, aligned: &AlignedPanel, times: &[f64]) -> Result<Vec<Vec<f64>>> {
    let d = aligned.dims;
    match fit {
        BaselineFit::Weights(w) => {
            if w.weights.len() + 1 != aligned.n_units() {
                return Err(shape(format!(
                    "fit has {} weights but the panel has {} controls",
                    w.weights.len(),
                    aligned.n_units() - 1
                )));
            }
            times
                .iter()
                .map(|&t| {
                    let k = aligned.index_of(t)?;
                    Ok((0..d)
                        .map(|c| {
                            w.intercept + w.weights.iter().enumerate().map(|(i, wi)| wi * aligned.at(i + 1, k)[c]).sum::<f64>()
                        })
                        .collect())
                })
                .collect()
        }
        BaselineFit::Completion(model) => {
            if model.completed.ncols() != aligned.grid.len() * d || model.completed.nrows() != aligned.n_units() {
                return Err(shape("completed matrix does not match the aligned panel"));
            }
            times
                .iter()
                .map(|&t| {
                    let k = aligned.index_of(t)?;
                    Ok((0..d).map(|c| model.completed[(0, k * d + c)]).collect())
                })
                .collect()
        }
    }
}
