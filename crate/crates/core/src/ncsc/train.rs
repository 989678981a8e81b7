use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::solver::{backward, check_path, integrate, DriveTable, SolverGrid};
use super::{DrivingPath, NcscModel, Scaling, DEFAULT_LATENT_DIM};
use crate::error::{shape, validation, Error, Result};
use crate::nn::{prox_l1_weighted, AdamState};
use crate::panel::Panel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Penalty used when `lambda_grid` is empty.
    pub lambda_l1: f64,
    /// Candidates compared on the validation tail.
    pub lambda_grid: Vec<f64>,
    pub lr: f64,
    pub epochs: usize,
    /// Epochs without validation improvement before the learning rate halves.
    pub patience: usize,
    /// Largest solver step; `None` uses the smallest gap between adjacent observations.
    pub solver_step: Option<f64>,
    /// Share of pre-treatment points held out at the end of the window.
    pub validation_fraction: f64,
    /// Positive `p_i`; the penalty on control `i` becomes `lambda |w_i| / p_i`.
    pub relevance_weights: Option<Vec<f64>>,
    pub latent_dim: usize,
    /// Standardise treated values and control derivatives before the networks.
    pub standardize: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_l1: 0.01,
            lambda_grid: vec![0.001, 0.01, 0.1, 1.0],
            lr: 0.01,
            epochs: 1000,
            patience: 50,
            solver_step: None,
            validation_fraction: 0.2,
            relevance_weights: None,
            latent_dim: DEFAULT_LATENT_DIM,
            standardize: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(validation(format!("learning rate must be positive, got {}", self.lr)));
        }
        if let Some(s) = self.solver_step {
            if !(s > 0.0 && s.is_finite()) {
                return Err(validation(format!("solver step must be positive, got {s}")));
            }
        }
        if self.lambda_grid.iter().chain([&self.lambda_l1]).any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(validation("penalties must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(validation("validation fraction must lie in [0, 1)"));
        }
        if self.epochs == 0 || self.patience == 0 || self.latent_dim == 0 {
            return Err(validation("epochs, patience and latent dimension must be positive"));
        }
        if let Some(p) = &self.relevance_weights {
            if p.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(validation("relevance weights must be positive"));
            }
        }
        Ok(())
    }
}

/// Gradients of the data term, grouped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub g_eta: Vec<f64>,
    pub f_theta: Vec<f64>,
    pub h_nu: Vec<f64>,
    pub w_diag: Vec<f64>,
}

impl Gradients {
    /// Same layout as [`NcscModel::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.g_eta.clone();
        v.extend_from_slice(&self.f_theta);
        v.extend_from_slice(&self.h_nu);
        v.extend_from_slice(&self.w_diag);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaScore {
    pub lambda: f64,
    pub train_error: f64,
    pub validation_error: f64,
    pub active_set: Vec<usize>,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: NcscModel,
    /// Penalised training loss per epoch for the selected penalty.
    pub loss_history: Vec<f64>,
    pub selected_lambda: f64,
    pub active_set: Vec<usize>,
    pub train_error: f64,
    pub validation_error: f64,
    pub lambda_scores: Vec<LambdaScore>,
    pub seed: u64,
}

/// Treated observations before `T` and everything needed to evaluate the loss.
pub(crate) struct Problem {
    path: DrivingPath,
    t0: f64,
    y0: Vec<f64>,
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    n_train: usize,
    cache: Option<(Vec<bool>, SolverGrid, DriveTable)>,
}

struct Evaluation {
    train_mse: f64,
    val_mse: f64,
    grads: Option<Gradients>,
}

impl Problem {
    fn new(panel: &Panel, n_train: Option<usize>) -> Result<Self> {
        let treated = panel.treated();
        let pre: Vec<usize> = (0..treated.len()).filter(|&k| treated.times[k] < panel.treatment_time).collect();
        if pre.is_empty() {
            return Err(validation("treated unit has no pre-treatment observations"));
        }
        let n_train = n_train.unwrap_or(pre.len()).min(pre.len());
        Ok(Self {
            path: DrivingPath::from_panel(panel)?,
            t0: treated.times[0],
            y0: treated.values[0].clone(),
            times: pre.iter().map(|&k| treated.times[k]).collect(),
            values: pre.iter().map(|&k| treated.values[k].clone()).collect(),
            n_train,
            cache: None,
        })
    }

    /// Grid from the knots of the active controls; rebuilt when that set changes.
    fn prepare(&mut self, model: &NcscModel) -> Result<()> {
        let skip: Vec<bool> = model.w_diag.iter().map(|&w| w == 0.0).collect();
        if matches!(&self.cache, Some((s, _, _)) if *s == skip) {
            return Ok(());
        }
        let grid = SolverGrid::build(self.t0, &self.times, &self.path.knots(&skip), model.solver_step)?;
        let same_grid = matches!(&self.cache, Some((_, g, _)) if *g == grid);
        if same_grid {
            if let Some(cache) = &mut self.cache {
                cache.0 = skip;
            }
            return Ok(());
        }
        // Every control is tabulated so zero weights still receive gradients.
        let table = DriveTable::build(&self.path, &grid, &model.scaling.control_scale, &[])?;
        self.cache = Some((skip, grid, table));
        Ok(())
    }

    fn evaluate(&mut self, model: &NcscModel, want_grad: bool) -> Result<Evaluation> {
        check_path(model, &self.path)?;
        self.prepare(model)?;
        let (_, grid, table) = self.cache.as_ref().expect("prepared");
        let l = model.latent_dim;
        let d = model.d;
        let y0_scaled = model.scale_treated(&self.y0)?;
        let mut g_tape = crate::nn::Tape::default();
        model.g_eta.forward_with_tape(&y0_scaled, &mut g_tape)?;
        let z0 = g_tape.output().to_vec();
        let states = integrate(model, grid, table, &z0)?;

        let n_val = self.times.len() - self.n_train;
        let mut train_sse = 0.0;
        let mut val_sse = 0.0;
        let mut h_grad = vec![0.0; model.h_nu.n_params()];
        let mut cotangents = Vec::new();
        let mut h_tape = crate::nn::Tape::default();
        for (k, (&idx, y)) in grid.eval_index.iter().zip(&self.values).enumerate() {
            let z = &states[idx * l..(idx + 1) * l];
            model.h_nu.forward_with_tape(z, &mut h_tape)?;
            let pred = model.unscale(h_tape.output());
            let err: Vec<f64> = pred.iter().zip(y).map(|(p, t)| p - t).collect();
            let sq: f64 = err.iter().map(|e| e * e).sum();
            if k < self.n_train {
                train_sse += sq;
                if want_grad {
                    let cot: Vec<f64> =
                        (0..d).map(|c| 2.0 * err[c] * model.scaling.treated_scale[c] / self.n_train as f64).collect();
                    let dz = model.h_nu.vjp_with_tape(&h_tape, &cot, &mut h_grad)?;
                    cotangents.push((idx, dz));
                }
            } else {
                val_sse += sq;
            }
        }
        let train_mse = train_sse / self.n_train.max(1) as f64;
        let val_mse = if n_val > 0 { val_sse / n_val as f64 } else { train_mse };
        if !train_mse.is_finite() {
            return Err(Error::Divergence("non-finite training loss".into()));
        }
        let grads = if want_grad {
            let (f_grad, w_grad, dz0) = backward(model, grid, table, &states, &cotangents)?;
            let mut g_grad = vec![0.0; model.g_eta.n_params()];
            model.g_eta.vjp_with_tape(&g_tape, &dz0, &mut g_grad)?;
            let grads = Gradients { g_eta: g_grad, f_theta: f_grad, h_nu: h_grad, w_diag: w_grad };
            if grads.flatten().iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence("non-finite gradient".into()));
            }
            Some(grads)
        } else {
            None
        };
        Ok(Evaluation { train_mse, val_mse, grads })
    }
}

fn penalty(w: &[f64], lambda: f64, relevance: Option<&[f64]>) -> f64 {
    w.iter().enumerate().map(|(i, x)| lambda * x.abs() / relevance.map_or(1.0, |p| p[i])).sum()
}

fn check_relevance(model: &NcscModel, relevance: Option<&[f64]>) -> Result<()> {
    match relevance {
        Some(p) if p.len() != model.n_controls => {
            Err(shape(format!("{} relevance weights for {} controls", p.len(), model.n_controls)))
        }
        _ => Ok(()),
    }
}

/// Mean squared error over the treated unit's pre-treatment observations plus
/// `lambda_l1 * sum |w_i| / p_i`.
pub fn loss(model: &NcscModel, panel: &Panel, config: &TrainConfig) -> Result<f64> {
    let relevance = config.relevance_weights.as_deref();
    check_relevance(model, relevance)?;
    let mut problem = Problem::new(panel, None)?;
    let eval = problem.evaluate(model, false)?;
    Ok(eval.train_mse + penalty(&model.w_diag, config.lambda_l1, relevance))
}

/// Exact gradients of the pre-treatment mean squared error; the penalty is left to the proximal step.
pub fn loss_gradients(model: &NcscModel, panel: &Panel) -> Result<Gradients> {
    let mut problem = Problem::new(panel, None)?;
    Ok(problem.evaluate(model, true)?.grads.expect("requested"))
}

struct Candidate {
    model: NcscModel,
    history: Vec<f64>,
    score: LambdaScore,
}

const MAX_DIVERGENCES: usize = 8;
const MAX_HALVINGS: u32 = 10;

fn train_one(initial: &NcscModel, panel: &Panel, n_train: usize, lambda: f64, config: &TrainConfig) -> Result<Candidate> {
    let relevance = config.relevance_weights.as_deref();
    let mut problem = Problem::new(panel, Some(n_train))?;
    let mut model = initial.clone();
    let mut params = model.params();
    let w0 = model.w_offset();
    let mut adam = AdamState::new(params.len(), config.lr);
    let min_lr = config.lr / 2f64.powi(MAX_HALVINGS as i32);

    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    let mut history = Vec::with_capacity(config.epochs);
    let mut stale = 0;
    let mut divergences = 0;
    let mut epochs = 0;
    for _ in 0..config.epochs {
        epochs += 1;
        let eval = match problem.evaluate(&model, true) {
            Ok(e) => e,
            Err(Error::Divergence(msg)) => {
                divergences += 1;
                if divergences > MAX_DIVERGENCES || best.is_none() {
                    return Err(Error::Divergence(format!(
                        "training diverged ({msg}) at lambda = {lambda}; try a smaller learning rate than {}",
                        config.lr
                    )));
                }
                let (_, _, p) = best.as_ref().expect("checked");
                params.clone_from(p);
                model.set_params(&params)?;
                adam = AdamState::new(params.len(), adam.lr / 2.0);
                stale = 0;
                continue;
            }
            Err(e) => return Err(e),
        };
        history.push(eval.train_mse + penalty(&model.w_diag, lambda, relevance));
        let improved = best.as_ref().is_none_or(|(v, _, _)| eval.val_mse < *v);
        // Ties move the snapshot forward but still count towards the plateau.
        if improved || best.as_ref().is_some_and(|(v, _, _)| eval.val_mse == *v) {
            best = Some((eval.val_mse, eval.train_mse, params.clone()));
        }
        if improved {
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                adam.lr /= 2.0;
                stale = 0;
                if adam.lr < min_lr {
                    break;
                }
            }
        }

        let grads = eval.grads.expect("requested").flatten();
        adam.step(&mut params, &grads)?;
        if lambda > 0.0 {
            // Proximal step in Adam's diagonal metric: threshold = step size * lambda / p_i.
            let thresholds: Vec<f64> =
                (0..model.n_controls).map(|i| adam.step_size(w0 + i) * lambda / relevance.map_or(1.0, |p| p[i])).collect();
            let shrunk = prox_l1_weighted(&params[w0..], &thresholds);
            params[w0..].copy_from_slice(&shrunk);
        }
        model.set_params(&params)?;
    }

    let (val, train, p) = best.expect("at least one epoch evaluated");
    model.set_params(&p)?;
    let score = LambdaScore { lambda, train_error: train, validation_error: val, active_set: model.active_set(), epochs };
    Ok(Candidate { model, history, score })
}

/// Trains NC-SC on the pre-treatment window, choosing the penalty on the validation tail.
pub fn fit(panel: &Panel, config: &TrainConfig) -> Result<FitResult> {
    config.validate()?;
    let treated = panel.treated();
    let n_pre = treated.times.iter().filter(|&&t| t < panel.treatment_time).count();
    let n_val =
        if config.validation_fraction > 0.0 { ((n_pre as f64 * config.validation_fraction).round() as usize).max(1) } else { 0 };
    if n_pre < n_val + 2 {
        return Err(validation(format!("{n_pre} pre-treatment observations are too few to train with {n_val} held out")));
    }
    let n_train = n_pre - n_val;
    if let Some(p) = &config.relevance_weights {
        if p.len() != panel.n_controls() {
            return Err(shape(format!("{} relevance weights for {} controls", p.len(), panel.n_controls())));
        }
    }

    let solver_step = config.solver_step.unwrap_or_else(|| panel.min_observation_gap());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut initial = NcscModel::new(panel.n_controls(), panel.dims, config.latent_dim, solver_step, &mut rng)?;
    if config.standardize {
        let window = (treated.times[0], treated.times[n_train - 1]);
        initial.scaling = Scaling::standardising(&treated.values[..n_train], window, panel);
    }

    let lambdas = if config.lambda_grid.is_empty() { vec![config.lambda_l1] } else { config.lambda_grid.clone() };
    let candidates: Vec<Result<Candidate>> =
        lambdas.par_iter().map(|&lambda| train_one(&initial, panel, n_train, lambda, config)).collect();
    let mut ok = Vec::new();
    let mut last_err = None;
    for c in candidates {
        match c {
            Ok(c) => ok.push(c),
            Err(e) => {
                log::warn!("{e}");
                last_err = Some(e);
            }
        }
    }
    if ok.is_empty() {
        return Err(last_err.expect("at least one penalty was tried"));
    }
    let scores: Vec<LambdaScore> = ok.iter().map(|c| c.score.clone()).collect();
    let best = ok
        .into_iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.score.validation_error.total_cmp(&b.score.validation_error).then(i.cmp(j)))
        .map(|(_, c)| c)
        .expect("non-empty");
    Ok(FitResult {
        active_set: best.model.active_set(),
        selected_lambda: best.score.lambda,
        train_error: best.score.train_error,
        validation_error: best.score.validation_error,
        loss_history: best.history,
        model: best.model,
        lambda_scores: scores,
        seed: config.seed,
    })
}
