//! Fixed-step RK4 (3/8 rule) for the latent CDE and its exact reverse pass.

use serde::{Deserialize, Serialize};

use super::{DrivingPath, NcscModel};
use crate::error::{shape, validation, Error, Result};
use crate::nn::Tape;
use crate::panel::Panel;

/// Step boundaries of one solve. Every requested evaluation time is a boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverGrid {
    pub times: Vec<f64>,
    /// `eval_index[k]` is the boundary index of the `k`-th evaluation time.
    pub eval_index: Vec<usize>,
}

impl SolverGrid {
    /// Merges `t0`, `t_eval` and the `knots` inside the solve span, then splits
    /// every gap into equal steps no longer than `max_step`.
    pub fn build(t0: f64, t_eval: &[f64], knots: &[f64], max_step: f64) -> Result<Self> {
        if !(max_step > 0.0 && max_step.is_finite()) {
            return Err(validation(format!("solver step must be positive, got {max_step}")));
        }
        if !t0.is_finite() || t_eval.iter().any(|t| !t.is_finite()) {
            return Err(validation("solver times must be finite"));
        }
        if t_eval.windows(2).any(|w| w[1] < w[0]) {
            return Err(validation("evaluation times must be ascending"));
        }
        if let Some(&first) = t_eval.first() {
            if first < t0 {
                return Err(validation(format!("evaluation time {first} precedes the initial time {t0}")));
            }
        }
        let t_end = t_eval.last().copied().unwrap_or(t0);
        let mut breaks: Vec<f64> = std::iter::once(t0)
            .chain(t_eval.iter().copied())
            .chain(knots.iter().copied().filter(|&k| k > t0 && k < t_end))
            .collect();
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();

        let mut times = vec![t0];
        for w in breaks.windows(2) {
            let gap = w[1] - w[0];
            let n = ((gap / max_step) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
            for k in 1..n {
                times.push(w[0] + gap * k as f64 / n as f64);
            }
            times.push(w[1]);
        }
        let mut eval_index = Vec::with_capacity(t_eval.len());
        let mut cursor = 0;
        for &t in t_eval {
            while times[cursor] != t {
                cursor += 1;
            }
            eval_index.push(cursor);
        }
        Ok(Self { times, eval_index })
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }
}

/// Scaled driving derivatives at the four stage times of every step.
#[derive(Debug, Clone)]
pub(crate) struct DriveTable {
    channels: usize,
    values: Vec<f64>,
}

impl DriveTable {
    pub(crate) fn build(path: &DrivingPath, grid: &SolverGrid, scale: &[f64], skip: &[bool]) -> Result<Self> {
        let c = path.channels();
        let mut values = vec![0.0; grid.n_steps() * 4 * c];
        for (s, w) in grid.times.windows(2).enumerate() {
            let h = w[1] - w[0];
            let stage_times = [w[0], w[0] + h / 3.0, w[0] + 2.0 * h / 3.0, w[1]];
            for (j, &t) in stage_times.iter().enumerate() {
                let at = (s * 4 + j) * c;
                path.derivative_into(t, scale, skip, &mut values[at..at + c])?;
            }
        }
        Ok(Self { channels: c, values })
    }

    #[inline]
    fn stage(&self, step: usize, j: usize) -> &[f64] {
        let at = (step * 4 + j) * self.channels;
        &self.values[at..at + self.channels]
    }
}

/// Scratch buffers for one step.
struct Stages {
    u: [Vec<f64>; 4],
    k: [Vec<f64>; 4],
    input: [Vec<f64>; 4],
    tapes: [Tape; 4],
}

impl Stages {
    fn new(l: usize, c: usize) -> Self {
        Self {
            u: std::array::from_fn(|_| vec![0.0; c]),
            k: std::array::from_fn(|_| vec![0.0; l]),
            input: std::array::from_fn(|_| vec![0.0; l]),
            tapes: Default::default(),
        }
    }

    /// Runs all four stages of one step from `z`, keeping inputs and tapes.
    fn run(&mut self, model: &NcscModel, table: &DriveTable, step: usize, h: f64, z: &[f64]) -> Result<()> {
        for j in 0..4 {
            model.weight_drive(table.stage(step, j), &mut self.u[j]);
        }
        let l = z.len();
        for j in 0..4 {
            for r in 0..l {
                let (k1, k2, k3) = (self.k[0][r], self.k[1][r], self.k[2][r]);
                self.input[j][r] = match j {
                    0 => z[r],
                    1 => z[r] + h * k1 / 3.0,
                    2 => z[r] + h * (k2 - k1 / 3.0),
                    _ => z[r] + h * (k1 - k2 + k3),
                };
            }
            let (input, tape, k) = (&self.input[j], &mut self.tapes[j], &mut self.k[j]);
            model.field_apply(input, &self.u[j], tape, k)?;
        }
        Ok(())
    }
}

/// Latent states at every grid boundary, row-major `(times.len(), l)`.
pub(crate) fn integrate(model: &NcscModel, grid: &SolverGrid, table: &DriveTable, z0: &[f64]) -> Result<Vec<f64>> {
    let l = model.latent_dim;
    let mut states = Vec::with_capacity(grid.times.len() * l);
    states.extend_from_slice(z0);
    let mut stages = Stages::new(l, model.channels());
    let mut z = z0.to_vec();
    for (s, w) in grid.times.windows(2).enumerate() {
        let h = w[1] - w[0];
        stages.run(model, table, s, h, &z)?;
        for r in 0..l {
            z[r] += h * (stages.k[0][r] + 3.0 * stages.k[1][r] + 3.0 * stages.k[2][r] + stages.k[3][r]) / 8.0;
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!("non-finite latent state at solver step {} (t = {})", s + 1, w[1])));
        }
        states.extend_from_slice(&z);
    }
    Ok(states)
}

/// Reverse pass of [`integrate`].
///
/// `cotangents` holds `(boundary index, dL/dz)` pairs. Returns the gradients
/// of the vector-field parameters and of `w_diag`, and `dL/dz0`.
pub(crate) fn backward(
    model: &NcscModel,
    grid: &SolverGrid,
    table: &DriveTable,
    states: &[f64],
    cotangents: &[(usize, Vec<f64>)],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let l = model.latent_dim;
    let c = model.channels();
    let d = model.d;
    let mut f_grad = vec![0.0; model.f_theta.n_params()];
    let mut w_grad = vec![0.0; model.n_controls];
    let mut adj = vec![0.0; l];
    let last = cotangents.iter().map(|(i, _)| *i).max().unwrap_or(0);
    let mut pending: Vec<&(usize, Vec<f64>)> = cotangents.iter().collect();
    pending.sort_by_key(|(i, _)| *i);

    let add_cotangents = |index: usize, adj: &mut [f64], pending: &mut Vec<&(usize, Vec<f64>)>| {
        while let Some(&&(i, ref cot)) = pending.last() {
            if i != index {
                break;
            }
            for (a, v) in adj.iter_mut().zip(cot) {
                *a += v;
            }
            pending.pop();
        }
    };

    let mut stages = Stages::new(l, c);
    let mut cot_f = vec![0.0; l * c];
    for s in (0..last).rev() {
        add_cotangents(s + 1, &mut adj, &mut pending);
        let h = grid.times[s + 1] - grid.times[s];
        stages.run(model, table, s, h, &states[s * l..(s + 1) * l])?;

        let mut a_k: [Vec<f64>; 4] = [
            adj.iter().map(|a| a * h / 8.0).collect(),
            adj.iter().map(|a| 3.0 * a * h / 8.0).collect(),
            adj.iter().map(|a| 3.0 * a * h / 8.0).collect(),
            adj.iter().map(|a| a * h / 8.0).collect(),
        ];
        for j in (0..4).rev() {
            let lambda = std::mem::take(&mut a_k[j]);
            let u = &stages.u[j];
            let m = stages.tapes[j].output();
            for r in 0..l {
                for (cf, &uc) in cot_f[r * c..(r + 1) * c].iter_mut().zip(u) {
                    *cf = lambda[r] * uc;
                }
            }
            let dx = table.stage(s, j);
            for (i, wg) in w_grad.iter_mut().enumerate() {
                let mut acc = 0.0;
                for r in 0..l {
                    let row = &m[r * c + i * d..r * c + (i + 1) * d];
                    acc += lambda[r] * row.iter().zip(&dx[i * d..(i + 1) * d]).map(|(a, b)| a * b).sum::<f64>();
                }
                *wg += acc;
            }
            let g = model.f_theta.vjp_with_tape(&stages.tapes[j], &cot_f, &mut f_grad)?;
            for r in 0..l {
                adj[r] += g[r];
                match j {
                    3 => {
                        a_k[0][r] += h * g[r];
                        a_k[1][r] -= h * g[r];
                        a_k[2][r] += h * g[r];
                    }
                    2 => {
                        a_k[0][r] -= h * g[r] / 3.0;
                        a_k[1][r] += h * g[r];
                    }
                    1 => a_k[0][r] += h * g[r] / 3.0,
                    _ => {}
                }
            }
        }
    }
    add_cotangents(0, &mut adj, &mut pending);
    Ok((f_grad, w_grad, adj))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentTrajectory {
    /// Starts at `t0`, followed by the requested times after it.
    pub times: Vec<f64>,
    pub z: Vec<Vec<f64>>,
}

/// Skip mask of zero-weight controls; they are never evaluated.
pub(crate) fn inactive(model: &NcscModel) -> Vec<bool> {
    model.w_diag.iter().map(|&w| w == 0.0).collect()
}

pub(crate) fn check_path(model: &NcscModel, path: &DrivingPath) -> Result<()> {
    if path.n_controls() != model.n_controls || path.dims() != model.d {
        return Err(shape(format!(
            "driving path has {} controls of dimension {}, model expects {} of dimension {}",
            path.n_controls(),
            path.dims(),
            model.n_controls,
            model.d
        )));
    }
    Ok(())
}

/// Solves the latent CDE from `z(t0) = g(y1_t0)` and reports `z` at `t0` and every `t_eval`.
pub fn solve_forward(model: &NcscModel, path: &DrivingPath, t0: f64, y1_t0: &[f64], t_eval: &[f64]) -> Result<LatentTrajectory> {
    check_path(model, path)?;
    let skip = inactive(model);
    let grid = SolverGrid::build(t0, t_eval, &path.knots(&skip), model.solver_step)?;
    let table = DriveTable::build(path, &grid, &model.scaling.control_scale, &skip)?;
    let z0 = model.embed(y1_t0)?;
    let states = integrate(model, &grid, &table, &z0)?;
    let l = model.latent_dim;
    let mut times = vec![t0];
    let mut z = vec![z0];
    for (&t, &i) in t_eval.iter().zip(&grid.eval_index) {
        if t == t0 {
            continue;
        }
        times.push(t);
        z.push(states[i * l..(i + 1) * l].to_vec());
    }
    Ok(LatentTrajectory { times, z })
}

/// Counterfactual `h(z(t))` at each requested time, starting from `(t0, y1_t0)`.
pub fn predict_with_path(model: &NcscModel, path: &DrivingPath, t0: f64, y1_t0: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>> {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| times[i]).collect();
    let mut unique = sorted.clone();
    unique.dedup();
    let traj = solve_forward(model, path, t0, y1_t0, &unique)?;
    let mut out = vec![Vec::new(); times.len()];
    for (&i, &t) in order.iter().zip(&sorted) {
        let k = traj.times.iter().position(|&s| s == t).expect("solver reports every requested time");
        out[i] = model.readout(&traj.z[k])?;
    }
    Ok(out)
}

/// Counterfactual for the panel's treated unit, started at its first observation.
pub fn predict(model: &NcscModel, panel: &Panel, times: &[f64]) -> Result<Vec<Vec<f64>>> {
    let path = DrivingPath::from_panel(panel)?;
    let treated = panel.treated();
    predict_with_path(model, &path, treated.times[0], &treated.values[0], times)
}
