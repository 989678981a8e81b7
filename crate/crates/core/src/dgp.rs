//! Synthetic data-generating processes.
//!
//! * Lorenz-96 with a forcing switch at the treatment time.
//! * A linear dynamical system `dy/dt = alpha(t) y + z(t)` whose treated unit
//!   is an exact weighted combination of the controls in its noise-free part.
//! * Noise-free panels whose treated unit is a fixed combination of smooth
//!   random control signals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{shape, validation, Result};
use crate::panel::{regular_grid, Panel, UnitSeries};

/// A panel together with the treated unit's untreated trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub panel: Panel,
    pub truth: UnitSeries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LorenzConfig {
    pub d: usize,
    pub f_control: f64,
    pub f_treated: f64,
    pub n_controls: usize,
    pub t_treat: f64,
    pub horizon: f64,
    pub sample_spacing: f64,
    pub rk_step: f64,
    pub seed: u64,
}

impl Default for LorenzConfig {
    fn default() -> Self {
        Self {
            d: 10,
            f_control: 5.0,
            f_treated: 10.0,
            n_controls: 20,
            t_treat: 200.0,
            horizon: 400.0,
            sample_spacing: 1.0,
            rk_step: 0.01,
            seed: 0,
        }
    }
}

impl LorenzConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d < 4 {
            return Err(validation(format!("Lorenz-96 needs d >= 4, got {}", self.d)));
        }
        if !(self.rk_step > 0.0 && self.rk_step <= self.sample_spacing) {
            return Err(validation("need 0 < rk_step <= sample_spacing"));
        }
        if !(self.t_treat > 0.0 && self.t_treat < self.horizon) {
            return Err(validation("need 0 < t_treat < horizon"));
        }
        if self.n_controls == 0 {
            return Err(validation("need at least one control"));
        }
        if ![self.f_control, self.f_treated, self.horizon, self.sample_spacing].iter().all(|v| v.is_finite()) {
            return Err(validation("Lorenz parameters must be finite"));
        }
        Ok(())
    }

    /// Observation times `0, spacing, ..., horizon`.
    pub fn sample_times(&self) -> Vec<f64> {
        let n = (self.horizon / self.sample_spacing).round() as usize + 1;
        regular_grid(0.0, self.horizon, n)
    }
}

/// `dx_i/dt = (x_{i+1} - x_{i-2}) x_{i-1} - x_i + F` with cyclic indices.
pub fn lorenz_rhs(state: &[f64], forcing: f64) -> Result<Vec<f64>> {
    if state.len() < 4 {
        return Err(shape(format!("Lorenz-96 state needs at least 4 entries, got {}", state.len())));
    }
    let mut out = vec![0.0; state.len()];
    lorenz_rhs_into(state, forcing, &mut out);
    Ok(out)
}

fn lorenz_rhs_into(x: &[f64], forcing: f64, out: &mut [f64]) {
    let d = x.len();
    for i in 0..d {
        let next = x[(i + 1) % d];
        let prev = x[(i + d - 1) % d];
        let prev2 = x[(i + d - 2) % d];
        out[i] = (next - prev2) * prev - x[i] + forcing;
    }
}

/// Classical fourth-order Runge-Kutta over `[0, t_end]` with `ceil(t_end / step)` equal steps.
pub fn integrate_lorenz(x0: &[f64], forcing: f64, t_end: f64, step: f64) -> Result<Vec<f64>> {
    if x0.len() < 4 {
        return Err(shape("Lorenz-96 state needs at least 4 entries"));
    }
    let mut x = x0.to_vec();
    let mut stepper = Rk4::new(x.len());
    stepper.advance(&mut x, forcing, t_end, step);
    Ok(x)
}

struct Rk4 {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(d: usize) -> Self {
        Self { k: [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]], tmp: vec![0.0; d] }
    }

    fn advance(&mut self, x: &mut [f64], forcing: f64, duration: f64, max_step: f64) {
        if duration <= 0.0 {
            return;
        }
        let n = (duration / max_step).ceil().max(1.0) as usize;
        let h = duration / n as f64;
        for _ in 0..n {
            self.step(x, forcing, h);
        }
    }

    fn step(&mut self, x: &mut [f64], forcing: f64, h: f64) {
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;
        lorenz_rhs_into(x, forcing, k1);
        for i in 0..x.len() {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        lorenz_rhs_into(tmp, forcing, k2);
        for i in 0..x.len() {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        lorenz_rhs_into(tmp, forcing, k3);
        for i in 0..x.len() {
            tmp[i] = x[i] + h * k3[i];
        }
        lorenz_rhs_into(tmp, forcing, k4);
        for i in 0..x.len() {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

/// Samples the first coordinate of a Lorenz-96 trajectory; forcing switches
/// from `f_before` to `f_after` at `t_switch` with a continuous state.
fn sample_first_coordinate(x0: &[f64], times: &[f64], t_switch: f64, f_before: f64, f_after: f64, step: f64) -> Vec<f64> {
    let mut x = x0.to_vec();
    let mut stepper = Rk4::new(x.len());
    let mut out = Vec::with_capacity(times.len());
    let mut t = 0.0;
    for &target in times {
        if t < t_switch && target > t_switch {
            stepper.advance(&mut x, f_before, t_switch - t, step);
            t = t_switch;
        }
        let forcing = if t < t_switch { f_before } else { f_after };
        stepper.advance(&mut x, forcing, target - t, step);
        t = target;
        out.push(x[0]);
    }
    out
}

/// Simulates the treated unit and `n_controls` independently initialised controls.
///
/// Unit ids are `treated`, `c01`, `c02`, ... The truth is the treated
/// trajectory under control forcing for all times.
pub fn simulate_lorenz(config: &LorenzConfig) -> Result<Simulation> {
    config.validate()?;
    let times = config.sample_times();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut initial = || -> Vec<f64> { (0..config.d).map(|_| rng.sample(StandardNormal)).collect() };

    let x0 = initial();
    let observed = sample_first_coordinate(&x0, &times, config.t_treat, config.f_control, config.f_treated, config.rk_step);
    let counterfactual = sample_first_coordinate(&x0, &times, config.t_treat, config.f_control, config.f_control, config.rk_step);

    let width = config.n_controls.to_string().len().max(2);
    let mut units = vec![UnitSeries::scalar("treated", times.clone(), &observed)?];
    for i in 0..config.n_controls {
        let xi = initial();
        let path = sample_first_coordinate(&xi, &times, config.t_treat, config.f_control, config.f_control, config.rk_step);
        units.push(UnitSeries::scalar(format!("c{:0width$}", i + 1), times.clone(), &path)?);
    }
    Ok(Simulation { panel: Panel::new(units, config.t_treat)?, truth: UnitSeries::scalar("treated", times, &counterfactual)? })
}

/// Right-continuous step function: `values[k]` on `[breaks[k-1], breaks[k])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseConstant {
    pub breaks: Vec<f64>,
    pub values: Vec<f64>,
}

impl PiecewiseConstant {
    pub fn constant(value: f64) -> Self {
        Self { breaks: Vec::new(), values: vec![value] }
    }

    pub fn at(&self, t: f64) -> f64 {
        self.values[self.breaks.partition_point(|&b| b <= t)]
    }

    fn validate(&self) -> Result<()> {
        if self.values.len() != self.breaks.len() + 1 {
            return Err(validation("piecewise function needs one more value than break points"));
        }
        if self.breaks.windows(2).any(|w| w[1] <= w[0]) || self.breaks.iter().chain(&self.values).any(|v| !v.is_finite()) {
            return Err(validation("piecewise function breaks must be finite and increasing"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearDgpConfig {
    pub alpha: PiecewiseConstant,
    pub noise_std: f64,
    /// Weights of the controls, `n_units - 1` entries.
    pub true_weights: Vec<f64>,
    /// Initial values of all units; entry 0 (treated) equals the weighted control sum.
    pub y0: Vec<f64>,
    pub t_treat: f64,
    pub seed: u64,
}

impl LinearDgpConfig {
    /// Derives the treated unit's initial value from the control values.
    pub fn new(
        alpha: PiecewiseConstant,
        noise_std: f64,
        true_weights: Vec<f64>,
        control_y0: &[f64],
        t_treat: f64,
        seed: u64,
    ) -> Result<Self> {
        if control_y0.len() != true_weights.len() {
            return Err(shape("one initial value per control weight is required"));
        }
        let treated: f64 = true_weights.iter().zip(control_y0).map(|(w, y)| w * y).sum();
        let mut y0 = vec![treated];
        y0.extend_from_slice(control_y0);
        let config = Self { alpha, noise_std, true_weights, y0, t_treat, seed };
        config.validate()?;
        Ok(config)
    }

    pub fn n_units(&self) -> usize {
        self.y0.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.alpha.validate()?;
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(validation("noise_std must be finite and non-negative"));
        }
        if self.y0.len() < 2 || self.true_weights.len() + 1 != self.y0.len() {
            return Err(shape("need n_units >= 2 initial values and n_units - 1 weights"));
        }
        if self.true_weights.iter().chain(&self.y0).any(|v| !v.is_finite()) {
            return Err(validation("weights and initial values must be finite"));
        }
        let combined: f64 = self.true_weights.iter().zip(&self.y0[1..]).map(|(w, y)| w * y).sum();
        if (combined - self.y0[0]).abs() > 1e-12 * combined.abs().max(1.0) {
            return Err(validation("treated initial value must equal the weighted control initial values"));
        }
        Ok(())
    }
}

/// Integrates every unit exactly for piecewise-constant `alpha` and noise
/// held constant over each grid interval. With no intervention the truth
/// equals the observed treated unit.
pub fn simulate_linear(config: &LinearDgpConfig, t_grid: &[f64]) -> Result<Simulation> {
    config.validate()?;
    if t_grid.len() < 2 || t_grid.windows(2).any(|w| w[1] <= w[0]) || t_grid.iter().any(|t| !t.is_finite()) {
        return Err(validation("time grid must be finite, strictly increasing and have at least 2 points"));
    }
    let n = config.n_units();
    let noise = Normal::new(0.0, config.noise_std).map_err(|e| validation(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut paths = vec![Vec::with_capacity(t_grid.len()); n];
    let mut y = config.y0.clone();
    for (path, &v) in paths.iter_mut().zip(&y) {
        path.push(v);
    }
    let mut z = vec![0.0; n];
    for w in t_grid.windows(2) {
        for zi in z.iter_mut() {
            *zi = if config.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        }
        let mut t = w[0];
        let mut cuts: Vec<f64> = config.alpha.breaks.iter().copied().filter(|&b| b > w[0] && b < w[1]).collect();
        cuts.push(w[1]);
        for cut in cuts {
            let h = cut - t;
            let a = config.alpha.at(t);
            let (growth, forcing) = if a == 0.0 { (1.0, h) } else { ((a * h).exp(), (a * h).exp_m1() / a) };
            for (yi, zi) in y.iter_mut().zip(&z) {
                *yi = *yi * growth + zi * forcing;
            }
            t = cut;
        }
        for (path, &v) in paths.iter_mut().zip(&y) {
            path.push(v);
        }
    }
    let units = paths
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let id = if i == 0 { "treated".to_string() } else { format!("c{i:02}") };
            UnitSeries::scalar(id, t_grid.to_vec(), p)
        })
        .collect::<Result<Vec<_>>>()?;
    let truth = units[0].clone();
    Ok(Simulation { panel: Panel::new(units, config.t_treat)?, truth })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationConfig {
    pub n_controls: usize,
    /// `(control index, weight)` pairs defining the treated unit; indices start at 0.
    pub weights: Vec<(usize, f64)>,
    pub n_points: usize,
    pub spacing: f64,
    pub t_treat: f64,
    pub seed: u64,
}

/// Smooth random controls (sums of three sinusoids plus an offset) and a
/// treated unit equal to a fixed combination of them at every time.
pub fn simulate_combination(config: &CombinationConfig) -> Result<Simulation> {
    if config.weights.iter().any(|&(i, _)| i >= config.n_controls) {
        return Err(validation("combination weight refers to a missing control"));
    }
    let times = regular_grid(0.0, config.spacing * (config.n_points as f64 - 1.0), config.n_points);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let controls: Vec<Vec<f64>> = (0..config.n_controls)
        .map(|_| {
            let offset: f64 = rng.random_range(-0.5..0.5);
            let waves: Vec<(f64, f64, f64)> = (0..3)
                .map(|_| {
                    let amp: f64 = rng.random_range(0.2..0.6);
                    let freq: f64 = rng.random_range(0.05..0.35);
                    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    (amp, freq, phase)
                })
                .collect();
            times.iter().map(|&t| offset + waves.iter().map(|(a, f, p)| a * (f * t + p).sin()).sum::<f64>()).collect()
        })
        .collect();
    let treated: Vec<f64> = (0..times.len()).map(|k| config.weights.iter().map(|&(i, w)| w * controls[i][k]).sum()).collect();
    let mut units = vec![UnitSeries::scalar("treated", times.clone(), &treated)?];
    for (i, c) in controls.iter().enumerate() {
        units.push(UnitSeries::scalar(format!("c{:02}", i + 1), times.clone(), c)?);
    }
    Ok(Simulation { panel: Panel::new(units, config.t_treat)?, truth: UnitSeries::scalar("treated", times, &treated)? })
}
