use std::collections::BTreeMap;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{estimate_counterfactual, mean_std, score_method, ExperimentReport, MethodSettings, RunRecord};
use crate::baselines::Method;
use crate::dgp::{simulate_linear, simulate_lorenz, LinearDgpConfig, LorenzConfig, Simulation};
use crate::error::{validation, Error, Result};
use crate::ncsc::{self, TrainConfig};
use crate::panel::{drop_observations, resample_on_span, Panel, UnitSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LorenzBenchmark {
    /// Run `r` simulates with seed `lorenz.seed + r`.
    pub lorenz: LorenzConfig,
    pub methods: Vec<Method>,
    /// Share of each unit's interior observations removed; 0 is the aligned regime.
    pub drop_fractions: Vec<f64>,
    pub n_runs: usize,
    pub settings: MethodSettings,
}

impl Default for LorenzBenchmark {
    fn default() -> Self {
        Self {
            lorenz: LorenzConfig::default(),
            methods: Method::ALL.to_vec(),
            drop_fractions: vec![0.0, 0.3, 0.5, 0.7],
            n_runs: 10,
            settings: MethodSettings::default(),
        }
    }
}

/// One panel per regime, the evaluation times and the truth there.
type RunPanels = (Vec<Panel>, Vec<f64>, Vec<Vec<f64>>);

pub fn regime_label(fraction: f64) -> String {
    if fraction == 0.0 {
        "aligned".to_string()
    } else {
        format!("dropped-{}", (fraction * 100.0).round())
    }
}

type Outcome = Result<(f64, Option<Vec<usize>>, f64)>;

/// Groups task outcomes (ordered by run, then key) into one report per key.
fn collect_reports(keys: &[(Method, String)], seeds: &[u64], outcomes: Vec<Outcome>) -> Result<Vec<ExperimentReport>> {
    let mut runs: Vec<Vec<RunRecord>> = vec![Vec::new(); keys.len()];
    let mut failed = vec![0; keys.len()];
    for (idx, outcome) in outcomes.into_iter().enumerate() {
        let run = idx / keys.len();
        let key = idx % keys.len();
        match outcome {
            Ok((error, active_set, runtime)) => runs[key].push(RunRecord { run, seed: seeds[run], error, runtime, active_set }),
            Err(e) => {
                log::warn!("{} ({}) run {run} failed: {e}", keys[key].0, keys[key].1);
                failed[key] += 1;
            }
        }
    }
    keys.iter()
        .zip(runs)
        .zip(failed)
        .map(|(((method, regime), runs), failed)| ExperimentReport::new(*method, regime.clone(), runs, failed))
        .collect()
}

/// Simulates, thins, fits on `t < t_treat` and scores every method on the
/// untreated treated path over the post-treatment sample times.
pub fn run_lorenz_benchmark(config: &LorenzBenchmark) -> Result<Vec<ExperimentReport>> {
    config.lorenz.validate()?;
    let mut settings = config.settings.clone();
    settings.grid.get_or_insert_with(|| config.lorenz.sample_times());
    let plan = Plan {
        methods: &config.methods,
        drop_fractions: &config.drop_fractions,
        n_runs: config.n_runs,
        seed: config.lorenz.seed,
        settings: &settings,
    };
    benchmark(&plan, |seed| simulate_lorenz(&LorenzConfig { seed, ..config.lorenz.clone() }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthBenchmark {
    pub methods: Vec<Method>,
    pub drop_fractions: Vec<f64>,
    /// Run `r` uses seed `seed + r` for thinning and stochastic fits.
    pub n_runs: usize,
    pub seed: u64,
    pub settings: MethodSettings,
}

/// Like [`run_lorenz_benchmark`] for a fixed panel with a known counterfactual.
pub fn run_truth_benchmark(simulation: &Simulation, config: &TruthBenchmark) -> Result<Vec<ExperimentReport>> {
    let plan = Plan {
        methods: &config.methods,
        drop_fractions: &config.drop_fractions,
        n_runs: config.n_runs,
        seed: config.seed,
        settings: &config.settings,
    };
    benchmark(&plan, |_| Ok(simulation.clone()))
}

struct Plan<'a> {
    methods: &'a [Method],
    drop_fractions: &'a [f64],
    n_runs: usize,
    seed: u64,
    settings: &'a MethodSettings,
}

fn benchmark<F>(plan: &Plan, make: F) -> Result<Vec<ExperimentReport>>
where
    F: Fn(u64) -> Result<Simulation> + Sync,
{
    if plan.methods.is_empty() {
        return Err(validation("no methods selected"));
    }
    if plan.n_runs == 0 || plan.drop_fractions.is_empty() {
        return Err(validation("need at least one run and one regime"));
    }
    if let Some(f) = plan.drop_fractions.iter().find(|f| !(0.0..1.0).contains(*f)) {
        return Err(validation(format!("drop fraction {f} is outside [0, 1)")));
    }
    let seeds: Vec<u64> = (0..plan.n_runs as u64).map(|r| plan.seed.wrapping_add(r)).collect();
    // Per run: one panel per regime, evaluation times and the counterfactual there.
    let panels: Vec<Result<RunPanels>> = seeds
        .par_iter()
        .map(|&seed| {
            let sim = make(seed)?;
            let t_treat = sim.panel.treatment_time;
            let (times, truth): (Vec<f64>, Vec<Vec<f64>>) = sim
                .truth
                .times
                .iter()
                .zip(&sim.truth.values)
                .filter(|(t, _)| **t > t_treat)
                .map(|(t, v)| (*t, v.clone()))
                .unzip();
            if times.is_empty() {
                return Err(validation("the counterfactual has no times after the treatment time"));
            }
            let regimes = plan
                .drop_fractions
                .iter()
                .enumerate()
                .map(|(j, &fraction)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(j as u64 + 1);
                    let units = sim
                        .panel
                        .units
                        .iter()
                        .map(|u| drop_observations(u, fraction, rng.next_u64()))
                        .collect::<Result<Vec<_>>>()?;
                    Panel::with_span(units, t_treat, sim.panel.time_span)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((regimes, times, truth))
        })
        .collect();
    let panels = panels.into_iter().collect::<Result<Vec<_>>>()?;

    let keys: Vec<(Method, String)> =
        plan.drop_fractions.iter().flat_map(|&f| plan.methods.iter().map(move |&m| (m, regime_label(f)))).collect();
    let n_methods = plan.methods.len();
    let tasks: Vec<(usize, usize)> = (0..seeds.len()).flat_map(|r| (0..keys.len()).map(move |k| (r, k))).collect();
    let outcomes: Vec<Outcome> = tasks
        .par_iter()
        .map(|&(r, k)| {
            let (regimes, times, truth) = &panels[r];
            score_method(keys[k].0, &regimes[k / n_methods], times, truth, plan.settings, seeds[r])
        })
        .collect();
    collect_reports(&keys, &seeds, outcomes)
}

/// Points of the resampled pre-treatment window and how many of them are used for fitting.
pub const PANEL_STUDY_POINTS: usize = 300;
pub const PANEL_STUDY_TRAIN: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelStudy {
    pub methods: Vec<Method>,
    /// Resample every unit to a regular pre-treatment grid first.
    pub augment: bool,
    pub n_runs: usize,
    pub seed: u64,
    pub settings: MethodSettings,
}

impl Default for PanelStudy {
    fn default() -> Self {
        Self { methods: Method::ALL.to_vec(), augment: true, n_runs: 10, seed: 0, settings: MethodSettings::default() }
    }
}

/// Pre-treatment fit error on a real panel: only data before the treatment
/// time is used; the first two thirds of that window fit the model and the
/// rest is scored. With `augment` the window is first resampled to 300
/// regular points, giving a 200/100 split.
pub fn run_panel_study(panel: &Panel, study: &PanelStudy) -> Result<Vec<ExperimentReport>> {
    if study.methods.is_empty() {
        return Err(validation("no methods selected"));
    }
    if study.n_runs == 0 {
        return Err(validation("need at least one run"));
    }
    let t_treat = panel.treatment_time;
    let units = panel
        .units
        .iter()
        .map(|u| {
            let keep = u.times.iter().take_while(|&&t| t < t_treat).count();
            if keep < 2 {
                return Err(validation(format!("unit {:?} has fewer than 2 pre-treatment observations", u.unit_id)));
            }
            UnitSeries::new(u.unit_id.clone(), u.times[..keep].to_vec(), u.values[..keep].to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut window = Panel::new(units, t_treat)?;
    if study.augment {
        window = resample_on_span(&window, PANEL_STUDY_POINTS, window.time_span)?;
    }
    let treated = window.treated().clone();
    let split = treated.len() * PANEL_STUDY_TRAIN / PANEL_STUDY_POINTS;
    if split < 3 || split >= treated.len() {
        return Err(validation(format!(
            "{} pre-treatment observations of the treated unit are too few for the study",
            treated.len()
        )));
    }
    let study_panel = window.with_treatment_time(treated.times[split])?;
    let times = treated.times[split..].to_vec();
    let truth = treated.values[split..].to_vec();

    let seeds: Vec<u64> = (0..study.n_runs as u64).map(|r| study.seed.wrapping_add(r)).collect();
    let keys: Vec<(Method, String)> = study.methods.iter().map(|&m| (m, "pre-treatment fit".to_string())).collect();
    let tasks: Vec<(usize, usize)> = (0..seeds.len()).flat_map(|r| (0..keys.len()).map(move |k| (r, k))).collect();
    let outcomes: Vec<Outcome> = tasks
        .par_iter()
        .map(|&(r, k)| score_method(keys[k].0, &study_panel, &times, &truth, &study.settings, seeds[r]))
        .collect();
    collect_reports(&keys, &seeds, outcomes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub seeds: Vec<u64>,
    /// `w_diag` of each run.
    pub weights: Vec<Vec<f64>>,
    pub mean_abs: Vec<f64>,
    pub std_abs: Vec<f64>,
    pub active_sets: Vec<Vec<usize>>,
    pub selected_lambdas: Vec<f64>,
    pub modal_active_set: Vec<usize>,
    /// Share of runs whose active set equals the modal one.
    pub agreement: f64,
}

/// Refits NC-SC with seeds `seed, seed + 1, ...` and summarises the spread of `|W|`.
pub fn weight_consistency(panel: &Panel, train: &TrainConfig, n_runs: usize, seed: u64) -> Result<ConsistencyReport> {
    if n_runs == 0 {
        return Err(validation("need at least one run"));
    }
    let seeds: Vec<u64> = (0..n_runs as u64).map(|r| seed.wrapping_add(r)).collect();
    let fits = seeds
        .par_iter()
        .map(|&s| ncsc::fit(panel, &TrainConfig { seed: s, ..train.clone() }))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let weights: Vec<Vec<f64>> = fits.iter().map(|f| f.model.w_diag.clone()).collect();
    let n_controls = panel.n_controls();
    let (mean_abs, std_abs) = (0..n_controls).map(|i| mean_std(&weights.iter().map(|w| w[i].abs()).collect::<Vec<_>>())).unzip();
    let active_sets: Vec<Vec<usize>> = fits.iter().map(|f| f.active_set.clone()).collect();
    let mut counts: BTreeMap<&Vec<usize>, usize> = BTreeMap::new();
    for set in &active_sets {
        *counts.entry(set).or_default() += 1;
    }
    // Most frequent set; ties go to the set seen first.
    let modal = active_sets
        .iter()
        .max_by_key(|s| (counts[s], std::cmp::Reverse(active_sets.iter().position(|x| x == *s))))
        .expect("n_runs > 0")
        .clone();
    Ok(ConsistencyReport {
        agreement: counts[&modal] as f64 / n_runs as f64,
        seeds,
        weights,
        mean_abs,
        std_abs,
        selected_lambdas: fits.iter().map(|f| f.selected_lambda).collect(),
        active_sets,
        modal_active_set: modal,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnbiasednessConfig {
    /// Replication `r` simulates with seed `dgp.seed + r`.
    pub dgp: LinearDgpConfig,
    pub times: Vec<f64>,
    pub n_reps: usize,
    /// Additive effect injected into the treated unit from the treatment time on.
    pub effect: f64,
    pub method: Method,
    pub settings: MethodSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnbiasednessReport {
    pub method: Method,
    pub effect: f64,
    /// Average estimated effect of each successful replication.
    pub per_rep: Vec<f64>,
    pub failed: usize,
    pub mean_effect: f64,
    /// `mean_effect - effect`.
    pub mean_error: f64,
    pub standard_error: f64,
}

/// Monte-Carlo check that the average estimated effect is centred on the injected one.
pub fn unbiasedness_mc(config: &UnbiasednessConfig) -> Result<UnbiasednessReport> {
    if config.n_reps < 50 {
        return Err(validation(format!("need at least 50 replications, got {}", config.n_reps)));
    }
    if !config.effect.is_finite() {
        return Err(validation("effect must be finite"));
    }
    let t_treat = config.dgp.t_treat;
    let post: Vec<f64> = config.times.iter().copied().filter(|&t| t > t_treat).collect();
    if post.is_empty() {
        return Err(validation("no grid times after the treatment time"));
    }
    let outcomes: Vec<Result<f64>> = (0..config.n_reps as u64)
        .into_par_iter()
        .map(|r| {
            let dgp = LinearDgpConfig { seed: config.dgp.seed.wrapping_add(r), ..config.dgp.clone() };
            let sim = simulate_linear(&dgp, &config.times)?;
            let mut panel = sim.panel;
            let treated = &mut panel.units[0];
            for (t, v) in treated.times.iter().zip(treated.values.iter_mut()) {
                if *t >= t_treat {
                    v.iter_mut().for_each(|x| *x += config.effect);
                }
            }
            let observed: Vec<Vec<f64>> =
                treated.times.iter().zip(&treated.values).filter(|(t, _)| **t > t_treat).map(|(_, v)| v.clone()).collect();
            let estimate = estimate_counterfactual(config.method, &panel, &post, &config.settings, dgp.seed)?;
            let diffs: Vec<f64> =
                observed.iter().zip(&estimate.values).flat_map(|(o, e)| o.iter().zip(e).map(|(a, b)| a - b)).collect();
            Ok(diffs.iter().sum::<f64>() / diffs.len() as f64)
        })
        .collect();
    let mut per_rep = Vec::new();
    let mut failed = 0;
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(v) if v.is_finite() => per_rep.push(v),
            Ok(_) => failed += 1,
            Err(e) => {
                log::warn!("replication {r} failed: {e}");
                failed += 1;
            }
        }
    }
    if per_rep.len() < 2 {
        return Err(Error::Numerical(format!("{failed} of {} replications failed", config.n_reps)));
    }
    let (mean_effect, sd) = mean_std(&per_rep);
    Ok(UnbiasednessReport {
        method: config.method,
        effect: config.effect,
        standard_error: sd / (per_rep.len() as f64).sqrt(),
        mean_error: mean_effect - config.effect,
        mean_effect,
        failed,
        per_rep,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileAxis {
    NControls,
    NPretreatment,
}

impl std::str::FromStr for ProfileAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n_controls" | "controls" => Ok(Self::NControls),
            "n_pretreatment" | "pretreatment" => Ok(Self::NPretreatment),
            _ => Err(validation(format!("unknown profile axis {s:?}; expected n_controls or n_pretreatment"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileConfig {
    pub axis: ProfileAxis,
    pub values: Vec<usize>,
    /// Panel template; the profiled axis overrides `n_controls` or `t_treat`.
    pub lorenz: LorenzConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub value: usize,
    pub seconds: f64,
    pub ratio_to_previous: Option<f64>,
}

/// Wall-clock time of one NC-SC fit per grid value, measured sequentially.
pub fn runtime_profile(config: &ProfileConfig) -> Result<Vec<ProfileRow>> {
    if config.values.is_empty() {
        return Err(validation("profile grid is empty"));
    }
    let mut rows: Vec<ProfileRow> = Vec::with_capacity(config.values.len());
    for &value in &config.values {
        let mut lorenz = config.lorenz.clone();
        match config.axis {
            ProfileAxis::NControls => lorenz.n_controls = value,
            ProfileAxis::NPretreatment => {
                lorenz.t_treat = value as f64 * lorenz.sample_spacing;
                lorenz.horizon = lorenz.t_treat + lorenz.sample_spacing;
            }
        }
        let sim = simulate_lorenz(&lorenz)?;
        let start = Instant::now();
        ncsc::fit(&sim.panel, &config.train)?;
        let seconds = start.elapsed().as_secs_f64();
        let ratio_to_previous = rows.last().map(|p| seconds / p.seconds);
        rows.push(ProfileRow { value, seconds, ratio_to_previous });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{simulate_combination, CombinationConfig, PiecewiseConstant};
    use crate::panel::regular_grid;

    fn quick_train() -> TrainConfig {
        TrainConfig { epochs: 30, lambda_grid: vec![0.01], ..TrainConfig::default() }
    }

    fn small_lorenz(n_runs: usize, methods: Vec<Method>) -> LorenzBenchmark {
        LorenzBenchmark {
            lorenz: LorenzConfig { d: 5, n_controls: 4, t_treat: 20.0, horizon: 30.0, seed: 3, ..LorenzConfig::default() },
            methods,
            drop_fractions: vec![0.0, 0.5],
            n_runs,
            settings: MethodSettings { train: quick_train(), ..MethodSettings::default() },
        }
    }

    #[test]
    fn lorenz_smoke_run_is_finite() {
        let reports = run_lorenz_benchmark(&small_lorenz(1, vec![Method::Ncsc])).unwrap();
        assert_eq!(reports.len(), 2);
        assert_eq!(reports[0].regime, "aligned");
        assert_eq!(reports[1].regime, "dropped-50");
        assert!(reports.iter().all(|r| r.mean.is_finite() && r.runs.len() == 1 && r.failed == 0));
        assert!(reports[0].runs[0].active_set.is_some());
    }

    #[test]
    fn lorenz_reports_are_ordered_and_reproducible() {
        let config = small_lorenz(2, vec![Method::Sc, Method::Kmm]);
        let a = run_lorenz_benchmark(&config).unwrap();
        let b = run_lorenz_benchmark(&config).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let order: Vec<(Method, &str)> = a.iter().map(|r| (r.method, r.regime.as_str())).collect();
        assert_eq!(
            order,
            vec![(Method::Sc, "aligned"), (Method::Kmm, "aligned"), (Method::Sc, "dropped-50"), (Method::Kmm, "dropped-50")]
        );
        assert_eq!(a[0].runs.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![3, 4]);
    }

    #[test]
    fn fixed_panel_benchmark_scores_the_counterfactual() {
        let sim = simulate_combination(&CombinationConfig {
            n_controls: 4,
            weights: vec![(0, 0.3), (1, 0.7)],
            n_points: 80,
            spacing: 1.0,
            t_treat: 60.0,
            seed: 4,
        })
        .unwrap();
        let config = TruthBenchmark {
            methods: vec![Method::Sc],
            drop_fractions: vec![0.0],
            n_runs: 2,
            seed: 9,
            settings: MethodSettings::default(),
        };
        let reports = run_truth_benchmark(&sim, &config).unwrap();
        assert_eq!(reports.len(), 1);
        assert!(reports[0].mean <= 1e-10);
        assert_eq!(reports[0].runs.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![9, 10]);
    }

    #[test]
    fn lorenz_rejects_empty_method_list() {
        assert!(run_lorenz_benchmark(&small_lorenz(1, vec![])).is_err());
    }

    fn combination_panel(n_points: usize) -> Panel {
        let sim = simulate_combination(&CombinationConfig {
            n_controls: 5,
            weights: vec![(0, 0.3), (1, 0.7)],
            n_points,
            spacing: 2.0,
            t_treat: 2.0 * n_points as f64,
            seed: 11,
        })
        .unwrap();
        // A post-treatment tail that the study must ignore.
        let mut units = sim.panel.units.clone();
        for u in &mut units {
            u.times.push(2.0 * n_points as f64 + 10.0);
            u.values.push(vec![1e6]);
        }
        Panel::new(units, sim.panel.treatment_time).unwrap()
    }

    #[test]
    fn linear_methods_fit_an_exact_combination() {
        let study = PanelStudy { methods: vec![Method::Sc, Method::Rsc], n_runs: 1, ..PanelStudy::default() };
        let reports = run_panel_study(&combination_panel(60), &study).unwrap();
        for r in &reports {
            assert_eq!(r.regime, "pre-treatment fit");
            assert!(r.mean <= 1e-3, "{} {}", r.method, r.mean);
        }
    }

    #[test]
    fn augmentation_is_idempotent_on_a_regular_panel() {
        let panel = combination_panel(PANEL_STUDY_POINTS);
        // combination_panel uses regular_grid, so resampling hits the same points.
        assert_eq!(panel.treated().times[..PANEL_STUDY_POINTS], regular_grid(0.0, 598.0, PANEL_STUDY_POINTS)[..]);
        let mut study = PanelStudy { methods: vec![Method::Sc, Method::Rsc], n_runs: 1, ..PanelStudy::default() };
        let with = run_panel_study(&panel, &study).unwrap();
        study.augment = false;
        let without = run_panel_study(&panel, &study).unwrap();
        assert_eq!(serde_json::to_string(&with).unwrap(), serde_json::to_string(&without).unwrap());
    }

    #[test]
    fn panel_study_needs_enough_points() {
        let panel = combination_panel(4);
        assert!(run_panel_study(&panel, &PanelStudy { augment: false, ..PanelStudy::default() }).is_err());
    }

    #[test]
    fn consistency_is_reproducible() {
        let panel = combination_panel(30);
        let a = weight_consistency(&panel, &quick_train(), 3, 5).unwrap();
        let b = weight_consistency(&panel, &quick_train(), 3, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.seeds, vec![5, 6, 7]);
        assert_eq!(a.mean_abs.len(), 5);
        assert!(a.agreement > 0.0 && a.agreement <= 1.0);
    }

    #[test]
    fn heavy_shrinkage_zeroes_every_weight() {
        let times = regular_grid(0.0, 20.0, 21);
        let flat = vec![0.0; 21];
        let units = (0..4).map(|i| UnitSeries::scalar(format!("u{i}"), times.clone(), &flat).unwrap()).collect();
        let panel = Panel::new(units, 15.0).unwrap();
        let train = TrainConfig { epochs: 200, lambda_grid: vec![1e3], ..TrainConfig::default() };
        let report = weight_consistency(&panel, &train, 3, 0).unwrap();
        assert!(report.weights.iter().flatten().all(|w| *w == 0.0), "{:?}", report);
        assert_eq!(report.agreement, 1.0);
    }

    fn linear_config(noise: f64, effect: f64) -> UnbiasednessConfig {
        UnbiasednessConfig {
            dgp: LinearDgpConfig::new(PiecewiseConstant::constant(0.02), noise, vec![0.5, 0.5, 0.0], &[1.0, 2.0, 3.0], 15.0, 1)
                .unwrap(),
            times: regular_grid(0.0, 20.0, 21),
            n_reps: 50,
            effect,
            method: Method::Sc,
            settings: MethodSettings::default(),
        }
    }

    #[test]
    fn noise_free_sc_is_exact() {
        let report = unbiasedness_mc(&linear_config(0.0, 0.0)).unwrap();
        assert!(report.mean_error.abs() <= 1e-6, "{}", report.mean_error);
        let report = unbiasedness_mc(&linear_config(0.0, 1.0)).unwrap();
        assert!((report.mean_effect - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn monte_carlo_needs_fifty_reps() {
        let mut config = linear_config(0.1, 0.0);
        config.n_reps = 10;
        assert!(unbiasedness_mc(&config).is_err());
    }

    #[test]
    fn profile_reports_every_grid_value() {
        let config = ProfileConfig {
            axis: ProfileAxis::NControls,
            values: vec![2, 4],
            lorenz: LorenzConfig { d: 4, t_treat: 10.0, horizon: 12.0, ..LorenzConfig::default() },
            train: TrainConfig { epochs: 5, lambda_grid: vec![0.1], ..TrainConfig::default() },
        };
        let rows = runtime_profile(&config).unwrap();
        assert_eq!(rows.iter().map(|r| r.value).collect::<Vec<_>>(), vec![2, 4]);
        assert!(rows[0].ratio_to_previous.is_none() && rows[1].ratio_to_previous.is_some());
        assert!(runtime_profile(&ProfileConfig { values: vec![], ..config }).is_err());
    }
}
