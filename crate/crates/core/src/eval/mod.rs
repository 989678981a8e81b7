//! Metrics, experiment reports and the replication harness.

mod studies;

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{align_panel, fit_baseline, predict_baseline, BaselineConfig, Method};
use crate::error::{shape, validation, Error, Result};
use crate::ncsc::{self, TrainConfig};
use crate::panel::{Panel, UnitSeries};

pub use studies::{
    regime_label, run_lorenz_benchmark, run_panel_study, run_truth_benchmark, runtime_profile, unbiasedness_mc,
    weight_consistency, ConsistencyReport, LorenzBenchmark, PanelStudy, ProfileAxis, ProfileConfig, ProfileRow, TruthBenchmark,
    UnbiasednessConfig, UnbiasednessReport, PANEL_STUDY_POINTS, PANEL_STUDY_TRAIN,
};

/// `(1/|T|) sum_t ||truth_t - estimate_t||^2` over rows of equal width.
pub fn control_error(truth: &[Vec<f64>], estimate: &[Vec<f64>]) -> Result<f64> {
    if truth.is_empty() {
        return Err(validation("control error needs at least one evaluation time"));
    }
    if truth.len() != estimate.len() {
        return Err(shape(format!("{} truth rows against {} estimates", truth.len(), estimate.len())));
    }
    let mut total = 0.0;
    for (a, b) in truth.iter().zip(estimate) {
        if a.len() != b.len() {
            return Err(shape(format!("row widths {} and {} differ", a.len(), b.len())));
        }
        total += a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    }
    Ok(total / truth.len() as f64)
}

/// Treated unit cut to its observations before the treatment time; controls untouched.
pub fn pre_treatment_view(panel: &Panel) -> Result<Panel> {
    let treated = panel.treated();
    let keep = treated.times.iter().take_while(|&&t| t < panel.treatment_time).count();
    let mut units = panel.units.clone();
    units[0] = UnitSeries::new(treated.unit_id.clone(), treated.times[..keep].to_vec(), treated.values[..keep].to_vec())?;
    Panel::with_span(units, panel.treatment_time, panel.time_span)
}

/// Training settings shared by every method of an experiment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodSettings {
    pub train: TrainConfig,
    pub baselines: BaselineConfig,
    /// Alignment grid for the discrete methods; `None` uses every observation time plus the evaluation times.
    pub grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    /// One row per requested time.
    pub values: Vec<Vec<f64>>,
    /// Controls with non-zero weight, for NC-SC.
    pub active_set: Option<Vec<usize>>,
}

fn default_grid(panel: &Panel, times: &[f64]) -> Vec<f64> {
    let mut grid: Vec<f64> = panel.units.iter().flat_map(|u| u.times.iter().copied()).chain(times.iter().copied()).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Fits `method` on the panel's pre-treatment data and returns the synthetic
/// control at `times`. The treated unit's observations at or after the
/// treatment time are never seen by the estimator. `seed` drives every
/// stochastic component.
pub fn estimate_counterfactual(
    method: Method,
    panel: &Panel,
    times: &[f64],
    settings: &MethodSettings,
    seed: u64,
) -> Result<Estimate> {
    if times.is_empty() {
        return Err(validation("no evaluation times"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(validation("evaluation times must be strictly ascending"));
    }
    let view = pre_treatment_view(panel)?;
    match method {
        Method::Ncsc => {
            let config = TrainConfig { seed, ..settings.train.clone() };
            let fit = ncsc::fit(&view, &config)?;
            let values = ncsc::predict(&fit.model, &view, times)?;
            Ok(Estimate { values, active_set: Some(fit.active_set) })
        }
        _ => {
            let grid = match &settings.grid {
                Some(g) => {
                    let mut g = g.clone();
                    g.extend_from_slice(times);
                    g.sort_by(f64::total_cmp);
                    g.dedup();
                    g
                }
                None => default_grid(&view, times),
            };
            let aligned = align_panel(&view, &grid)?;
            let mut config = settings.baselines.clone();
            config.mc.seed = seed;
            let fit = fit_baseline(method, &aligned, &config)?;
            Ok(Estimate { values: predict_baseline(&fit, &aligned, times)?, active_set: None })
        }
    }
}

/// Fits, predicts and scores one method against a known counterfactual.
pub(crate) fn score_method(
    method: Method,
    panel: &Panel,
    times: &[f64],
    truth: &[Vec<f64>],
    settings: &MethodSettings,
    seed: u64,
) -> Result<(f64, Option<Vec<usize>>, f64)> {
    let start = Instant::now();
    let estimate = estimate_counterfactual(method, panel, times, settings, seed)?;
    let error = control_error(truth, &estimate.values)?;
    if !error.is_finite() {
        return Err(Error::Numerical(format!("{method} produced a non-finite control error")));
    }
    Ok((error, estimate.active_set, start.elapsed().as_secs_f64()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub error: f64,
    /// Wall-clock seconds; left out of JSON so reports are reproducible.
    #[serde(skip)]
    pub runtime: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub active_set: Option<Vec<usize>>,
}

/// Control errors of one method under one regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub method: Method,
    pub regime: String,
    pub runs: Vec<RunRecord>,
    /// Runs that raised an error and were left out of the aggregates.
    pub failed: usize,
    pub mean: f64,
    /// Sample standard deviation, 0 for a single run.
    pub std: f64,
}

impl ExperimentReport {
    /// Aggregates successful runs; at least one is required.
    pub fn new(method: Method, regime: impl Into<String>, runs: Vec<RunRecord>, failed: usize) -> Result<Self> {
        let regime = regime.into();
        if runs.is_empty() {
            return Err(Error::Numerical(format!("every run of {method} ({regime}) failed")));
        }
        let errors: Vec<f64> = runs.iter().map(|r| r.error).collect();
        let (mean, std) = mean_std(&errors);
        Ok(Self { method, regime, runs, failed, mean, std })
    }

    pub fn errors(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.error).collect()
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Flat `method,regime,run,seed,error,runtime` table.
pub fn write_reports_csv<W: Write>(reports: &[ExperimentReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "regime", "run", "seed", "error", "runtime"]).map_err(csv_error)?;
    for report in reports {
        for r in &report.runs {
            w.write_record([
                report.method.as_str().to_string(),
                report.regime.clone(),
                r.run.to_string(),
                r.seed.to_string(),
                r.error.to_string(),
                r.runtime.to_string(),
            ])
            .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_estimate_has_zero_error() {
        let y = vec![vec![1.0, 2.0], vec![-3.0, 0.5]];
        assert_eq!(control_error(&y, &y).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_gives_its_square() {
        let y: Vec<Vec<f64>> = (0..7).map(|k| vec![k as f64 * 0.3]).collect();
        let shifted: Vec<Vec<f64>> = y.iter().map(|r| vec![r[0] + 0.25]).collect();
        assert!((control_error(&y, &shifted).unwrap() - 0.0625).abs() <= 1e-15);
    }

    #[test]
    fn matches_a_direct_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<Vec<f64>> = (0..13).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let b: Vec<Vec<f64>> = (0..13).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let mut direct = 0.0;
        for t in 0..13 {
            let mut sq = 0.0;
            for c in 0..3 {
                sq += (a[t][c] - b[t][c]) * (a[t][c] - b[t][c]);
            }
            direct += sq;
        }
        direct /= 13.0;
        assert!((control_error(&a, &b).unwrap() - direct).abs() <= 1e-12);
    }

    #[test]
    fn empty_or_ragged_input_is_rejected() {
        assert!(control_error(&[], &[]).is_err());
        assert!(control_error(&[vec![1.0]], &[vec![1.0], vec![2.0]]).is_err());
        assert!(control_error(&[vec![1.0]], &[vec![1.0, 2.0]]).is_err());
    }

    proptest! {
        #[test]
        fn error_is_permutation_invariant_and_quadratic(
            rows in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..20),
            c in -3.0f64..3.0,
            rot in 0usize..20,
        ) {
            let truth: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.0]).collect();
            let est: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.1]).collect();
            let e = control_error(&truth, &est).unwrap();
            let k = rot % rows.len();
            let mut t2 = truth.clone();
            let mut e2 = est.clone();
            t2.rotate_left(k);
            e2.rotate_left(k);
            prop_assert!((control_error(&t2, &e2).unwrap() - e).abs() <= 1e-12 * (1.0 + e));
            let ts: Vec<Vec<f64>> = truth.iter().map(|r| vec![c * r[0]]).collect();
            let es: Vec<Vec<f64>> = est.iter().map(|r| vec![c * r[0]]).collect();
            prop_assert!((control_error(&ts, &es).unwrap() - c * c * e).abs() <= 1e-10 * (1.0 + e));
        }

        #[test]
        fn report_aggregates_follow_the_runs(errors in prop::collection::vec(0.0f64..10.0, 1..15)) {
            let runs: Vec<RunRecord> = errors
                .iter()
                .enumerate()
                .map(|(i, &e)| RunRecord { run: i, seed: i as u64, error: e, runtime: 0.0, active_set: None })
                .collect();
            let report = ExperimentReport::new(Method::Sc, "aligned", runs, 0).unwrap();
            let n = errors.len() as f64;
            let mean = errors.iter().sum::<f64>() / n;
            prop_assert!((report.mean - mean).abs() <= 1e-12);
            if errors.len() > 1 {
                let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0);
                prop_assert!((report.std - var.sqrt()).abs() <= 1e-12);
            } else {
                prop_assert_eq!(report.std, 0.0);
            }
        }
    }

    #[test]
    fn a_report_needs_a_successful_run() {
        assert!(ExperimentReport::new(Method::Sc, "aligned", vec![], 3).is_err());
    }

    #[test]
    fn csv_has_one_row_per_run() {
        let runs = vec![
            RunRecord { run: 0, seed: 4, error: 0.5, runtime: 1.0, active_set: None },
            RunRecord { run: 1, seed: 5, error: 0.25, runtime: 2.0, active_set: None },
        ];
        let report = ExperimentReport::new(Method::Kmm, "dropped-30", runs, 1).unwrap();
        let mut buf = Vec::new();
        write_reports_csv(std::slice::from_ref(&report), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("method,regime,run,seed,error,runtime"));
        assert_eq!(text.lines().nth(2), Some("kmm,dropped-30,1,5,0.25,2"));
        let json = serde_json::to_string(&report).unwrap();
        assert!(!json.contains("runtime"));
    }

    #[test]
    fn pre_treatment_view_hides_the_outcome() {
        let times: Vec<f64> = (0..10).map(f64::from).collect();
        let values: Vec<f64> = times.iter().map(|t| t * t).collect();
        let panel = Panel::new(
            vec![
                UnitSeries::scalar("treated", times.clone(), &values).unwrap(),
                UnitSeries::scalar("c1", times.clone(), &values).unwrap(),
            ],
            6.0,
        )
        .unwrap();
        let view = pre_treatment_view(&panel).unwrap();
        assert_eq!(view.treated().times, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(view.controls()[0].len(), 10);
        assert_eq!(view.time_span, (0.0, 9.0));
    }

    #[test]
    fn sc_recovers_a_combination_out_of_sample() {
        use crate::dgp::{simulate_combination, CombinationConfig};
        let sim = simulate_combination(&CombinationConfig {
            n_controls: 6,
            weights: vec![(0, 0.3), (1, 0.7)],
            n_points: 40,
            spacing: 1.0,
            t_treat: 30.0,
            seed: 2,
        })
        .unwrap();
        let times: Vec<f64> = (30..40).map(f64::from).collect();
        let truth: Vec<Vec<f64>> = sim.truth.values[30..].to_vec();
        let (err, active, _) = score_method(Method::Sc, &sim.panel, &times, &truth, &MethodSettings::default(), 0).unwrap();
        assert!(err <= 1e-10, "{err}");
        assert!(active.is_none());
    }
}
