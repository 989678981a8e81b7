use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde_json::Value;

use ctrlpath::baselines::{align_panel, fit_baseline, predict_baseline, BaselineConfig, BaselineFit, KernelKind, Method};
use ctrlpath::dgp::{simulate_linear, simulate_lorenz, LinearDgpConfig, LorenzConfig, PiecewiseConstant, Simulation};
use ctrlpath::eval::{
    pre_treatment_view, run_lorenz_benchmark, run_panel_study, run_truth_benchmark, runtime_profile, weight_consistency,
    write_reports_csv, ExperimentReport, LorenzBenchmark, MethodSettings, PanelStudy, ProfileConfig, TruthBenchmark,
};
use ctrlpath::io::{load_covariates, write_atomic};
use ctrlpath::ncsc::{self, covariate_relevance_weights, read_model, write_model, FitManifest, TreatmentEffectSeries};
use ctrlpath::panel::{fit_spline, read_panel_file, read_series_file, regular_grid, write_panel_file, write_series_file};
use ctrlpath::{Panel, UnitSeries};

use crate::{
    BaselineArgs, Command, CompareArgs, ConsistencyArgs, EffectArgs, FitArgs, LorenzArgs, PredictArgs, ProfileArgs,
    SimLinearArgs, SimLorenzArgs, Simulate, TrainArgs,
};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate(Simulate::Lorenz(a)) => simulate_lorenz_cmd(a),
        Command::Simulate(Simulate::Linear(a)) => simulate_linear_cmd(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Effect(a) => effect_cmd(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Consistency(a) => consistency_cmd(a),
        Command::Profile(a) => profile_cmd(a),
    }
}

/// `runs.csv` -> `runs.truth.csv`.
pub fn truth_path(panel_path: &Path) -> PathBuf {
    let stem = panel_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    panel_path.with_file_name(format!("{stem}.truth.csv"))
}

fn lorenz_config(a: &LorenzArgs, seed: u64) -> LorenzConfig {
    LorenzConfig {
        d: a.d,
        f_control: a.f_control,
        f_treated: a.f_treated,
        n_controls: a.controls,
        t_treat: a.t_treat,
        horizon: a.horizon,
        sample_spacing: a.spacing,
        rk_step: a.rk_step,
        seed,
    }
}

fn train_config(a: &TrainArgs, panel: Option<&Panel>, seed: u64) -> Result<ncsc::TrainConfig> {
    let mut c = ncsc::TrainConfig { seed, ..Default::default() };
    if let Some(v) = a.lr {
        c.lr = v;
    }
    if let Some(v) = a.epochs {
        c.epochs = v;
    }
    if let Some(v) = a.patience {
        c.patience = v;
    }
    if let Some(v) = a.lambda {
        c.lambda_l1 = v;
        c.lambda_grid.clear();
    }
    if let Some(v) = &a.lambda_grid {
        c.lambda_grid = v.clone();
    }
    if let Some(v) = a.latent_dim {
        c.latent_dim = v;
    }
    c.solver_step = a.solver_step;
    if let Some(v) = a.validation_fraction {
        c.validation_fraction = v;
    }
    c.standardize = !a.no_standardize;
    c.relevance_weights = a.relevance.clone();
    if let Some(path) = &a.covariates {
        let panel = panel.ok_or_else(|| anyhow!("--covariates needs a panel given with --input"))?;
        let ids: Vec<&str> = panel.controls().iter().map(|u| u.unit_id.as_str()).collect();
        let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let x = load_covariates(file, &ids)?;
        c.relevance_weights = Some(covariate_relevance_weights(&x)?);
    }
    c.validate()?;
    Ok(c)
}

fn baseline_config(a: &BaselineArgs) -> Result<BaselineConfig> {
    let mut c = BaselineConfig::default();
    if let Some(k) = &a.kmm_kernel {
        c.kmm.kernel = match k.as_str() {
            "gaussian" => KernelKind::Gaussian,
            "linear" => KernelKind::Linear,
            other => bail!("unknown KMM kernel {other:?}; expected gaussian or linear"),
        };
    }
    c.kmm.bandwidth = a.kmm_bandwidth;
    c.kmm.validate()?;
    c.mc.mu = a.mc_mu;
    if let Some(f) = a.rsc_folds {
        if f < 2 {
            bail!("--rsc-folds must be at least 2");
        }
        c.rsc.folds = f;
    }
    Ok(c)
}

fn read_panel(path: &Path, treatment_time: Option<f64>) -> Result<Panel> {
    read_panel_file(path, treatment_time).with_context(|| format!("reading panel {}", path.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(path) => write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_simulation(sim: &Simulation, output: &Path) -> Result<()> {
    write_panel_file(&sim.panel, output)?;
    let truth = truth_path(output);
    write_series_file(&sim.truth, &truth)?;
    println!("wrote {} and {}", output.display(), truth.display());
    Ok(())
}

fn simulate_lorenz_cmd(a: SimLorenzArgs) -> Result<()> {
    let config = lorenz_config(&a.lorenz, a.seed);
    config.validate()?;
    write_simulation(&simulate_lorenz(&config)?, &a.output)
}

fn simulate_linear_cmd(a: SimLinearArgs) -> Result<()> {
    let alpha = PiecewiseConstant { breaks: a.alpha_breaks, values: a.alpha };
    let config = LinearDgpConfig::new(alpha, a.noise, a.weights, &a.control_y0, a.t_treat, a.seed)?;
    if a.points < 2 || a.horizon.is_nan() || a.horizon <= 0.0 {
        bail!("need at least 2 points and a positive horizon");
    }
    let mut sim = simulate_linear(&config, &regular_grid(0.0, a.horizon, a.points))?;
    if a.effect != 0.0 {
        let mut units = sim.panel.units.clone();
        let treated = &mut units[0];
        for (t, row) in treated.times.iter().zip(treated.values.iter_mut()) {
            if *t >= a.t_treat {
                row.iter_mut().for_each(|v| *v += a.effect);
            }
        }
        sim.panel = Panel::new(units, a.t_treat)?;
    }
    write_simulation(&sim, &a.output)
}

/// Every observation time of the view, the default alignment grid.
fn observation_grid(panel: &Panel) -> Vec<f64> {
    let mut grid: Vec<f64> = panel.units.iter().flat_map(|u| u.times.iter().copied()).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

fn fit_cmd(a: FitArgs) -> Result<()> {
    let stochastic = matches!(a.method, Method::Ncsc | Method::Mc);
    let seed = match (a.seed, stochastic) {
        (Some(s), _) => s,
        (None, true) => bail!("--seed is required for {}", a.method),
        (None, false) => 0,
    };
    let panel = read_panel(&a.input, a.treatment_time)?;
    if a.method == Method::Ncsc {
        let config = train_config(&a.train, Some(&panel), seed)?;
        let fit = ncsc::fit(&panel, &config)?;
        let ckpt = a.output.with_extension("ckpt");
        let ckpt_name = ckpt.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let mut buf = Vec::new();
        write_model(&fit.model, &mut buf)?;
        write_atomic(&ckpt, &buf)?;
        write_json(&a.output, &FitManifest::from_fit(&fit, ckpt_name))?;
        println!(
            "lambda {} active set {:?} train mse {:.6} validation mse {:.6}",
            fit.selected_lambda, fit.active_set, fit.train_error, fit.validation_error
        );
    } else {
        let mut config = baseline_config(&a.baselines)?;
        config.mc.seed = seed;
        let view = pre_treatment_view(&panel)?;
        let grid = observation_grid(&view);
        let aligned = align_panel(&view, &grid)?;
        let fit = fit_baseline(a.method, &aligned, &config)?;
        let mut artifact = serde_json::to_value(&fit)?;
        let obj = artifact.as_object_mut().ok_or_else(|| anyhow!("baseline fit did not serialise to an object"))?;
        obj.insert("treatment_time".into(), panel.treatment_time.into());
        obj.insert("grid".into(), grid.into());
        write_json(&a.output, &artifact)?;
        if let BaselineFit::Weights(w) = &fit {
            println!("weights {:?} intercept {}", w.weights, w.intercept);
        }
    }
    Ok(())
}

enum Fitted {
    Ncsc(ncsc::NcscModel),
    Baseline { fit: BaselineFit, grid: Vec<f64> },
}

fn load_fitted(path: &Path) -> Result<Fitted> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut value: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if value.get("checkpoint").is_some() {
        let manifest: FitManifest = serde_json::from_value(value)?;
        let ckpt = path.with_file_name(&manifest.checkpoint);
        let ckpt_text = fs::read_to_string(&ckpt).with_context(|| format!("reading {}", ckpt.display()))?;
        return Ok(Fitted::Ncsc(read_model(&ckpt_text)?));
    }
    let obj = value.as_object_mut().ok_or_else(|| anyhow!("{} is not a fit artifact", path.display()))?;
    let grid: Vec<f64> = serde_json::from_value(obj.remove("grid").ok_or_else(|| anyhow!("fit artifact has no grid"))?)?;
    obj.remove("treatment_time");
    let fit: BaselineFit = serde_json::from_value(value)?;
    Ok(Fitted::Baseline { fit, grid })
}

/// Baseline synthetic control at `times`. Weight fits realign on the
/// requested times; a completed matrix only knows its own grid.
fn baseline_predict(fit: &BaselineFit, grid: &[f64], panel: &Panel, times: &[f64]) -> Result<Vec<Vec<f64>>> {
    let view = pre_treatment_view(panel)?;
    let mut full = grid.to_vec();
    if matches!(fit, BaselineFit::Weights(_)) {
        full.extend_from_slice(times);
        full.sort_by(f64::total_cmp);
        full.dedup();
    }
    let aligned = align_panel(&view, &full)?;
    Ok(predict_baseline(fit, &aligned, times)?)
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        bail!("no evaluation times");
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        bail!("--times must be strictly ascending");
    }
    Ok(())
}

fn predict_cmd(a: PredictArgs) -> Result<()> {
    let fitted = load_fitted(&a.fit)?;
    let panel = read_panel(&a.input, a.treatment_time)?;
    let (times, values) = match &fitted {
        Fitted::Ncsc(model) => {
            let t0 = panel.treated().times[0];
            let times = if a.times.is_empty() {
                observation_grid(&panel).into_iter().filter(|&t| t >= t0).collect()
            } else {
                a.times.clone()
            };
            check_times(&times)?;
            let values = ncsc::predict(model, &panel, &times)?;
            (times, values)
        }
        Fitted::Baseline { fit, grid } => {
            let times = if a.times.is_empty() { grid.clone() } else { a.times.clone() };
            check_times(&times)?;
            let values = baseline_predict(fit, grid, &panel, &times)?;
            (times, values)
        }
    };
    let series = UnitSeries::new("synthetic", times, values)?;
    let mut buf = Vec::new();
    ctrlpath::panel::export_series(&series, &mut buf)?;
    emit(a.output.as_deref(), &String::from_utf8(buf)?)
}

fn effect_cmd(a: EffectArgs) -> Result<()> {
    let fitted = load_fitted(&a.fit)?;
    let panel = read_panel(&a.input, a.treatment_time)?;
    let effect = match &fitted {
        Fitted::Ncsc(model) => {
            if !a.times.is_empty() {
                check_times(&a.times)?;
            }
            ncsc::treatment_effect(model, &panel, &a.times)?
        }
        Fitted::Baseline { fit, grid } => {
            let t_treat = panel.treatment_time;
            let times: Vec<f64> = if a.times.is_empty() {
                panel.treated().times.iter().copied().filter(|&t| t > t_treat).collect()
            } else {
                a.times.clone()
            };
            check_times(&times)?;
            let counterfactual = baseline_predict(fit, grid, &panel, &times)?;
            let spline = fit_spline(panel.treated())?;
            let d = panel.treated().dims();
            let observed = times
                .iter()
                .map(|&t| {
                    spline.eval(t).map(|mut v| {
                        v.truncate(d);
                        v
                    })
                })
                .collect::<ctrlpath::Result<Vec<_>>>()?;
            let tau = observed.iter().zip(&counterfactual).map(|(o, c)| o.iter().zip(c).map(|(a, b)| a - b).collect()).collect();
            TreatmentEffectSeries { times, tau, observed, counterfactual }
        }
    };
    let d = effect.tau.first().map_or(0, Vec::len);
    let mut text = String::from("time");
    for prefix in ["tau", "observed", "synthetic"] {
        for k in 0..d {
            write!(text, ",{prefix}_v{k}")?;
        }
    }
    text.push('\n');
    for (i, t) in effect.times.iter().enumerate() {
        write!(text, "{t}")?;
        for rows in [&effect.tau, &effect.observed, &effect.counterfactual] {
            for v in &rows[i] {
                write!(text, ",{v}")?;
            }
        }
        text.push('\n');
    }
    emit(a.output.as_deref(), &text)?;
    if a.output.is_some() {
        println!("mean effect {:?}", effect.mean());
    }
    Ok(())
}

fn summary(reports: &[ExperimentReport]) -> String {
    let mut out = format!("{:<6} {:<16} {:>12} {:>12} {:>6}\n", "method", "regime", "mean", "std", "failed");
    for r in reports {
        let _ = writeln!(out, "{:<6} {:<16} {:>12.5} {:>12.5} {:>6}", r.method.as_str(), r.regime, r.mean, r.std, r.failed);
    }
    out
}

fn compare_cmd(a: CompareArgs) -> Result<()> {
    if a.runs == 0 {
        bail!("--runs must be at least 1");
    }
    if a.methods.is_empty() {
        bail!("--methods is empty");
    }
    let panel = a.input.as_deref().map(|p| read_panel(p, a.treatment_time)).transpose()?;
    let settings = MethodSettings {
        train: train_config(&a.train, panel.as_ref(), a.seed)?,
        baselines: baseline_config(&a.baselines)?,
        grid: None,
    };
    let reports = match (&a.input, panel) {
        (None, _) => {
            let lorenz = lorenz_config(&a.lorenz, a.seed);
            lorenz.validate()?;
            run_lorenz_benchmark(&LorenzBenchmark {
                lorenz,
                methods: a.methods.clone(),
                drop_fractions: a.drop.clone().unwrap_or_else(|| vec![0.0, 0.3, 0.5, 0.7]),
                n_runs: a.runs,
                settings,
            })?
        }
        (Some(input), Some(panel)) => {
            let truth = a.truth.clone().or_else(|| Some(truth_path(input)).filter(|p| p.exists()));
            match truth {
                Some(path) => {
                    let truth = read_series_file(&path).with_context(|| format!("reading truth {}", path.display()))?;
                    let config = TruthBenchmark {
                        methods: a.methods.clone(),
                        drop_fractions: a.drop.clone().unwrap_or_else(|| vec![0.0]),
                        n_runs: a.runs,
                        seed: a.seed,
                        settings,
                    };
                    run_truth_benchmark(&Simulation { panel, truth }, &config)?
                }
                None => {
                    if a.drop.is_some() {
                        bail!("--drop needs a ground-truth file");
                    }
                    let study =
                        PanelStudy { methods: a.methods.clone(), augment: !a.no_augment, n_runs: a.runs, seed: a.seed, settings };
                    run_panel_study(&panel, &study)?
                }
            }
        }
        (Some(_), None) => unreachable!("panel is read whenever an input is given"),
    };
    write_json(&a.output, &reports)?;
    let csv_path = a.csv.clone().unwrap_or_else(|| a.output.with_extension("csv"));
    let mut buf = Vec::new();
    write_reports_csv(&reports, &mut buf)?;
    write_atomic(&csv_path, &buf)?;
    print!("{}", summary(&reports));
    Ok(())
}

fn consistency_cmd(a: ConsistencyArgs) -> Result<()> {
    let panel = read_panel(&a.input, a.treatment_time)?;
    let train = train_config(&a.train, Some(&panel), a.seed)?;
    let report = weight_consistency(&panel, &train, a.runs, a.seed)?;
    if let Some(path) = &a.output {
        write_json(path, &report)?;
    }
    println!("modal active set {:?} agreement {:.2}", report.modal_active_set, report.agreement);
    for (i, (m, s)) in report.mean_abs.iter().zip(&report.std_abs).enumerate() {
        println!("control {i:>3} |w| mean {m:.6} std {s:.6}");
    }
    Ok(())
}

fn profile_cmd(a: ProfileArgs) -> Result<()> {
    let lorenz = lorenz_config(&a.lorenz, a.seed);
    let config = ProfileConfig { axis: a.axis, values: a.values.clone(), train: train_config(&a.train, None, a.seed)?, lorenz };
    let rows = runtime_profile(&config)?;
    if let Some(path) = &a.output {
        write_json(path, &rows)?;
    }
    println!("{:>8} {:>12} {:>8}", "value", "seconds", "ratio");
    for r in &rows {
        let ratio = r.ratio_to_previous.map_or("-".to_string(), |x| format!("{x:.2}"));
        println!("{:>8} {:>12.4} {:>8}", r.value, r.seconds, ratio);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truth_file_sits_next_to_the_panel() {
        assert_eq!(truth_path(Path::new("out/lorenz.csv")), PathBuf::from("out/lorenz.truth.csv"));
        assert_eq!(truth_path(Path::new("panel")), PathBuf::from("panel.truth.csv"));
    }

    #[test]
    fn fixed_lambda_clears_the_search() {
        let a = TrainArgs { lambda: Some(0.5), ..Default::default() };
        let c = train_config(&a, None, 4).unwrap();
        assert!(c.lambda_grid.is_empty());
        assert_eq!((c.lambda_l1, c.seed), (0.5, 4));
        let bad = TrainArgs { lr: Some(-1.0), ..Default::default() };
        assert!(train_config(&bad, None, 0).is_err());
    }

    #[test]
    fn unknown_kernel_is_rejected() {
        let a = BaselineArgs { kmm_kernel: Some("cubic".into()), ..Default::default() };
        assert!(baseline_config(&a).is_err());
    }
}
