//! `ctrlpath`: counterfactual trajectories for a treated time series.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ctrlpath::baselines::Method;
use ctrlpath::eval::ProfileAxis;

#[derive(Debug, Parser)]
#[command(name = "ctrlpath", version, about = "Continuous-time synthetic controls with neural CDEs and discrete baselines")]
pub struct Cli {
    /// File of `key = value` lines used as default flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic panel and its ground-truth counterfactual.
    #[command(subcommand)]
    Simulate(Simulate),
    /// Fit one estimator on the pre-treatment window.
    Fit(FitArgs),
    /// Evaluate a fitted model's synthetic control.
    Predict(PredictArgs),
    /// Observed minus synthetic path after the treatment time.
    Effect(EffectArgs),
    /// Benchmark several methods and report control errors.
    Compare(CompareArgs),
    /// Refit NC-SC under several seeds and compare the learned weights.
    Consistency(ConsistencyArgs),
    /// Time NC-SC fits while growing the panel.
    Profile(ProfileArgs),
}

#[derive(Debug, Subcommand)]
pub enum Simulate {
    /// Forced Lorenz-96 controls with a forcing change for the treated unit.
    Lorenz(SimLorenzArgs),
    /// Linear stochastic units where the treated unit is a weighted sum of controls.
    Linear(SimLinearArgs),
}

#[derive(Debug, Args, Clone)]
pub struct LorenzArgs {
    /// Lorenz-96 state dimension.
    #[arg(long, default_value_t = 10)]
    pub d: usize,
    #[arg(long, default_value_t = 5.0)]
    pub f_control: f64,
    #[arg(long, default_value_t = 10.0)]
    pub f_treated: f64,
    /// Number of control units.
    #[arg(long, default_value_t = 20)]
    pub controls: usize,
    #[arg(long, default_value_t = 200.0)]
    pub t_treat: f64,
    #[arg(long, default_value_t = 400.0)]
    pub horizon: f64,
    /// Spacing of the recorded observations.
    #[arg(long, default_value_t = 1.0)]
    pub spacing: f64,
    /// Integration step of the simulator.
    #[arg(long, default_value_t = 0.01)]
    pub rk_step: f64,
}

#[derive(Debug, Args)]
pub struct SimLorenzArgs {
    #[command(flatten)]
    pub lorenz: LorenzArgs,
    #[arg(long)]
    pub seed: u64,
    /// Panel CSV; the truth goes to `<stem>.truth.csv`.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimLinearArgs {
    /// Weight of each control in the treated unit.
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    pub weights: Vec<f64>,
    /// Initial value of each control.
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    pub control_y0: Vec<f64>,
    /// Drift rate per segment; one more value than `--alpha-breaks`.
    #[arg(long, value_delimiter = ',', default_value = "0", allow_negative_numbers = true)]
    pub alpha: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub alpha_breaks: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 5.0)]
    pub t_treat: f64,
    #[arg(long, default_value_t = 10.0)]
    pub horizon: f64,
    /// Number of regular observation times on `[0, horizon]`.
    #[arg(long, default_value_t = 101)]
    pub points: usize,
    /// Constant shift added to the treated unit from the treatment time on.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub effect: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Clone, Default)]
pub struct TrainArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Epochs without validation improvement before the step halves.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Fixed L1 penalty; skips the penalty search.
    #[arg(long, conflicts_with = "lambda_grid", allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    /// Candidate L1 penalties compared on the validation tail.
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Largest solver step; defaults to the smallest observation gap.
    #[arg(long)]
    pub solver_step: Option<f64>,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    #[arg(long)]
    pub no_standardize: bool,
    /// Per-control relevance weights for the penalty.
    #[arg(long, value_delimiter = ',', conflicts_with = "covariates")]
    pub relevance: Option<Vec<f64>>,
    /// CSV `unit,x0,...` of static covariates; derives relevance weights.
    #[arg(long, value_name = "FILE")]
    pub covariates: Option<PathBuf>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct BaselineArgs {
    /// KMM kernel: gaussian or linear.
    #[arg(long)]
    pub kmm_kernel: Option<String>,
    /// Gaussian bandwidth; defaults to the median pairwise distance.
    #[arg(long)]
    pub kmm_bandwidth: Option<f64>,
    /// Fixed soft-impute shrinkage; selected on held-out cells otherwise.
    #[arg(long)]
    pub mc_mu: Option<f64>,
    /// Cross-validation folds for R-SC.
    #[arg(long)]
    pub rsc_folds: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub method: Method,
    /// Panel CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Overrides the panel's `#treatment_time=` row.
    #[arg(long, allow_negative_numbers = true)]
    pub treatment_time: Option<f64>,
    /// Required for ncsc and mc.
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON artifact; NC-SC also writes `<stem>.ckpt` next to it.
    #[arg(short, long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub baselines: BaselineArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// JSON artifact written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub treatment_time: Option<f64>,
    /// Evaluation times; defaults to every observation time (or the fit grid).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub times: Vec<f64>,
    /// CSV `time,v0,...`; stdout when omitted.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EffectArgs {
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub treatment_time: Option<f64>,
    /// Evaluation times after the treatment; defaults to the treated observations.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub times: Vec<f64>,
    /// CSV of effect, observed and synthetic paths; stdout when omitted.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long, value_delimiter = ',', default_value = "ncsc,sc,kmm,rsc,mc")]
    pub methods: Vec<Method>,
    /// Panel CSV; without it a Lorenz benchmark is simulated.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Ground-truth series; defaults to `<input stem>.truth.csv` when present.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    pub treatment_time: Option<f64>,
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Observation drop fractions; `0,0.3,0.5,0.7` for Lorenz, `0` with a truth file.
    #[arg(long, value_delimiter = ',')]
    pub drop: Option<Vec<f64>>,
    /// Panels without truth: score on the raw observations instead of a 300-point resample.
    #[arg(long)]
    pub no_augment: bool,
    /// JSON report; a CSV with one row per run goes next to it.
    #[arg(short, long)]
    pub output: PathBuf,
    /// CSV path; defaults to the report path with a `.csv` extension.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub lorenz: LorenzArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub baselines: BaselineArgs,
}

#[derive(Debug, Args)]
pub struct ConsistencyArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub treatment_time: Option<f64>,
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    /// n_controls or n_pretreatment.
    #[arg(long)]
    pub axis: ProfileAxis,
    /// Values of the profiled axis.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub lorenz: LorenzArgs,
    #[command(flatten)]
    pub train: TrainArgs,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<ctrlpath::Error>()) {
        Some(e) if !e.is_validation() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv = match config::expand_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
