//! Command-line front end: Monte Carlo studies, asymptotic tables, CSV
//! fitting, and the constraint-radius diagnostic.
//!
//! Every subcommand takes `--seed` (default 1) and is fully deterministic
//! given it. Results are emitted as CSV (default) or JSON with the column
//! order `scenario,estimator,metric,value,mc_std_error`. An optional TOML
//! config file supplies any flag not given on the command line; explicit
//! flags always win. Exit codes: 0 success, 1 usage error, 2 numerical
//! failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use dcml::asymptotics::{
    asymptotic_efficiencies, gv_quantiles, prob_equal_ls, sample_z3_with, v_matrix_with,
    AsymptoticOptions, ErrorDistribution,
};
use dcml::dcml_multivariate::{delta_multivariate, DcmlTarget};
use dcml::kernels::KernelConfig;
use dcml::regression::Method;
use dcml::sim::{
    delta_quantile_diagnostic, derive_seed, load_numeric_csv, parse_numeric_csv,
    real_data_workflow, run_multivariate_study_with, run_regression_study, stackloss_csv,
    MultivariateScenario, MvEstimator, MvStudyOptions, RegressionScenario, StudyResult,
    XDistribution,
};
use dcml::{Error, Result};

#[derive(Parser)]
#[command(
    name = "dcml",
    version,
    about = "Robust estimation by distance-constrained maximum likelihood",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo study of the regression estimators over a scenario grid.
    SimulateRegression(SimulateRegressionArgs),
    /// Monte Carlo study of the location/scatter estimators.
    SimulateMultivariate(SimulateMultivariateArgs),
    /// Large-sample covariance triples, efficiencies, and blend-weight mass.
    Asymptotics(AsymptoticsArgs),
    /// Fit the estimator chain to a CSV table (bundled plant data by default).
    Fit(FitArgs),
    /// Simulated alpha-quantile of the S-to-MLE divergence vs the power law.
    DeltaDiagnostic(DeltaDiagnosticArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::InvalidParameter(format!(
                "unknown output format '{other}' (expected csv or json)"
            ))),
        }
    }
}

/// Flags shared by every subcommand.
#[derive(Args)]
struct CommonArgs {
    /// Master RNG seed; the entire run is deterministic given it [default: 1].
    #[arg(long)]
    seed: Option<u64>,
    /// TOML config file supplying defaults for any flag not given here.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Write the result table to this path instead of stdout.
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
    /// Result format [default: csv].
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
}

#[derive(Args)]
struct SimulateRegressionArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Slope counts in the grid [default: 5 10; with --full: 5 10 20].
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    p: Option<Vec<usize>>,
    /// Explicit sample sizes applied to every p (overrides the n = {5p, 20p}
    /// grid; --full uses n = {5p, 10p, 20p}).
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    n: Option<Vec<usize>>,
    /// Predictor distributions [default: all five tags].
    #[arg(long = "x-dist", value_delimiter = ',', num_args = 1..)]
    x_dist: Option<Vec<String>>,
    /// Error distributions [default: normal].
    #[arg(long = "error-dist", value_delimiter = ',', num_args = 1..)]
    error_dist: Option<Vec<String>>,
    /// Contamination fraction in [0, 0.5) [default: 0].
    #[arg(long)]
    epsilon: Option<f64>,
    /// Outlier slope grid [default: 0.5 to 2 in steps of 0.1 when epsilon > 0].
    #[arg(long = "k-grid", value_delimiter = ',', num_args = 1..)]
    k_grid: Option<Vec<f64>>,
    /// Leverage coordinate of the contaminating rows [default: 5].
    #[arg(long)]
    x0: Option<f64>,
    /// Estimators to run [default: LS,S,MM,DCML].
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    estimators: Option<Vec<String>>,
    /// Replicates per scenario [default: 500 clean, 200 contaminated].
    #[arg(long = "n-rep")]
    n_rep: Option<usize>,
    /// Use the full published grid instead of the trimmed desk-scale one.
    #[arg(long)]
    full: bool,
}

#[derive(Args)]
struct SimulateMultivariateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Dimensions in the grid [default: 5 10; with --full: 2 5 10 20].
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    p: Option<Vec<usize>>,
    /// Explicit sample sizes applied to every p (overrides the n = {5p, 20p}
    /// grid; --full uses n = {5p, 10p, 20p}).
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    n: Option<Vec<usize>>,
    /// Contamination fraction in [0, 0.5) [default: 0].
    #[arg(long)]
    epsilon: Option<f64>,
    /// Outlier coordinate grid [default: 1 to 10 when epsilon > 0].
    #[arg(long = "k-grid", value_delimiter = ',', num_args = 1..)]
    k_grid: Option<Vec<f64>>,
    /// Estimators to run [default: MLE,S,DCML].
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    estimators: Option<Vec<String>>,
    /// Replicates per scenario [default: 500 clean, 200 contaminated].
    #[arg(long = "n-rep")]
    n_rep: Option<usize>,
    /// Report the scatter loss without subtracting p.
    #[arg(long = "uncentered-scatter-loss")]
    uncentered_scatter_loss: bool,
    /// Use the full published grid instead of the trimmed desk-scale one.
    #[arg(long)]
    full: bool,
}

#[derive(Args)]
struct AsymptoticsArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Error distributions [default: normal,t3,t5,uniform].
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    dist: Option<Vec<String>>,
    /// Slope counts [default: 5 10 20].
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    p: Option<Vec<usize>>,
    /// Monte Carlo draws per cell [default: 100000].
    #[arg(long = "n-draws")]
    n_draws: Option<usize>,
    /// Also report these quantiles of the blend's first coordinate.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    probs: Option<Vec<f64>>,
    /// Use t = min(1, sqrt(0.3 p / Q)) instead of min(1, 0.3 p / Q).
    #[arg(long = "sqrt-weight")]
    sqrt_weight: bool,
    /// Use the single-denominator robust variance (rejected when not PSD).
    #[arg(long = "unsquared-v22")]
    unsquared_v22: bool,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// CSV table with a header row [default: the bundled plant data].
    #[arg(long, value_name = "PATH")]
    data: Option<PathBuf>,
    /// Response column name [default: stack_loss].
    #[arg(long)]
    response: Option<String>,
    /// 1-based rows to exclude from the good subset
    /// [default: 1,3,4,21 for the bundled data, none otherwise].
    #[arg(long = "drop-rows", value_delimiter = ',', num_args = 0..)]
    drop_rows: Option<Vec<usize>>,
}

#[derive(Args)]
struct DeltaDiagnosticArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Dimension [default: 5].
    #[arg(long)]
    p: Option<usize>,
    /// Sample size [default: 50].
    #[arg(long)]
    n: Option<usize>,
    /// scatter or location [default: scatter].
    #[arg(long)]
    target: Option<String>,
    /// Quantile level in (0, 1) [default: 0.4].
    #[arg(long)]
    alpha: Option<f64>,
    /// Replicates [default: 500].
    #[arg(long = "n-rep")]
    n_rep: Option<usize>,
}

/// Flat key-value schema mirrored by the config file; dashed key spellings
/// are accepted alongside the underscored ones, unknown keys are ignored.
#[derive(Deserialize, Default)]
#[serde(default)]
struct FileConfig {
    seed: Option<u64>,
    output: Option<PathBuf>,
    format: Option<String>,
    p: Option<Vec<usize>>,
    n: Option<Vec<usize>>,
    #[serde(alias = "x-dist")]
    x_dist: Option<Vec<String>>,
    #[serde(alias = "error-dist")]
    error_dist: Option<Vec<String>>,
    epsilon: Option<f64>,
    #[serde(alias = "k-grid")]
    k_grid: Option<Vec<f64>>,
    x0: Option<f64>,
    estimators: Option<Vec<String>>,
    #[serde(alias = "n-rep")]
    n_rep: Option<usize>,
    full: Option<bool>,
    #[serde(alias = "uncentered-scatter-loss")]
    uncentered_scatter_loss: Option<bool>,
    dist: Option<Vec<String>>,
    #[serde(alias = "n-draws")]
    n_draws: Option<usize>,
    probs: Option<Vec<f64>>,
    #[serde(alias = "sqrt-weight")]
    sqrt_weight: Option<bool>,
    #[serde(alias = "unsquared-v22")]
    unsquared_v22: Option<bool>,
    data: Option<PathBuf>,
    response: Option<String>,
    #[serde(alias = "drop-rows")]
    drop_rows: Option<Vec<usize>>,
    target: Option<String>,
    alpha: Option<f64>,
    #[serde(alias = "delta-p")]
    delta_p: Option<usize>,
    #[serde(alias = "delta-n")]
    delta_n: Option<usize>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| {
            Error::InvalidInput(format!("config file {}: {e}", path.display()))
        })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0u8,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Numerical(_) | Error::DegenerateData(_) | Error::NotPositiveDefinite(_) => {
                    2u8
                }
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SimulateRegression(args) => simulate_regression(args),
        Command::SimulateMultivariate(args) => simulate_multivariate(args),
        Command::Asymptotics(args) => asymptotics(args),
        Command::Fit(args) => fit(args),
        Command::DeltaDiagnostic(args) => delta_diagnostic(args),
    }
}

/// Resolved output settings: flags beat the config file, which beats the
/// defaults.
struct OutputPlan {
    seed: u64,
    format: OutputFormat,
    output: Option<PathBuf>,
}

fn resolve_output(common: &CommonArgs, file: &FileConfig) -> Result<OutputPlan> {
    let format = match (common.format, file.format.as_deref()) {
        (Some(f), _) => f,
        (None, Some(s)) => s.parse()?,
        (None, None) => OutputFormat::Csv,
    };
    Ok(OutputPlan {
        seed: common.seed.or(file.seed).unwrap_or(1),
        format,
        output: common.output.clone().or_else(|| file.output.clone()),
    })
}

fn emit(result: &StudyResult, plan: &OutputPlan) -> Result<()> {
    if result.failures > 0 {
        eprintln!(
            "note: {} of {} replicates failed and were excluded",
            result.failures, result.attempts
        );
    }
    let mut text = match plan.format {
        OutputFormat::Csv => result.to_csv_string()?,
        OutputFormat::Json => result.to_json_string()?,
    };
    if !text.ends_with('\n') {
        text.push('\n');
    }
    match &plan.output {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn parse_tags<T: FromStr<Err = Error>>(tags: &[String]) -> Result<Vec<T>> {
    tags.iter().map(|t| t.parse()).collect()
}

/// Sample sizes for one dimension: explicit list if given, multiplier grid
/// otherwise.
fn sizes_for(p: usize, explicit: Option<&[usize]>, full: bool) -> Vec<usize> {
    match explicit {
        Some(ns) => ns.to_vec(),
        None => {
            let multipliers: &[usize] = if full { &[5, 10, 20] } else { &[5, 20] };
            multipliers.iter().map(|m| m * p).collect()
        }
    }
}

fn simulate_regression(args: SimulateRegressionArgs) -> Result<()> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let plan = resolve_output(&args.common, &file)?;
    let full = args.full || file.full.unwrap_or(false);

    let ps = args
        .p
        .or(file.p)
        .unwrap_or_else(|| if full { vec![5, 10, 20] } else { vec![5, 10] });
    let ns = args.n.or(file.n);
    let x_dists: Vec<XDistribution> = match args.x_dist.or(file.x_dist) {
        Some(tags) => parse_tags(&tags)?,
        None => XDistribution::ALL.to_vec(),
    };
    let error_dists: Vec<ErrorDistribution> = match args.error_dist.or(file.error_dist) {
        Some(tags) => parse_tags(&tags)?,
        None => vec![ErrorDistribution::Normal],
    };
    let epsilon = args.epsilon.or(file.epsilon).unwrap_or(0.0);
    let k_grid = args.k_grid.or(file.k_grid).unwrap_or_else(|| {
        if epsilon > 0.0 {
            RegressionScenario::default_k_grid()
        } else {
            Vec::new()
        }
    });
    let x0 = args.x0.or(file.x0).unwrap_or(5.0);
    let estimators: Vec<Method> = match args.estimators.or(file.estimators) {
        Some(tags) => parse_tags(&tags)?,
        None => vec![Method::Ls, Method::S, Method::Mm, Method::Dcml],
    };
    let n_rep = args
        .n_rep
        .or(file.n_rep)
        .unwrap_or(if epsilon > 0.0 { 200 } else { 500 });

    let mut scenarios = Vec::new();
    for &p in &ps {
        for n in sizes_for(p, ns.as_deref(), full) {
            for &x_dist in &x_dists {
                for &error_dist in &error_dists {
                    let ordinal = scenarios.len() as u64;
                    scenarios.push(RegressionScenario::new(
                        p,
                        n,
                        x_dist,
                        error_dist,
                        epsilon,
                        k_grid.clone(),
                        x0,
                        derive_seed(plan.seed, ordinal),
                    )?);
                }
            }
        }
    }
    let result = run_regression_study(&scenarios, &estimators, n_rep)?;
    emit(&result, &plan)
}

fn simulate_multivariate(args: SimulateMultivariateArgs) -> Result<()> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let plan = resolve_output(&args.common, &file)?;
    let full = args.full || file.full.unwrap_or(false);

    let ps = args
        .p
        .or(file.p)
        .unwrap_or_else(|| if full { vec![2, 5, 10, 20] } else { vec![5, 10] });
    let ns = args.n.or(file.n);
    let epsilon = args.epsilon.or(file.epsilon).unwrap_or(0.0);
    let k_grid = args.k_grid.or(file.k_grid).unwrap_or_else(|| {
        if epsilon > 0.0 {
            MultivariateScenario::default_k_grid()
        } else {
            Vec::new()
        }
    });
    let estimators: Vec<MvEstimator> = match args.estimators.or(file.estimators) {
        Some(tags) => parse_tags(&tags)?,
        None => MvEstimator::ALL.to_vec(),
    };
    let n_rep = args
        .n_rep
        .or(file.n_rep)
        .unwrap_or(if epsilon > 0.0 { 200 } else { 500 });
    let options = MvStudyOptions {
        uncentered_scatter_loss: args.uncentered_scatter_loss || file.uncentered_scatter_loss.unwrap_or(false),
    };

    let mut scenarios = Vec::new();
    for &p in &ps {
        for n in sizes_for(p, ns.as_deref(), full) {
            let ordinal = scenarios.len() as u64;
            scenarios.push(MultivariateScenario::new(
                p,
                n,
                epsilon,
                k_grid.clone(),
                derive_seed(plan.seed, ordinal),
            )?);
        }
    }
    let result = run_multivariate_study_with(&scenarios, &estimators, n_rep, &options)?;
    emit(&result, &plan)
}

fn asymptotics(args: AsymptoticsArgs) -> Result<()> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let plan = resolve_output(&args.common, &file)?;
    let dists: Vec<ErrorDistribution> = match args.dist.or(file.dist) {
        Some(tags) => parse_tags(&tags)?,
        None => vec![
            ErrorDistribution::Normal,
            ErrorDistribution::STUDENT3,
            ErrorDistribution::STUDENT5,
            ErrorDistribution::Uniform,
        ],
    };
    let ps = args.p.or(file.p).unwrap_or_else(|| vec![5, 10, 20]);
    let n_draws = args.n_draws.or(file.n_draws).unwrap_or(100_000);
    let probs = args.probs.or(file.probs).unwrap_or_default();
    let opts = AsymptoticOptions {
        v22_squared_denominator: !(args.unsquared_v22 || file.unsquared_v22.unwrap_or(false)),
        sqrt_blend_weight: args.sqrt_weight || file.sqrt_weight.unwrap_or(false),
    };
    let kernel = KernelConfig::default();

    let mut result = StudyResult::default();
    let mut ordinal = 0u64;
    for &dist in &dists {
        let v = v_matrix_with(dist, &kernel, &opts)?;
        let id = format!("asym;err={dist}");
        result.push(&id, "limit", "V11", v.v11(), 0.0)?;
        result.push(&id, "limit", "V12", v.v12(), 0.0)?;
        result.push(&id, "limit", "V22", v.v22(), 0.0)?;
        for &p in &ps {
            let sample = sample_z3_with(&v, p, n_draws, derive_seed(plan.seed, ordinal), &opts)?;
            ordinal += 1;
            let cell = format!("asym;err={dist};p={p}");
            let (eff_ls, eff_mm) = asymptotic_efficiencies(&sample);
            result.push(&cell, "DCML", "EffLS", eff_ls, 0.0)?;
            result.push(&cell, "DCML", "EffMM", eff_mm, 0.0)?;
            let prob = prob_equal_ls(&sample);
            let prob_se = (prob * (1.0 - prob) / n_draws as f64).sqrt();
            result.push(&cell, "DCML", "ProbEqualLS", prob, prob_se)?;
            if !probs.is_empty() {
                for (q, &prob) in gv_quantiles(&sample, &probs)?.iter().zip(&probs) {
                    let mut tag = String::new();
                    write!(tag, "Quantile[{prob}]").expect("infallible");
                    result.push(&cell, "DCML", tag, *q, 0.0)?;
                }
            }
        }
    }
    emit(&result, &plan)
}

fn fit(args: FitArgs) -> Result<()> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let plan = resolve_output(&args.common, &file)?;
    let data = args.data.or(file.data);
    let response = args
        .response
        .or(file.response)
        .unwrap_or_else(|| "stack_loss".into());
    let (table, stem) = match &data {
        Some(path) => {
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "data".into());
            (load_numeric_csv(path)?, stem)
        }
        None => (parse_numeric_csv(stackloss_csv())?, "stackloss".into()),
    };
    let drop_rows = args.drop_rows.or(file.drop_rows).unwrap_or_else(|| {
        if data.is_none() {
            vec![1, 3, 4, 21]
        } else {
            Vec::new()
        }
    });
    let result = real_data_workflow(&table, &stem, &response, &drop_rows, plan.seed)?;
    emit(&result, &plan)
}

fn delta_diagnostic(args: DeltaDiagnosticArgs) -> Result<()> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let plan = resolve_output(&args.common, &file)?;
    let p = args.p.or(file.delta_p).or(file.p.as_ref().and_then(|v| v.first().copied())).unwrap_or(5);
    let n = args.n.or(file.delta_n).or(file.n.as_ref().and_then(|v| v.first().copied())).unwrap_or(50);
    let target: DcmlTarget = match args.target.or(file.target) {
        Some(tag) => tag.parse()?,
        None => DcmlTarget::Scatter,
    };
    let alpha = args.alpha.or(file.alpha).unwrap_or(0.4);
    let n_rep = args.n_rep.or(file.n_rep).unwrap_or(500);

    let quantile = delta_quantile_diagnostic(p, n, target, alpha, n_rep, plan.seed)?;
    let reference = delta_multivariate(p, n, target);
    let id = format!("delta;p={p};n={n};target={target};alpha={alpha}");
    let mut result = StudyResult::default();
    result.push(&id, "S", "Quantile", quantile, 0.0)?;
    result.push(&id, "S", "PowerLaw", reference, 0.0)?;
    emit(&result, &plan)
}
