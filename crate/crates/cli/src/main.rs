//! `repsim`: null-calibrated representational similarity from the command line.
//!
//! Exit codes: 0 success, 1 a `--check` assertion failed, 2 usage error,
//! 3 data error.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use repsim::calibration::{calibrate_aggregate, calibrate_scalar, multiplicity_adjust, AdjustMethod, Aggregator, CalibrationConfig};
use repsim::io::{load_matrix, load_stack, InputInfo, ReportResult, RunReport};
use repsim::metrics::{Bandwidth, Distance, MetricParams};
use repsim::synthlab::Experiment;
use repsim::{Error, MetricSpec};

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;

#[derive(Parser)]
#[command(name = "repsim", version, about = "Null-calibrated representational similarity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scalar calibration of one metric on a pair of matrices.
    Calibrate(CalibrateArgs),
    /// Aggregation-aware calibration over two layer stacks.
    CalibrateAgg(CalibrateAggArgs),
    /// Run a synthetic experiment and write its table.
    Experiment(ExperimentArgs),
    /// Multiplicity-adjust a file of p-values (one per line).
    Adjust(AdjustArgs),
}

#[derive(Args)]
struct MetricArgs {
    /// Metric name, e.g. cka-linear, mknn, rsa.
    #[arg(long)]
    metric: String,
    /// Neighborhood size for mknn, cycle-knn and cknna.
    #[arg(long)]
    k: Option<usize>,
    /// RBF bandwidth: a positive number, `median` or `median:<multiplier>`.
    #[arg(long)]
    sigma: Option<String>,
    /// Dissimilarity for rsa and neighborhood metrics.
    #[arg(long)]
    distance: Option<String>,
    /// Spectral energy kept by svcca.
    #[arg(long)]
    variance_keep: Option<f64>,
    #[arg(long, default_value_t = 199)]
    permutations: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    format: OutputFormat,
    /// Leave the null scores out of the report.
    #[arg(long)]
    no_nulls: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    #[command(flatten)]
    metric: MetricArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregatorName {
    Max,
    Mean,
    Topk,
}

#[derive(Args)]
struct CalibrateAggArgs {
    #[arg(long)]
    stack_a: PathBuf,
    #[arg(long)]
    stack_b: PathBuf,
    #[arg(long, value_enum, default_value_t = AggregatorName::Max)]
    aggregator: AggregatorName,
    /// Number of top entries averaged by `--aggregator topk`.
    #[arg(long)]
    topk: Option<usize>,
    #[command(flatten)]
    metric: MetricArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Json,
    Csv,
}

#[derive(Args)]
struct ExperimentArgs {
    /// One of nulldrift, guarantees, depth, budget, variants.
    name: String,
    /// JSON configuration; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    format: OutputFormat,
    /// Evaluate the experiment's built-in assertions.
    #[arg(long)]
    check: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodName {
    Bh,
    Holm,
}

#[derive(Args)]
struct AdjustArgs {
    /// One p-value per line; `-` reads stdin.
    #[arg(long)]
    pvalues: PathBuf,
    #[arg(long, value_enum)]
    method: MethodName,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Parameter errors detected before touching data are usage errors;
/// everything else is a data error.
impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(_) => Failure::usage(e.to_string()),
            _ => Failure::data(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(f) = configure_threads() {
        eprintln!("error: {f}");
        return ExitCode::from(f.code);
    }
    let outcome = match cli.command {
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::CalibrateAgg(a) => cmd_calibrate_agg(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Adjust(a) => cmd_adjust(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("REPSIM_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Failure::usage(format!("REPSIM_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::usage(format!("cannot configure thread pool: {e}")))
}

fn metric_spec(args: &MetricArgs) -> CliResult<MetricSpec> {
    let params = MetricParams {
        k: args.k,
        bandwidth: args.sigma.as_deref().map(str::parse::<Bandwidth>).transpose()?,
        distance: args.distance.as_deref().map(str::parse::<Distance>).transpose()?,
        variance_keep: args.variance_keep,
    };
    Ok(MetricSpec::from_name(&args.metric, &params)?)
}

fn calibration_config(args: &MetricArgs) -> CliResult<CalibrationConfig> {
    let config = CalibrationConfig::new(args.permutations, args.alpha, args.seed);
    config.validate()?;
    Ok(config)
}

fn emit(text: &str, out: Option<&Path>) -> CliResult<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Failure::data(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_report(report: RunReport, args: &MetricArgs) -> CliResult<u8> {
    let report = if args.no_nulls { report.without_nulls() } else { report };
    let text = match args.format {
        OutputFormat::Json => report.to_json_string()?,
        OutputFormat::Csv => report.to_csv_string()?,
    };
    emit(&text, args.out.as_deref())?;
    Ok(0)
}

fn cmd_calibrate(args: CalibrateArgs) -> CliResult<u8> {
    let spec = metric_spec(&args.metric)?;
    let config = calibration_config(&args.metric)?;
    let x = load_matrix(&args.x)?;
    let y = load_matrix(&args.y)?;
    let start = Instant::now();
    let result = calibrate_scalar(&spec, &x, &y, &config).map_err(|e| Failure::data(e.to_string()))?;
    let report = RunReport::new(
        vec![InputInfo::matrix("x", &args.x, &x), InputInfo::matrix("y", &args.y, &y)],
        spec,
        ReportResult::Scalar(result),
        start.elapsed().as_secs_f64(),
    );
    emit_report(report, &args.metric)
}

fn cmd_calibrate_agg(args: CalibrateAggArgs) -> CliResult<u8> {
    let spec = metric_spec(&args.metric)?;
    let config = calibration_config(&args.metric)?;
    let aggregator = match (args.aggregator, args.topk) {
        (AggregatorName::Max, _) => Aggregator::Max,
        (AggregatorName::Mean, _) => Aggregator::Mean,
        (AggregatorName::Topk, None) => return Err(Failure::usage("--aggregator topk needs --topk")),
        (AggregatorName::Topk, Some(0)) => return Err(Failure::usage("--topk must be at least 1")),
        (AggregatorName::Topk, Some(k)) => Aggregator::TopKMean { k },
    };
    let a = load_stack(&args.stack_a)?;
    let b = load_stack(&args.stack_b)?;
    aggregator.validate(a.len() * b.len())?;
    let start = Instant::now();
    let result =
        calibrate_aggregate(&spec, &a, &b, aggregator, &config).map_err(|e| Failure::data(e.to_string()))?;
    let report = RunReport::new(
        vec![
            InputInfo::stack("stack_a", &args.stack_a, &a),
            InputInfo::stack("stack_b", &args.stack_b, &b),
        ],
        spec,
        ReportResult::Aggregate(result),
        start.elapsed().as_secs_f64(),
    );
    emit_report(report, &args.metric)
}

fn cmd_experiment(args: ExperimentArgs) -> CliResult<u8> {
    let mut experiment = Experiment::default_for(&args.name)?;
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        experiment = Experiment::from_json(&args.name, &text)
            .map_err(|e| Failure::usage(format!("invalid config {}: {e}", path.display())))?;
    }
    if let Some(trials) = args.trials {
        experiment.set_trials(trials);
    }
    if let Some(seed) = args.seed {
        experiment.set_seed(seed);
    }
    let table = experiment.run()?;
    let text = match args.format {
        OutputFormat::Csv => table.to_csv_string()?,
        OutputFormat::Json => table.to_json_string()? + "\n",
    };
    emit(&text, args.out.as_deref())?;
    if !args.check {
        return Ok(0);
    }
    let outcomes = experiment.checks(&table);
    for o in &outcomes {
        // Keep stdout clean for the table when it is not written to a file.
        if args.out.is_some() {
            println!("{o}");
        } else {
            eprintln!("{o}");
        }
    }
    Ok(if outcomes.iter().all(|o| o.passed) {
        0
    } else {
        EXIT_CHECK_FAILED
    })
}

/// Rounds to 12 significant digits and prints the shortest representation.
fn format_p(p: f64) -> String {
    let rounded: f64 = format!("{p:.11e}").parse().expect("formatted float parses");
    rounded.to_string()
}

fn cmd_adjust(args: AdjustArgs) -> CliResult<u8> {
    let text = if args.pvalues.as_os_str() == "-" {
        io::read_to_string(io::stdin())
    } else {
        fs::read_to_string(&args.pvalues)
    }
    .map_err(|e| Failure::data(format!("{}: {e}", args.pvalues.display())))?;
    let mut p_values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let p: f64 = line.parse().map_err(|_| {
            Failure::data(format!("{} line {}: {line:?} is not a number", args.pvalues.display(), i + 1))
        })?;
        if !(p > 0.0 && p <= 1.0) {
            return Err(Failure::data(format!(
                "{} line {}: p-value {line} is outside (0, 1]",
                args.pvalues.display(),
                i + 1
            )));
        }
        p_values.push(p);
    }
    if p_values.is_empty() {
        return Err(Failure::data(format!("{}: no p-values", args.pvalues.display())));
    }
    let method = match args.method {
        MethodName::Bh => AdjustMethod::Bh,
        MethodName::Holm => AdjustMethod::Holm,
    };
    let adjusted = multiplicity_adjust(&p_values, method).map_err(|e| Failure::data(e.to_string()))?;
    let mut out = String::new();
    for p in adjusted {
        out.push_str(&format_p(p));
        out.push('\n');
    }
    print!("{out}");
    Ok(0)
}
