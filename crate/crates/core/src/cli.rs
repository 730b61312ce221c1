//! The `distgen` command line.
//!
//! Human-readable summaries go to stdout; `--out` writes CSV or JSON that
//! `show --from-file` (and `--config` for sweeps) reads back.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::Error;
use crate::harness::{
    generalization_error, read_csv, run_convergence_sweep, run_first_iteration_experiment, sweep_truth,
    training_error, trial_stream, validate_centralized_baseline, validate_closed_form,
    validate_projection_expectation, validate_recursion, validate_wishart_moment, write_csv, SweepConfig,
    SweepResult, SweepRow, ValidationReport, WishartMode,
};
use crate::numerics::{derive_stream_id, sample_gaussian_matrix, RngStream};
use crate::problem::{generate_instance, make_partition, InstanceDocument, PartitionSpec, ProblemInstance};
use crate::solver::{CocoaSolver, SnapshotSchedule, SolverConfig};
use crate::theory::{
    advise_partition, check_partition, extrapolate_block_errors, predict_from_block_norms, ExtendedReal,
    PartitionAdvice, PartitionAssessment, TheoryPrediction, DEFAULT_MARGIN,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

const SOLVE_CSV_HEADER: [&str; 3] = ["t", "error", "train_error"];
const TAG_PROJECTION_Z: u64 = 0x7a76_6563;
const TAG_SOLVE_TEST: u64 = 0x7465_7374;

#[derive(Debug, Parser)]
#[command(name = "distgen", version, about = "CoCoA over column partitions: solver, error theory and Monte Carlo sweeps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run CoCoA on one random instance and report its errors
    Solve(SolveArgs),
    /// First-round error predicted by the theory for a partition
    Predict(PredictArgs),
    /// Recommend block sizes that stay clear of the critical band
    Advise(AdviseArgs),
    /// Sweep partitions and average the first-round error
    SweepFirstIter(SweepArgs),
    /// Sweep partitions and average errors after T rounds
    SweepConverged(SweepArgs),
    /// Monte Carlo checks of the identities behind the theory
    #[command(subcommand)]
    Validate(ValidateCommand),
    /// Summarize a file written by --out or --save-instance
    Show(ShowArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Write machine-readable results to this path
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Output format; inferred from the --out extension when omitted
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Args)]
pub struct ShapeArgs {
    /// Rows of A
    #[arg(long, default_value_t = 50, value_parser = positive)]
    pub n: usize,
    /// Columns of A
    #[arg(long, default_value_t = 150, value_parser = positive)]
    pub p: usize,
    /// Number of nodes (ignored when --sizes is given)
    #[arg(long, default_value_t = 2, value_parser = positive)]
    pub k: usize,
    /// Block sizes, comma separated; defaults to the balanced split
    #[arg(long, value_delimiter = ',', value_parser = positive)]
    pub sizes: Option<Vec<usize>>,
}

impl ShapeArgs {
    fn spec(&self) -> Result<PartitionSpec, CliError> {
        make_partition(self.p, self.k, self.sizes.as_deref()).map_err(|e| CliError::usage("--sizes/--k", e))
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub shape: ShapeArgs,
    /// Ridge parameter
    #[arg(long, default_value_t = 0.0, value_parser = non_negative, allow_negative_numbers = true)]
    pub lambda: f64,
    /// CoCoA rounds
    #[arg(long, default_value_t = 200)]
    pub iters: usize,
    /// Seed for the truth vector and the instance
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Trial index; reproduces that trial of a sweep cell with the same sizes
    #[arg(long, default_value_t = 0)]
    pub trial: usize,
    /// Standard deviation of additive label noise
    #[arg(long, default_value_t = 0.0, value_parser = non_negative, allow_negative_numbers = true)]
    pub noise_std: f64,
    /// Test rows for the empirical generalization error [default: 10n]
    #[arg(long, value_parser = positive)]
    pub test_rows: Option<usize>,
    /// Load the instance from a JSON document instead of sampling it
    #[arg(long, value_name = "PATH")]
    pub instance: Option<PathBuf>,
    /// Save the sampled instance as JSON
    #[arg(long, value_name = "PATH")]
    pub save_instance: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub shape: ShapeArgs,
    /// Per-block ||x_k||^2; defaults to the Gaussian proxy ||x_k||^2 = p_k
    #[arg(long, value_delimiter = ',', value_parser = non_negative, allow_negative_numbers = true)]
    pub block_norms: Option<Vec<f64>>,
    /// Also extrapolate the per-block recursion this many rounds
    #[arg(long, default_value_t = 0)]
    pub steps: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct AdviseArgs {
    #[command(flatten)]
    pub shape: ShapeArgs,
    /// Minimum distance |p_k - n| for an acceptable block
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    pub margin: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Sweep configuration, or a results JSON to replay its configuration
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Rows of A [default: 50]
    #[arg(long, value_parser = positive)]
    pub n: Option<usize>,
    /// Columns of A [default: 150]
    #[arg(long, value_parser = positive)]
    pub p: Option<usize>,
    /// Number of nodes [default: 2]
    #[arg(long, value_parser = positive)]
    pub k: Option<usize>,
    /// Run a single partition, comma separated [default: every p1 in 1..p for K = 2]
    #[arg(long, value_delimiter = ',', value_parser = positive)]
    pub sizes: Option<Vec<usize>>,
    /// Partitions to run, e.g. "75|75;50|100"
    #[arg(long, conflicts_with = "sizes")]
    pub grid: Option<String>,
    /// Ridge parameters, comma separated [default: 0]
    #[arg(long, value_delimiter = ',', value_parser = non_negative, allow_negative_numbers = true)]
    pub lambda: Option<Vec<f64>>,
    /// Trials per cell [default: 100]
    #[arg(long, value_parser = positive)]
    pub trials: Option<usize>,
    /// CoCoA rounds for sweep-converged [default: 200]
    #[arg(long, value_parser = positive)]
    pub iters: Option<usize>,
    /// Sweep seed [default: 1]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Test rows [default: 10n]
    #[arg(long, value_parser = positive)]
    pub test_rows: Option<usize>,
    /// Label noise standard deviation [default: 0]
    #[arg(long, value_parser = non_negative, allow_negative_numbers = true)]
    pub noise_std: Option<f64>,
    /// Also record the first-round error in sweep-converged
    #[arg(long)]
    pub first_iter: bool,
    /// Fill the wall_time_ms column (makes output run-dependent)
    #[arg(long)]
    pub timing: bool,
    /// Worker threads
    #[arg(long, default_value_t = default_jobs(), value_parser = positive)]
    pub jobs: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Subcommand)]
pub enum ValidateCommand {
    /// Iterative CoCoA against its closed-form linear recursion
    ClosedForm {
        #[command(flatten)]
        shape: ShapeArgs,
        #[arg(long, default_value_t = 50)]
        iters: usize,
        #[arg(long, default_value_t = 10, value_parser = positive)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// One-step error recursion after a warm-up
    Recursion {
        #[command(flatten)]
        shape: ShapeArgs,
        /// Warm-up rounds before the step being predicted
        #[arg(long, default_value_t = 5)]
        warmup: usize,
        #[arg(long, default_value_t = 500, value_parser = positive)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Expected projection z^T E[C^+ C] z for a Gaussian C
    Projection {
        #[arg(long, default_value_t = 50, value_parser = positive)]
        n: usize,
        /// Columns of C
        #[arg(long, default_value_t = 75, value_parser = positive)]
        pc: usize,
        #[arg(long, default_value_t = 2000, value_parser = positive)]
        trials: usize,
        /// Seed for C and for z ~ N(0, I)
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Mean of (A A^T)^+ against gamma' I
    Wishart {
        #[arg(long, default_value_t = 50, value_parser = positive)]
        n: usize,
        /// Columns of A
        #[arg(long, default_value_t = 75, value_parser = positive)]
        pk: usize,
        #[arg(long, default_value_t = 2000, value_parser = positive)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Report running means for a critical size instead of asserting
        #[arg(long)]
        demo: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Centralized least squares against (1 - n/p) ||x||^2
    Baseline {
        #[arg(long, default_value_t = 50, value_parser = positive)]
        n: usize,
        #[arg(long, default_value_t = 150, value_parser = positive)]
        p: usize,
        #[arg(long, default_value_t = 100, value_parser = positive)]
        trials: usize,
        /// Test rows [default: 10n]
        #[arg(long, value_parser = positive)]
        test_rows: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Debug, Args)]
pub struct ShowArgs {
    /// CSV or JSON written by this tool
    #[arg(long, value_name = "PATH")]
    pub from_file: PathBuf,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        _ => Err(format!("expected an integer >= 1, got {s:?}")),
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
        _ => Err(format!("expected a finite number >= 0, got {s:?}")),
    }
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(flag: &str, err: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_USAGE,
            message: format!("{flag}: {err}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        let code = match &err {
            Error::NumericalFailure { .. } => EXIT_NUMERICAL,
            Error::Infeasible { .. } => EXIT_VALIDATION,
            _ => EXIT_USAGE,
        };
        Self {
            code,
            message: err.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        Error::from(err).into()
    }
}

type CliResult = Result<i32, CliError>;

/// Scientific notation with six significant digits.
pub fn sci(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.5e}")
    }
}

fn sci_ext(v: ExtendedReal) -> String {
    match v {
        ExtendedReal::Finite(v) => sci(v),
        ExtendedReal::Infinite => "inf".into(),
    }
}

fn list<T: Copy>(values: &[T], f: impl Fn(T) -> String) -> String {
    format!("({})", values.iter().map(|&v| f(v)).collect::<Vec<_>>().join(", "))
}

fn resolve_format(output: &OutputArgs, default: Format) -> Format {
    output.format.unwrap_or_else(|| match output.out.as_ref().and_then(|p| p.extension()) {
        Some(ext) if ext.eq_ignore_ascii_case("json") => Format::Json,
        Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
        _ => default,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(Error::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Emits `value` as JSON; commands without a tabular form reject `--format csv`.
fn emit_json_only<T: Serialize>(output: &OutputArgs, value: &T) -> Result<(), CliError> {
    let Some(path) = &output.out else { return Ok(()) };
    if resolve_format(output, Format::Json) == Format::Csv {
        return Err(CliError::usage("--format", "this command writes JSON only (valid: json)"));
    }
    write_json(path, value)
}

pub fn run() -> i32 {
    let stdout = std::io::stdout();
    run_from(std::env::args_os(), &mut stdout.lock())
}

/// Parses `args` (program name first) and executes the command, returning the exit code.
pub fn run_from<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            if code == 0 {
                let _ = write!(out, "{}", e.render());
            } else {
                let _ = e.print();
            }
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn execute(command: Command, out: &mut dyn Write) -> CliResult {
    match command {
        Command::Solve(args) => solve(args, out),
        Command::Predict(args) => predict(args, out),
        Command::Advise(args) => advise(args, out),
        Command::SweepFirstIter(args) => sweep(args, true, out),
        Command::SweepConverged(args) => sweep(args, false, out),
        Command::Validate(cmd) => validate(cmd, out),
        Command::Show(args) => show(&args.from_file, out),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: usize,
    /// `||x - x_hat^t||^2`
    pub error: f64,
    pub train_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveReport {
    pub n: usize,
    pub p: usize,
    pub sizes: Vec<usize>,
    pub lambda: f64,
    pub iterations: usize,
    pub x_norm_sq: f64,
    pub train_error: f64,
    pub gen_error: f64,
    pub population_gen_error: f64,
    pub trace: Vec<TracePoint>,
}

fn solve(args: SolveArgs, out: &mut dyn Write) -> CliResult {
    let format = resolve_format(&args.output, Format::Json);
    // a sampled instance continues its trial stream for the test matrix, as the sweeps do
    let (instance, spec, mut rng) = match &args.instance {
        Some(path) => {
            let instance = ProblemInstance::load_json(path)?;
            let spec = make_partition(instance.p(), args.shape.k, args.shape.sizes.as_deref())
                .map_err(|e| CliError::usage("--sizes/--k", e))?;
            let rng = RngStream::new(args.seed, derive_stream_id(&[TAG_SOLVE_TEST, args.trial as u64]));
            (instance, spec, rng)
        }
        None => {
            let spec = args.shape.spec()?;
            let truth = sweep_truth(args.seed, args.shape.p);
            let mut rng = trial_stream(args.seed, &spec, args.trial);
            let instance = generate_instance(args.shape.n, args.shape.p, &truth, args.noise_std, &mut rng)?;
            (instance, spec, rng)
        }
    };
    if let Some(path) = &args.save_instance {
        instance.save_json(path)?;
    }
    let config = SolverConfig::new(args.lambda, args.iters, spec.num_blocks())
        .map_err(|e| CliError::usage("--lambda/--iters", e))?
        .with_snapshots(SnapshotSchedule::Full);
    let trace = CocoaSolver::new(&instance, &spec, &config)?.run();

    let test_rows = args.test_rows.unwrap_or(10 * instance.n());
    let test = sample_gaussian_matrix(test_rows, instance.p(), &mut rng);
    let x_hat = &trace.final_state.x_hat;
    let gen = generalization_error(&instance.x_true, x_hat, &test);
    let report = SolveReport {
        n: instance.n(),
        p: instance.p(),
        sizes: spec.sizes().to_vec(),
        lambda: args.lambda,
        iterations: args.iters,
        x_norm_sq: instance.x_true.norm_squared(),
        train_error: training_error(&instance, x_hat),
        gen_error: gen.empirical,
        population_gen_error: gen.population,
        trace: trace
            .snapshots
            .iter()
            .map(|s| TracePoint {
                t: s.t,
                error: (&instance.x_true - &s.x_hat).norm_squared(),
                train_error: training_error(&instance, &s.x_hat),
            })
            .collect(),
    };
    print_solve(&report, out)?;
    if let Some(path) = &args.output.out {
        match format {
            Format::Json => write_json(path, &report)?,
            Format::Csv => write_trace_csv(path, &report.trace)?,
        }
    }
    Ok(EXIT_OK)
}

fn print_solve(report: &SolveReport, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "n = {}, p = {}, sizes = {:?}, lambda = {}", report.n, report.p, report.sizes, sci(report.lambda))?;
    writeln!(out, "||x||^2              = {}", sci(report.x_norm_sq))?;
    if let Some(first) = report.trace.iter().find(|p| p.t == 1) {
        writeln!(out, "error after round 1  = {}", sci(first.error))?;
    }
    writeln!(out, "rounds               = {}", report.iterations)?;
    writeln!(out, "training error       = {}", sci(report.train_error))?;
    writeln!(out, "generalization error = {} (test rows), {} (population)", sci(report.gen_error), sci(report.population_gen_error))
}

fn write_trace_csv(path: &Path, trace: &[TracePoint]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
    w.write_record(SOLVE_CSV_HEADER).map_err(Error::from)?;
    for p in trace {
        w.write_record([p.t.to_string(), format!("{:e}", p.error), format!("{:e}", p.train_error)])
            .map_err(Error::from)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictReport {
    pub prediction: TheoryPrediction,
    pub proxy_norms: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extrapolation: Option<crate::theory::Extrapolation>,
}

fn predict(args: PredictArgs, out: &mut dyn Write) -> CliResult {
    let spec = args.shape.spec()?;
    let proxy = args.block_norms.is_none();
    let norms = args
        .block_norms
        .clone()
        .unwrap_or_else(|| spec.sizes().iter().map(|&s| s as f64).collect());
    let prediction =
        predict_from_block_norms(&norms, &spec, args.shape.n).map_err(|e| CliError::usage("--block-norms", e))?;
    let extrapolation = if args.steps > 0 {
        Some(extrapolate_block_errors(&norms, &spec, args.shape.n, args.steps)?)
    } else {
        None
    };
    let report = PredictReport {
        prediction,
        proxy_norms: proxy,
        extrapolation,
    };
    print_predict(&report, out)?;
    emit_json_only(&args.output, &report)?;
    Ok(EXIT_OK)
}

fn print_prediction(pred: &TheoryPrediction, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "n = {}, p = {}, K = {}, sizes = {:?}", pred.n, pred.p, pred.k, pred.sizes)?;
    writeln!(out, "gamma   = {}", list(&pred.gamma, sci_ext))?;
    writeln!(out, "alpha   = {}", list(&pred.alpha, sci_ext))?;
    writeln!(out, "||x_k||^2 = {}", list(&pred.block_norms_sq, sci))?;
    writeln!(out, "epsilon_G = {}", sci_ext(pred.epsilon_g))?;
    for k in pred.critical_blocks() {
        writeln!(
            out,
            "critical: block {} has p_k = {} within one of n = {}",
            k + 1,
            pred.sizes[k],
            pred.n
        )?;
    }
    Ok(())
}

fn print_predict(report: &PredictReport, out: &mut dyn Write) -> std::io::Result<()> {
    print_prediction(&report.prediction, out)?;
    if report.proxy_norms {
        writeln!(out, "(block norms use the Gaussian proxy ||x_k||^2 = p_k)")?;
    }
    if let Some(ex) = &report.extrapolation {
        for (t, total) in ex.total.iter().enumerate() {
            writeln!(out, "t = {t:>3}  predicted error = {}", sci_ext(*total))?;
        }
        writeln!(out, "note: {}", ex.caveat)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AdviseReport {
    Advice(PartitionAdvice),
    Assessment(PartitionAssessment),
}

fn advise(args: AdviseArgs, out: &mut dyn Write) -> CliResult {
    let report = if args.shape.sizes.is_some() {
        let spec = args.shape.spec()?;
        AdviseReport::Assessment(check_partition(&spec, args.shape.n, args.margin)?)
    } else {
        AdviseReport::Advice(
            advise_partition(args.shape.n, args.shape.p, args.shape.k, args.margin)
                .map_err(|e| CliError::usage("--k/--p", e))?,
        )
    };
    print_advise(&report, out)?;
    emit_json_only(&args.output, &report)?;
    Ok(EXIT_OK)
}

fn print_advise(report: &AdviseReport, out: &mut dyn Write) -> std::io::Result<()> {
    match report {
        AdviseReport::Advice(a) => {
            if a.feasible {
                writeln!(out, "recommended sizes = {:?} (every |p_k - n| > {})", a.spec.sizes(), a.margin)?;
            } else {
                writeln!(
                    out,
                    "infeasible: no {}-block split of p = {} keeps every |p_k - n| > {}; balanced fallback {:?}",
                    a.k,
                    a.p,
                    a.margin,
                    a.spec.sizes()
                )?;
            }
            writeln!(out, "proxy epsilon_G   = {}", sci_ext(a.prediction.epsilon_g))?;
            for c in a.candidates.iter().take(5) {
                writeln!(
                    out,
                    "  candidate {:?}  spread {}  feasible {}  epsilon_G {}",
                    c.sizes,
                    c.spread,
                    c.feasible,
                    sci_ext(c.epsilon_g)
                )?;
            }
        }
        AdviseReport::Assessment(a) => {
            writeln!(out, "sizes = {:?}, margin = {}", a.sizes, a.margin)?;
            writeln!(out, "acceptable = {}", a.acceptable())?;
            for &k in &a.within_margin {
                writeln!(out, "  block {} (p_k = {}) is within the margin", k + 1, a.sizes[k])?;
            }
            writeln!(out, "proxy epsilon_G = {}", sci_ext(a.prediction.epsilon_g))?;
        }
    }
    Ok(())
}

fn parse_grid(text: &str) -> Result<Vec<Vec<usize>>, CliError> {
    text.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|cell| {
            PartitionSpec::parse_label(cell.trim())
                .map(|s| s.sizes().to_vec())
                .map_err(|e| CliError::usage("--grid", format!("{e} (expected e.g. \"75|75;50|100\")")))
        })
        .collect()
}

/// Reads a sweep configuration or the configuration embedded in a results file.
pub fn load_sweep_config(path: &Path) -> Result<SweepConfig, CliError> {
    let value: Value = serde_json::from_reader(BufReader::new(File::open(path)?)).map_err(Error::from)?;
    let config = match value.get("config") {
        Some(inner) if value.get("rows").is_some() => serde_json::from_value(inner.clone()),
        _ => serde_json::from_value(value),
    };
    config.map_err(|e| CliError::usage("--config", format!("{}: {e}", path.display())))
}

fn sweep(args: SweepArgs, first_iteration: bool, out: &mut dyn Write) -> CliResult {
    let mut config = match &args.config {
        Some(path) => load_sweep_config(path)?,
        None => SweepConfig::default(),
    };
    if let Some(v) = args.n {
        config.n = v;
    }
    if let Some(v) = args.p {
        config.p = v;
    }
    if let Some(v) = args.k {
        config.k = v;
    }
    if let Some(sizes) = &args.sizes {
        config.k = sizes.len();
        config.partition_grid = vec![sizes.clone()];
    }
    if let Some(grid) = &args.grid {
        config.partition_grid = parse_grid(grid)?;
        if let Some(first) = config.partition_grid.first() {
            config.k = first.len();
        }
    }
    if let Some(v) = &args.lambda {
        config.lambdas = v.clone();
    }
    if let Some(v) = args.trials {
        config.trials = v;
    }
    if let Some(v) = args.iters {
        config.iterations = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.test_rows {
        config.test_rows = Some(v);
    }
    if let Some(v) = args.noise_std {
        config.noise_std = v;
    }
    config.record_first_iteration |= first_iteration || args.first_iter;
    config.record_timing |= args.timing;
    config.validate().map_err(|e| CliError::usage("sweep configuration", e))?;

    let result = if first_iteration {
        run_first_iteration_experiment(&config, args.jobs)?
    } else {
        run_convergence_sweep(&config, args.jobs)?
    };
    print_sweep(&result.rows, out)?;
    if let Some(path) = &args.output.out {
        match resolve_format(&args.output, Format::Csv) {
            Format::Csv => write_csv(&result.rows, BufWriter::new(File::create(path)?))?,
            Format::Json => write_json(path, &result)?,
        }
    }
    Ok(EXIT_OK)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), sci)
}

fn print_sweep(rows: &[SweepRow], out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(
        out,
        "{:<12} {:>11} {:>12} {:>12} {:>12} {:>12} {:>12} {:>8}",
        "sizes", "lambda", "first_iter", "std_err", "theory", "gen_error", "train_error", "failures"
    )?;
    for r in rows {
        writeln!(
            out,
            "{:<12} {:>11} {:>12} {:>12} {:>12} {:>12} {:>12} {:>8}{}",
            r.sizes.label(),
            sci(r.lambda),
            opt(r.empirical_first_iter),
            opt(r.first_iter_std_error),
            r.theory_first_iter.map_or_else(|| "-".into(), sci_ext),
            opt(r.gen_error),
            opt(r.train_error),
            r.failures,
            if r.flagged { "  FLAGGED" } else { "" }
        )?;
    }
    Ok(())
}

fn validate(cmd: ValidateCommand, out: &mut dyn Write) -> CliResult {
    let (report, output) = match cmd {
        ValidateCommand::ClosedForm {
            shape,
            iters,
            trials,
            seed,
            output,
        } => {
            let spec = shape.spec()?;
            (validate_closed_form(shape.n, shape.p, &spec, iters, trials, seed)?, output)
        }
        ValidateCommand::Recursion {
            shape,
            warmup,
            trials,
            seed,
            output,
        } => {
            let spec = shape.spec()?;
            (validate_recursion(shape.n, shape.p, &spec, warmup, trials, seed)?, output)
        }
        ValidateCommand::Projection {
            n,
            pc,
            trials,
            seed,
            output,
        } => {
            let z = RngStream::new(seed, derive_stream_id(&[TAG_PROJECTION_Z, pc as u64])).gaussian_vector(pc);
            let report =
                validate_projection_expectation(n, pc, &z, trials, seed).map_err(|e| CliError::usage("--trials", e))?;
            (report, output)
        }
        ValidateCommand::Wishart {
            n,
            pk,
            trials,
            seed,
            demo,
            output,
        } => {
            let mode = if demo { WishartMode::DivergenceDemo } else { WishartMode::Assert };
            let report = validate_wishart_moment(n, pk, trials, seed, mode).map_err(|e| match e {
                Error::InvalidArgument(msg) => CliError::usage("--pk", msg),
                other => other.into(),
            })?;
            (report, output)
        }
        ValidateCommand::Baseline {
            n,
            p,
            trials,
            test_rows,
            seed,
            output,
        } => (
            validate_centralized_baseline(n, p, trials, test_rows.unwrap_or(10 * n), seed)?,
            output,
        ),
    };
    print_report(&report, out)?;
    emit_json_only(&output, &report)?;
    Ok(if report.passed() { EXIT_OK } else { EXIT_VALIDATION })
}

fn print_report(r: &ValidationReport, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "check          = {}", r.check)?;
    writeln!(out, "analytic       = {}", sci_ext(r.analytic))?;
    writeln!(out, "empirical mean = {}", sci(r.empirical_mean))?;
    writeln!(out, "std error      = {}", sci(r.std_error))?;
    writeln!(out, "trials         = {}", r.trials)?;
    for (key, value) in &r.details {
        match value.as_f64() {
            Some(v) if value.is_f64() => writeln!(out, "  {key} = {}", sci(v))?,
            _ => writeln!(out, "  {key} = {value}")?,
        }
    }
    let verdict = match r.pass {
        Some(true) => "PASS",
        Some(false) => "FAIL",
        None => "reported (not asserted)",
    };
    writeln!(out, "result         = {verdict}")
}

/// Anything `show` can read back.
#[derive(Debug, Clone, PartialEq)]
pub enum Document {
    SweepCsv(Vec<SweepRow>),
    SolveCsv(Vec<TracePoint>),
    Sweep(SweepResult),
    Solve(SolveReport),
    Predict(PredictReport),
    Advise(AdviseReport),
    Validation(ValidationReport),
    Instance(ProblemInstance),
}

/// Recognizes a file written by this tool.
pub fn read_document(path: &Path) -> Result<Document, CliError> {
    let text = std::fs::read_to_string(path)?;
    let unknown = || CliError::usage("--from-file", format!("{} is not a file written by distgen", path.display()));
    let Ok(value) = serde_json::from_str::<Value>(&text) else {
        let first = text.lines().next().unwrap_or_default();
        if first == SOLVE_CSV_HEADER.join(",") {
            let mut reader = csv::Reader::from_reader(text.as_bytes());
            let mut trace = Vec::new();
            for rec in reader.records() {
                let rec = rec.map_err(Error::from)?;
                let num = |i: usize| rec[i].parse::<f64>().map_err(|_| unknown());
                trace.push(TracePoint {
                    t: rec[0].parse().map_err(|_| unknown())?,
                    error: num(1)?,
                    train_error: num(2)?,
                });
            }
            return Ok(Document::SolveCsv(trace));
        }
        return read_csv(text.as_bytes()).map(Document::SweepCsv).map_err(|_| unknown());
    };
    if value.get("format").and_then(Value::as_str) == Some(crate::problem::INSTANCE_FORMAT) {
        let doc: InstanceDocument = serde_json::from_value(value).map_err(Error::from)?;
        return Ok(Document::Instance(ProblemInstance::from_document(doc)?));
    }
    if let Ok(v) = serde_json::from_value(value.clone()) {
        return Ok(Document::Sweep(v));
    }
    if let Ok(v) = serde_json::from_value(value.clone()) {
        return Ok(Document::Solve(v));
    }
    if let Ok(v) = serde_json::from_value(value.clone()) {
        return Ok(Document::Validation(v));
    }
    if let Ok(v) = serde_json::from_value(value.clone()) {
        return Ok(Document::Predict(v));
    }
    if let Ok(v) = serde_json::from_value(value) {
        return Ok(Document::Advise(v));
    }
    Err(unknown())
}

fn show(path: &Path, out: &mut dyn Write) -> CliResult {
    match read_document(path)? {
        Document::SweepCsv(rows) => print_sweep(&rows, out)?,
        Document::Sweep(result) => {
            writeln!(out, "sweep: n = {}, p = {}, seed = {}", result.config.n, result.config.p, result.config.seed)?;
            print_sweep(&result.rows, out)?;
        }
        Document::SolveCsv(trace) => {
            for p in &trace {
                writeln!(out, "t = {:>4}  error = {}  train_error = {}", p.t, sci(p.error), sci(p.train_error))?;
            }
        }
        Document::Solve(report) => print_solve(&report, out)?,
        Document::Predict(report) => print_predict(&report, out)?,
        Document::Advise(report) => print_advise(&report, out)?,
        Document::Validation(report) => {
            print_report(&report, out)?;
            if !report.passed() {
                return Ok(EXIT_VALIDATION);
            }
        }
        Document::Instance(instance) => {
            writeln!(out, "instance: n = {}, p = {}, noise_std = {}", instance.n(), instance.p(), sci(instance.noise_std))?;
            writeln!(out, "||x||^2 = {}, ||y||^2 = {}", sci(instance.x_true.norm_squared()), sci(instance.y.norm_squared()))?;
            if let Some((seed, stream)) = instance.origin {
                writeln!(out, "seed = {seed}, stream = {stream}")?;
            }
        }
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String) {
        let mut buf = Vec::new();
        let code = run_from(std::iter::once("distgen").chain(args.iter().copied()), &mut buf);
        (code, String::from_utf8(buf).unwrap())
    }

    #[test]
    fn predict_balanced() {
        let (code, text) = run(&["predict", "--n", "50", "--p", "150", "--sizes", "75,75"]);
        assert_eq!(code, 0);
        assert!(text.contains("gamma   = (2.08333e0, 2.08333e0)"), "{text}");
        assert!(text.contains("alpha   = (1.02083e0, 1.02083e0)"), "{text}");
        assert!(text.contains("epsilon_G = 1.53125e2"), "{text}");
    }

    #[test]
    fn predict_critical_block() {
        let (code, text) = run(&["predict", "--sizes", "50,100"]);
        assert_eq!(code, 0);
        assert!(text.contains("epsilon_G = inf"), "{text}");
        assert!(text.contains("critical: block 1 has p_k = 50"), "{text}");
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(&["predict", "--n", "0"]).0, EXIT_USAGE);
        assert_eq!(run(&["predict", "--sizes", "70,70"]).0, EXIT_USAGE);
        assert_eq!(run(&["solve", "--lambda", "-1"]).0, EXIT_USAGE);
        assert_eq!(run(&["frobnicate"]).0, EXIT_USAGE);
        assert_eq!(run(&["validate", "wishart", "--pk", "50"]).0, EXIT_USAGE);
    }

    #[test]
    fn help_lists_defaults() {
        let (code, text) = run(&["sweep-first-iter", "--help"]);
        assert_eq!(code, 0);
        for needle in ["[default: 50]", "[default: 150]", "[default: 2]", "[default: 100]", "[default: 200]", "[default: 10n]"] {
            assert!(text.contains(needle), "{needle} missing from\n{text}");
        }
    }

    #[test]
    fn sci_format() {
        assert_eq!(sci(153.125), "1.53125e2");
        assert_eq!(sci(2.5e-26), "2.50000e-26");
        assert_eq!(sci(f64::INFINITY), "inf");
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("75|75; 50|100").unwrap(), vec![vec![75, 75], vec![50, 100]]);
        assert!(parse_grid("75|x").is_err());
    }
}
