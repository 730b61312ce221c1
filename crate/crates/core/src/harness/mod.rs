//! Monte Carlo experiments over partitions and regularization strengths.
//!
//! A sweep holds one truth vector `x` fixed (drawn from the sweep seed) and,
//! for every cell and trial, draws a fresh training matrix `A` and test matrix
//! `A'` from a stream keyed by the cell's block sizes and the trial index.
//! Cells with the same sizes therefore share draws across `lambda`, and any
//! cell can be rerun on its own. Trials run on a rayon pool; results are
//! collected in (cell, trial) order and reduced serially, so output does not
//! depend on the number of workers.

mod output;
mod stats;
mod validate;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{derive_stream_id, sample_gaussian_matrix, Matrix, RngStream, Vector};
use crate::problem::{generate_instance, PartitionSpec, ProblemInstance};
use crate::solver::{CocoaSolver, SnapshotSchedule, SolverConfig};
use crate::theory::{predict_first_iteration_error, ExtendedReal};

pub use output::{read_csv, write_csv, SweepResult, CSV_HEADER};
pub use stats::{CompensatedSum, MeanEstimate};
pub use validate::{
    validate_centralized_baseline, validate_closed_form, validate_projection_expectation,
    validate_recursion, validate_wishart_moment, ValidationReport, WishartMode,
};

/// Stream-id domain tags.
const TAG_TRUTH: u64 = 0x7472_7574_68;
const TAG_TRIAL: u64 = 0x7472_6961_6c;

/// Share of failed trials above which a cell is flagged.
pub const FAILURE_FLAG_RATIO: f64 = 0.10;

/// `(1/n) ||A (x - x_hat)||^2`.
pub fn training_error(instance: &ProblemInstance, x_hat: &Vector) -> f64 {
    let diff = &instance.x_true - x_hat;
    (&instance.a * diff).norm_squared() / instance.n() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationError {
    /// `(1/m) ||A' (x - x_hat)||^2` over the `m` test rows.
    pub empirical: f64,
    /// `||x - x_hat||^2`, the expectation over a fresh Gaussian regressor.
    pub population: f64,
}

pub fn generalization_error(x_true: &Vector, x_hat: &Vector, test_matrix: &Matrix) -> GeneralizationError {
    let diff = x_true - x_hat;
    GeneralizationError {
        empirical: (test_matrix * &diff).norm_squared() / test_matrix.nrows() as f64,
        population: diff.norm_squared(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub n: usize,
    pub p: usize,
    #[serde(rename = "K", alias = "k")]
    pub k: usize,
    /// Block sizes per cell; empty means every `p_1` in `1..p` for `K = 2`, the balanced split otherwise.
    pub partition_grid: Vec<Vec<usize>>,
    pub lambdas: Vec<f64>,
    #[serde(rename = "N", alias = "trials")]
    pub trials: usize,
    #[serde(rename = "T", alias = "iterations")]
    pub iterations: usize,
    /// Rows of the test matrix; `None` means `10 n`.
    pub test_rows: Option<usize>,
    pub seed: u64,
    pub noise_std: f64,
    pub record_first_iteration: bool,
    /// Fill the wall-time column; off by default so identical seeds give identical files.
    pub record_timing: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n: 50,
            p: 150,
            k: 2,
            partition_grid: Vec::new(),
            lambdas: vec![0.0],
            trials: 100,
            iterations: 200,
            test_rows: None,
            seed: 1,
            noise_std: 0.0,
            record_first_iteration: false,
            record_timing: false,
        }
    }
}

impl SweepConfig {
    pub fn test_rows(&self) -> usize {
        self.test_rows.unwrap_or(10 * self.n)
    }

    pub fn grid(&self) -> Result<Vec<PartitionSpec>> {
        if self.partition_grid.is_empty() {
            if self.k == 2 && self.p >= 2 {
                return (1..self.p)
                    .map(|p1| PartitionSpec::new(vec![p1, self.p - p1]))
                    .collect();
            }
            return Ok(vec![PartitionSpec::balanced(self.p, self.k)?]);
        }
        self.partition_grid
            .iter()
            .map(|sizes| crate::problem::make_partition(self.p, self.k, Some(sizes)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(Error::InvalidArgument("n and p must be at least 1".into()));
        }
        if self.k == 0 || self.k > self.p {
            return Err(Error::InvalidArgument(format!(
                "K must be in 1..={}, got {}",
                self.p, self.k
            )));
        }
        if self.trials == 0 {
            return Err(Error::InvalidArgument("N (trials) must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("T (iterations) must be at least 1".into()));
        }
        if self.test_rows() == 0 {
            return Err(Error::InvalidArgument("test_rows must be at least 1".into()));
        }
        if self.lambdas.is_empty() {
            return Err(Error::InvalidArgument("at least one lambda is required".into()));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be finite and non-negative, got {l}"
            )));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise_std must be finite and non-negative, got {}",
                self.noise_std
            )));
        }
        self.grid().map(|_| ())
    }

    /// The truth vector `x ~ N(0, I_p)` shared by every cell of the sweep.
    pub fn truth(&self) -> Vector {
        sweep_truth(self.seed, self.p)
    }
}

pub fn sweep_truth(seed: u64, p: usize) -> Vector {
    RngStream::new(seed, derive_stream_id(&[TAG_TRUTH])).gaussian_vector(p)
}

/// Stream for one trial of the cell with the given sizes.
pub fn trial_stream(seed: u64, spec: &PartitionSpec, trial: usize) -> RngStream {
    let mut parts = vec![TAG_TRIAL, spec.num_blocks() as u64];
    parts.extend(spec.sizes().iter().map(|&s| s as u64));
    parts.push(trial as u64);
    RngStream::new(seed, derive_stream_id(&parts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub p: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub sizes: PartitionSpec,
    pub lambda: f64,
    #[serde(rename = "N")]
    pub trials: usize,
    #[serde(rename = "T")]
    pub iterations: usize,
    pub seed: u64,
    pub empirical_first_iter: Option<f64>,
    pub first_iter_std_error: Option<f64>,
    /// Only defined for `lambda = 0` without noise.
    pub theory_first_iter: Option<ExtendedReal>,
    pub gen_error: Option<f64>,
    pub gen_error_std_error: Option<f64>,
    pub population_gen_error: Option<f64>,
    pub train_error: Option<f64>,
    pub failures: usize,
    pub flagged: bool,
    pub wall_time_ms: Option<f64>,
}

impl SweepRow {
    pub fn first_iter_estimate(&self) -> Option<MeanEstimate> {
        Some(MeanEstimate {
            mean: self.empirical_first_iter?,
            std_error: self.first_iter_std_error?,
            count: self.trials - self.failures,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SweepKind {
    FirstIteration,
    Converged,
}

#[derive(Debug, Clone, Copy, Default)]
struct TrialOutcome {
    first_iter: Option<f64>,
    gen_error: Option<f64>,
    population: Option<f64>,
    train_error: Option<f64>,
    elapsed_ms: f64,
    failed: bool,
}

/// One trial of one partition, run for every `lambda` of the sweep on the same draws.
fn run_trial(
    config: &SweepConfig,
    kind: SweepKind,
    spec: &PartitionSpec,
    truth: &Vector,
    trial: usize,
) -> Result<Vec<TrialOutcome>> {
    let started = Instant::now();
    let mut rng = trial_stream(config.seed, spec, trial);
    let instance = generate_instance(config.n, config.p, truth, config.noise_std, &mut rng)?;
    let test = match kind {
        SweepKind::Converged => Some(sample_gaussian_matrix(config.test_rows(), config.p, &mut rng)),
        SweepKind::FirstIteration => None,
    };
    let iterations = match kind {
        SweepKind::FirstIteration => 1,
        SweepKind::Converged => config.iterations,
    };
    let shared_ms = started.elapsed().as_secs_f64() * 1e3;

    let mut outcomes = Vec::with_capacity(config.lambdas.len());
    for &lambda in &config.lambdas {
        let solve_started = Instant::now();
        let solver_config = SolverConfig::new(lambda, iterations, spec.num_blocks())?
            .with_snapshots(SnapshotSchedule::At(vec![1]));
        let trace = match CocoaSolver::new(&instance, spec, &solver_config) {
            Ok(solver) => solver.run(),
            Err(e) if e.is_numerical() => {
                outcomes.push(TrialOutcome {
                    failed: true,
                    elapsed_ms: shared_ms + solve_started.elapsed().as_secs_f64() * 1e3,
                    ..TrialOutcome::default()
                });
                continue;
            }
            Err(e) => return Err(e),
        };

        let mut outcome = TrialOutcome::default();
        if kind == SweepKind::FirstIteration || config.record_first_iteration {
            let first = trace.at(1).expect("t = 1 is always recorded");
            outcome.first_iter = Some((truth - first).norm_squared());
        }
        if let Some(test) = &test {
            let x_hat = &trace.final_state.x_hat;
            let gen = generalization_error(truth, x_hat, test);
            outcome.gen_error = Some(gen.empirical);
            outcome.population = Some(gen.population);
            outcome.train_error = Some(training_error(&instance, x_hat));
        }
        outcome.elapsed_ms = shared_ms + solve_started.elapsed().as_secs_f64() * 1e3;
        outcomes.push(outcome);
    }
    Ok(outcomes)
}

fn run_sweep(config: &SweepConfig, kind: SweepKind, jobs: usize) -> Result<SweepResult> {
    config.validate()?;
    let truth = config.truth();
    let specs = config.grid()?;
    let tasks: Vec<(usize, usize)> = (0..specs.len())
        .flat_map(|c| (0..config.trials).map(move |t| (c, t)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    // indexed by [spec][trial][lambda]
    let outcomes: Vec<Vec<TrialOutcome>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(c, t)| run_trial(config, kind, &specs[c], &truth, t))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut rows = Vec::with_capacity(specs.len() * config.lambdas.len());
    for (spec, per_trial) in specs.iter().zip(outcomes.chunks(config.trials)) {
        for (l, &lambda) in config.lambdas.iter().enumerate() {
            let cell: Vec<TrialOutcome> = per_trial.iter().map(|o| o[l]).collect();
            rows.push(summarize_cell(config, kind, spec, lambda, &truth, &cell)?);
        }
    }
    Ok(SweepResult {
        config: config.clone(),
        x_true: truth.iter().copied().collect(),
        rows,
    })
}

fn summarize_cell(
    config: &SweepConfig,
    kind: SweepKind,
    spec: &PartitionSpec,
    lambda: f64,
    truth: &Vector,
    outcomes: &[TrialOutcome],
) -> Result<SweepRow> {
    let collect = |f: fn(&TrialOutcome) -> Option<f64>| -> Vec<f64> {
        outcomes.iter().filter(|o| !o.failed).filter_map(f).collect()
    };
    let first = MeanEstimate::from_samples(&collect(|o| o.first_iter));
    let gen = MeanEstimate::from_samples(&collect(|o| o.gen_error));
    let population = MeanEstimate::from_samples(&collect(|o| o.population));
    let train = MeanEstimate::from_samples(&collect(|o| o.train_error));
    let failures = outcomes.iter().filter(|o| o.failed).count();

    let theory_applies = lambda == 0.0 && config.noise_std == 0.0;
    let theory = if theory_applies && (kind == SweepKind::FirstIteration || config.record_first_iteration) {
        Some(predict_first_iteration_error(truth, spec, config.n)?.epsilon_g)
    } else {
        None
    };
    let wall = config
        .record_timing
        .then(|| outcomes.iter().map(|o| o.elapsed_ms).collect::<CompensatedSum>().total());

    Ok(SweepRow {
        n: config.n,
        p: config.p,
        k: spec.num_blocks(),
        sizes: spec.clone(),
        lambda: lambda,
        trials: config.trials,
        iterations: match kind {
            SweepKind::FirstIteration => 1,
            SweepKind::Converged => config.iterations,
        },
        seed: config.seed,
        empirical_first_iter: first.map(|e| e.mean),
        first_iter_std_error: first.map(|e| e.std_error),
        theory_first_iter: theory,
        gen_error: gen.map(|e| e.mean),
        gen_error_std_error: gen.map(|e| e.std_error),
        population_gen_error: population.map(|e| e.mean),
        train_error: train.map(|e| e.mean),
        failures,
        flagged: failures as f64 > FAILURE_FLAG_RATIO * outcomes.len() as f64,
        wall_time_ms: wall,
    })
}

/// First CoCoA round per cell against the closed-form prediction.
pub fn run_first_iteration_experiment(config: &SweepConfig, jobs: usize) -> Result<SweepResult> {
    if !config.record_first_iteration {
        return Err(Error::InvalidArgument(
            "first-iteration experiment requires record_first_iteration".into(),
        ));
    }
    run_sweep(config, SweepKind::FirstIteration, jobs)
}

/// `T` rounds per cell; reports mean training and generalization error.
pub fn run_convergence_sweep(config: &SweepConfig, jobs: usize) -> Result<SweepResult> {
    run_sweep(config, SweepKind::Converged, jobs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SweepConfig {
        SweepConfig {
            n: 6,
            p: 12,
            k: 2,
            partition_grid: vec![vec![3, 9], vec![6, 6], vec![9, 3]],
            lambdas: vec![0.0],
            trials: 8,
            iterations: 30,
            record_first_iteration: true,
            ..SweepConfig::default()
        }
    }

    #[test]
    fn error_metric_examples() {
        let x = Vector::from_vec(vec![1.0, 2.0, -1.0]);
        let inst = generate_instance(4, 3, &x, 0.0, &mut RngStream::new(1, 1)).unwrap();
        assert_eq!(training_error(&inst, &x), 0.0);
        let zero_fit = training_error(&inst, &Vector::zeros(3));
        assert!((zero_fit - inst.y.norm_squared() / 4.0).abs() < 1e-12);

        let test = sample_gaussian_matrix(30, 3, &mut RngStream::new(1, 2));
        let g = generalization_error(&x, &x, &test);
        assert_eq!(g.empirical, 0.0);
        assert_eq!(g.population, 0.0);
    }

    #[test]
    fn test_error_concentrates_around_population() {
        let mut rng = RngStream::new(5, 5);
        let x = rng.gaussian_vector(150);
        let x_hat = rng.gaussian_vector(150);
        let mut inside = 0;
        for trial in 0..50 {
            let test = sample_gaussian_matrix(500, 150, &mut RngStream::new(6, trial));
            let g = generalization_error(&x, &x_hat, &test);
            let ratio = g.empirical / g.population;
            if (0.8..=1.25).contains(&ratio) {
                inside += 1;
            }
        }
        assert!(inside >= 48, "{inside}");
    }

    #[test]
    fn config_defaults_follow_the_reference_setup() {
        let cfg = SweepConfig::default();
        assert_eq!((cfg.n, cfg.p, cfg.k, cfg.trials, cfg.iterations), (50, 150, 2, 100, 200));
        assert_eq!(cfg.test_rows(), 500);
        assert_eq!(cfg.grid().unwrap().len(), 149);
    }

    #[test]
    fn config_json_uses_short_names() {
        let cfg: SweepConfig =
            serde_json::from_str(r#"{"n": 10, "p": 20, "K": 2, "N": 5, "T": 7, "lambdas": [0, 1]}"#).unwrap();
        assert_eq!((cfg.n, cfg.p, cfg.k, cfg.trials, cfg.iterations), (10, 20, 2, 5, 7));
        assert!(serde_json::from_str::<SweepConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_config();
        cfg.partition_grid.push(vec![5, 5]);
        assert!(cfg.validate().is_err());
        let mut cfg = small_config();
        cfg.lambdas = vec![-1.0];
        assert!(cfg.validate().is_err());
        let mut cfg = small_config();
        cfg.trials = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn first_round_errors_are_recorded() {
        let cfg = small_config();
        let result = run_first_iteration_experiment(&cfg, 1).unwrap();
        assert_eq!(result.rows.len(), 3);
        for row in &result.rows {
            assert!(row.empirical_first_iter.unwrap() > 0.0);
            assert_eq!(row.iterations, 1);
            assert!(row.gen_error.is_none());
        }
    }

    #[test]
    fn zero_truth_gives_zero_first_round_error() {
        let cfg = small_config();
        let spec = PartitionSpec::new(vec![6, 6]).unwrap();
        let out = run_trial(&cfg, SweepKind::FirstIteration, &spec, &Vector::zeros(12), 0).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].first_iter.unwrap() < 1e-20);
    }

    #[test]
    fn adding_lambdas_leaves_existing_cells_unchanged() {
        let cfg = small_config();
        let alone = run_convergence_sweep(&cfg, 1).unwrap();
        let wider = SweepConfig {
            lambdas: vec![0.5, 0.0],
            ..cfg
        };
        let both = run_convergence_sweep(&wider, 1).unwrap();
        assert_eq!(both.rows.len(), 6);
        let zero: Vec<&SweepRow> = both.rows.iter().filter(|r| r.lambda == 0.0).collect();
        for (a, b) in alone.rows.iter().zip(zero) {
            assert_eq!(a, b);
        }
        assert_eq!(both.rows[0].lambda, 0.5);
        assert_eq!(both.rows[0].sizes, both.rows[1].sizes);
    }

    #[test]
    fn sweeps_are_thread_count_invariant() {
        let cfg = small_config();
        let a = run_convergence_sweep(&cfg, 1).unwrap();
        let b = run_convergence_sweep(&cfg, 3).unwrap();
        assert_eq!(a, b);
        for row in &a.rows {
            // 30 rounds leave the off-critical cells converging linearly
            assert!(row.train_error.unwrap() < 1e-12);
            assert_eq!(row.failures, 0);
            assert!(!row.flagged);
            assert!(row.theory_first_iter.is_some());
        }
    }

    #[test]
    fn first_iteration_requires_flag() {
        let mut cfg = small_config();
        cfg.record_first_iteration = false;
        assert!(run_first_iteration_experiment(&cfg, 1).is_err());
    }
}
