//! CoCoA over column blocks, its closed-form recursion, and the centralized baseline.
//!
//! Each round is synchronous: every node computes its update from the same
//! shared estimate `v_bar`, and only then are the local estimates and the
//! average refreshed. The average is advanced incrementally,
//! `v_bar += sum_k A_k dx_k`, summed in block order so the result does not
//! depend on how node updates are scheduled.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{default_rel_tol, pseudoinverse, regularized_pinv, Matrix, Vector};
use crate::problem::{check_len, slice_block, PartitionSpec, ProblemInstance};

/// Which iterates a run keeps.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotSchedule {
    /// `t = 0`, `t = 1` and `t = T`.
    #[default]
    Endpoints,
    /// Every iterate.
    Full,
    /// Every `m`-th iterate, plus `t = T`.
    Every(usize),
    /// An explicit list; entries past `T` are ignored.
    At(Vec<usize>),
}

impl SnapshotSchedule {
    pub fn iterations(&self, total: usize) -> Vec<usize> {
        let mut ts: Vec<usize> = match self {
            SnapshotSchedule::Endpoints => vec![0, 1.min(total), total],
            SnapshotSchedule::Full => (0..=total).collect(),
            SnapshotSchedule::Every(m) => {
                let step = (*m).max(1);
                (0..=total).step_by(step).chain(std::iter::once(total)).collect()
            }
            SnapshotSchedule::At(list) => list.iter().copied().filter(|&t| t <= total).collect(),
        };
        ts.sort_unstable();
        ts.dedup();
        ts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub lambda: f64,
    pub iterations: usize,
    sigma_prime: f64,
    tau: f64,
    /// Singular-value cutoff; `None` picks `max(rows, cols) * eps` per matrix.
    pub rel_tol: Option<f64>,
    pub snapshots: SnapshotSchedule,
}

impl SolverConfig {
    /// `sigma' = K` and `tau = 1` are fixed by the number of nodes.
    pub fn new(lambda: f64, iterations: usize, nodes: usize) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lambda must be finite and non-negative, got {lambda}"
            )));
        }
        if iterations == 0 {
            return Err(Error::InvalidArgument("iteration count must be at least 1".into()));
        }
        if nodes == 0 {
            return Err(Error::InvalidArgument("at least one node is required".into()));
        }
        Ok(Self {
            lambda,
            iterations,
            sigma_prime: nodes as f64,
            tau: 1.0,
            rel_tol: None,
            snapshots: SnapshotSchedule::default(),
        })
    }

    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = Some(rel_tol);
        self
    }

    pub fn with_snapshots(mut self, snapshots: SnapshotSchedule) -> Self {
        self.snapshots = snapshots;
        self
    }

    pub fn sigma_prime(&self) -> f64 {
        self.sigma_prime
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    fn nodes(&self) -> usize {
        self.sigma_prime as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub t: usize,
    pub x_hat: Vector,
    /// Local estimates of `y`, one per node.
    pub v: Vec<Vector>,
    pub v_bar: Vector,
}

impl SolverState {
    pub fn zero(n: usize, spec: &PartitionSpec) -> Self {
        Self {
            t: 0,
            x_hat: Vector::zeros(spec.total()),
            v: vec![Vector::zeros(n); spec.num_blocks()],
            v_bar: Vector::zeros(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: usize,
    pub x_hat: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveTrace {
    pub snapshots: Vec<Snapshot>,
    pub final_state: SolverState,
}

impl SolveTrace {
    pub fn at(&self, t: usize) -> Option<&Vector> {
        self.snapshots.iter().find(|s| s.t == t).map(|s| &s.x_hat)
    }
}

fn cutoff(rel_tol: Option<f64>, m: &Matrix) -> f64 {
    rel_tol.unwrap_or_else(|| default_rel_tol(m.nrows(), m.ncols()))
}

/// Local update of one node, straight from the normal equations of its subproblem:
/// `dx_k = -(K A_k^T A_k + lambda I)^+ (lambda x_k - A_k^T (y - v_bar))`.
pub fn local_update(
    a_k: &Matrix,
    y: &Vector,
    v_bar: &Vector,
    x_hat_k: &Vector,
    lambda: f64,
    nodes: usize,
    rel_tol: Option<f64>,
) -> Result<Vector> {
    check_len("local_update: y", a_k.nrows(), y.len())?;
    check_len("local_update: v_bar", a_k.nrows(), v_bar.len())?;
    check_len("local_update: x_hat_k", a_k.ncols(), x_hat_k.len())?;
    let gram = a_k.transpose() * a_k * nodes as f64;
    let rhs = x_hat_k * lambda - a_k.transpose() * (y - v_bar);
    let inverse = regularized_pinv(&gram, lambda, cutoff(rel_tol, &gram))?;
    Ok(-(inverse * rhs))
}

/// Per-node operator prepared once per run, since `A_k` does not change between rounds.
#[derive(Debug, Clone)]
enum NodeOperator {
    /// `lambda = 0`: `dx_k = (1/K) A_k^+ (y - v_bar)`; holds `(1/K) A_k^+`.
    Interpolating(Matrix),
    /// `lambda > 0`: holds `(K A_k^T A_k + lambda I)^+`.
    Regularized(Matrix),
}

#[derive(Debug, Clone)]
pub struct CocoaSolver<'a> {
    instance: &'a ProblemInstance,
    spec: &'a PartitionSpec,
    config: &'a SolverConfig,
    blocks: Vec<Matrix>,
    operators: Vec<NodeOperator>,
}

impl<'a> CocoaSolver<'a> {
    pub fn new(
        instance: &'a ProblemInstance,
        spec: &'a PartitionSpec,
        config: &'a SolverConfig,
    ) -> Result<Self> {
        check_len("cocoa: partition width", instance.p(), spec.total())?;
        check_len("cocoa: node count", config.nodes(), spec.num_blocks())?;
        let k = spec.num_blocks() as f64;
        let mut blocks = Vec::with_capacity(spec.num_blocks());
        let mut operators = Vec::with_capacity(spec.num_blocks());
        for idx in 0..spec.num_blocks() {
            let a_k = slice_block(&instance.a, spec, idx)?;
            let op = if config.lambda == 0.0 {
                let pinv = pseudoinverse(&a_k, cutoff(config.rel_tol, &a_k))?;
                NodeOperator::Interpolating(pinv / k)
            } else {
                let gram = a_k.transpose() * &a_k * k;
                NodeOperator::Regularized(regularized_pinv(
                    &gram,
                    config.lambda,
                    cutoff(config.rel_tol, &gram),
                )?)
            };
            blocks.push(a_k);
            operators.push(op);
        }
        Ok(Self {
            instance,
            spec,
            config,
            blocks,
            operators,
        })
    }

    pub fn initial_state(&self) -> SolverState {
        SolverState::zero(self.instance.n(), self.spec)
    }

    /// One synchronous round.
    pub fn step(&self, state: &mut SolverState) {
        let residual = &self.instance.y - &state.v_bar;
        let deltas: Vec<Vector> = self
            .operators
            .iter()
            .zip(self.spec.ranges())
            .zip(&self.blocks)
            .map(|((op, range), a_k)| match op {
                NodeOperator::Interpolating(scaled_pinv) => scaled_pinv * &residual,
                NodeOperator::Regularized(inverse) => {
                    let rhs = state.x_hat.rows_range(range) * self.config.lambda
                        - a_k.tr_mul(&residual);
                    -(inverse * rhs)
                }
            })
            .collect();

        let k = self.spec.num_blocks() as f64;
        let previous = state.v_bar.clone();
        for ((delta, range), (a_k, v_k)) in deltas
            .iter()
            .zip(self.spec.ranges())
            .zip(self.blocks.iter().zip(state.v.iter_mut()))
        {
            let mut x_k = state.x_hat.rows_range_mut(range);
            x_k += delta;
            let contribution = a_k * delta;
            *v_k = &previous + &contribution * k;
            state.v_bar += contribution;
        }
        state.t += 1;

        debug_assert!({
            let averaged = state.v.iter().fold(Vector::zeros(previous.len()), |acc, v| acc + v) / k;
            let scale: f64 = 1.0 + state.v.iter().map(|v| v.norm()).sum::<f64>();
            (averaged - &state.v_bar).norm() <= 1e-9 * scale
        });
    }

    pub fn run(&self) -> SolveTrace {
        let total = self.config.iterations;
        let wanted = self.config.snapshots.iterations(total);
        let mut wanted_iter = wanted.iter().peekable();
        let mut state = self.initial_state();
        let mut snapshots = Vec::with_capacity(wanted.len());
        loop {
            if wanted_iter.peek() == Some(&&state.t) {
                wanted_iter.next();
                snapshots.push(Snapshot {
                    t: state.t,
                    x_hat: state.x_hat.clone(),
                });
            }
            if state.t == total {
                break;
            }
            self.step(&mut state);
        }
        SolveTrace {
            snapshots,
            final_state: state,
        }
    }
}

/// One round from `state`, preparing the node operators on the fly.
pub fn cocoa_step(
    state: &SolverState,
    instance: &ProblemInstance,
    spec: &PartitionSpec,
    config: &SolverConfig,
) -> Result<SolverState> {
    check_len("cocoa_step: x_hat", spec.total(), state.x_hat.len())?;
    check_len("cocoa_step: local estimates", spec.num_blocks(), state.v.len())?;
    check_len("cocoa_step: v_bar", instance.n(), state.v_bar.len())?;
    let solver = CocoaSolver::new(instance, spec, config)?;
    let mut next = state.clone();
    solver.step(&mut next);
    Ok(next)
}

/// `T` rounds from the zero state.
pub fn cocoa_run(
    instance: &ProblemInstance,
    spec: &PartitionSpec,
    config: &SolverConfig,
) -> Result<SolveTrace> {
    Ok(CocoaSolver::new(instance, spec, config)?.run())
}

/// `A_bar = [A_1^+; ...; A_K^+]`, a `p x n` matrix.
pub fn stacked_block_pinv(a: &Matrix, spec: &PartitionSpec, rel_tol: Option<f64>) -> Result<Matrix> {
    check_len("stacked_block_pinv: columns", spec.total(), a.ncols())?;
    let mut stacked = Matrix::zeros(a.ncols(), a.nrows());
    for (k, range) in spec.ranges().enumerate() {
        let a_k = slice_block(a, spec, k)?;
        let pinv = pseudoinverse(&a_k, cutoff(rel_tol, &a_k))?;
        stacked.rows_range_mut(range).copy_from(&pinv);
    }
    Ok(stacked)
}

/// `x^{t+1} = (I - (1/K) A_bar A) x^t + (1/K) A_bar y`, valid for `lambda = 0`.
pub fn closed_form_step(
    x_hat: &Vector,
    a_bar: &Matrix,
    a: &Matrix,
    y: &Vector,
    nodes: usize,
) -> Result<Vector> {
    let (n, p) = a.shape();
    check_len("closed_form_step: x_hat", p, x_hat.len())?;
    check_len("closed_form_step: y", n, y.len())?;
    check_len("closed_form_step: A_bar rows", p, a_bar.nrows())?;
    check_len("closed_form_step: A_bar cols", n, a_bar.ncols())?;
    if nodes == 0 {
        return Err(Error::InvalidArgument("at least one node is required".into()));
    }
    let k = nodes as f64;
    let transition = Matrix::identity(p, p) - a_bar * a / k;
    Ok(transition * x_hat + a_bar * y / k)
}

/// Iterates of the closed-form recursion from zero, `x^0 ..= x^T`.
pub fn closed_form_trajectory(
    a: &Matrix,
    y: &Vector,
    spec: &PartitionSpec,
    iterations: usize,
    rel_tol: Option<f64>,
) -> Result<Vec<Vector>> {
    let a_bar = stacked_block_pinv(a, spec, rel_tol)?;
    let mut out = Vec::with_capacity(iterations + 1);
    let mut x = Vector::zeros(a.ncols());
    out.push(x.clone());
    for _ in 0..iterations {
        x = closed_form_step(&x, &a_bar, a, y, spec.num_blocks())?;
        out.push(x.clone());
    }
    Ok(out)
}

/// Minimum-norm least squares on the full matrix, `A^+ y`.
pub fn centralized_ls(a: &Matrix, y: &Vector, rel_tol: Option<f64>) -> Result<Vector> {
    check_len("centralized_ls: y", a.nrows(), y.len())?;
    Ok(pseudoinverse(a, cutoff(rel_tol, a))? * y)
}
