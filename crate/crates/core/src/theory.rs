//! Closed-form generalization error of the first CoCoA round (`lambda = 0`,
//! noiseless, Gaussian design) and the quantities it is built from.
//!
//! Block sizes in the critical band `{n-1, n, n+1}` make the relevant Wishart
//! moments diverge. That outcome is carried as [`ExtendedReal::Infinite`]
//! rather than an IEEE infinity so reports can tell "the theory diverges"
//! apart from overflow.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, Mul};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::numerics::Vector;
use crate::problem::PartitionSpec;

/// A non-negative real or `+inf`, with `0 * inf = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtendedReal {
    Finite(f64),
    Infinite,
}

impl ExtendedReal {
    pub const ZERO: ExtendedReal = ExtendedReal::Finite(0.0);

    /// Panics on negative or non-finite input.
    pub fn finite(value: f64) -> Self {
        assert!(
            value.is_finite() && value >= 0.0,
            "extended reals hold finite non-negative values, got {value}"
        );
        ExtendedReal::Finite(value)
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, ExtendedReal::Infinite)
    }

    pub fn value(self) -> Option<f64> {
        match self {
            ExtendedReal::Finite(v) => Some(v),
            ExtendedReal::Infinite => None,
        }
    }

    /// IEEE view, for plotting and comparisons.
    pub fn to_f64(self) -> f64 {
        self.value().unwrap_or(f64::INFINITY)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim();
        if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("+inf") {
            return Ok(ExtendedReal::Infinite);
        }
        let v: f64 = t
            .parse()
            .map_err(|_| Error::Format(format!("not an extended real: {text:?}")))?;
        if v.is_finite() && v >= 0.0 {
            Ok(ExtendedReal::Finite(v))
        } else if v == f64::INFINITY {
            Ok(ExtendedReal::Infinite)
        } else {
            Err(Error::Format(format!("extended reals are non-negative: {text:?}")))
        }
    }
}

impl Add for ExtendedReal {
    type Output = ExtendedReal;

    fn add(self, rhs: Self) -> Self {
        match (self, rhs) {
            (ExtendedReal::Finite(a), ExtendedReal::Finite(b)) => ExtendedReal::Finite(a + b),
            _ => ExtendedReal::Infinite,
        }
    }
}

impl Mul for ExtendedReal {
    type Output = ExtendedReal;

    fn mul(self, rhs: Self) -> Self {
        use ExtendedReal::*;
        match (self, rhs) {
            (Finite(a), Finite(b)) => Finite(a * b),
            (Finite(z), Infinite) | (Infinite, Finite(z)) if z == 0.0 => Finite(0.0),
            _ => Infinite,
        }
    }
}

impl Sum for ExtendedReal {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ExtendedReal::ZERO, Add::add)
    }
}

impl PartialOrd for ExtendedReal {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.to_f64().partial_cmp(&other.to_f64())
    }
}

impl fmt::Display for ExtendedReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtendedReal::Finite(v) => match f.precision() {
                Some(prec) => write!(f, "{v:.prec$e}"),
                None => write!(f, "{v}"),
            },
            ExtendedReal::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for ExtendedReal {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ExtendedReal::Finite(v) => serializer.serialize_f64(*v),
            ExtendedReal::Infinite => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for ExtendedReal {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Number(f64),
            Text(String),
        }
        let parsed = match Repr::deserialize(deserializer)? {
            Repr::Number(v) => ExtendedReal::parse(&v.to_string()),
            Repr::Text(s) => ExtendedReal::parse(&s),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

/// `p_k` lies in `{n-1, n, n+1}`.
pub fn is_critical(p_k: usize, n: usize) -> bool {
    p_k.abs_diff(n) <= 1
}

/// `gamma_k = r_min / (r_max - r_min - 1)` outside the critical band, `+inf` inside.
pub fn gamma_coefficient(p_k: usize, n: usize) -> ExtendedReal {
    if is_critical(p_k, n) {
        return ExtendedReal::Infinite;
    }
    let r_min = p_k.min(n);
    let r_max = p_k.max(n);
    ExtendedReal::finite(r_min as f64 / (r_max - r_min - 1) as f64)
}

/// `gamma'` with `E[(A_k A_k^T)^+] = gamma' I_n` for an `n x p_k` Gaussian block.
pub fn wishart_pinv_coefficient(p_k: usize, n: usize) -> ExtendedReal {
    if p_k > n + 1 {
        ExtendedReal::finite(1.0 / (p_k - n - 1) as f64)
    } else if p_k + 1 < n {
        ExtendedReal::finite(p_k as f64 / (n * (n - p_k - 1)) as f64)
    } else {
        ExtendedReal::Infinite
    }
}

/// Weight of `||x_k||^2` in the first-round error; `k` is zero-based.
pub fn alpha_coefficient(k: usize, spec: &PartitionSpec, n: usize) -> Result<ExtendedReal> {
    let nodes = spec.num_blocks();
    let p_k = *spec.sizes().get(k).ok_or(Error::BlockIndex {
        index: k,
        blocks: nodes,
    })?;
    let kf = nodes as f64;
    let own = kf * kf + (1.0 - 2.0 * kf) * (p_k.min(n) as f64 / p_k as f64);
    let others: ExtendedReal = spec
        .sizes()
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != k)
        .map(|(_, &p_i)| gamma_coefficient(p_i, n))
        .sum();
    Ok(match others {
        ExtendedReal::Finite(g) => ExtendedReal::finite(((own + g) / (kf * kf)).max(0.0)),
        ExtendedReal::Infinite => ExtendedReal::Infinite,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryPrediction {
    pub n: usize,
    pub p: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub sizes: Vec<usize>,
    pub gamma: Vec<ExtendedReal>,
    pub alpha: Vec<ExtendedReal>,
    #[serde(rename = "epsilon_G")]
    pub epsilon_g: ExtendedReal,
    pub block_norms_sq: Vec<f64>,
}

impl TheoryPrediction {
    /// Zero-based indices of blocks whose size is in the critical band.
    pub fn critical_blocks(&self) -> Vec<usize> {
        self.gamma
            .iter()
            .enumerate()
            .filter(|(_, g)| g.is_infinite())
            .map(|(i, _)| i)
            .collect()
    }
}

/// First-round expected error for a known truth vector.
pub fn predict_first_iteration_error(
    x_true: &Vector,
    spec: &PartitionSpec,
    n: usize,
) -> Result<TheoryPrediction> {
    let norms = spec.block_norms_sq(x_true)?;
    predict_from_block_norms(&norms, spec, n)
}

/// First-round expected error from per-block squared norms `||x_k||^2`.
pub fn predict_from_block_norms(
    block_norms_sq: &[f64],
    spec: &PartitionSpec,
    n: usize,
) -> Result<TheoryPrediction> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let gamma: Vec<ExtendedReal> = spec.sizes().iter().map(|&p_k| gamma_coefficient(p_k, n)).collect();
    let alpha = (0..spec.num_blocks())
        .map(|k| alpha_coefficient(k, spec, n))
        .collect::<Result<Vec<_>>>()?;
    let epsilon_g = weighted_sum(&alpha, block_norms_sq)?;
    Ok(TheoryPrediction {
        n,
        p: spec.total(),
        k: spec.num_blocks(),
        sizes: spec.sizes().to_vec(),
        gamma,
        alpha,
        epsilon_g,
        block_norms_sq: block_norms_sq.to_vec(),
    })
}

fn weighted_sum(alpha: &[ExtendedReal], weights: &[f64]) -> Result<ExtendedReal> {
    if alpha.len() != weights.len() {
        return Err(Error::Dimension {
            context: "per-block weights",
            expected: alpha.len(),
            actual: weights.len(),
        });
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "per-block errors must be finite and non-negative, got {w}"
        )));
    }
    Ok(alpha
        .iter()
        .zip(weights)
        .map(|(&a, &w)| a * ExtendedReal::Finite(w))
        .sum())
}

/// One step of the large-`t` recursion: `sum_k alpha_k e_k`, with `0 * inf = 0`.
pub fn recurse_error(block_errors: &[f64], spec: &PartitionSpec, n: usize) -> Result<ExtendedReal> {
    let alpha = (0..spec.num_blocks())
        .map(|k| alpha_coefficient(k, spec, n))
        .collect::<Result<Vec<_>>>()?;
    weighted_sum(&alpha, block_errors)
}

/// Caveat attached to every multi-step extrapolation.
pub const MULTI_STEP_CAVEAT: &str = "multi-step values iterate the per-block map e_k <- alpha_k e_k; \
the one-step recursion assumes the iterate is independent of the data, which leaves an \
unquantified gap for large t";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extrapolation {
    /// `per_block[t][k]`, starting from the supplied errors at `t = 0`.
    pub per_block: Vec<Vec<ExtendedReal>>,
    pub total: Vec<ExtendedReal>,
    pub approximate: bool,
    pub caveat: String,
}

/// Iterates `e_k^{t+1} = alpha_k e_k^t` for `steps` rounds.
pub fn extrapolate_block_errors(
    initial: &[f64],
    spec: &PartitionSpec,
    n: usize,
    steps: usize,
) -> Result<Extrapolation> {
    let alpha = (0..spec.num_blocks())
        .map(|k| alpha_coefficient(k, spec, n))
        .collect::<Result<Vec<_>>>()?;
    weighted_sum(&alpha, initial)?;
    let mut current: Vec<ExtendedReal> = initial.iter().map(|&e| ExtendedReal::finite(e)).collect();
    let mut per_block = vec![current.clone()];
    let mut total = vec![current.iter().copied().sum()];
    for _ in 0..steps {
        current = current.iter().zip(&alpha).map(|(&e, &a)| a * e).collect();
        total.push(current.iter().copied().sum());
        per_block.push(current.clone());
    }
    Ok(Extrapolation {
        per_block,
        total,
        approximate: true,
        caveat: MULTI_STEP_CAVEAT.to_string(),
    })
}

/// Default distance kept between every block size and `n`.
pub const DEFAULT_MARGIN: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub sizes: Vec<usize>,
    pub spread: usize,
    pub feasible: bool,
    #[serde(rename = "epsilon_G")]
    pub epsilon_g: ExtendedReal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionAdvice {
    pub n: usize,
    pub p: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub margin: usize,
    /// False when no spec keeps every block outside the margin; `spec` is then the best violator.
    pub feasible: bool,
    pub spec: PartitionSpec,
    /// Scored with `||x_k||^2 = p_k`, the mean for a standard normal truth.
    pub prediction: TheoryPrediction,
    pub candidates: Vec<CandidateScore>,
    pub neighbors: Vec<CandidateScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionAssessment {
    pub margin: usize,
    pub sizes: Vec<usize>,
    /// Zero-based blocks with `|p_k - n| <= margin`.
    pub within_margin: Vec<usize>,
    /// Zero-based blocks in `{n-1, n, n+1}`.
    pub critical: Vec<usize>,
    pub prediction: TheoryPrediction,
}

impl PartitionAssessment {
    pub fn acceptable(&self) -> bool {
        self.within_margin.is_empty() && self.critical.is_empty()
    }
}

fn proxy_score(spec: &PartitionSpec, n: usize) -> Result<TheoryPrediction> {
    let norms: Vec<f64> = spec.sizes().iter().map(|&s| s as f64).collect();
    predict_from_block_norms(&norms, spec, n)
}

fn spread(sizes: &[usize]) -> usize {
    sizes.iter().max().unwrap() - sizes.iter().min().unwrap()
}

fn outside_margin(p_k: usize, n: usize, margin: usize) -> bool {
    p_k.abs_diff(n) > margin
}

/// Checks a requested partition against the margin and the critical band.
pub fn check_partition(spec: &PartitionSpec, n: usize, margin: usize) -> Result<PartitionAssessment> {
    let prediction = proxy_score(spec, n)?;
    let sizes = spec.sizes();
    Ok(PartitionAssessment {
        margin,
        sizes: sizes.to_vec(),
        within_margin: (0..sizes.len()).filter(|&k| !outside_margin(sizes[k], n, margin)).collect(),
        critical: (0..sizes.len()).filter(|&k| is_critical(sizes[k], n)).collect(),
        prediction,
    })
}

fn balanced_split(total: usize, parts: usize) -> Vec<usize> {
    (0..parts)
        .map(|i| total / parts + usize::from(i < total % parts))
        .collect()
}

/// The most balanced split with `j` blocks below `n - margin` and the rest above `n + margin`.
fn split_around(n: usize, p: usize, k: usize, margin: usize, j: usize) -> Option<Vec<usize>> {
    let high_min = n + margin + 1;
    let low_max = n.checked_sub(margin + 1).filter(|&l| l >= 1);
    let highs = k - j;
    if j > 0 && low_max.is_none() {
        return None;
    }
    let low_max = low_max.unwrap_or(0);
    if j + highs * high_min > p {
        return None;
    }
    let low_total = if highs == 0 {
        if p > j * low_max {
            return None;
        }
        p
    } else {
        (j * low_max).min(p - highs * high_min)
    };
    if low_total < j {
        return None;
    }
    let mut sizes = balanced_split(low_total, j);
    sizes.extend(balanced_split(p - low_total, highs));
    Some(sizes)
}

/// Picks the most balanced partition whose blocks all stay more than `margin` away from `n`.
///
/// Candidates are scored by the first-round prediction with `||x_k||^2 = p_k`;
/// the score breaks ties between equally balanced candidates. When nothing is
/// feasible the balanced split is returned with `feasible = false`.
pub fn advise_partition(n: usize, p: usize, k: usize, margin: usize) -> Result<PartitionAdvice> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let balanced = PartitionSpec::balanced(p, k)?;

    let mut candidates = Vec::new();
    for j in 0..=k {
        if let Some(sizes) = split_around(n, p, k, margin, j) {
            let spec = PartitionSpec::new(sizes.clone())?;
            candidates.push(CandidateScore {
                spread: spread(&sizes),
                feasible: true,
                epsilon_g: proxy_score(&spec, n)?.epsilon_g,
                sizes,
            });
        }
    }
    candidates.sort_by(|a, b| {
        a.spread
            .cmp(&b.spread)
            .then(a.epsilon_g.partial_cmp(&b.epsilon_g).unwrap_or(std::cmp::Ordering::Equal))
    });
    candidates.dedup_by(|a, b| a.sizes == b.sizes);

    let (feasible, spec) = match candidates.first() {
        Some(best) => (true, PartitionSpec::new(best.sizes.clone())?),
        None => {
            candidates.push(CandidateScore {
                sizes: balanced.sizes().to_vec(),
                spread: spread(balanced.sizes()),
                feasible: false,
                epsilon_g: proxy_score(&balanced, n)?.epsilon_g,
            });
            (false, balanced)
        }
    };
    let prediction = proxy_score(&spec, n)?;
    let neighbors = neighbor_scores(&spec, n, margin)?;
    Ok(PartitionAdvice {
        n,
        p,
        k,
        margin,
        feasible,
        spec,
        prediction,
        candidates,
        neighbors,
    })
}

/// Specs reached by moving up to `max(margin, 1)` columns between two blocks.
fn neighbor_scores(spec: &PartitionSpec, n: usize, margin: usize) -> Result<Vec<CandidateScore>> {
    let sizes = spec.sizes();
    let mut out: Vec<CandidateScore> = Vec::new();
    for from in 0..sizes.len() {
        for to in 0..sizes.len() {
            if from == to {
                continue;
            }
            for d in 1..=margin.max(1) {
                if sizes[from] <= d {
                    break;
                }
                let mut moved = sizes.to_vec();
                moved[from] -= d;
                moved[to] += d;
                if out.iter().any(|c| c.sizes == moved) {
                    continue;
                }
                let candidate = PartitionSpec::new(moved.clone())?;
                out.push(CandidateScore {
                    spread: spread(&moved),
                    feasible: moved.iter().all(|&s| outside_margin(s, n, margin)),
                    epsilon_g: proxy_score(&candidate, n)?.epsilon_g,
                    sizes: moved,
                });
            }
        }
    }
    Ok(out)
}
