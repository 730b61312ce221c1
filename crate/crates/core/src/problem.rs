//! Linear-model instances `y = A x + w` and column partitions of the unknowns.

use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sample_gaussian_matrix, Matrix, RngStream, Vector};

/// Contiguous block sizes `(p_1, ..., p_K)` assigning the `p` unknowns to `K` nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct PartitionSpec {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl PartitionSpec {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::Partition("at least one block is required".into()));
        }
        if let Some(pos) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Partition(format!("block {} is empty", pos + 1)));
        }
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for &s in &sizes {
            offsets.push(acc);
            acc += s;
        }
        Ok(Self { sizes, offsets })
    }

    /// Balanced split: the first `p mod K` blocks get one extra column.
    pub fn balanced(p: usize, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Partition("K must be at least 1".into()));
        }
        if k > p {
            return Err(Error::Partition(format!(
                "K = {k} exceeds the number of unknowns p = {p}"
            )));
        }
        let base = p / k;
        let extra = p % k;
        Self::new((0..k).map(|i| base + usize::from(i < extra)).collect())
    }

    pub fn total(&self) -> usize {
        self.offsets.last().unwrap() + self.sizes.last().unwrap()
    }

    pub fn num_blocks(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Column range of block `k` (zero-based).
    pub fn block_range(&self, k: usize) -> Result<Range<usize>> {
        let size = *self.sizes.get(k).ok_or(Error::BlockIndex {
            index: k,
            blocks: self.sizes.len(),
        })?;
        let start = self.offsets[k];
        Ok(start..start + size)
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.offsets
            .iter()
            .zip(&self.sizes)
            .map(|(&start, &size)| start..start + size)
    }

    /// `75|75` style label used in result files.
    pub fn label(&self) -> String {
        let parts: Vec<String> = self.sizes.iter().map(ToString::to_string).collect();
        parts.join("|")
    }

    pub fn parse_label(label: &str) -> Result<Self> {
        let sizes = label
            .split(['|', ','])
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Format(format!("bad block size {s:?} in {label:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(sizes)
    }

    pub fn block_norms_sq(&self, x: &Vector) -> Result<Vec<f64>> {
        check_len("block norms: vector", self.total(), x.len())?;
        Ok(self.ranges().map(|r| x.rows_range(r).norm_squared()).collect())
    }
}

impl TryFrom<Vec<usize>> for PartitionSpec {
    type Error = Error;

    fn try_from(sizes: Vec<usize>) -> Result<Self> {
        Self::new(sizes)
    }
}

impl From<PartitionSpec> for Vec<usize> {
    fn from(spec: PartitionSpec) -> Self {
        spec.sizes
    }
}

/// Builds a partition of `p` unknowns over `k` nodes, balanced unless explicit sizes are given.
pub fn make_partition(p: usize, k: usize, sizes: Option<&[usize]>) -> Result<PartitionSpec> {
    match sizes {
        None => PartitionSpec::balanced(p, k),
        Some(sizes) => {
            if sizes.len() != k {
                return Err(Error::Partition(format!(
                    "expected {k} block sizes, got {}",
                    sizes.len()
                )));
            }
            if k > p {
                return Err(Error::Partition(format!(
                    "K = {k} exceeds the number of unknowns p = {p}"
                )));
            }
            let spec = PartitionSpec::new(sizes.to_vec())?;
            if spec.total() != p {
                return Err(Error::Partition(format!(
                    "block sizes sum to {}, expected p = {p}",
                    spec.total()
                )));
            }
            Ok(spec)
        }
    }
}

/// Column block `A_k` (zero-based `k`).
pub fn slice_block(a: &Matrix, spec: &PartitionSpec, k: usize) -> Result<Matrix> {
    check_len("slice_block: columns", spec.total(), a.ncols())?;
    let range = spec.block_range(k)?;
    Ok(a.columns(range.start, range.len()).into_owned())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub a: Matrix,
    pub x_true: Vector,
    pub y: Vector,
    pub noise_std: f64,
    /// Seed and stream the instance was drawn from, when it was generated here.
    pub origin: Option<(u64, u64)>,
}

impl ProblemInstance {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn p(&self) -> usize {
        self.a.ncols()
    }

    pub fn from_parts(a: Matrix, x_true: Vector, y: Vector, noise_std: f64) -> Result<Self> {
        check_len("instance: x_true", a.ncols(), x_true.len())?;
        check_len("instance: y", a.nrows(), y.len())?;
        if !(noise_std >= 0.0) || !noise_std.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise_std must be finite and non-negative, got {noise_std}"
            )));
        }
        if a.iter().chain(x_true.iter()).chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("instance has non-finite entries".into()));
        }
        Ok(Self {
            a,
            x_true,
            y,
            noise_std,
            origin: None,
        })
    }

    pub fn to_document(&self) -> InstanceDocument {
        let (n, p) = self.a.shape();
        let mut a = Vec::with_capacity(n * p);
        for row in self.a.row_iter() {
            a.extend(row.iter());
        }
        InstanceDocument {
            format: INSTANCE_FORMAT.to_string(),
            n,
            p,
            seed: self.origin.map(|o| o.0),
            stream_id: self.origin.map(|o| o.1),
            noise_std: self.noise_std,
            a,
            x_true: self.x_true.iter().copied().collect(),
            y: self.y.iter().copied().collect(),
        }
    }

    pub fn from_document(doc: InstanceDocument) -> Result<Self> {
        if doc.format != INSTANCE_FORMAT {
            return Err(Error::Format(format!(
                "expected format {INSTANCE_FORMAT:?}, found {:?}",
                doc.format
            )));
        }
        check_len("instance document: a", doc.n * doc.p, doc.a.len())?;
        let a = Matrix::from_row_slice(doc.n, doc.p, &doc.a);
        let mut instance = Self::from_parts(
            a,
            Vector::from_vec(doc.x_true),
            Vector::from_vec(doc.y),
            doc.noise_std,
        )?;
        instance.origin = doc.seed.zip(doc.stream_id);
        Ok(instance)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), &self.to_document())?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let doc: InstanceDocument = serde_json::from_reader(std::io::BufReader::new(file))?;
        Self::from_document(doc)
    }
}

pub const INSTANCE_FORMAT: &str = "distgen-instance/1";

/// JSON form of a [`ProblemInstance`]; `a` is flattened row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDocument {
    pub format: String,
    pub n: usize,
    pub p: usize,
    pub seed: Option<u64>,
    pub stream_id: Option<u64>,
    pub noise_std: f64,
    pub a: Vec<f64>,
    pub x_true: Vec<f64>,
    pub y: Vec<f64>,
}

/// Samples `A` with i.i.d. standard normal entries and forms `y = A x_true + w`.
///
/// Noise is only drawn when `noise_std > 0`, so a noiseless instance has
/// `y == A * x_true` bit for bit.
pub fn generate_instance(
    n: usize,
    p: usize,
    x_true: &Vector,
    noise_std: f64,
    rng: &mut RngStream,
) -> Result<ProblemInstance> {
    if n == 0 || p == 0 {
        return Err(Error::InvalidArgument(format!(
            "instance dimensions must be positive, got n = {n}, p = {p}"
        )));
    }
    check_len("generate_instance: x_true", p, x_true.len())?;
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise_std must be finite and non-negative, got {noise_std}"
        )));
    }
    let a = sample_gaussian_matrix(n, p, rng);
    let mut y = &a * x_true;
    if noise_std > 0.0 {
        for v in y.iter_mut() {
            *v += noise_std * rng.standard_normal();
        }
    }
    Ok(ProblemInstance {
        a,
        x_true: x_true.clone(),
        y,
        noise_std,
        origin: Some((rng.seed(), rng.stream_id())),
    })
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            actual,
        })
    }
}
