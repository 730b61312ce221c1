//! Dense linear algebra and reproducible Gaussian sampling.
//!
//! Every random draw in the crate goes through [`RngStream`]: a ChaCha8
//! generator keyed by a 64-bit seed plus a 64-bit stream id. Two streams with
//! the same seed and different ids are independent, which lets a sweep assign
//! one stream per trial and get identical results whatever the thread count.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Iteration cap handed to the SVD; hitting it is reported as a numerical failure.
const SVD_MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn gaussian_vector(&mut self, len: usize) -> Vector {
        Vector::from_iterator(len, (0..len).map(|_| self.standard_normal()))
    }
}

/// Mixes a list of words into a stream id (splitmix64 finalizer chained over the parts).
pub fn derive_stream_id(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x243f_6a88_85a3_08d3;
    for &part in parts {
        h ^= part;
        h = splitmix64(h);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draws an `n x p` matrix with i.i.d. standard normal entries, filled row by row.
pub fn sample_gaussian_matrix(n: usize, p: usize, rng: &mut RngStream) -> Matrix {
    let entries: Vec<f64> = (0..n * p).map(|_| rng.standard_normal()).collect();
    Matrix::from_row_slice(n, p, &entries)
}

/// Default singular-value cutoff relative to the largest singular value.
pub fn default_rel_tol(rows: usize, cols: usize) -> f64 {
    rows.max(cols).max(1) as f64 * f64::EPSILON
}

/// Moore-Penrose pseudoinverse through a thin SVD.
///
/// Singular values at or below `rel_tol * sigma_max` are treated as zero.
pub fn pseudoinverse(m: &Matrix, rel_tol: f64) -> Result<Matrix> {
    let (rows, cols) = m.shape();
    if !(rel_tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "pseudoinverse cutoff must be positive, got {rel_tol}"
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "{rows}x{cols} matrix has non-finite entries"
        )));
    }
    if rows == 0 || cols == 0 {
        return Ok(Matrix::zeros(cols, rows));
    }

    // a convergence threshold of a single ulp can stall on exactly rank-deficient
    // input and hand back inconsistent singular vectors; 5 ulps is nalgebra's own default
    let svd = m
        .clone()
        .try_svd(true, true, 5.0 * f64::EPSILON, SVD_MAX_ITERATIONS)
        .ok_or(Error::NumericalFailure { rows, cols })?;
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::NumericalFailure { rows, cols }),
    };
    let sigma = svd.singular_values;
    let sigma_max = sigma.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = rel_tol * sigma_max;

    // pinv = V * diag(1/sigma) * U^T, built as (diag(1/sigma) * V^T)^T * U^T
    let mut scaled_v_t = v_t;
    for (i, &s) in sigma.iter().enumerate() {
        let inv = if s > cutoff && s > 0.0 { 1.0 / s } else { 0.0 };
        scaled_v_t.row_mut(i).scale_mut(inv);
    }
    Ok(scaled_v_t.transpose() * u.transpose())
}

/// `(G + lambda I)^+` for a square `G`.
pub fn regularized_pinv(g: &Matrix, lambda: f64, rel_tol: f64) -> Result<Matrix> {
    let (rows, cols) = g.shape();
    if rows != cols {
        return Err(Error::Dimension {
            context: "regularized_pinv: square matrix",
            expected: rows,
            actual: cols,
        });
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "lambda must be finite and non-negative, got {lambda}"
        )));
    }
    let mut shifted = g.clone();
    for i in 0..rows {
        shifted[(i, i)] += lambda;
    }
    // For symmetric PSD G every eigenvalue of the shifted matrix is at least lambda, and
    // the infinity norm bounds sigma_max, so when lambda clears the cutoff nothing would be
    // truncated and the Cholesky inverse equals the pseudoinverse.
    let norm_bound = shifted.abs().row_sum().max();
    let symmetric = (&shifted - shifted.transpose()).amax() <= rel_tol * norm_bound;
    if lambda > 0.0 && lambda > rel_tol * norm_bound && symmetric {
        if let Some(chol) = shifted.clone().cholesky() {
            return Ok(chol.inverse());
        }
    }
    pseudoinverse(&shifted, rel_tol)
}

/// Returns `(G + lambda I)^+ b`.
pub fn solve_regularized(g: &Matrix, b: &Vector, lambda: f64, rel_tol: f64) -> Result<Vector> {
    if b.len() != g.nrows() {
        return Err(Error::Dimension {
            context: "solve_regularized: right-hand side",
            expected: g.nrows(),
            actual: b.len(),
        });
    }
    Ok(regularized_pinv(g, lambda, rel_tol)? * b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel_diff(a: &Matrix, b: &Matrix) -> f64 {
        (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
    }

    fn assert_penrose(m: &Matrix, cutoff: f64, tol: f64) {
        let pinv = pseudoinverse(m, cutoff).unwrap();
        assert_eq!(pinv.shape(), (m.ncols(), m.nrows()));
        assert!(rel_diff(&(m * &pinv * m), m) < tol);
        assert!(rel_diff(&(&pinv * m * &pinv), &pinv) < tol);
        let mp = m * &pinv;
        let pm = &pinv * m;
        assert!(rel_diff(&mp.transpose(), &mp) < tol);
        assert!(rel_diff(&pm.transpose(), &pm) < tol);
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_gaussian_matrix(2, 3, &mut RngStream::new(9, 4));
        let b = sample_gaussian_matrix(2, 3, &mut RngStream::new(9, 4));
        assert_eq!(a.as_slice(), b.as_slice());
        let c = sample_gaussian_matrix(2, 3, &mut RngStream::new(9, 5));
        assert_ne!(a.as_slice(), c.as_slice());
    }

    #[test]
    fn one_by_one_sample_is_finite() {
        let m = sample_gaussian_matrix(1, 1, &mut RngStream::new(123, 0));
        assert_eq!(m.shape(), (1, 1));
        assert!(m[(0, 0)].is_finite());
    }

    #[test]
    fn standard_normal_moments() {
        let m = sample_gaussian_matrix(10_000, 1, &mut RngStream::new(2024, 1));
        let mean = m.mean();
        let var = m.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 9_999.0;
        assert!(mean.abs() < 4.0 / 100.0, "mean {mean}");
        assert!((var - 1.0).abs() < 0.06, "variance {var}");
    }

    #[test]
    fn stream_ids_are_spread() {
        let a = derive_stream_id(&[1, 2]);
        let b = derive_stream_id(&[2, 1]);
        let c = derive_stream_id(&[1, 2]);
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn pinv_identity() {
        let eye = Matrix::identity(3, 3);
        let pinv = pseudoinverse(&eye, default_rel_tol(3, 3)).unwrap();
        assert!(rel_diff(&pinv, &eye) < 1e-15);
    }

    #[test]
    fn pinv_diagonal_with_zero() {
        let d = Matrix::from_diagonal(&Vector::from_vec(vec![2.0, 0.0]));
        let pinv = pseudoinverse(&d, default_rel_tol(2, 2)).unwrap();
        let expected = Matrix::from_diagonal(&Vector::from_vec(vec![0.5, 0.0]));
        assert!((pinv - expected).amax() < 1e-15);
    }

    #[test]
    fn pinv_of_zero_matrix_is_zero() {
        let z = Matrix::zeros(3, 2);
        let pinv = pseudoinverse(&z, default_rel_tol(3, 2)).unwrap();
        assert_eq!(pinv.shape(), (2, 3));
        assert_eq!(pinv.amax(), 0.0);
    }

    #[test]
    fn pinv_wide_gaussian_reconstructs() {
        let m = sample_gaussian_matrix(3, 5, &mut RngStream::new(77, 0));
        let pinv = pseudoinverse(&m, default_rel_tol(3, 5)).unwrap();
        assert!((&m * &pinv * &m - &m).norm() / m.norm() < 1e-10);
    }

    #[test]
    fn pinv_rejects_bad_input() {
        let mut m = Matrix::identity(2, 2);
        assert!(pseudoinverse(&m, 0.0).is_err());
        m[(0, 1)] = f64::NAN;
        assert!(pseudoinverse(&m, 1e-12).is_err());
    }

    #[test]
    fn regularized_solve_examples() {
        let b = Vector::from_vec(vec![2.0, 4.0]);
        let z = solve_regularized(&Matrix::zeros(2, 2), &b, 1.0, 1e-15).unwrap();
        assert!((z - &b).amax() < 1e-15);

        let b = Vector::from_vec(vec![3.0, 3.0]);
        let z = solve_regularized(&Matrix::identity(2, 2), &b, 0.0, 1e-15).unwrap();
        assert!((z - &b).amax() < 1e-15);

        // null-space component of the right-hand side is dropped
        let g = Matrix::from_diagonal(&Vector::from_vec(vec![4.0, 0.0]));
        let b = Vector::from_vec(vec![8.0, 5.0]);
        let z = solve_regularized(&g, &b, 0.0, 1e-15).unwrap();
        assert!((z - Vector::from_vec(vec![2.0, 0.0])).amax() < 1e-15);
    }

    #[test]
    fn regularized_inverse_paths_agree() {
        let a = sample_gaussian_matrix(20, 35, &mut RngStream::new(4, 4));
        let g = a.transpose() * &a * 2.0;
        for lambda in [1e-4, 1.0, 1e3] {
            let fast = regularized_pinv(&g, lambda, 1e-15).unwrap();
            let mut shifted = g.clone();
            for i in 0..35 {
                shifted[(i, i)] += lambda;
            }
            let svd = pseudoinverse(&shifted, 1e-15).unwrap();
            assert!((&fast - &svd).norm() <= 1e-9 * svd.norm(), "lambda = {lambda}");
        }
    }

    #[test]
    fn regularized_solve_matches_linear_solve() {
        let a = sample_gaussian_matrix(4, 6, &mut RngStream::new(3, 3));
        let g = a.transpose() * &a;
        let b = Vector::from_vec(vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.0]);
        let z = solve_regularized(&g, &b, 0.7, 1e-15).unwrap();
        let mut shifted = g.clone();
        for i in 0..6 {
            shifted[(i, i)] += 0.7;
        }
        assert!((shifted * z - b).norm() < 1e-10);
    }

    #[test]
    fn regularized_solve_dimension_errors() {
        let g = Matrix::zeros(2, 3);
        assert!(solve_regularized(&g, &Vector::zeros(2), 1.0, 1e-12).is_err());
        let g = Matrix::zeros(2, 2);
        assert!(solve_regularized(&g, &Vector::zeros(3), 1.0, 1e-12).is_err());
        assert!(solve_regularized(&g, &Vector::zeros(2), -1.0, 1e-12).is_err());
    }

    #[test]
    fn wide_gaussian_has_right_inverse() {
        for seed in 0..5 {
            let m = sample_gaussian_matrix(6, 11, &mut RngStream::new(seed, 1));
            let pinv = pseudoinverse(&m, default_rel_tol(6, 11)).unwrap();
            assert!((&m * pinv - Matrix::identity(6, 6)).amax() < 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn penrose_identities_hold(n in 1usize..12, p in 1usize..12, seed in any::<u64>()) {
            let m = sample_gaussian_matrix(n, p, &mut RngStream::new(seed, 0));
            assert_penrose(&m, default_rel_tol(n, p), 1e-9);
        }

        #[test]
        fn penrose_identities_hold_for_rank_deficient(n in 2usize..9, p in 2usize..9, seed in any::<u64>()) {
            let mut rng = RngStream::new(seed, 1);
            let left = sample_gaussian_matrix(n, 1, &mut rng);
            let right = sample_gaussian_matrix(1, p, &mut rng);
            // rounding leaves the zero singular values near machine epsilon, so a looser cutoff is needed
            assert_penrose(&(left * right), 1e-10, 1e-9);
        }
    }
}
