//! C ABI over `distgen-core`.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free`. Every fallible call returns a [`DgStatus`]; on failure a
//! message is kept per thread and can be read with [`dg_last_error_message`].
//! Matrices cross the boundary in row-major order.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use distgen_core::harness::training_error;
use distgen_core::numerics::{Matrix, RngStream, Vector};
use distgen_core::problem::{generate_instance, PartitionSpec, ProblemInstance};
use distgen_core::solver::{CocoaSolver, SolverConfig};
use distgen_core::theory::{
    advise_partition, alpha_coefficient, gamma_coefficient, predict_from_block_norms, ExtendedReal,
};
use distgen_core::Error;

/// Result codes; `DG_STATUS_OK` is zero.
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NumericalFailure = 4,
    Io = 5,
    Panic = 6,
}

/// A column partition of `p` features into `K` contiguous blocks.
pub struct DgPartition {
    inner: PartitionSpec,
}

/// A linear system `y = A x + noise` together with its truth vector.
pub struct DgInstance {
    inner: ProblemInstance,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> DgStatus {
    match err {
        Error::Dimension { .. } => DgStatus::DimensionMismatch,
        Error::NumericalFailure { .. } => DgStatus::NumericalFailure,
        Error::Io(_) => DgStatus::Io,
        _ => DgStatus::InvalidArgument,
    }
}

struct Failure(DgStatus, String);

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        Failure(status_of(&err), err.to_string())
    }
}

fn null(name: &str) -> Failure {
    Failure(DgStatus::NullPointer, format!("{name} is null"))
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> DgStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            DgStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            DgStatus::Panic
        }
    }
}

unsafe fn input<'a, T>(data: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts(data, len))
}

unsafe fn output<'a, T>(data: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if data.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts_mut(data, len))
}

unsafe fn handle<'a, T>(ptr: *const T, name: &str) -> Result<&'a T, Failure> {
    ptr.as_ref().ok_or_else(|| null(name))
}

fn expect_len(name: &str, expected: usize, actual: usize) -> Result<(), Failure> {
    if expected != actual {
        return Err(Failure(
            DgStatus::DimensionMismatch,
            format!("{name}: expected length {expected}, got {actual}"),
        ));
    }
    Ok(())
}

fn to_c_double(v: ExtendedReal) -> f64 {
    v.to_f64()
}

/// Message for the most recent failure on this thread, or NULL after a success.
///
/// The pointer stays valid until the next `dg_` call on the same thread.
#[no_mangle]
pub extern "C" fn dg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a partition from explicit block sizes.
///
/// # Safety
/// `sizes` must point to `num_blocks` readable values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dg_partition_new(
    sizes: *const usize,
    num_blocks: usize,
    out: *mut *mut DgPartition,
) -> DgStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let sizes = input(sizes, num_blocks, "sizes")?;
        let inner = PartitionSpec::new(sizes.to_vec())?;
        *out = Box::into_raw(Box::new(DgPartition { inner }));
        Ok(())
    })
}

/// Splits `p` columns into `k` blocks whose sizes differ by at most one.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dg_partition_balanced(p: usize, k: usize, out: *mut *mut DgPartition) -> DgStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let inner = PartitionSpec::balanced(p, k)?;
        *out = Box::into_raw(Box::new(DgPartition { inner }));
        Ok(())
    })
}

/// # Safety
/// `partition` must be NULL or a handle from this library that was not freed yet.
#[no_mangle]
pub unsafe extern "C" fn dg_partition_free(partition: *mut DgPartition) {
    if !partition.is_null() {
        drop(Box::from_raw(partition));
    }
}

/// Number of blocks, or 0 for NULL.
///
/// # Safety
/// `partition` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dg_partition_num_blocks(partition: *const DgPartition) -> usize {
    partition.as_ref().map_or(0, |p| p.inner.num_blocks())
}

/// Total number of columns, or 0 for NULL.
///
/// # Safety
/// `partition` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dg_partition_total(partition: *const DgPartition) -> usize {
    partition.as_ref().map_or(0, |p| p.inner.total())
}

/// Copies the block sizes into `sizes_out`, which must hold exactly `num_blocks` entries.
///
/// # Safety
/// `partition` must be a live handle and `sizes_out` writable for `num_blocks` values.
#[no_mangle]
pub unsafe extern "C" fn dg_partition_sizes(
    partition: *const DgPartition,
    sizes_out: *mut usize,
    num_blocks: usize,
) -> DgStatus {
    guard(|| {
        let partition = handle(partition, "partition")?;
        expect_len("sizes_out", partition.inner.num_blocks(), num_blocks)?;
        output(sizes_out, num_blocks, "sizes_out")?.copy_from_slice(partition.inner.sizes());
        Ok(())
    })
}

/// Samples `A` with i.i.d. standard normal entries and sets `y = A x + noise_std * e`.
///
/// Draws come from the stream `(seed, stream_id)`, so equal arguments give equal instances.
///
/// # Safety
/// `x_true` must hold `p` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dg_instance_generate(
    n: usize,
    p: usize,
    x_true: *const f64,
    noise_std: f64,
    seed: u64,
    stream_id: u64,
    out: *mut *mut DgInstance,
) -> DgStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let x = Vector::from_column_slice(input(x_true, p, "x_true")?);
        let mut rng = RngStream::new(seed, stream_id);
        let inner = generate_instance(n, p, &x, noise_std, &mut rng)?;
        *out = Box::into_raw(Box::new(DgInstance { inner }));
        Ok(())
    })
}

/// Wraps caller-supplied data; `a` is `n x p` in row-major order.
///
/// # Safety
/// `a` must hold `n * p` values, `x_true` `p` values, `y` `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dg_instance_from_arrays(
    n: usize,
    p: usize,
    a: *const f64,
    x_true: *const f64,
    y: *const f64,
    out: *mut *mut DgInstance,
) -> DgStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let len = n
            .checked_mul(p)
            .ok_or_else(|| Failure(DgStatus::InvalidArgument, "n * p overflows".into()))?;
        let a = Matrix::from_row_slice(n, p, input(a, len, "a")?);
        let x = Vector::from_column_slice(input(x_true, p, "x_true")?);
        let y = Vector::from_column_slice(input(y, n, "y")?);
        let inner = ProblemInstance::from_parts(a, x, y, 0.0)?;
        *out = Box::into_raw(Box::new(DgInstance { inner }));
        Ok(())
    })
}

/// Reads an instance document written by `distgen solve --save-instance`.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dg_instance_load_json(path: *const c_char, out: *mut *mut DgInstance) -> DgStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure(DgStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let inner = ProblemInstance::load_json(Path::new(path))?;
        *out = Box::into_raw(Box::new(DgInstance { inner }));
        Ok(())
    })
}

/// # Safety
/// `instance` must be NULL or a handle from this library that was not freed yet.
#[no_mangle]
pub unsafe extern "C" fn dg_instance_free(instance: *mut DgInstance) {
    if !instance.is_null() {
        drop(Box::from_raw(instance));
    }
}

/// Writes the instance's row and column counts.
///
/// # Safety
/// `instance` must be a live handle; `n_out` and `p_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dg_instance_dims(instance: *const DgInstance, n_out: *mut usize, p_out: *mut usize) -> DgStatus {
    guard(|| {
        let instance = handle(instance, "instance")?;
        *n_out.as_mut().ok_or_else(|| null("n_out"))? = instance.inner.n();
        *p_out.as_mut().ok_or_else(|| null("p_out"))? = instance.inner.p();
        Ok(())
    })
}

/// Runs `iterations` synchronous CoCoA rounds from zero and writes the final iterate.
///
/// # Safety
/// Handles must be live; `x_hat_out` must be writable for `len == p` values.
#[no_mangle]
pub unsafe extern "C" fn dg_cocoa_solve(
    instance: *const DgInstance,
    partition: *const DgPartition,
    lambda: f64,
    iterations: usize,
    x_hat_out: *mut f64,
    len: usize,
) -> DgStatus {
    guard(|| {
        let instance = handle(instance, "instance")?;
        let partition = handle(partition, "partition")?;
        expect_len("x_hat_out", instance.inner.p(), len)?;
        let config = SolverConfig::new(lambda, iterations, partition.inner.num_blocks())?;
        let trace = CocoaSolver::new(&instance.inner, &partition.inner, &config)?.run();
        output(x_hat_out, len, "x_hat_out")?.copy_from_slice(trace.final_state.x_hat.as_slice());
        Ok(())
    })
}

/// `(1/n) ||A (x - x_hat)||^2` for the instance's own data.
///
/// # Safety
/// `instance` must be live, `x_hat` readable for `len == p` values and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dg_training_error(
    instance: *const DgInstance,
    x_hat: *const f64,
    len: usize,
    out: *mut f64,
) -> DgStatus {
    guard(|| {
        let instance = handle(instance, "instance")?;
        expect_len("x_hat", instance.inner.p(), len)?;
        let x_hat = Vector::from_column_slice(input(x_hat, len, "x_hat")?);
        *out.as_mut().ok_or_else(|| null("out"))? = training_error(&instance.inner, &x_hat);
        Ok(())
    })
}

/// Block coefficient `gamma`; `INFINITY` when `p_k` is within one of `n`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dg_gamma(p_k: usize, n: usize, out: *mut f64) -> DgStatus {
    guard(|| {
        if p_k == 0 || n == 0 {
            return Err(Failure(DgStatus::InvalidArgument, "p_k and n must be at least 1".into()));
        }
        *out.as_mut().ok_or_else(|| null("out"))? = to_c_double(gamma_coefficient(p_k, n));
        Ok(())
    })
}

/// First-round contraction factor of block `k` (zero-based); may be `INFINITY`.
///
/// # Safety
/// `partition` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dg_alpha(partition: *const DgPartition, k: usize, n: usize, out: *mut f64) -> DgStatus {
    guard(|| {
        let partition = handle(partition, "partition")?;
        *out.as_mut().ok_or_else(|| null("out"))? = to_c_double(alpha_coefficient(k, &partition.inner, n)?);
        Ok(())
    })
}

/// Predicted `E||x - x^1||^2` from per-block `||x_k||^2`; may be `INFINITY`.
///
/// # Safety
/// `partition` must be live, `block_norms_sq` readable for `num_blocks` values and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dg_predict_first_iteration(
    partition: *const DgPartition,
    n: usize,
    block_norms_sq: *const f64,
    num_blocks: usize,
    out: *mut f64,
) -> DgStatus {
    guard(|| {
        let partition = handle(partition, "partition")?;
        expect_len("block_norms_sq", partition.inner.num_blocks(), num_blocks)?;
        let norms = input(block_norms_sq, num_blocks, "block_norms_sq")?;
        let prediction = predict_from_block_norms(norms, &partition.inner, n)?;
        *out.as_mut().ok_or_else(|| null("out"))? = to_c_double(prediction.epsilon_g);
        Ok(())
    })
}

/// Recommends `k` block sizes for `n x p` keeping every `|p_k - n| > margin`.
///
/// When no split satisfies the margin the balanced split is written and
/// `*feasible_out` is set to 0.
///
/// # Safety
/// `sizes_out` must be writable for `k` values and `feasible_out` writable.
#[no_mangle]
pub unsafe extern "C" fn dg_advise_partition(
    n: usize,
    p: usize,
    k: usize,
    margin: usize,
    sizes_out: *mut usize,
    feasible_out: *mut i32,
) -> DgStatus {
    guard(|| {
        let advice = advise_partition(n, p, k, margin)?;
        output(sizes_out, k, "sizes_out")?.copy_from_slice(advice.spec.sizes());
        *feasible_out.as_mut().ok_or_else(|| null("feasible_out"))? = i32::from(advice.feasible);
        Ok(())
    })
}
