#ifndef DISTGEN_H
#define DISTGEN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes; `DG_STATUS_OK` is zero.
enum DgStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  DG_STATUS_OK = 0,
  DG_STATUS_NULL_POINTER = 1,
  DG_STATUS_INVALID_ARGUMENT = 2,
  DG_STATUS_DIMENSION_MISMATCH = 3,
  DG_STATUS_NUMERICAL_FAILURE = 4,
  DG_STATUS_IO = 5,
  DG_STATUS_PANIC = 6,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum DgStatus DgStatus;
#else
typedef int32_t DgStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

// A linear system `y = A x + noise` together with its truth vector.
typedef struct DgInstance DgInstance;

// A column partition of `p` features into `K` contiguous blocks.
typedef struct DgPartition DgPartition;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or NULL after a success.
//
// The pointer stays valid until the next `dg_` call on the same thread.
const char *dg_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *dg_version(void);

// Builds a partition from explicit block sizes.
//
// # Safety
// `sizes` must point to `num_blocks` readable values and `out` must be writable.
DgStatus dg_partition_new(const size_t *sizes, size_t num_blocks, struct DgPartition **out);

// Splits `p` columns into `k` blocks whose sizes differ by at most one.
//
// # Safety
// `out` must be writable.
DgStatus dg_partition_balanced(size_t p, size_t k, struct DgPartition **out);

// # Safety
// `partition` must be NULL or a handle from this library that was not freed yet.
void dg_partition_free(struct DgPartition *partition);

// Number of blocks, or 0 for NULL.
//
// # Safety
// `partition` must be NULL or a live handle.
size_t dg_partition_num_blocks(const struct DgPartition *partition);

// Total number of columns, or 0 for NULL.
//
// # Safety
// `partition` must be NULL or a live handle.
size_t dg_partition_total(const struct DgPartition *partition);

// Copies the block sizes into `sizes_out`, which must hold exactly `num_blocks` entries.
//
// # Safety
// `partition` must be a live handle and `sizes_out` writable for `num_blocks` values.
DgStatus dg_partition_sizes(const struct DgPartition *partition,
                            size_t *sizes_out,
                            size_t num_blocks);

// Samples `A` with i.i.d. standard normal entries and sets `y = A x + noise_std * e`.
//
// Draws come from the stream `(seed, stream_id)`, so equal arguments give equal instances.
//
// # Safety
// `x_true` must hold `p` values and `out` must be writable.
DgStatus dg_instance_generate(size_t n,
                              size_t p,
                              const double *x_true,
                              double noise_std,
                              uint64_t seed,
                              uint64_t stream_id,
                              struct DgInstance **out);

// Wraps caller-supplied data; `a` is `n x p` in row-major order.
//
// # Safety
// `a` must hold `n * p` values, `x_true` `p` values, `y` `n` values; `out` must be writable.
DgStatus dg_instance_from_arrays(size_t n,
                                 size_t p,
                                 const double *a,
                                 const double *x_true,
                                 const double *y,
                                 struct DgInstance **out);

// Reads an instance document written by `distgen solve --save-instance`.
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string and `out` writable.
DgStatus dg_instance_load_json(const char *path, struct DgInstance **out);

// # Safety
// `instance` must be NULL or a handle from this library that was not freed yet.
void dg_instance_free(struct DgInstance *instance);

// Writes the instance's row and column counts.
//
// # Safety
// `instance` must be a live handle; `n_out` and `p_out` must be writable.
DgStatus dg_instance_dims(const struct DgInstance *instance, size_t *n_out, size_t *p_out);

// Runs `iterations` synchronous CoCoA rounds from zero and writes the final iterate.
//
// # Safety
// Handles must be live; `x_hat_out` must be writable for `len == p` values.
DgStatus dg_cocoa_solve(const struct DgInstance *instance,
                        const struct DgPartition *partition,
                        double lambda,
                        size_t iterations,
                        double *x_hat_out,
                        size_t len);

// `(1/n) ||A (x - x_hat)||^2` for the instance's own data.
//
// # Safety
// `instance` must be live, `x_hat` readable for `len == p` values and `out` writable.
DgStatus dg_training_error(const struct DgInstance *instance,
                           const double *x_hat,
                           size_t len,
                           double *out);

// Block coefficient `gamma`; `INFINITY` when `p_k` is within one of `n`.
//
// # Safety
// `out` must be writable.
DgStatus dg_gamma(size_t p_k, size_t n, double *out);

// First-round contraction factor of block `k` (zero-based); may be `INFINITY`.
//
// # Safety
// `partition` must be live and `out` writable.
DgStatus dg_alpha(const struct DgPartition *partition, size_t k, size_t n, double *out);

// Predicted `E||x - x^1||^2` from per-block `||x_k||^2`; may be `INFINITY`.
//
// # Safety
// `partition` must be live, `block_norms_sq` readable for `num_blocks` values and `out` writable.
DgStatus dg_predict_first_iteration(const struct DgPartition *partition,
                                    size_t n,
                                    const double *block_norms_sq,
                                    size_t num_blocks,
                                    double *out);

// Recommends `k` block sizes for `n x p` keeping every `|p_k - n| > margin`.
//
// When no split satisfies the margin the balanced split is written and
// `*feasible_out` is set to 0.
//
// # Safety
// `sizes_out` must be writable for `k` values and `feasible_out` writable.
DgStatus dg_advise_partition(size_t n,
                             size_t p,
                             size_t k,
                             size_t margin,
                             size_t *sizes_out,
                             int32_t *feasible_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DISTGEN_H */
