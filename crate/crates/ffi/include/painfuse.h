/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef PAINFUSE_H
#define PAINFUSE_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum PfStatus {
  PF_STATUS_OK = 0,
  PF_STATUS_NULL_POINTER = 1,
  PF_STATUS_INVALID_ARGUMENT = 2,
  PF_STATUS_IO = 3,
  PF_STATUS_FORMAT = 4,
  PF_STATUS_NUMERICAL = 5,
  PF_STATUS_PANIC = 6,
} PfStatus;

// Kernel codes accepted by [`pf_rvm_train`].
typedef enum PfKernel {
  PF_KERNEL_RBF = 0,
  PF_KERNEL_LINEAR = 1,
} PfKernel;

// Method codes accepted by [`pf_postprocess`].
typedef enum PfMethod {
  PF_METHOD_ORIGINAL = 0,
  PF_METHOD_REBASE = 1,
  PF_METHOD_THRESHOLD = 2,
  PF_METHOD_REBASE_THRESHOLD = 3,
} PfMethod;

// Opaque trained relevance vector regressor.
typedef struct PfRvmModel PfRvmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL.
//
// The pointer stays valid until the next painfuse call on the same thread.
const char *pf_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *pf_version(void);

// PSPI score from the six action-unit intensities (AU4, AU6, AU7, AU9, AU10 in 0..=5, AU43 in 0..=1).
//
// # Safety
// `out` must be a valid pointer to one `uint8_t`.
enum PfStatus pf_pspi(uint8_t au4,
                      uint8_t au6,
                      uint8_t au7,
                      uint8_t au9,
                      uint8_t au10,
                      uint8_t au43,
                      uint8_t *out);

// Trains a relevance vector regressor on `rows` samples of `cols` features.
// `kernel` is a [`PfKernel`] code.
//
// For the RBF kernel, `gamma <= 0` selects the median pairwise distance of the
// standardized inputs. `gamma` is ignored for the linear kernel. On success
// `*out` receives a new handle owned by the caller.
//
// # Safety
// `x` must hold `rows * cols` doubles, `y` must hold `rows` doubles and `out`
// must be a valid pointer.
enum PfStatus pf_rvm_train(const double *x,
                           uintptr_t rows,
                           uintptr_t cols,
                           const double *y,
                           int32_t kernel,
                           double gamma,
                           struct PfRvmModel **out);

// Predictive means (and, when `var_out` is not NULL, variances) for `rows` samples.
//
// # Safety
// `model` must be a live handle, `x` must hold `rows * cols` doubles and
// `mean_out` (and `var_out` if given) must have room for `rows` doubles.
enum PfStatus pf_rvm_predict(const struct PfRvmModel *model,
                             const double *x,
                             uintptr_t rows,
                             uintptr_t cols,
                             double *mean_out,
                             double *var_out);

// Number of input features, or 0 for a NULL handle.
//
// # Safety
// `model` must be NULL or a live handle.
uintptr_t pf_rvm_input_dim(const struct PfRvmModel *model);

// Number of retained relevance vectors, or 0 for a NULL handle.
//
// # Safety
// `model` must be NULL or a live handle.
uintptr_t pf_rvm_num_relevance_vectors(const struct PfRvmModel *model);

// Writes the model as JSON to `path`.
//
// # Safety
// `model` must be a live handle and `path` a NUL-terminated UTF-8 string.
enum PfStatus pf_rvm_save(const struct PfRvmModel *model, const char *path);

// Reads a model saved by [`pf_rvm_save`]. On success `*out` receives a new handle.
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
enum PfStatus pf_rvm_load(const char *path, struct PfRvmModel **out);

// Releases a handle. NULL is ignored.
//
// # Safety
// `model` must be NULL or a handle not yet freed.
void pf_rvm_free(struct PfRvmModel *model);

// Applies a post-processing method (a [`PfMethod`] code) to one subject's `n` predictions.
//
// # Safety
// `preds` and `out` must each hold `n` doubles; they may be the same buffer.
enum PfStatus pf_postprocess(const double *preds, uintptr_t n, int32_t method, double *out);

// RMSE and Pearson correlation of `n` predictions against ground truth.
//
// `*corr_out` is NaN when either side is constant.
//
// # Safety
// `preds` and `truth` must hold `n` doubles; the output pointers must be valid.
enum PfStatus pf_metrics(const double *preds,
                         const double *truth,
                         uintptr_t n,
                         double *rmse_out,
                         double *corr_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PAINFUSE_H */
