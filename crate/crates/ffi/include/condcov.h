#ifndef CONDCOV_H
#define CONDCOV_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CcStatus {
  CC_STATUS_OK = 0,
  CC_STATUS_NULL_POINTER = 1,
  CC_STATUS_INVALID_ARGUMENT = 2,
  CC_STATUS_DIMENSION_MISMATCH = 3,
  CC_STATUS_TOO_FEW_ROWS = 4,
  CC_STATUS_DEGENERATE_DATA = 5,
  CC_STATUS_ZERO_WEIGHT_SUM = 6,
  CC_STATUS_INFEASIBLE = 7,
  CC_STATUS_IO = 8,
  CC_STATUS_FORMAT = 9,
  CC_STATUS_PANIC = 10,
} CcStatus;

typedef enum CcCombineRule {
  CC_COMBINE_RULE_FROBENIUS_ONLY = 0,
  CC_COMBINE_RULE_TRACE_ONLY = 1,
  CC_COMBINE_RULE_GEOM_MEAN_OF_MINIMIZERS = 2,
  CC_COMBINE_RULE_MINIMIZER_OF_GEOM_MEAN_LOSS = 3,
} CcCombineRule;

/**
 * Units of a returned covariance.
 */
typedef enum CcScale {
  /**
   * Covariance of the standardized residuals.
   */
  CC_SCALE_STANDARDIZED = 0,
  /**
   * Rescaled by the marginal output standard deviations.
   */
  CC_SCALE_OUTPUT = 1,
} CcScale;

/**
 * Training data: covariates `z` (n×q) and outputs `x` (n×p).
 */
typedef struct CcDataset CcDataset;

/**
 * Fitted covariance forest.
 */
typedef struct CcForest CcForest;

/**
 * Fitted Nadaraya-Watson model.
 */
typedef struct CcKernelModel CcKernelModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *cc_version(void);

/**
 * Message for the last failed call on this thread, or NULL after a
 * successful call. Valid until the next call into the library on this thread.
 */
const char *cc_last_error_message(void);

/**
 * Copies row-major `z` (n×q) and `x` (n×p) into a new dataset.
 *
 * # Safety
 * `z` and `x` must point to `n*q` and `n*p` readable doubles; `out` must be
 * a valid pointer to write the handle to.
 */
enum CcStatus cc_dataset_new(const double *z,
                             const double *x,
                             size_t n,
                             size_t q,
                             size_t p,
                             struct CcDataset **out);

/**
 * # Safety
 * `ds` must be NULL or a handle from [`cc_dataset_new`] not yet freed.
 */
void cc_dataset_free(struct CcDataset *ds);

/**
 * # Safety
 * `ds` must be a live dataset handle; the out pointers may be NULL.
 */
enum CcStatus cc_dataset_dims(const struct CcDataset *ds, size_t *n, size_t *q, size_t *p);

/**
 * Cross-validates the covariance bandwidth over the default grid. A
 * positive `mean_bandwidth` fixes the pilot mean bandwidth, otherwise it is
 * cross-validated too; both chosen values are written out.
 *
 * # Safety
 * `ds` must be a live dataset handle; `out_bandwidth` must be writable;
 * `out_mean_bandwidth` may be NULL.
 */
enum CcStatus cc_select_bandwidth(const struct CcDataset *ds,
                                  enum CcCombineRule rule,
                                  double mean_bandwidth,
                                  double *out_bandwidth,
                                  double *out_mean_bandwidth);

/**
 * Fits the kernel model: conditional mean with `mean_bandwidth`, covariance
 * of standardized residuals with `bandwidth`.
 *
 * # Safety
 * `ds` must be a live dataset handle and `out` writable.
 */
enum CcStatus cc_kernel_fit(const struct CcDataset *ds,
                            double mean_bandwidth,
                            double bandwidth,
                            struct CcKernelModel **out);

/**
 * Conditional covariance at `z` (length q) into `out` (row-major p×p).
 *
 * # Safety
 * `model` must be live, `z` readable for `q` doubles, `out` writable for
 * `out_len` doubles.
 */
enum CcStatus cc_kernel_covariance(const struct CcKernelModel *model,
                                   const double *z,
                                   size_t q,
                                   enum CcScale scale,
                                   double *out,
                                   size_t out_len);

/**
 * Conditional correlation at `z` into `out` (row-major p×p).
 *
 * # Safety
 * As for [`cc_kernel_covariance`].
 */
enum CcStatus cc_kernel_correlation(const struct CcKernelModel *model,
                                    const double *z,
                                    size_t q,
                                    double *out,
                                    size_t out_len);

/**
 * # Safety
 * `model` must be NULL or a live handle.
 */
void cc_kernel_free(struct CcKernelModel *model);

/**
 * Grows a forest on the standardized residuals of a kernel mean fit with
 * `mean_bandwidth`. `min_node_size` and `mtry` of 0 select the defaults.
 *
 * # Safety
 * `ds` must be a live dataset handle and `out` writable.
 */
enum CcStatus cc_forest_fit(const struct CcDataset *ds,
                            double mean_bandwidth,
                            size_t n_trees,
                            size_t min_node_size,
                            size_t mtry,
                            uint64_t seed,
                            struct CcForest **out);

/**
 * Forest covariance at `z` into `out` (row-major p×p).
 *
 * # Safety
 * `forest` must be live, `z` readable for `q` doubles, `out` writable for
 * `out_len` doubles.
 */
enum CcStatus cc_forest_predict_cov(const struct CcForest *forest,
                                    const double *z,
                                    size_t q,
                                    enum CcScale scale,
                                    double *out,
                                    size_t out_len);

/**
 * Forest correlation at `z` into `out` (row-major p×p).
 *
 * # Safety
 * As for [`cc_forest_predict_cov`].
 */
enum CcStatus cc_forest_predict_corr(const struct CcForest *forest,
                                     const double *z,
                                     size_t q,
                                     double *out,
                                     size_t out_len);

/**
 * Number of covariates and outputs the forest was trained on.
 *
 * # Safety
 * `forest` must be live; the out pointers may be NULL.
 */
enum CcStatus cc_forest_dims(const struct CcForest *forest, size_t *q, size_t *p);

/**
 * Writes the forest as JSON.
 *
 * # Safety
 * `forest` must be live and `path` a NUL-terminated UTF-8 string.
 */
enum CcStatus cc_forest_save(const struct CcForest *forest, const char *path);

/**
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string and `out` writable.
 */
enum CcStatus cc_forest_load(const char *path, struct CcForest **out);

/**
 * # Safety
 * `forest` must be NULL or a live handle.
 */
void cc_forest_free(struct CcForest *forest);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONDCOV_H */
