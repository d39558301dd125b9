#ifndef REPCOST_H
#define REPCOST_H

/* Generated by cbindgen; do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum RcStatus {
  RC_STATUS_OK = 0,
  RC_STATUS_NULL_POINTER = 1,
  RC_STATUS_INVALID_ARGUMENT = 2,
  RC_STATUS_SHAPE = 3,
  RC_STATUS_UNSUPPORTED_DIMENSION = 4,
  RC_STATUS_NUMERICAL = 5,
  RC_STATUS_PARSE = 6,
  RC_STATUS_IO = 7,
  RC_STATUS_DIVERGED = 8,
  RC_STATUS_PANIC = 9,
} RcStatus;

/**
 * A dataset of inputs, targets and observation mask.
 */
typedef struct RcDataset RcDataset;

/**
 * A stacked network together with its architecture.
 */
typedef struct RcNetwork RcNetwork;

/**
 * A solution of the group-lasso oracle.
 */
typedef struct RcOracle RcOracle;

/**
 * Training settings for [`rc_network_train_shallow`].
 */
typedef struct RcTrainConfig {
  double lambda;
  size_t restarts;
  size_t adam_iters;
  double adam_lr;
  double adam_lr_final;
  size_t max_iters;
  double init_scale;
  uint64_t seed;
} RcTrainConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL
 * terminated, truncated to `len - 1` bytes) and returns its full length.
 * Returns 0 when there is no error.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t rc_last_error(char *buf, size_t len);

/**
 * Default training settings.
 */
struct RcTrainConfig rc_train_config_default(void);

/**
 * Builds a fully observed dataset from row-major `x` (`n x d_in`) and `y`
 * (`n x d_out`).
 *
 * # Safety
 * `x` and `y` must point to `n * d_in` and `n * d_out` readable doubles;
 * `out` must be a valid pointer.
 */
enum RcStatus rc_dataset_new(const double *x,
                             const double *y,
                             size_t n,
                             size_t d_in,
                             size_t d_out,
                             struct RcDataset **out);

/**
 * Random data: inputs uniform on `[-1, 1]^d_in`, standard normal targets.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum RcStatus rc_dataset_random(size_t n,
                                size_t d_in,
                                size_t d_out,
                                uint64_t seed,
                                struct RcDataset **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid pointer.
 */
enum RcStatus rc_dataset_load_csv(const char *path, struct RcDataset **out);

/**
 * # Safety
 * `data` must be a live handle; `path` a NUL-terminated string.
 */
enum RcStatus rc_dataset_save_csv(const struct RcDataset *data, const char *path);

/**
 * Writes `n`, `d_in` and `d_out`; any output pointer may be null.
 *
 * # Safety
 * `data` must be a live handle.
 */
enum RcStatus rc_dataset_shape(const struct RcDataset *data,
                               size_t *n,
                               size_t *d_in,
                               size_t *d_out);

/**
 * # Safety
 * `data` must be null or a handle not yet freed.
 */
void rc_dataset_free(struct RcDataset *data);

/**
 * Trains a one-stack network of `width` neurons.
 *
 * # Safety
 * `data` must be a live handle, `cfg` valid; `out` a valid pointer;
 * `objective` may be null.
 */
enum RcStatus rc_network_train_shallow(const struct RcDataset *data,
                                       size_t width,
                                       const struct RcTrainConfig *cfg,
                                       struct RcNetwork **out,
                                       double *objective);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid pointer.
 */
enum RcStatus rc_network_load(const char *path, struct RcNetwork **out);

/**
 * # Safety
 * `net` must be a live handle; `path` a NUL-terminated string.
 */
enum RcStatus rc_network_save(const struct RcNetwork *net, const char *path);

/**
 * Writes the input and output dimensions; either pointer may be null.
 *
 * # Safety
 * `net` must be a live handle.
 */
enum RcStatus rc_network_dims(const struct RcNetwork *net, size_t *d_in, size_t *d_out);

/**
 * Evaluates the network at `x` (length `d_in`) into `y` (length `d_out`).
 *
 * # Safety
 * `x` and `y` must point to `d_in` readable and `d_out` writable doubles.
 */
enum RcStatus rc_network_forward(const struct RcNetwork *net,
                                 const double *x,
                                 size_t d_in,
                                 double *y,
                                 size_t d_out);

/**
 * Sum of squared parameters.
 *
 * # Safety
 * `net` must be a live handle; `out` a valid pointer.
 */
enum RcStatus rc_network_param_norm_sq(const struct RcNetwork *net, double *out);

/**
 * Representation cost of the network under the bias-regularized penalty.
 *
 * # Safety
 * `net` must be a live handle; `out` a valid pointer.
 */
enum RcStatus rc_network_cost(const struct RcNetwork *net, double *out);

/**
 * Replaces the network by its balanced rescaling (same function, no larger
 * squared parameter norm).
 *
 * # Safety
 * `net` must be a live handle.
 */
enum RcStatus rc_network_balance(struct RcNetwork *net);

/**
 * # Safety
 * `net` must be null or a handle not yet freed.
 */
void rc_network_free(struct RcNetwork *net);

/**
 * Solves the group-lasso oracle on scalar-input data over a kink grid of
 * `resolution` points on `[min x - margin, max x + margin]` plus the data.
 *
 * # Safety
 * `data` must be a live handle; `out` a valid pointer.
 */
enum RcStatus rc_oracle_solve(const struct RcDataset *data,
                              double lambda,
                              size_t resolution,
                              double margin,
                              struct RcOracle **out);

/**
 * Oracle prediction at scalar `x` into `y` (length `d_out`).
 *
 * # Safety
 * `y` must point to `d_out` writable doubles.
 */
enum RcStatus rc_oracle_predict(const struct RcOracle *sol, double x, double *y, size_t d_out);

/**
 * Objective value, penalty, KKT residual and number of active atoms; any
 * output pointer may be null.
 *
 * # Safety
 * `sol` must be a live handle.
 */
enum RcStatus rc_oracle_stats(const struct RcOracle *sol,
                              double *objective,
                              double *penalty,
                              double *kkt_residual,
                              size_t *active_atoms);

/**
 * A one-stack network realizing the oracle solution.
 *
 * # Safety
 * `sol` must be a live handle; `out` a valid pointer.
 */
enum RcStatus rc_oracle_to_network(const struct RcOracle *sol, struct RcNetwork **out);

/**
 * # Safety
 * `sol` must be null or a handle not yet freed.
 */
void rc_oracle_free(struct RcOracle *sol);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REPCOST_H */
