#ifndef RSMOOTH_H
#define RSMOOTH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RsmSchedule {
  RSM_SCHEDULE_LAPLACE = 0,
  RSM_SCHEDULE_LOGISTIC = 1,
  RSM_SCHEDULE_CONSTANT = 2,
  RSM_SCHEDULE_OFF = 3,
} RsmSchedule;

typedef enum RsmSmoothingMode {
  RSM_SMOOTHING_MODE_OFF = 0,
  RSM_SMOOTHING_MODE_GLOBAL = 1,
  RSM_SMOOTHING_MODE_LOCAL = 2,
  RSM_SMOOTHING_MODE_GLOBAL_LOCAL = 3,
} RsmSmoothingMode;

/**
 * Result codes shared by every function.
 */
typedef enum RsmStatus {
  RSM_STATUS_OK = 0,
  RSM_STATUS_NULL_POINTER = 1,
  RSM_STATUS_SHAPE = 2,
  RSM_STATUS_CONFIG = 3,
  RSM_STATUS_INPUT = 4,
  RSM_STATUS_FORMAT = 5,
  RSM_STATUS_IO = 6,
  RSM_STATUS_NON_FINITE = 7,
  RSM_STATUS_INVALID_ARGUMENT = 8,
  RSM_STATUS_PANIC = 9,
} RsmStatus;

/**
 * Opaque network handle.
 */
typedef struct RsmNetwork RsmNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread. Valid until the next
 * failing call on the same thread; empty if nothing failed yet.
 */
const char *rsm_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rsm_version(void);

/**
 * Builds a dense network with `layer_count` layers. `widths[i]` is the
 * output width of layer `i` and `activations[i]` its activation code
 * (0 identity, 1 relu, 2 softmax). Weights use He initialization from
 * `seed`; biases start at zero.
 *
 * # Safety
 * `widths` and `activations` must point to `layer_count` elements and
 * `out` must be writable.
 */
enum RsmStatus rsm_network_create(size_t input_dim,
                                  const size_t *widths,
                                  const uint8_t *activations,
                                  size_t layer_count,
                                  uint64_t seed,
                                  struct RsmNetwork **out);

/**
 * Loads a checkpoint written by `rsm_network_save` or the CLI.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum RsmStatus rsm_network_load(const char *path, struct RsmNetwork **out);

/**
 * # Safety
 * `net` must be a live handle and `path` a NUL-terminated string.
 */
enum RsmStatus rsm_network_save(const struct RsmNetwork *net, const char *path);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `net` must come from this library and not be used afterwards.
 */
void rsm_network_free(struct RsmNetwork *net);

/**
 * Input width, or 0 for a null handle.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
size_t rsm_network_input_dim(const struct RsmNetwork *net);

/**
 * Output width, or 0 for a null handle.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
size_t rsm_network_output_dim(const struct RsmNetwork *net);

/**
 * Forward pass over a row-major `[batch, input_dim]` buffer into a
 * `[batch, output_dim]` buffer of `out_len` elements.
 *
 * # Safety
 * Buffers must hold the stated number of elements.
 */
enum RsmStatus rsm_network_forward(const struct RsmNetwork *net,
                                   const double *inputs,
                                   size_t batch,
                                   double *out,
                                   size_t out_len);

/**
 * Smoothed loss `‖Wⁿ d‖²` of one sample and its gradient with respect to
 * the prediction, where `d = |prediction − target|` and `W` is built from
 * the diffusivity at scale `s_t`. `mode` is an `RsmSmoothingMode` value.
 * `grad` and `mean_kappa` may be null.
 *
 * # Safety
 * `prediction`, `target` and (if non-null) `grad` must hold `len` elements.
 */
enum RsmStatus rsm_smoothed_loss(const double *prediction,
                                 const double *target,
                                 size_t len,
                                 int32_t mode,
                                 double s_t,
                                 double alpha,
                                 size_t n_steps,
                                 double *loss,
                                 double *grad,
                                 double *mean_kappa);

/**
 * Annealed sigmoid scale at `progress ∈ [0, 1]` for an `RsmSchedule` kind.
 * `const_s` is only read by the constant schedule.
 *
 * # Safety
 * `out` must be writable.
 */
enum RsmStatus rsm_schedule_scale(int32_t kind,
                                  double mu,
                                  double b,
                                  double const_s,
                                  double progress,
                                  double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RSMOOTH_H */
