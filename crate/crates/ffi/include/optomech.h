#ifndef OPTOMECH_H
#define OPTOMECH_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum OmStatus {
  OM_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  OM_STATUS_NULL_POINTER = 1,
  /**
   * Parameter outside its domain, or an impossible heralding event.
   */
  OM_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Numerical failure: truncation, resolution, convergence.
   */
  OM_STATUS_NUMERIC = 3,
  /**
   * Caller buffer too small; query the shape first.
   */
  OM_STATUS_BUFFER_TOO_SMALL = 4,
  /**
   * A Rust panic was caught at the boundary. A bug.
   */
  OM_STATUS_INTERNAL = 5,
} OmStatus;

/**
 * Opaque sampled Wigner grid.
 */
typedef struct OmGrid OmGrid;

/**
 * Opaque conditional mechanical state.
 */
typedef struct OmState OmState;

/**
 * Device inputs in SI units (angular frequencies in rad/s).
 */
typedef struct OmDevice {
  double lambda_l;
  double length;
  double omega_m;
  double mass;
  double q_m;
  double kappa;
  double t_bath;
} OmDevice;

/**
 * Quantities derived from a device at a given pulse photon number.
 */
typedef struct OmDerived {
  double x_zpf;
  double g0;
  double g0_over_kappa;
  double chi;
  double omega;
  double finesse;
  double n_bar_th;
  double gamma_m;
} OmDerived;

/**
 * Optical resource. `squeeze_x` selects amplitude squeezing; 0 means phase squeezing.
 */
typedef struct OmResource {
  double r;
  double t;
  double eta;
  uint32_t m;
  double n_p;
  double sigma_n;
  uint8_t squeeze_x;
} OmResource;

/**
 * QND pulse coupling and the homodyne outcome.
 */
typedef struct OmCoupling {
  double chi;
  double omega;
  double p_tilde;
} OmCoupling;

/**
 * Scores of a sampled grid. `fringe_d` is NaN for single-lobed states.
 */
typedef struct OmMetrics {
  double negativity;
  double macroscopicity;
  double v_x;
  double v_p;
  double mean_x;
  double mean_p;
  double purity;
  double fringe_d;
} OmMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *om_version(void);

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated, truncated
 * to `len`). Returns the full message length excluding the terminator; 0 after a
 * successful call.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes of writes.
 */
size_t om_last_error(char *buf, size_t len);

/**
 * Human-readable name of a status code, static NUL-terminated string.
 */
const char *om_status_name(enum OmStatus status);

/**
 * Reference device parameters.
 *
 * # Safety
 * `out` must be null or valid for writes.
 */
enum OmStatus om_device_reference(struct OmDevice *out);

/**
 * Derived couplings, finesse and bath occupation for `device` driven with `n_p` photons.
 *
 * # Safety
 * `device` must be null or valid for reads, `out` null or valid for writes.
 */
enum OmStatus om_device_derive(const struct OmDevice *device, double n_p, struct OmDerived *out);

/**
 * Conditional state for a Gaussian mechanical input with variances `v_x`, `v_p`.
 * On success `*out` owns a new handle; release it with [`om_state_free`].
 *
 * # Safety
 * `resource` and `coupling` must be null or valid for reads, `out` null or valid for
 * writes.
 */
enum OmStatus om_state_new(const struct OmResource *resource,
                           double v_x,
                           double v_p,
                           const struct OmCoupling *coupling,
                           struct OmState **out);

/**
 * Releases a state. Null is ignored.
 *
 * # Safety
 * `state` must be null or a handle from [`om_state_new`] not yet freed.
 */
void om_state_free(struct OmState *state);

/**
 * Normalized Wigner function at the lab-frame point `(x, p)`.
 *
 * # Safety
 * `state` must be null or a live handle, `out` null or valid for writes.
 */
enum OmStatus om_state_wigner(const struct OmState *state, double x, double p, double *out);

/**
 * Density of the quadrature `x cos θ + p sin θ` at `s`, blurred by a Gaussian of
 * variance `noise_var` (0 for none).
 *
 * # Safety
 * `state` must be null or a live handle, `out` null or valid for writes.
 */
enum OmStatus om_state_quadrature_density(const struct OmState *state,
                                          double theta,
                                          double s,
                                          double noise_var,
                                          double *out);

/**
 * Samples the state on an automatically sized grid with at least `min_count` points per
 * axis (0 selects the default).
 *
 * # Safety
 * `state` must be null or a live handle, `out` null or valid for writes.
 */
enum OmStatus om_state_sample(const struct OmState *state, size_t min_count, struct OmGrid **out);

/**
 * Releases a grid. Null is ignored.
 *
 * # Safety
 * `grid` must be null or a handle from [`om_state_sample`] not yet freed.
 */
void om_grid_free(struct OmGrid *grid);

/**
 * Axis point counts.
 *
 * # Safety
 * `grid` must be null or a live handle, `nx` and `np` null or valid for writes.
 */
enum OmStatus om_grid_shape(const struct OmGrid *grid, size_t *nx, size_t *np);

/**
 * Copies the values, row-major over p then x (`nx * np` doubles).
 *
 * # Safety
 * `grid` must be null or a live handle, `buf` null or valid for `len` writes.
 */
enum OmStatus om_grid_values(const struct OmGrid *grid, double *buf, size_t len);

/**
 * Copies the lab-frame axis coordinates into `xs` (`nx` doubles) and `ps` (`np`).
 *
 * # Safety
 * `grid` must be null or a live handle; `xs`, `ps` null or valid for `nx_len`, `np_len`
 * writes.
 */
enum OmStatus om_grid_axes(const struct OmGrid *grid,
                           double *xs,
                           size_t nx_len,
                           double *ps,
                           size_t np_len);

/**
 * Total negativity, macroscopicity, moments and fringe spacing of a grid.
 *
 * # Safety
 * `grid` must be null or a live handle, `out` null or valid for writes.
 */
enum OmStatus om_grid_metrics(const struct OmGrid *grid, struct OmMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OPTOMECH_H */
