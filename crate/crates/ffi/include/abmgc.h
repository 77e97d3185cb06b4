#ifndef ABMGC_H
#define ABMGC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum {
  ABMGC_STATUS_OK = 0,
  ABMGC_STATUS_NULL_POINTER = 1,
  ABMGC_STATUS_INVALID_ARGUMENT = 2,
  ABMGC_STATUS_DIMENSION = 3,
  ABMGC_STATUS_PARSE = 4,
  ABMGC_STATUS_IO = 5,
  ABMGC_STATUS_RUNTIME = 6,
  ABMGC_STATUS_UNDEFINED_METRIC = 7,
  ABMGC_STATUS_PANIC = 8,
} AbmgcStatus;

typedef enum {
  ABMGC_SYSTEM_BOID = 0,
  ABMGC_SYSTEM_KURAMOTO = 1,
} AbmgcSystem;

typedef enum {
  ABMGC_METHOD_ABM = 0,
  ABMGC_METHOD_ABM_NO_NAV = 1,
  ABMGC_METHOD_ABM_NO_TG = 2,
  ABMGC_METHOD_ABM_NO_NAV_NO_TG = 3,
  ABMGC_METHOD_GVAR = 4,
  ABMGC_METHOD_LINEAR_GC = 5,
  ABMGC_METHOD_LOCAL_TE = 6,
} AbmgcMethod;

/**
 * Training, baseline and simulation settings.
 */
typedef struct AbmgcConfig AbmgcConfig;

/**
 * Aggregated GC strengths.
 */
typedef struct AbmgcGc AbmgcGc;

/**
 * A trajectory or phase series.
 */
typedef struct AbmgcSeries AbmgcSeries;

/**
 * Scores of one prediction; undefined entries are NaN.
 */
typedef struct {
  double auroc;
  double auprc;
  double acc;
  double ba;
  double ba_pos;
  double ba_neg;
} AbmgcMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *abmgc_version(void);

/**
 * Copy the calling thread's last error message into `buf` (truncated and
 * NUL-terminated when `len > 0`). Returns the size needed including the
 * terminator; 1 means no error.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t abmgc_last_error(char *buf, size_t len);

/**
 * Series from positions `[steps][agents][spatial]`; velocities by forward
 * differences.
 *
 * # Safety
 * `positions` must hold `steps * agents * spatial` values; `out` must be
 * writable.
 */
AbmgcStatus abmgc_series_from_positions(const double *positions,
                                        size_t steps,
                                        size_t agents,
                                        size_t spatial,
                                        double dt,
                                        AbmgcSeries **out);

/**
 * Series from unwrapped phases `[steps][agents]`.
 *
 * # Safety
 * `phases` must hold `steps * agents` values; `out` must be writable.
 */
AbmgcStatus abmgc_series_from_phases(const double *phases,
                                     size_t steps,
                                     size_t agents,
                                     double dt,
                                     AbmgcSeries **out);

/**
 * Read a trajectory (`frame,agent,x,y[,z]`) or phase (`frame,agent,phase`)
 * CSV sampled every `dt` seconds.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
AbmgcStatus abmgc_series_read_csv(const char *path, double dt, AbmgcSeries **out);

/**
 * Simulate one trial. `truth` (`agents * agents`, signed relations) and
 * `omega` (`agents`, Kuramoto only) may be null.
 *
 * # Safety
 * Non-null buffers must have the sizes above; `out` must be writable.
 */
AbmgcStatus abmgc_simulate(AbmgcSystem system,
                           size_t agents,
                           size_t steps,
                           uint64_t seed,
                           AbmgcSeries **out,
                           int8_t *truth,
                           double *omega);

/**
 * Number of steps, or 0 for a null handle.
 *
 * # Safety
 * `series` must be null or a live handle.
 */
size_t abmgc_series_steps(const AbmgcSeries *series);

/**
 * Number of agents, or 0 for a null handle.
 *
 * # Safety
 * `series` must be null or a live handle.
 */
size_t abmgc_series_agents(const AbmgcSeries *series);

/**
 * # Safety
 * `series` must be null or a handle not yet freed.
 */
void abmgc_series_free(AbmgcSeries *series);

/**
 * Default configuration.
 */
AbmgcConfig *abmgc_config_new(void);

/**
 * Load a TOML configuration file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
AbmgcStatus abmgc_config_read_toml(const char *path, AbmgcConfig **out);

/**
 * Set one numeric setting. Keys: `epochs`, `learning_rate`, `decay`,
 * `lambda`, `beta`, `gamma`, `alpha`, `sigma`, `seed`, `lags`, `hidden`,
 * `batch_size`, `theory_guided` (0 or 1), `mode` (0 full, 1 without
 * navigation, 2 GVAR), `te_bins`.
 *
 * # Safety
 * `config` must be a live handle and `key` a NUL-terminated string.
 */
AbmgcStatus abmgc_config_set(AbmgcConfig *config, const char *key, double value);

/**
 * # Safety
 * `config` must be null or a handle not yet freed.
 */
void abmgc_config_free(AbmgcConfig *config);

/**
 * Run a method on one series. Phase series need the intrinsic frequencies
 * in `omega` (`agents` values); pass null for trajectories.
 *
 * # Safety
 * Handles must be live; `omega` null or sized as above; `out` writable.
 */
AbmgcStatus abmgc_run(AbmgcMethod method,
                      const AbmgcSeries *series,
                      const double *omega,
                      const AbmgcConfig *config,
                      AbmgcGc **out);

/**
 * Number of agents, or 0 for a null handle.
 *
 * # Safety
 * `gc` must be null or a live handle.
 */
size_t abmgc_gc_agents(const AbmgcGc *gc);

/**
 * Copy the signed strengths into `out` (`len` must be `p * p`).
 *
 * # Safety
 * `gc` must be live and `out` hold `len` values.
 */
AbmgcStatus abmgc_gc_strengths(const AbmgcGc *gc, double *out, size_t len);

/**
 * Thresholded signed graph into `out` (`len` must be `p * p`).
 *
 * # Safety
 * `gc` must be live and `out` hold `len` values.
 */
AbmgcStatus abmgc_gc_binarize(const AbmgcGc *gc, int8_t *out, size_t len);

/**
 * Score against a `p x p` signed truth. With `is_signed` false the sign
 * metrics are NaN.
 *
 * # Safety
 * `gc` must be live, `truth` hold `p * p` values and `out` be writable.
 */
AbmgcStatus abmgc_evaluate(const AbmgcGc *gc,
                           const int8_t *truth,
                           size_t p,
                           bool is_signed,
                           AbmgcMetrics *out);

/**
 * # Safety
 * `gc` must be null or a handle not yet freed.
 */
void abmgc_gc_free(AbmgcGc *gc);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ABMGC_H */
