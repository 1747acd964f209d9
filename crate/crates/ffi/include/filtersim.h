#ifndef FILTERSIM_H
#define FILTERSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FsStatus {
  FS_STATUS_OK = 0,
  FS_STATUS_NULL_POINTER = 1,
  FS_STATUS_INVALID_UTF8 = 2,
  FS_STATUS_PARSE = 3,
  FS_STATUS_INVALID_CONFIG = 4,
  FS_STATUS_IO = 5,
  FS_STATUS_DISCONNECTED = 6,
  FS_STATUS_NOT_CONVERGED = 7,
  FS_STATUS_OUT_OF_RANGE = 8,
  FS_STATUS_NOT_FINISHED = 9,
  FS_STATUS_PANIC = 10,
} FsStatus;

/**
 * Why a run ended; `Running` while it goes on.
 */
typedef enum FsStop {
  FS_STOP_RUNNING = 0,
  FS_STOP_FLOW_STOPPED = 1,
  FS_STOP_TIME_LIMIT = 2,
  FS_STOP_DEGENERATE = 3,
} FsStop;

/**
 * Opaque configuration handle.
 */
typedef struct FsConfig FsConfig;

/**
 * Opaque simulation handle.
 */
typedef struct FsSimulation FsSimulation;

/**
 * Filter state at one recorded time.
 */
typedef struct FsSnapshot {
  /**
   * Seconds since the start.
   */
  double time;
  /**
   * Total flow through the filter, m^3/s.
   */
  double total_flow;
  uintptr_t open;
  uintptr_t blocked;
  uintptr_t sealed;
  uintptr_t caught;
  uintptr_t side_sealed;
} FsSnapshot;

typedef struct FsMembraneCounts {
  uintptr_t open;
  uintptr_t blocked;
  uintptr_t sealed;
  uintptr_t caught;
} FsMembraneCounts;

/**
 * Inputs for recovering the rate constant; SI units.
 */
typedef struct FsCalibrationInput {
  double growth_rate;
  double c0_mass;
  double mu0;
  double mu2;
  double rho2;
  uint32_t order;
  uint32_t n2;
  double diffusivity;
  double radius;
} FsCalibrationInput;

typedef struct FsCalibration {
  double rate_constant;
  double c0;
  double c1;
  double v_stat;
} FsCalibration;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread; empty if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *fs_last_error(void);

/**
 * Parses a TOML configuration. A schedule file in `r_filter` is not
 * supported here; use [`fs_config_load`].
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FsStatus fs_config_parse(const char *toml, struct FsConfig **out);

/**
 * Reads a configuration file, resolving a relative schedule path.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FsStatus fs_config_load(const char *path, struct FsConfig **out);

/**
 * # Safety
 * `config` must come from this library and not be used afterwards.
 */
void fs_config_free(struct FsConfig *config);

/**
 * # Safety
 * `config` must be a live handle.
 */
enum FsStatus fs_config_set_seed(struct FsConfig *config, uint64_t seed);

/**
 * Limits simulated time (s); a non-positive value removes the limit.
 *
 * # Safety
 * `config` must be a live handle.
 */
enum FsStatus fs_config_set_time_limit(struct FsConfig *config, double seconds);

/**
 * Selects the blocking law: 0 simple, 1 corrected.
 *
 * # Safety
 * `config` must be a live handle.
 */
enum FsStatus fs_config_set_blocking_law(struct FsConfig *config, uint32_t law);

/**
 * Starts a simulation: builds the grid and solves the clean filter.
 *
 * # Safety
 * `config` must be a live handle and `out` a valid pointer.
 */
enum FsStatus fs_simulation_new(const struct FsConfig *config, struct FsSimulation **out);

/**
 * # Safety
 * `sim` must come from this library and not be used afterwards.
 */
void fs_simulation_free(struct FsSimulation *sim);

/**
 * Advances one time step.
 *
 * # Safety
 * `sim` must be a live handle; `stop` may be null.
 */
enum FsStatus fs_simulation_step(struct FsSimulation *sim, enum FsStop *stop);

/**
 * Steps until the run stops.
 *
 * # Safety
 * `sim` must be a live handle; `stop` may be null.
 */
enum FsStatus fs_simulation_run(struct FsSimulation *sim, enum FsStop *stop);

/**
 * Number of recorded snapshots (the clean state is the first).
 *
 * # Safety
 * `sim` must be a live handle or null.
 */
uintptr_t fs_simulation_snapshot_count(const struct FsSimulation *sim);

/**
 * Copies snapshot `index` into `out`.
 *
 * # Safety
 * `sim` must be a live handle and `out` a valid pointer.
 */
enum FsStatus fs_simulation_snapshot(const struct FsSimulation *sim,
                                     uintptr_t index,
                                     struct FsSnapshot *out);

/**
 * # Safety
 * `sim` must be a live handle or null.
 */
uintptr_t fs_simulation_membrane_count(const struct FsSimulation *sim);

/**
 * Current counts of membrane `index` (0-based, inlet side first).
 *
 * # Safety
 * `sim` must be a live handle and `out` a valid pointer.
 */
enum FsStatus fs_simulation_membrane(const struct FsSimulation *sim,
                                     uintptr_t index,
                                     struct FsMembraneCounts *out);

/**
 * Writes the trace CSV of a finished run into a new string; release it
 * with [`fs_string_free`].
 *
 * # Safety
 * `sim` must be a live handle and `out` a valid pointer.
 */
enum FsStatus fs_simulation_trace_csv(const struct FsSimulation *sim, char **out);

/**
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void fs_string_free(char *s);

/**
 * Probability that a rod of length `l` passes an aperture of radius `r`;
 * NaN for negative or non-finite input.
 */
double fs_pass_probability(double r, double l);

/**
 * Aperture radius that catches a fraction `catch` of rods of length `l`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum FsStatus fs_radius_for_catch(double catch_, double l, double *out);

/**
 * Recovers the rate constant from a growth rate observed under slow flow.
 *
 * # Safety
 * `input` and `out` must be valid pointers.
 */
enum FsStatus fs_calibrate(const struct FsCalibrationInput *input, struct FsCalibration *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FILTERSIM_H */
