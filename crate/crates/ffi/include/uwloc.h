#ifndef UWLOC_H
#define UWLOC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum UwlocStatus {
  UWLOC_STATUS_OK = 0,
  UWLOC_STATUS_NULL_POINTER = 1,
  UWLOC_STATUS_INVALID_ARGUMENT = 2,
  UWLOC_STATUS_CONFIG = 3,
  UWLOC_STATUS_NUMERICAL = 4,
  UWLOC_STATUS_PANIC = 5,
} UwlocStatus;

typedef enum UwlocWeighting {
  UWLOC_WEIGHTING_FULL_COVARIANCE = 0,
  UWLOC_WEIGHTING_STRUCTURED_IDENTITY = 1,
  UWLOC_WEIGHTING_PLAIN_IDENTITY = 2,
} UwlocWeighting;

/**
 * Opaque scenario handle.
 */
typedef struct UwlocScenario UwlocScenario;

typedef struct UwlocBound {
  /**
   * Unknown-speed bounds on the mean squared errors (m², m²/s², m²/s²).
   */
  double crlb_position;
  double crlb_velocity;
  double crlb_speed;
  /**
   * Known-speed bounds on the mean squared errors.
   */
  double known_position;
  double known_velocity;
  double position_gap_db;
  double velocity_gap_db;
} UwlocBound;

/**
 * Inputs of [`uwloc_estimate`].
 *
 * `tdoa`, `fdoa` hold `sensor_count - 1` values each, with sensor 0 as
 * reference. `sensor_positions`, `sensor_velocities` hold `3 * sensor_count`
 * values, xyz per sensor. Noise fields are read only in full-covariance
 * mode; `b` may be null for unit weights, otherwise it holds
 * `sensor_count` values.
 */
typedef struct UwlocEstimateInput {
  size_t sensor_count;
  const double *tdoa;
  const double *fdoa;
  const double *sensor_positions;
  const double *sensor_velocities;
  enum UwlocWeighting mode;
  uint32_t n_iter;
  double sigma_d;
  double sigma_s;
  const double *b;
  /**
   * Speed used to scale the measurement covariance, m/s.
   */
  double speed_hint;
} UwlocEstimateInput;

typedef struct UwlocEstimate {
  double position[3];
  double velocity[3];
  double speed;
  /**
   * Row-major covariance of `[position, velocity, speed]`.
   */
  double covariance[49];
  uint32_t iterations_used;
  uint32_t warning_count;
} UwlocEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Built-in ten-sensor scenario.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum UwlocStatus uwloc_scenario_default(struct UwlocScenario **out);

/**
 * Load a scenario file; `"default"` selects the built-in one.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum UwlocStatus uwloc_scenario_from_file(const char *path, struct UwlocScenario **out);

/**
 * Release a scenario. Null is ignored.
 *
 * # Safety
 * `scenario` must come from this library and not be used afterwards.
 */
void uwloc_scenario_free(struct UwlocScenario *scenario);

/**
 * # Safety
 * `scenario` must be a live handle and `out` a valid pointer.
 */
enum UwlocStatus uwloc_scenario_sensor_count(const struct UwlocScenario *scenario, size_t *out);

/**
 * Noise-free TDOA/FDOA of the scenario at speed `c`, reference sensor 0.
 * `tdoa` and `fdoa` must each hold `len = sensor_count - 1` values.
 *
 * # Safety
 * Pointers must be valid for `len` writes.
 */
enum UwlocStatus uwloc_scenario_measurements(const struct UwlocScenario *scenario,
                                             double c,
                                             double *tdoa,
                                             double *fdoa,
                                             size_t len);

/**
 * Nominal sensor positions and velocities of the scenario, xyz per sensor.
 * Both arrays must hold `3 * sensor_count` values.
 *
 * # Safety
 * Pointers must be valid for `len` writes.
 */
enum UwlocStatus uwloc_scenario_sensors(const struct UwlocScenario *scenario,
                                        double *positions,
                                        double *velocities,
                                        size_t len);

/**
 * Unknown- and known-speed bounds of the scenario at speed `c`.
 *
 * # Safety
 * `scenario` must be a live handle and `out` a valid pointer.
 */
enum UwlocStatus uwloc_scenario_crlb(const struct UwlocScenario *scenario,
                                     double c,
                                     double sigma_d,
                                     double sigma_s,
                                     struct UwlocBound *out);

/**
 * Run the two-stage estimator.
 *
 * # Safety
 * `input` must be valid and its arrays sized as documented on
 * [`UwlocEstimateInput`]; `out` must be a valid pointer.
 */
enum UwlocStatus uwloc_estimate(const struct UwlocEstimateInput *input, struct UwlocEstimate *out);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library on the same thread.
 */
const char *uwloc_last_error_message(void);

/**
 * Static description of a status code.
 */
const char *uwloc_status_string(enum UwlocStatus status);

/**
 * Library version, NUL-terminated.
 */
const char *uwloc_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UWLOC_H */
