#ifndef QGR_H
#define QGR_H

/* Generated by cbindgen. Do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible entry point.
 */
typedef enum QgrStatus {
  QGR_STATUS_OK = 0,
  QGR_STATUS_NULL_POINTER = 1,
  QGR_STATUS_INVALID_UTF8 = 2,
  QGR_STATUS_PARSE = 3,
  QGR_STATUS_VALIDATION = 4,
  QGR_STATUS_NUMERICAL = 5,
  QGR_STATUS_PANIC = 6,
} QgrStatus;

/**
 * Opaque scenario handle.
 */
typedef struct QgrScenario QgrScenario;

/**
 * Pass/fail counts of one suite run.
 */
typedef struct QgrSummary {
  size_t pass;
  size_t fail;
  /**
   * Relative residual of the check closest to (or furthest past) its tolerance.
   */
  double worst_rel_residual;
} QgrSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *qgr_version(void);

/**
 * Message of the last failed call on this thread, or NULL.
 *
 * The pointer stays valid until the next fallible call on the same thread.
 */
const char *qgr_last_error_message(void);

/**
 * Parse and build a scenario from a JSON config.
 *
 * # Safety
 * `json` must be a valid NUL-terminated string and `out` a writable pointer.
 */
enum QgrStatus qgr_scenario_from_json(const char *json, struct QgrScenario **out);

/**
 * Release a scenario. NULL is ignored.
 *
 * # Safety
 * `h` must come from [`qgr_scenario_from_json`] and not be freed twice.
 */
void qgr_scenario_free(struct QgrScenario *h);

/**
 * Number of grid points of the scenario, or 0 for NULL.
 *
 * # Safety
 * `h` must be NULL or a live handle.
 */
size_t qgr_scenario_grid_n(const struct QgrScenario *h);

/**
 * Run the verification suite and write the pass/fail summary.
 *
 * # Safety
 * `h` must be a live handle and `out` a writable pointer.
 */
enum QgrStatus qgr_scenario_run(const struct QgrScenario *h, struct QgrSummary *out);

/**
 * Run the suite and return the full JSON report, identical to `qgr verify`.
 *
 * # Safety
 * `h` must be a live handle and `out` a writable pointer. The string written
 * to `out` must be released with [`qgr_string_free`].
 */
enum QgrStatus qgr_scenario_report_json(const struct QgrScenario *h, char **out);

/**
 * Release a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void qgr_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QGR_H */
