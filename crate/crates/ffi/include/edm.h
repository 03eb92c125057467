#ifndef EDM_H
#define EDM_H

/* Generated by cbindgen from edm-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes mirroring the CLI exit codes.
 */
typedef enum EdmStatus {
  Ok = 0,
  /**
   * Configuration, parsing, or I/O failure.
   */
  Error = 2,
  /**
   * Numerical failure (non-finite values).
   */
  Numerical = 3,
  /**
   * Contract violation, e.g. conditional sampling from an unconditional
   * checkpoint.
   */
  Contract = 4,
  /**
   * Null pointer or malformed UTF-8 argument.
   */
  InvalidArgument = 5,
} EdmStatus;

/**
 * Opaque handle to a loaded model checkpoint.
 */
typedef struct EdmModel EdmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version string; static storage, do not free.
 */
const char *edm_version(void);

/**
 * Message describing the most recent failure on this thread; static until
 * the next failing call, do not free.
 */
const char *edm_last_error_message(void);

/**
 * Release a string returned by this library.
 *
 * # Safety
 * `s` must have been returned by an `edm_*` function and not freed before.
 */
void edm_string_free(char *s);

/**
 * Load a checkpoint file into an opaque model handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum EdmStatus edm_model_load(const char *path, struct EdmModel **out);

/**
 * Release a model handle.
 *
 * # Safety
 * `model` must come from [`edm_model_load`] and not be used afterwards.
 */
void edm_model_free(struct EdmModel *model);

/**
 * Sample `n` molecules and return them as extended-XYZ text.
 *
 * `condition` may be null (unconditional model), `"auto"`, or a property
 * value rendered as text.
 *
 * # Safety
 * `model` must be a live handle; `out_xyz` must be a valid pointer; the
 * optional `condition` must be NUL-terminated when non-null.
 */
enum EdmStatus edm_model_sample_xyz(const struct EdmModel *model,
                                    uintptr_t n,
                                    uint64_t seed,
                                    const char *condition,
                                    char **out_xyz);

/**
 * Mean and standard error of the log-likelihood estimator over all
 * molecules in `xyz` (extended-XYZ text), `estimates` draws per molecule.
 *
 * # Safety
 * `model` must be a live handle; `xyz` NUL-terminated; `out_mean` and
 * `out_se` valid pointers.
 */
enum EdmStatus edm_model_nll(const struct EdmModel *model,
                             const char *xyz,
                             uintptr_t estimates,
                             uint64_t seed,
                             double *out_mean,
                             double *out_se);

/**
 * Stability/uniqueness/distance-metric report for extended-XYZ text, with
 * an optional reference set for the distribution metrics.
 *
 * # Safety
 * `xyz` must be NUL-terminated; `reference` may be null; `out_report` must
 * be a valid pointer.
 */
enum EdmStatus edm_eval_report(const char *xyz, const char *reference, char **out_report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EDM_H */
