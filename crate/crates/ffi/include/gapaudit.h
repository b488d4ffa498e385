#ifndef GAPAUDIT_H
#define GAPAUDIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum GapStatus {
  GAP_STATUS_OK = 0,
  GAP_STATUS_NULL_POINTER = 1,
  GAP_STATUS_INVALID_ARGUMENT = 2,
  GAP_STATUS_PARSE_ERROR = 3,
  GAP_STATUS_IO_ERROR = 4,
  GAP_STATUS_CONFIG_ERROR = 5,
  GAP_STATUS_NUMERIC_ERROR = 6,
  GAP_STATUS_PROTOCOL_ERROR = 7,
  GAP_STATUS_STAGE_FAILED = 8,
  GAP_STATUS_PANIC = 99,
} GapStatus;

// Opaque feature matrix with target column.
typedef struct GapMatrix GapMatrix;

// Opaque fitted model.
typedef struct GapModel GapModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *gap_version(void);

// Message of the last failed call on this thread, or NULL after a success.
// The pointer stays valid until the next call on the same thread.
const char *gap_last_error_message(void);

// # Safety
// `s` must come from this library and not have been freed already.
void gap_string_free(char *s);

// Builds a matrix from `rows x cols` row-major values and `rows` targets.
// Columns are named `x0, x1, ...`.
//
// # Safety
// `data` must point to `rows * cols` doubles, `target` to `rows` doubles.
enum GapStatus gap_matrix_new(uintptr_t rows,
                              uintptr_t cols,
                              const double *data,
                              const double *target,
                              struct GapMatrix **out);

// Reads a matrix CSV (features then target as the last column).
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum GapStatus gap_matrix_from_csv(const char *path, struct GapMatrix **out);

// # Safety
// `m` must be a live matrix handle.
enum GapStatus gap_matrix_shape(const struct GapMatrix *m, uintptr_t *rows, uintptr_t *cols);

// # Safety
// `m` must be NULL or a handle from this library that has not been freed.
void gap_matrix_free(struct GapMatrix *m);

// Fits a named preset on every row of `m`. `n_estimators = 0` keeps the
// preset's tree count.
//
// # Safety
// `m` must be a live matrix handle, `preset` a NUL-terminated string.
enum GapStatus gap_model_fit_preset(const struct GapMatrix *m,
                                    const char *preset,
                                    uint64_t seed,
                                    uintptr_t n_estimators,
                                    struct GapModel **out);

// # Safety
// `model` must be a live model handle.
enum GapStatus gap_model_n_features(const struct GapModel *model, uintptr_t *out);

// Predicts one row of `n_features` values.
//
// # Safety
// `x` must point to `n_features` doubles; `out` must be writable.
enum GapStatus gap_model_predict(const struct GapModel *model,
                                 const double *x,
                                 uintptr_t n_features,
                                 double *out);

// TreeSHAP values of one row: `phi` receives `n_features` values and
// `base_value` the expected model output. Fails for linear models.
//
// # Safety
// `x` and `phi` must each hold `n_features` doubles.
enum GapStatus gap_model_shap(const struct GapModel *model,
                              const double *x,
                              uintptr_t n_features,
                              double *phi,
                              double *base_value);

// Serializes a model; free the string with [`gap_string_free`].
//
// # Safety
// `model` must be a live model handle; `out` must be writable.
enum GapStatus gap_model_to_json(const struct GapModel *model, char **out);

// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum GapStatus gap_model_from_json(const char *json, struct GapModel **out);

// # Safety
// `model` must be NULL or a handle from this library that has not been freed.
void gap_model_free(struct GapModel *model);

// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
//
// # Safety
// `x` and `y` must hold `nx` and `ny` doubles.
enum GapStatus gap_ks_two_sample(const double *x,
                                 uintptr_t nx,
                                 const double *y,
                                 uintptr_t ny,
                                 double *d,
                                 double *p_value);

// Number of compositional descriptors written by [`gap_phase3_descriptors`].
uintptr_t gap_descriptor_count(void);

// Static name of descriptor `i`, or NULL when out of range.
const char *gap_descriptor_name(uintptr_t i);

// Compositional descriptors of `formula` with the embedded element table.
//
// # Safety
// `out` must hold `len` doubles; `len` must equal [`gap_descriptor_count`].
enum GapStatus gap_phase3_descriptors(const char *formula, double *out, uintptr_t len);

// Runs the whole pipeline from a TOML or JSON config into `out_dir`.
//
// # Safety
// Both arguments must be NUL-terminated strings.
enum GapStatus gap_pipeline_run(const char *config_path, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GAPAUDIT_H */
