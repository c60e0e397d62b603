#ifndef CORRWATCH_H
#define CORRWATCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

typedef enum CwAlgorithm {
  CW_ALGORITHM_LOW_RANK = 0,
  CW_ALGORITHM_LAS = 1,
  CW_ALGORITHM_IGP = 2,
} CwAlgorithm;

typedef enum CwStatus {
  CW_STATUS_OK = 0,
  CW_STATUS_NULL_POINTER = 1,
  CW_STATUS_INVALID_ARGUMENT = 2,
  CW_STATUS_NUMERICAL = 3,
  CW_STATUS_IO = 4,
  CW_STATUS_PANIC = 5,
  // An output buffer is too small for the result.
  CW_STATUS_BUFFER_TOO_SMALL = 6,
} CwStatus;

typedef struct CwCorrelation CwCorrelation;

typedef struct CwDataset CwDataset;

typedef struct CwLabels CwLabels;

// Pipeline settings. `k = 0` selects `round(√N)`.
typedef struct CwParams {
  size_t tau_av;
  size_t tau_corr;
  size_t k;
  enum CwAlgorithm algorithm;
  size_t restarts;
  uint64_t seed;
} CwParams;

typedef struct CwDetection {
  bool detected;
  double margin;
  double delta1;
  double delta2;
  double noise_scale;
  double top_eigenvalue;
} CwDetection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. The pointer
// stays valid until the next call into this library on the same thread.
const char *cw_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *cw_version(void);

// Default pipeline settings.
struct CwParams cw_params_default(void);

// Load a data CSV with comma delimiter and inferred interval.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum CwStatus cw_dataset_load_csv(const char *path, struct CwDataset **out);

// Build a dataset from `n_sensors` series of `n_steps` samples each, stored
// sensor-major in `values`. NaN marks a missing sample.
//
// # Safety
// `ids` must hold `n_sensors` NUL-terminated strings and `values`
// `n_sensors * n_steps` doubles.
enum CwStatus cw_dataset_from_values(const char *const *ids,
                                     const double *values,
                                     size_t n_sensors,
                                     size_t n_steps,
                                     struct CwDataset **out);

// # Safety
// `ds` must be a live dataset handle.
size_t cw_dataset_n_sensors(const struct CwDataset *ds);

// # Safety
// `ds` must be a live dataset handle.
size_t cw_dataset_len(const struct CwDataset *ds);

// # Safety
// `ds` must come from this library and not be used afterwards. Null is
// ignored.
void cw_dataset_free(struct CwDataset *ds);

// Empty label registry.
//
// # Safety
// `out` must be a valid pointer.
enum CwStatus cw_labels_new(struct CwLabels **out);

// Load a labels CSV (`sensor_id,tag,tag,...` per line).
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum CwStatus cw_labels_load_csv(const char *path, struct CwLabels **out);

// Attach `n_tags` tags to sensor `id`.
//
// # Safety
// `labels` must be a live handle, `id` a NUL-terminated string and `tags`
// an array of `n_tags` NUL-terminated strings.
enum CwStatus cw_labels_insert(struct CwLabels *labels,
                               const char *id,
                               const char *const *tags,
                               size_t n_tags);

// # Safety
// `labels` must come from this library and not be used afterwards.
void cw_labels_free(struct CwLabels *labels);

// Correlation matrix of the detrended window ending at `t_end`.
//
// # Safety
// `ds` must be a live handle and `out` a valid pointer.
enum CwStatus cw_correlation(const struct CwDataset *ds,
                             size_t tau_av,
                             size_t tau_corr,
                             size_t t_end,
                             struct CwCorrelation **out);

// Number of sensors kept in the matrix.
//
// # Safety
// `cm` must be a live handle.
size_t cw_correlation_size(const struct CwCorrelation *cm);

// Copy the matrix row-major into `buf`, which must hold `size * size`
// doubles, and the dataset index of each row into `positions` (may be null).
//
// # Safety
// `buf` must hold `len` doubles and `positions` `size` entries if non-null.
enum CwStatus cw_correlation_copy(const struct CwCorrelation *cm,
                                  double *buf,
                                  size_t len,
                                  size_t *positions);

// # Safety
// `cm` must come from this library and not be used afterwards.
void cw_correlation_free(struct CwCorrelation *cm);

// Spectral-gap detection on a correlation matrix.
//
// # Safety
// `cm` must be a live handle and `out` a valid pointer.
enum CwStatus cw_detect(const struct CwCorrelation *cm, struct CwDetection *out);

// Localize a group of `k` sensors (`k = 0` for `round(√N)`).
//
// Dataset indices of the selection are written to `selected`, which must
// have room for `capacity` entries; `out_len` receives the group size
// and `out_score` (may be null) the objective value.
//
// # Safety
// Pointers must be valid for the stated sizes.
enum CwStatus cw_localize(const struct CwCorrelation *cm,
                          enum CwAlgorithm algorithm,
                          size_t k,
                          size_t restarts,
                          uint64_t seed,
                          size_t *selected,
                          size_t capacity,
                          size_t *out_len,
                          double *out_score);

// Full pipeline on the window ending at `t_end`, as a JSON record. Free the
// string with [`cw_string_free`].
//
// # Safety
// `ds` and `params` must be valid; `labels` may be null.
enum CwStatus cw_run_json(const struct CwDataset *ds,
                          const struct CwLabels *labels,
                          const struct CwParams *params,
                          size_t t_end,
                          char **out);

// # Safety
// `s` must come from this library and not be used afterwards.
void cw_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CORRWATCH_H */
