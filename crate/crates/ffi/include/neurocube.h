#ifndef NEUROCUBE_H
#define NEUROCUBE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Status codes returned by every fallible function.
typedef enum NcStatus {
  NC_STATUS_OK = 0,
  NC_STATUS_NULL_ARGUMENT = 1,
  NC_STATUS_INVALID_UTF8 = 2,
  NC_STATUS_IO = 3,
  NC_STATUS_FORMAT = 4,
  NC_STATUS_SCHEMA = 5,
  NC_STATUS_FINGERPRINT_MISMATCH = 6,
  NC_STATUS_INVALID_STATE = 7,
  NC_STATUS_SHAPE = 8,
  NC_STATUS_UNSUPPORTED = 9,
  NC_STATUS_FEATURE_DISABLED = 10,
  NC_STATUS_EMPTY_AGGREGATE = 11,
  NC_STATUS_INVALID_ARGUMENT = 12,
  NC_STATUS_PANIC = 13,
  NC_STATUS_OTHER = 14,
} NcStatus;

// A trained model.
typedef struct NcModel NcModel;

// Binned records answering exact queries.
typedef struct NcStore NcStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until the
// next failing call on the same thread.
const char *nc_last_error(void);

// Library version, a static string.
const char *nc_version(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not be freed twice.
void nc_string_free(char *s);

// Loads a native checkpoint.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum NcStatus nc_model_load(const char *path, struct NcModel **out);

// Releases a model. Null is ignored.
//
// # Safety
// `m` must come from [`nc_model_load`] and not be freed twice.
void nc_model_free(struct NcModel *m);

// Width of one many-hot query, or 0 for a null model.
//
// # Safety
// `m` must be null or a live model handle.
size_t nc_model_input_width(const struct NcModel *m);

// Schema fingerprint, or 0 for a null model.
//
// # Safety
// `m` must be null or a live model handle.
uint64_t nc_model_fingerprint(const struct NcModel *m);

// Predicts `n` queries given row-major as `n * input_width` values of 0.0 or 1.0.
// Writes `n` predictions to `out`.
//
// # Safety
// `queries` must hold `n * input_width` doubles and `out` room for `n`.
enum NcStatus nc_model_predict(const struct NcModel *m,
                               const double *queries,
                               size_t n,
                               double *out);

// All group-by vectors for a state, as dashboard-response JSON. `store` may be
// null unless `with_oracle` is set; `state_json` may be null for the full state.
//
// # Safety
// Pointers must be null or valid; `out` must be writable.
enum NcStatus nc_model_dashboard(const struct NcModel *m,
                                 const struct NcStore *store,
                                 const char *state_json,
                                 bool with_oracle,
                                 char **out);

// Latent points of a 1-D attribute under a context state, as a JSON array.
//
// # Safety
// Pointers must be null or valid; `out` must be writable.
enum NcStatus nc_model_latent(const struct NcModel *m,
                              const char *attribute,
                              const char *context_json,
                              char **out);

// The portable JSON export as a string.
//
// # Safety
// `m` must be a live handle; `out` must be writable.
enum NcStatus nc_model_portable_json(const struct NcModel *m, char **out);

// Writes the portable JSON export to `path`.
//
// # Safety
// `m` must be a live handle; `path` a NUL-terminated string.
enum NcStatus nc_model_export(const struct NcModel *m, const char *path);

// Loads a store cache written by `neurocube ingest` under the schema at `schema_path`.
//
// # Safety
// Paths must be NUL-terminated strings; `out` must be writable.
enum NcStatus nc_store_load(const char *schema_path, const char *cache_path, struct NcStore **out);

// Bins a CSV file under the schema at `schema_path`. Rejected rows are skipped;
// their count is written to `rejected` when it is not null.
//
// # Safety
// Paths must be NUL-terminated strings; `out` must be writable.
enum NcStatus nc_store_ingest_csv(const char *schema_path,
                                  const char *csv_path,
                                  struct NcStore **out,
                                  size_t *rejected);

// Releases a store. Null is ignored.
//
// # Safety
// `s` must come from this library and not be freed twice.
void nc_store_free(struct NcStore *s);

// Number of records, or 0 for a null store.
//
// # Safety
// `s` must be null or a live store handle.
size_t nc_store_len(const struct NcStore *s);

// Exact aggregate of a state (null for the full state). An average over no
// records returns [`NcStatus::EmptyAggregate`].
//
// # Safety
// Pointers must be null or valid; `out` must be writable.
enum NcStatus nc_store_aggregate(const struct NcStore *s, const char *state_json, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NEUROCUBE_H */
