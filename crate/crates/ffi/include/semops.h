#ifndef SEMOPS_H
#define SEMOPS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Top-k algorithm selector for [`semops_sem_topk`].
 */
typedef enum SemopsAlgorithm {
  SEMOPS_ALGORITHM_QUADRATIC = 0,
  SEMOPS_ALGORITHM_HEAP = 1,
  SEMOPS_ALGORITHM_QUICKSELECT = 2,
} SemopsAlgorithm;

/**
 * Result of every fallible call.
 */
typedef enum SemopsStatus {
  SEMOPS_STATUS_OK = 0,
  SEMOPS_STATUS_NULL_ARGUMENT = 1,
  SEMOPS_STATUS_INVALID_UTF8 = 2,
  SEMOPS_STATUS_TABLE = 3,
  SEMOPS_STATUS_LANGEX = 4,
  SEMOPS_STATUS_INDEX = 5,
  SEMOPS_STATUS_MODEL = 6,
  SEMOPS_STATUS_INVALID_ARGUMENT = 7,
  SEMOPS_STATUS_PIPELINE_VALIDATION = 8,
  SEMOPS_STATUS_PIPELINE_RUNTIME = 9,
  SEMOPS_STATUS_PANIC = 10,
} SemopsStatus;

/**
 * Opaque session handle. Backends and the embedder can be added until the
 * first operator call; adding more afterwards starts a fresh session (and
 * fresh metrics).
 */
typedef struct SemopsSession SemopsSession;

/**
 * Opaque table handle.
 */
typedef struct SemopsTable SemopsTable;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Valid until the
 * next call on the same thread; do not free.
 */
const char *semops_last_error(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void semops_string_free(char *s);

/**
 * # Safety
 * `path` must be a valid C string; `out` a valid pointer.
 */
enum SemopsStatus semops_table_load_csv(const char *path, struct SemopsTable **out);

/**
 * # Safety
 * `table` must be a live handle; `path` a valid C string.
 */
enum SemopsStatus semops_table_write_csv(const struct SemopsTable *table, const char *path);

/**
 * Row count, or 0 for NULL.
 *
 * # Safety
 * `table` must be NULL or a live handle.
 */
size_t semops_table_row_count(const struct SemopsTable *table);

/**
 * Column count, or 0 for NULL.
 *
 * # Safety
 * `table` must be NULL or a live handle.
 */
size_t semops_table_column_count(const struct SemopsTable *table);

/**
 * # Safety
 * `table` must be a live handle; `out` a valid pointer.
 */
enum SemopsStatus semops_table_column_name(const struct SemopsTable *table,
                                           size_t index,
                                           char **out);

/**
 * Cell text; a null cell sets `*out` to NULL.
 *
 * # Safety
 * `table` must be a live handle; `column` a valid C string; `out` valid.
 */
enum SemopsStatus semops_table_cell_text(const struct SemopsTable *table,
                                         const char *column,
                                         size_t row,
                                         char **out);

/**
 * # Safety
 * `table` must be NULL or a handle not yet freed.
 */
void semops_table_free(struct SemopsTable *table);

/**
 * Checks `langex` against one table, or against a left/right pair when
 * `right` is non-NULL.
 *
 * # Safety
 * Pointers must be valid; `right` may be NULL.
 */
enum SemopsStatus semops_langex_validate(const char *langex,
                                         const struct SemopsTable *left,
                                         const struct SemopsTable *right);

/**
 * New session with no backends. `parallelism` 0 picks the default.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SemopsStatus semops_session_new(size_t parallelism, uint64_t seed, struct SemopsSession **out);

/**
 * # Safety
 * `session` must be NULL or a handle not yet freed.
 */
void semops_session_free(struct SemopsSession *session);

/**
 * Adds a scripted mock: the answer of the first rule whose needle occurs in
 * the prompt, else `default_answer`. The first backend added is the default.
 *
 * # Safety
 * `needles` and `answers` must each point to `n_rules` valid C strings.
 */
enum SemopsStatus semops_session_add_scripted(struct SemopsSession *session,
                                              const char *id,
                                              const char *default_answer,
                                              const char *const *needles,
                                              const char *const *answers,
                                              size_t n_rules);

/**
 * Adds a hidden-key mock over the text cells of `table`.
 *
 * # Safety
 * Pointers must be valid C strings / live handles.
 */
enum SemopsStatus semops_session_add_keyed(struct SemopsSession *session,
                                           const char *id,
                                           const struct SemopsTable *table,
                                           const char *key_column,
                                           double temperature,
                                           uint64_t seed);

/**
 * Adds a chat-completions HTTP backend. `api_key_env` may be NULL.
 *
 * # Safety
 * Pointers must be valid C strings.
 */
enum SemopsStatus semops_session_add_http(struct SemopsSession *session,
                                          const char *id,
                                          const char *base_url,
                                          const char *model,
                                          const char *api_key_env);

/**
 * # Safety
 * `session` must be a live handle.
 */
enum SemopsStatus semops_session_set_hash_embedder(struct SemopsSession *session,
                                                   size_t dimension,
                                                   uint64_t seed);

/**
 * Per-operator call counters as JSON.
 *
 * # Safety
 * `session` must be a live handle; `out` valid.
 */
enum SemopsStatus semops_session_metrics_json(struct SemopsSession *session, char **out);

/**
 * Builds and persists an index on `column`; `*out` has it attached.
 *
 * # Safety
 * Pointers must be valid C strings / live handles.
 */
enum SemopsStatus semops_sem_index(struct SemopsSession *session,
                                   const struct SemopsTable *table,
                                   const char *column,
                                   const char *dir,
                                   struct SemopsTable **out);

/**
 * Loads a persisted index for `column`; `*out` has it attached.
 *
 * # Safety
 * Pointers must be valid C strings / live handles.
 */
enum SemopsStatus semops_load_sem_index(struct SemopsSession *session,
                                        const struct SemopsTable *table,
                                        const char *column,
                                        const char *dir,
                                        struct SemopsTable **out);

/**
 * # Safety
 * Pointers must be valid C strings / live handles.
 */
enum SemopsStatus semops_sem_search(struct SemopsSession *session,
                                    const struct SemopsTable *table,
                                    const char *column,
                                    const char *query,
                                    size_t k,
                                    struct SemopsTable **out);

/**
 * Keeps rows the model judges true. `backend` may be NULL for the default.
 *
 * # Safety
 * Pointers must be valid C strings / live handles.
 */
enum SemopsStatus semops_sem_filter(struct SemopsSession *session,
                                    const struct SemopsTable *table,
                                    const char *langex,
                                    const char *backend,
                                    struct SemopsTable **out);

/**
 * Best `k` rows, best first, using the session's default backend.
 *
 * # Safety
 * Pointers must be valid C strings / live handles.
 */
enum SemopsStatus semops_sem_topk(struct SemopsSession *session,
                                  const struct SemopsTable *table,
                                  const char *langex,
                                  size_t k,
                                  enum SemopsAlgorithm algorithm,
                                  uint64_t pivot_seed,
                                  struct SemopsTable **out);

/**
 * Runs a pipeline file. Metrics JSON is returned through `metrics_json`
 * (may be NULL) on success and on runtime failure.
 *
 * # Safety
 * `path` must be a valid C string; `out` valid; `metrics_json` NULL or valid.
 */
enum SemopsStatus semops_run_pipeline_file(const char *path,
                                           struct SemopsTable **out,
                                           char **metrics_json);

/**
 * Binary-relevance nDCG@k of `ranked` against the ordered `truth`.
 * Returns NaN when either pointer is NULL with a non-zero length.
 *
 * # Safety
 * `ranked` / `truth` must point to `n_ranked` / `n_truth` values.
 */
double semops_ndcg_at_k(const size_t *ranked,
                        size_t n_ranked,
                        const size_t *truth,
                        size_t n_truth,
                        size_t k);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* SEMOPS_H */
