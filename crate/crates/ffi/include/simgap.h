#ifndef SIMGAP_H
#define SIMGAP_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SimgapStatus {
  SIMGAP_STATUS_OK = 0,
  SIMGAP_STATUS_NULL_POINTER = 1,
  SIMGAP_STATUS_INVALID_ARGUMENT = 2,
  SIMGAP_STATUS_FORMAT = 3,
  SIMGAP_STATUS_IO = 4,
  SIMGAP_STATUS_COMPUTATION = 5,
  SIMGAP_STATUS_INVARIANT = 6,
  SIMGAP_STATUS_PANIC = 7,
} SimgapStatus;

typedef enum SimgapCorpus {
  SIMGAP_CORPUS_SIM = 0,
  SIMGAP_CORPUS_PHY = 1,
} SimgapCorpus;

typedef struct SimgapKernelSet SimgapKernelSet;

typedef struct SimgapSchema SimgapSchema;

typedef struct SimgapTransition SimgapTransition;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *simgap_version(void);

/**
 * Message of the last failed call on this thread, or an empty string.
 * Valid until the next simgap call on the same thread.
 */
const char *simgap_last_error_message(void);

/**
 * Parse a schema from TOML text.
 *
 * # Safety
 * `text` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum SimgapStatus simgap_schema_from_toml(const char *text, struct SimgapSchema **out);

/**
 * Load a schema from a TOML file.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum SimgapStatus simgap_schema_load(const char *path, struct SimgapSchema **out);

/**
 * # Safety
 * `schema` must be null or a handle from this library not yet freed.
 */
void simgap_schema_free(struct SimgapSchema *schema);

/**
 * Number of state channels, or 0 for a null handle.
 *
 * # Safety
 * `schema` must be null or a live handle.
 */
size_t simgap_schema_state_dim(const struct SimgapSchema *schema);

/**
 * Number of action channels, or 0 for a null handle.
 *
 * # Safety
 * `schema` must be null or a live handle.
 */
size_t simgap_schema_action_dim(const struct SimgapSchema *schema);

/**
 * Weighted L1 distance between two states of length `len`.
 *
 * # Safety
 * `a` and `b` must point to `len` doubles; `out` must be valid.
 */
enum SimgapStatus simgap_schema_distance(const struct SimgapSchema *schema,
                                         const double *a,
                                         const double *b,
                                         size_t len,
                                         double *out);

/**
 * Quantize a state into `out_bins` (capacity `cap`). The required length is
 * written to `out_len` when it is non-null, even on a short buffer.
 *
 * # Safety
 * `s` must point to `len` doubles and `out_bins` to `cap` int64 slots.
 */
enum SimgapStatus simgap_schema_quantize(const struct SimgapSchema *schema,
                                         const double *s,
                                         size_t len,
                                         int64_t *out_bins,
                                         size_t cap,
                                         size_t *out_len);

/**
 * Parse a kernel set from JSON text.
 *
 * # Safety
 * `text` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum SimgapStatus simgap_kernels_from_json(const char *text, struct SimgapKernelSet **out);

/**
 * Load a kernel set from a JSON file.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum SimgapStatus simgap_kernels_load(const char *path, struct SimgapKernelSet **out);

/**
 * # Safety
 * `ks` must be null or a handle from this library not yet freed.
 */
void simgap_kernels_free(struct SimgapKernelSet *ks);

/**
 * Number of kernels, or 0 for a null handle.
 *
 * # Safety
 * `ks` must be null or a live handle.
 */
size_t simgap_kernels_len(const struct SimgapKernelSet *ks);

/**
 * Lowest-id kernel active at `s` with activation at least `theta_act`.
 * Writes its id to `out_id`, or -1 when none is active.
 *
 * # Safety
 * Handles must be live, `s` must point to `len` doubles, `out_id` valid.
 */
enum SimgapStatus simgap_kernels_select(const struct SimgapKernelSet *ks,
                                        const struct SimgapSchema *schema,
                                        const double *s,
                                        size_t len,
                                        double theta_act,
                                        int64_t *out_id);

/**
 * Apply kernel `id` to state `s` and action `a`, writing the predicted next
 * state into `out` (capacity `cap`). Output is not clamped.
 *
 * # Safety
 * `s` must point to `len` doubles, `a` to `alen` doubles, `out` to `cap`.
 */
enum SimgapStatus simgap_kernels_predict(const struct SimgapKernelSet *ks,
                                         uint32_t id,
                                         const double *s,
                                         size_t len,
                                         const double *a,
                                         size_t alen,
                                         double *out,
                                         size_t cap,
                                         size_t *out_len);

/**
 * Build an empirical transition table from a JSONL transition log.
 *
 * # Safety
 * `schema` must be live, `path` a valid NUL-terminated string, `out` valid.
 */
enum SimgapStatus simgap_transition_from_log(const struct SimgapSchema *schema,
                                             const char *path,
                                             enum SimgapCorpus corpus,
                                             struct SimgapTransition **out);

/**
 * # Safety
 * `t` must be null or a handle from this library not yet freed.
 */
void simgap_transition_free(struct SimgapTransition *t);

/**
 * Records the table was estimated from, or 0 for a null handle.
 *
 * # Safety
 * `t` must be null or a live handle.
 */
size_t simgap_transition_record_count(const struct SimgapTransition *t);

/**
 * Distinct source states, or 0 for a null handle.
 *
 * # Safety
 * `t` must be null or a live handle.
 */
size_t simgap_transition_source_count(const struct SimgapTransition *t);

/**
 * Distinct (source, successor) edges, or 0 for a null handle.
 *
 * # Safety
 * `t` must be null or a live handle.
 */
size_t simgap_transition_edge_count(const struct SimgapTransition *t);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SIMGAP_H */
