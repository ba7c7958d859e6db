#ifndef PEAR_H
#define PEAR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum PearStatus {
  PEAR_STATUS_OK = 0,
  // A required pointer argument was null.
  PEAR_STATUS_NULL_ARGUMENT = 1,
  // An argument was malformed or out of range.
  PEAR_STATUS_INVALID_ARGUMENT = 2,
  // A file could not be read or written.
  PEAR_STATUS_IO = 3,
  // A file or session line did not parse.
  PEAR_STATUS_FORMAT = 4,
  // Session fields disagree with the checkpoint's feature schema.
  PEAR_STATUS_SCHEMA_MISMATCH = 5,
  // The output buffer holds fewer slots than the result needs.
  PEAR_STATUS_BUFFER_TOO_SMALL = 6,
  // The metric is undefined for this list (for example, no positives).
  PEAR_STATUS_UNDEFINED = 7,
  // A computation produced NaN or infinity.
  PEAR_STATUS_NON_FINITE = 8,
  // An internal panic was caught.
  PEAR_STATUS_PANIC = 9,
} PearStatus;

// A loaded checkpoint: either a re-ranker or an initial ranker.
typedef struct PearModel PearModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or null after a
// successful call. The pointer stays valid until the next call into this
// library from the same thread.
const char *pear_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *pear_version(void);

// Loads a checkpoint file into a new handle stored in `*out`.
//
// # Safety
// `path` must be a valid NUL-terminated string and `out` a valid pointer
// to writable storage for one handle pointer.
enum PearStatus pear_model_load(const char *path, struct PearModel **out);

// Releases a handle from [`pear_model_load`]. Null is a no-op.
//
// # Safety
// `model` must be null or a handle not yet freed.
void pear_model_free(struct PearModel *model);

// 1 when the handle holds a re-ranker with a list head, 0 for an initial
// ranker, -1 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
int32_t pear_model_is_reranker(const struct PearModel *model);

// Scores one session given as a single line of the session file format
// (without the file header). Writes one click probability per candidate,
// in the given order, to `scores`, and the count to `*written`. When
// `list_prob` is non-null it receives the list-level click probability,
// or NaN for a model without a list head.
//
// If `capacity` is too small, `*written` still receives the required
// count and the call returns `PEAR_STATUS_BUFFER_TOO_SMALL`.
//
// # Safety
// `model` must be a live handle, `session` a NUL-terminated string,
// `scores` valid for `capacity` writes and `written` a valid pointer.
enum PearStatus pear_model_score(const struct PearModel *model,
                                 const char *session,
                                 double *scores,
                                 size_t capacity,
                                 size_t *written,
                                 double *list_prob);

// AUC of one list (ties count one half). Labels are nonzero for clicks.
// Returns `PEAR_STATUS_UNDEFINED` when the list has a single class.
//
// # Safety
// `scores` and `labels` must be valid for `len` reads; `out` must be valid.
enum PearStatus pear_auc(const double *scores, const uint8_t *labels, size_t len, double *out);

// nDCG@`k` of one list with binary gains. Returns
// `PEAR_STATUS_UNDEFINED` when the list has no positive.
//
// # Safety
// `scores` and `labels` must be valid for `len` reads; `out` must be valid.
enum PearStatus pear_ndcg_at_k(const double *scores,
                               const uint8_t *labels,
                               size_t len,
                               size_t k,
                               double *out);

// Simulates a planted click log into directory `out_dir`. `config_path`
// may be null for the defaults, otherwise it names a `key = value` file.
//
// # Safety
// `config_path` must be null or a NUL-terminated string; `out_dir` must be
// a NUL-terminated string.
enum PearStatus pear_generate(const char *config_path, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PEAR_H */
