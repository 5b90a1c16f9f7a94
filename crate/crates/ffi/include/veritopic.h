#ifndef VERITOPIC_H
#define VERITOPIC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum VtStatus {
  VT_STATUS_OK = 0,
  VT_STATUS_NULL_ARGUMENT = 1,
  VT_STATUS_INVALID_UTF8 = 2,
  VT_STATUS_IO = 3,
  /**
   * Malformed model, topic file, corpus or JSON input.
   */
  VT_STATUS_PARSE = 4,
  /**
   * Inputs that are well formed but incompatible, e.g. a topic model
   * whose vocabulary does not match the checkpoint.
   */
  VT_STATUS_INVALID = 5,
  VT_STATUS_NON_FINITE = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  VT_STATUS_INTERNAL = 7,
} VtStatus;

typedef enum VtLabel {
  VT_LABEL_SUPPORTS = 0,
  VT_LABEL_REFUTES = 1,
  VT_LABEL_NOT_ENOUGH_INFO = 2,
} VtLabel;

/**
 * A loaded checkpoint together with its topic model.
 */
typedef struct VtVerifier VtVerifier;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null after a
 * successful call. Valid until the next call on the same thread.
 */
const char *vt_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *vt_version(void);

/**
 * Load a checkpoint and its topic model. `evidence_per_claim` is the number
 * of evidence slots per claim; 0 selects the default.
 *
 * # Safety
 * Paths must be NUL-terminated strings; `out` must be writable.
 */
enum VtStatus vt_verifier_load(const char *model_path,
                               const char *topics_path,
                               size_t evidence_per_claim,
                               struct VtVerifier **out);

/**
 * Release a handle from [`vt_verifier_load`]. Null is ignored.
 *
 * # Safety
 * `v` must come from [`vt_verifier_load`] and not be used afterwards.
 */
void vt_verifier_free(struct VtVerifier *v);

/**
 * Verify `claim` against `n_evidence` candidate sentences.
 *
 * Writes the verdict to `out_label` and the three class-capsule lengths
 * (SUPPORTS, REFUTES, NOT ENOUGH INFO) to `out_rho`. If `out_selected` is
 * not null it receives `n_evidence` bytes, 1 for each sentence reported
 * as evidence. Sentences beyond the handle's slot count are ignored.
 *
 * # Safety
 * `evidence` must point to `n_evidence` NUL-terminated strings, `out_rho`
 * to 3 doubles and `out_selected`, if not null, to `n_evidence` bytes.
 */
enum VtStatus vt_verifier_predict(const struct VtVerifier *v,
                                  const char *claim,
                                  const char *const *evidence,
                                  size_t n_evidence,
                                  enum VtLabel *out_label,
                                  double *out_rho,
                                  uint8_t *out_selected);

/**
 * Predict one claim given as a JSON object with `id`, `claim` and
 * `candidates` (`doc_id`, `sent_id`, `text`). The prediction is written to
 * `out_json` as a JSON object in the CLI's prediction format and must be
 * released with [`vt_string_free`].
 *
 * # Safety
 * `claim_json` must be a NUL-terminated string; `out_json` must be writable.
 */
enum VtStatus vt_verifier_predict_json(const struct VtVerifier *v,
                                       const char *claim_json,
                                       char **out_json);

/**
 * Score a predictions file against a gold corpus, both JSON Lines, and
 * write the report as JSON to `out_json`. Release it with
 * [`vt_string_free`].
 *
 * # Safety
 * Paths must be NUL-terminated strings; `out_json` must be writable.
 */
enum VtStatus vt_evaluate_files(const char *predictions_path,
                                const char *gold_path,
                                char **out_json);

/**
 * Release a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void vt_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VERITOPIC_H */
