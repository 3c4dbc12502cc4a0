#ifndef PSEUDOLAB_H
#define PSEUDOLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes. The nonzero library codes match the CLI exit codes.
 */
typedef enum PlStatus {
  PL_STATUS_OK = 0,
  /**
   * Malformed input: bad JSON, bad UTF-8, unreadable data.
   */
  PL_STATUS_INPUT_ERROR = 2,
  /**
   * A value breaks an invariant or inputs do not fit together.
   */
  PL_STATUS_INVALID = 3,
  /**
   * The computation has no meaningful result for these inputs.
   */
  PL_STATUS_DEGENERATE = 4,
  PL_STATUS_NULL_POINTER = 5,
  /**
   * A Rust panic was caught at the boundary.
   */
  PL_STATUS_PANIC = 6,
} PlStatus;

typedef enum PlThresholdRule {
  PL_THRESHOLD_RULE_ARGMAX = 0,
  PL_THRESHOLD_RULE_CROSSING = 1,
} PlThresholdRule;

typedef enum PlAssigner {
  PL_ASSIGNER_IOU = 0,
  PL_ASSIGNER_ATSS = 1,
  PL_ASSIGNER_ASA = 2,
} PlAssigner;

/**
 * Per-class FIFO of recent confident scores.
 */
typedef struct PlScoreBank PlScoreBank;

typedef struct PlBBox {
  double x1;
  double y1;
  double x2;
  double y2;
} PlBBox;

typedef struct PlGmmFit {
  double w_n;
  double w_p;
  double mu_n;
  double mu_p;
  double var_n;
  double var_p;
  size_t iterations;
  double log_likelihood;
} PlGmmFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next call into the library from the same thread.
 */
const char *pl_last_error(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void pl_string_free(char *s);

/**
 * # Safety
 * `out_iou` must be a valid pointer.
 */
enum PlStatus pl_iou(struct PlBBox a, struct PlBBox b, double *out_iou);

/**
 * Fails with `Degenerate` when both boxes have zero area.
 *
 * # Safety
 * `out_giou` must be a valid pointer.
 */
enum PlStatus pl_giou(struct PlBBox a, struct PlBBox b, double *out_giou);

/**
 * # Safety
 * `out_dist` must be a valid pointer.
 */
enum PlStatus pl_center_distance(struct PlBBox a, struct PlBBox b, double *out_dist);

/**
 * Focal loss of probability `p` for a positive (`target` true) or negative
 * label.
 *
 * # Safety
 * `out_loss` must be a valid pointer.
 */
enum PlStatus pl_focal_loss(double p, bool target, double gamma, double alpha, double *out_loss);

/**
 * Two-component EM fit with default settings.
 *
 * # Safety
 * `samples` must point to `len` doubles; `out_fit` must be valid.
 */
enum PlStatus pl_em_fit(const double *samples, size_t len, struct PlGmmFit *out_fit);

/**
 * New bank holding up to `capacity` scores per class; null when `capacity`
 * is 0.
 */
struct PlScoreBank *pl_score_bank_new(size_t capacity);

/**
 * # Safety
 * `bank` must come from [`pl_score_bank_new`] and not be used afterwards.
 */
void pl_score_bank_free(struct PlScoreBank *bank);

/**
 * Pushes one image's scores for a class; `out_pushed` (may be null)
 * receives how many entered the bank.
 *
 * # Safety
 * `bank` must be a live handle and `scores` must point to `len` doubles.
 */
enum PlStatus pl_score_bank_push(struct PlScoreBank *bank,
                                 size_t class_id,
                                 const double *scores,
                                 size_t len,
                                 size_t *out_pushed);

/**
 * Number of scores currently held for a class.
 *
 * # Safety
 * `bank` must be a live handle; `out_len` must be valid.
 */
enum PlStatus pl_score_bank_len(const struct PlScoreBank *bank, size_t class_id, size_t *out_len);

/**
 * GMM threshold for a class from the bank contents. `out_from_gmm` (may be
 * null) is set to false when the fallback was used.
 *
 * # Safety
 * `bank` must be a live handle; `out_tau` must be valid.
 */
enum PlStatus pl_score_bank_threshold(const struct PlScoreBank *bank,
                                      size_t class_id,
                                      double fallback_tau,
                                      enum PlThresholdRule rule,
                                      double *out_tau,
                                      bool *out_from_gmm);

/**
 * Assigns a scene given as JSON (`{anchors, predictions, gts}`) with the
 * assigner's default parameters; writes `{anchors:[{state, gt, cost}]}`.
 *
 * # Safety
 * `scene_json` must be a NUL-terminated string; `out_json` must be valid.
 */
enum PlStatus pl_assign_json(const char *scene_json, enum PlAssigner assigner, char **out_json);

/**
 * mAP@[.50:.95] of predictions JSON against ground-truth JSON; writes the
 * full result as JSON and the headline number to `out_map` (may be null).
 *
 * # Safety
 * Both inputs must be NUL-terminated strings; `out_json` must be valid.
 */
enum PlStatus pl_eval_json(const char *preds_json,
                           const char *gts_json,
                           double *out_map,
                           char **out_json);

/**
 * In-plane then cross-level resampling of a pyramid JSON by an offsets JSON.
 *
 * # Safety
 * Both inputs must be NUL-terminated strings; `out_json` must be valid.
 */
enum PlStatus pl_fam3d_json(const char *pyramid_json, const char *offsets_json, char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PSEUDOLAB_H */
