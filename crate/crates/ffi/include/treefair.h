#ifndef TREEFAIR_H
#define TREEFAIR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  TF_STATUS_OK = 0,
  /**
   * A required pointer was null or a string was not valid UTF-8.
   */
  TF_STATUS_NULL_OR_INVALID_ARGUMENT = 1,
  /**
   * Malformed model, rectangle or formula document.
   */
  TF_STATUS_PARSE_ERROR = 2,
  /**
   * Well-formed input that the operation rejects, such as an unknown
   * feature name or a wrong instance width.
   */
  TF_STATUS_INVALID_INPUT = 3,
  /**
   * The analysis exceeded its class or pair bound.
   */
  TF_STATUS_RESOURCE_LIMIT = 4,
  /**
   * An internal error; the library caught a panic.
   */
  TF_STATUS_INTERNAL = 5,
} TfStatus;

/**
 * The result of a synthesis run.
 */
typedef struct TfFormulas TfFormulas;

/**
 * A parsed tree ensemble.
 */
typedef struct TfModel TfModel;

/**
 * The unstable rectangles of a model for a fixed set of sensitive features.
 */
typedef struct TfUnstableSet TfUnstableSet;

/**
 * Scores of an instance set: `d_count` instances lie in some unstable
 * rectangle, `dtilde_count` are not covered by any formula.
 */
typedef struct {
  size_t d_count;
  size_t dtilde_count;
  size_t total;
} TfScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none failed.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *tf_last_error(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void tf_string_free(char *s);

/**
 * Parses a model document.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
TfStatus tf_model_from_json(const char *json, TfModel **out);

/**
 * # Safety
 * `model` must be null or a live handle from [`tf_model_from_json`].
 */
void tf_model_free(TfModel *model);

/**
 * Number of features of the model, 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t tf_model_num_features(const TfModel *model);

/**
 * Predicted label id of one instance of `len` feature values.
 *
 * # Safety
 * `model` must be a live handle, `x` must point to `len` doubles and
 * `out_label` must be writable.
 */
TfStatus tf_model_predict(const TfModel *model, const double *x, size_t len, size_t *out_label);

/**
 * Name of a label id as a newly allocated string.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
TfStatus tf_model_label_name(const TfModel *model, size_t label, char **out);

/**
 * Computes the unstable rectangles for the sensitive features named in
 * `sensitive`, a comma-separated list of feature names, one-hot group names
 * or numeric ids. `max_classes` of 0 selects the default bound.
 *
 * # Safety
 * `model` must be a live handle, `sensitive` a NUL-terminated string and
 * `out` writable.
 */
TfStatus tf_analyze(const TfModel *model,
                    const char *sensitive,
                    size_t max_classes,
                    bool coarse,
                    TfUnstableSet **out);

/**
 * Reads a rectangle document for `model`.
 *
 * # Safety
 * `model` must be a live handle, `json` a NUL-terminated string and `out`
 * writable.
 */
TfStatus tf_unstable_from_json(const TfModel *model, const char *json, TfUnstableSet **out);

/**
 * # Safety
 * `unstable` must be null or a live handle.
 */
void tf_unstable_free(TfUnstableSet *unstable);

/**
 * Number of rectangles, 0 for a null handle.
 *
 * # Safety
 * `unstable` must be null or a live handle.
 */
size_t tf_unstable_len(const TfUnstableSet *unstable);

/**
 * The rectangles as a JSON document.
 *
 * # Safety
 * `unstable` must be a live handle and `out` writable.
 */
TfStatus tf_unstable_to_json(const TfUnstableSet *unstable, char **out);

/**
 * Synthesizes fair formulas from an unstable set. `max_iters` of 0 runs
 * until no candidates remain; `max_candidates` of 0 selects the default
 * bound. Hitting the candidate bound is not an error: the result keeps the
 * completed iterations and [`tf_formulas_converged`] reports false.
 *
 * # Safety
 * `model` and `unstable` must be live handles and `out` writable.
 */
TfStatus tf_synthesize(const TfModel *model,
                       const TfUnstableSet *unstable,
                       size_t max_iters,
                       size_t max_candidates,
                       TfFormulas **out);

/**
 * Reads the formulas of a synthesis output document for `model`.
 *
 * # Safety
 * `model` must be a live handle, `json` a NUL-terminated string and `out`
 * writable.
 */
TfStatus tf_formulas_from_json(const TfModel *model, const char *json, TfFormulas **out);

/**
 * # Safety
 * `formulas` must be null or a live handle.
 */
void tf_formulas_free(TfFormulas *formulas);

/**
 * Number of fair itemsets, 0 for a null handle.
 *
 * # Safety
 * `formulas` must be null or a live handle.
 */
size_t tf_formulas_len(const TfFormulas *formulas);

/**
 * Whether the run ended because no candidates were left.
 *
 * # Safety
 * `formulas` must be null or a live handle.
 */
bool tf_formulas_converged(const TfFormulas *formulas);

/**
 * The synthesis output document: itemsets, rendered formulas and
 * per-iteration counts.
 *
 * # Safety
 * `formulas` and `model` must be live handles and `out` writable.
 */
TfStatus tf_formulas_to_json(const TfFormulas *formulas, const TfModel *model, char **out);

/**
 * Whether some formula holds at `x`.
 *
 * # Safety
 * `formulas` must be a live handle, `x` must point to `len` doubles and
 * `out` must be writable.
 */
TfStatus tf_formulas_covers(const TfFormulas *formulas, const double *x, size_t len, bool *out);

/**
 * Scores `rows` instances stored row-major in `data`, each of
 * `tf_model_num_features` values.
 *
 * # Safety
 * `model`, `unstable` and `formulas` must be live handles, `data` must
 * point to `rows * num_features` doubles and `out` must be writable.
 */
TfStatus tf_score(const TfModel *model,
                  const TfUnstableSet *unstable,
                  const TfFormulas *formulas,
                  const double *data,
                  size_t rows,
                  TfScores *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TREEFAIR_H */
