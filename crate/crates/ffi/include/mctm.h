#ifndef MCTM_H
#define MCTM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MctmAlgorithm {
  MCTM_ALGORITHM_EM = 0,
  MCTM_ALGORITHM_VB = 1,
  MCTM_ALGORITHM_GS = 2,
} MctmAlgorithm;

// Dirichlet prior family: flat, the reference setting H, or H plus one.
typedef enum MctmPrior {
  MCTM_PRIOR_FLAT = 0,
  MCTM_PRIOR_H = 1,
  MCTM_PRIOR_H_PLUS_ONE = 2,
} MctmPrior;

typedef enum MctmStatus {
  MCTM_STATUS_OK = 0,
  // A required pointer was null.
  MCTM_STATUS_NULL_POINTER = 1,
  // An argument is out of range or inconsistent with the model.
  MCTM_STATUS_INVALID_ARGUMENT = 2,
  // Input data or a model file is malformed.
  MCTM_STATUS_DATA = 3,
  // The data has zero probability or a computation failed.
  MCTM_STATUS_NUMERICAL = 4,
  MCTM_STATUS_IO = 5,
  // A Rust panic was caught at the boundary.
  MCTM_STATUS_PANIC = 6,
} MctmStatus;

// Trained model: point estimates plus any posterior or samples.
typedef struct MctmModel MctmModel;

// Online scorer holding the predictive state of a test stream.
typedef struct MctmScorer MctmScorer;

typedef struct MctmTrainOptions {
  size_t num_topics;
  size_t num_behaviours;
  enum MctmAlgorithm algorithm;
  enum MctmPrior prior;
  // EM and VB iterations.
  size_t iterations;
  // EM and VB initialisations; the best objective is kept.
  size_t restarts;
  size_t burn_in;
  size_t spacing;
  // Retained Gibbs samples.
  size_t samples;
  uint64_t seed;
} MctmTrainOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null after a
// success. The pointer stays valid until the next call on this thread.
const char *mctm_last_error(void);

// EM with prior H, 8 topics, 4 behaviours, 100 iterations and one
// initialisation; Gibbs settings 500 burn-in, 100 spacing, 5 samples.
struct MctmTrainOptions mctm_train_options_default(void);

// Trains a model on `num_docs` documents, stored back to back in `words`
// with `doc_lengths[t]` words each. `num_words` is the vocabulary size, or
// 0 for the largest word id plus one.
//
// # Safety
// `words` must hold the sum of `doc_lengths` entries, `doc_lengths` must
// hold `num_docs` entries and `out` must be writable.
enum MctmStatus mctm_train(const uint32_t *words,
                           const size_t *doc_lengths,
                           size_t num_docs,
                           size_t num_words,
                           const struct MctmTrainOptions *options,
                           struct MctmModel **out);

// Loads a JSON model file written by `mctm train` or [`mctm_model_save`].
//
// # Safety
// `path` must be a nul-terminated string and `out` must be writable.
enum MctmStatus mctm_model_load(const char *path, struct MctmModel **out);

// # Safety
// `model` must come from this library and `path` must be a nul-terminated string.
enum MctmStatus mctm_model_save(const struct MctmModel *model, const char *path);

// Writes the vocabulary, topic and behaviour counts; any output may be null.
//
// # Safety
// `model` must come from this library; non-null outputs must be writable.
enum MctmStatus mctm_model_dims(const struct MctmModel *model,
                                size_t *num_words,
                                size_t *num_topics,
                                size_t *num_behaviours);

// True when the model carries a VB posterior or Gibbs samples.
//
// # Safety
// `model` must be null or come from this library.
bool mctm_model_supports_monte_carlo(const struct MctmModel *model);

// # Safety
// `model` must be null or come from this library, and is invalid afterwards.
void mctm_model_free(struct MctmModel *model);

// Creates a scorer for a test stream that follows the training data.
//
// With `num_train_docs > 0` the start state is filtered through that
// training corpus; otherwise the belief saved with the model is used, or
// the initial distribution if none was saved. `mc_samples` of 0 scores
// with the point estimates; more averages that many posterior parameter
// sets (VB or Gibbs models only). Documents shorter than `min_words`
// score `+inf`. `word_marginals` enables per-word scores.
//
// # Safety
// `model` must come from this library; the training arrays follow the
// layout of [`mctm_train`]; `out` must be writable.
enum MctmStatus mctm_scorer_new(const struct MctmModel *model,
                                const uint32_t *train_words,
                                const size_t *train_lengths,
                                size_t num_train_docs,
                                size_t mc_samples,
                                uint64_t seed,
                                size_t min_words,
                                bool word_marginals,
                                struct MctmScorer **out);

// Scores the next document of the stream and advances the state.
//
// `log_lik` receives the log predictive likelihood and `score` that value
// less the log of the length (lower is more abnormal). With a non-null
// `word_log_liks`, `len` per-word log probabilities are written; the
// scorer must have been created with `word_marginals`.
//
// # Safety
// `scorer` must come from this library, `words` must hold `len` entries,
// and non-null outputs must be writable (`word_log_liks` for `len` values).
enum MctmStatus mctm_scorer_score(struct MctmScorer *scorer,
                                  const uint32_t *words,
                                  size_t len,
                                  double *log_lik,
                                  double *score,
                                  double *word_log_liks);

// # Safety
// `scorer` must be null or come from this library, and is invalid afterwards.
void mctm_scorer_free(struct MctmScorer *scorer);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MCTM_H */
