#ifndef SCORE_H
#define SCORE_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ScoreStatus {
  SCORE_STATUS_OK = 0,
  SCORE_STATUS_NULL_ARGUMENT = 1,
  SCORE_STATUS_INVALID_ARGUMENT = 2,
  SCORE_STATUS_IO = 3,
  SCORE_STATUS_PARSE = 4,
  SCORE_STATUS_CONFIG = 5,
  SCORE_STATUS_UNDEFINED_METRIC = 6,
  SCORE_STATUS_PROVIDER = 7,
  SCORE_STATUS_INTERNAL = 8,
} ScoreStatus;

/**
 * Opaque handle to a loaded interaction corpus.
 */
typedef struct ScoreCorpus ScoreCorpus;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library from the same thread.
 */
const char *score_last_error(void);

/**
 * Library version, a static string.
 */
const char *score_version(void);

/**
 * AUC of `len` scores against 0/1 labels.
 *
 * # Safety
 * `scores` and `labels` must point to `len` readable elements; `out` must be
 * writable.
 */
enum ScoreStatus score_auc(const double *scores, const uint8_t *labels, size_t len, double *out);

/**
 * Deterministic hashed embedding of `text`, written as `dim` floats.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` must hold `dim` floats.
 */
enum ScoreStatus score_hash_embed(const char *text, size_t dim, float *out);

/**
 * Loads interactions and item metadata (TSV) with the default positive
 * threshold. On success `*out` owns a new corpus.
 *
 * # Safety
 * Paths must be NUL-terminated strings; `out` must be writable.
 */
enum ScoreStatus score_corpus_load(const char *interactions,
                                   const char *items,
                                   struct ScoreCorpus **out);

/**
 * # Safety
 * `corpus` must come from [`score_corpus_load`] and not be used afterwards.
 */
void score_corpus_free(struct ScoreCorpus *corpus);

/**
 * Number of users; 0 for a null handle.
 *
 * # Safety
 * `corpus` must be null or a live handle.
 */
size_t score_corpus_user_count(const struct ScoreCorpus *corpus);

/**
 * Behaviour text of the user at `user_index`, at most `max_items` recent
 * positives. On success `*out` owns a new string.
 *
 * # Safety
 * `corpus` must be a live handle; `out` must be writable.
 */
enum ScoreStatus score_corpus_behavior_text(const struct ScoreCorpus *corpus,
                                            size_t user_index,
                                            size_t max_items,
                                            char **out);

/**
 * Runs every stage for the TOML config at `config_path` and hands back the
 * evaluation report as JSON in `*out`.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string; `out` must be writable.
 */
enum ScoreStatus score_experiment_run(const char *config_path, char **out);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must be null or a string from this library, released once.
 */
void score_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCORE_H */
