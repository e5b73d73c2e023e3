#ifndef SHIFTSEQ_H
#define SHIFTSEQ_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of 15-minute slots in a day.
 */
#define SHIFTSEQ_SLOTS 96

typedef enum ShiftseqStatus {
  SHIFTSEQ_STATUS_OK = 0,
  SHIFTSEQ_STATUS_NULL_ARGUMENT = 1,
  SHIFTSEQ_STATUS_INVALID_ARGUMENT = 2,
  SHIFTSEQ_STATUS_IO = 3,
  SHIFTSEQ_STATUS_PARSE = 4,
  SHIFTSEQ_STATUS_CONFIG = 5,
  SHIFTSEQ_STATUS_CHECKPOINT = 6,
  SHIFTSEQ_STATUS_NUMERICS = 7,
  SHIFTSEQ_STATUS_DIVERGED = 8,
  SHIFTSEQ_STATUS_USAGE = 9,
  SHIFTSEQ_STATUS_PANIC = 10,
} ShiftseqStatus;

/**
 * Opaque corpus handle.
 */
typedef struct ShiftseqCorpus ShiftseqCorpus;

/**
 * Opaque handle to a trained model and its parameters.
 */
typedef struct ShiftseqModel ShiftseqModel;

/**
 * Divergences between reference and generated distributions.
 */
typedef struct ShiftseqEvalReport {
  double start;
  double end;
  double duration;
  double activity_type;
  double work_start;
  double work_end;
  double average;
  size_t pairs;
} ShiftseqEvalReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none.
 *
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *shiftseq_last_error(void);

/**
 * Reads a JSON-lines corpus.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum ShiftseqStatus shiftseq_corpus_load(const char *path, struct ShiftseqCorpus **out);

/**
 * Draws `n` synthetic pairs from a preset ("shift_only" or "population").
 *
 * # Safety
 * `preset` must be a nul-terminated string and `out` a valid pointer.
 */
enum ShiftseqStatus shiftseq_corpus_synth(size_t n,
                                          const char *preset,
                                          uint64_t seed,
                                          struct ShiftseqCorpus **out);

/**
 * # Safety
 * `corpus` must come from this library and `path` be nul-terminated.
 */
enum ShiftseqStatus shiftseq_corpus_save(const struct ShiftseqCorpus *corpus, const char *path);

/**
 * Number of pairs, or 0 for a null handle.
 *
 * # Safety
 * `corpus` must be null or come from this library.
 */
size_t shiftseq_corpus_len(const struct ShiftseqCorpus *corpus);

/**
 * Copies pair `index` into four caller buffers of [`SHIFTSEQ_SLOTS`] bytes.
 * Days hold activity codes 1..=15 with 0 for unobserved slots; masks hold 0/1.
 *
 * # Safety
 * Every buffer must hold at least [`SHIFTSEQ_SLOTS`] bytes.
 */
enum ShiftseqStatus shiftseq_corpus_pair(const struct ShiftseqCorpus *corpus,
                                         size_t index,
                                         uint8_t *day1,
                                         uint8_t *mask1,
                                         uint8_t *day2,
                                         uint8_t *mask2);

/**
 * # Safety
 * `corpus` must be null or an unfreed handle from this library.
 */
void shiftseq_corpus_free(struct ShiftseqCorpus *corpus);

/**
 * Loads a training checkpoint.
 *
 * # Safety
 * `path` must be nul-terminated and `out` a valid pointer.
 */
enum ShiftseqStatus shiftseq_model_load(const char *path, struct ShiftseqModel **out);

/**
 * Generates day 2 from day 1.
 *
 * `day1` holds codes 1..=15 (0 = unobserved) and `mask1` 0/1 flags, both
 * [`SHIFTSEQ_SLOTS`] long; `out` receives codes 1..=15. A `temperature` of
 * 0 or less decodes greedily.
 *
 * # Safety
 * All buffers must hold at least [`SHIFTSEQ_SLOTS`] bytes.
 */
enum ShiftseqStatus shiftseq_model_generate(const struct ShiftseqModel *model,
                                            const uint8_t *day1,
                                            const uint8_t *mask1,
                                            double temperature,
                                            uint64_t seed,
                                            uint8_t *out);

/**
 * Greedy evaluation of a model on the corpus test split, scored on the
 * reference's observed slots.
 *
 * # Safety
 * Handles must come from this library; `out` must be a valid pointer.
 */
enum ShiftseqStatus shiftseq_model_evaluate(const struct ShiftseqModel *model,
                                            const struct ShiftseqCorpus *corpus,
                                            uint64_t seed,
                                            struct ShiftseqEvalReport *out);

/**
 * # Safety
 * `model` must be null or an unfreed handle from this library.
 */
void shiftseq_model_free(struct ShiftseqModel *model);

/**
 * Base-2 Jensen-Shannon divergence between two histograms of equal length.
 *
 * # Safety
 * `p` and `q` must each point to `len` doubles.
 */
enum ShiftseqStatus shiftseq_jsd(const double *p, const double *q, size_t len, double *out);

/**
 * Period of a slot: 0 evening start, 1 overnight, 2 morning, 3 other.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum ShiftseqStatus shiftseq_period_of(size_t slot, uint8_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SHIFTSEQ_H */
