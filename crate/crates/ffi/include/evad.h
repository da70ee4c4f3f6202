#ifndef EVAD_H
#define EVAD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum EvadStatus {
  EVAD_STATUS_OK = 0,
  EVAD_STATUS_NULL_POINTER = 1,
  EVAD_STATUS_INVALID_ARGUMENT = 2,
  EVAD_STATUS_IO = 3,
  EVAD_STATUS_PARSE = 4,
  EVAD_STATUS_SHAPE_MISMATCH = 5,
  EVAD_STATUS_DOMAIN = 6,
  EVAD_STATUS_PANIC = 7,
} EvadStatus;

/**
 * Memory-surface network, generator and the configuration they were
 * trained with.
 */
typedef struct EvadModel EvadModel;

/**
 * Per-frame anomaly scores, optionally with labels.
 */
typedef struct EvadScores EvadScores;

/**
 * Validated event stream.
 */
typedef struct EvadStream EvadStream;

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call into this library.
 */
const char *evad_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *evad_version(void);

/**
 * Loads a `t_us,x,y,p` CSV file for a `width x height` sensor.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum EvadStatus evad_stream_load_csv(const char *path,
                                     uint32_t width,
                                     uint32_t height,
                                     struct EvadStream **out);

/**
 * Builds a stream from parallel arrays of length `n`. Polarities are +1 or
 * -1; events need not be sorted.
 *
 * # Safety
 * Each array must hold `n` readable elements; `out` must be valid.
 */
enum EvadStatus evad_stream_from_arrays(uint32_t width,
                                        uint32_t height,
                                        const uint64_t *t_us,
                                        const uint16_t *x,
                                        const uint16_t *y,
                                        const int8_t *p,
                                        size_t n,
                                        struct EvadStream **out);

/**
 * Number of events in the stream.
 *
 * # Safety
 * `stream` must come from this library and `out` must be valid.
 */
enum EvadStatus evad_stream_len(const struct EvadStream *stream, size_t *out);

/**
 * # Safety
 * `stream` must come from this library or be NULL; it is invalid afterwards.
 */
void evad_stream_free(struct EvadStream *stream);

/**
 * Loads both checkpoints. `config_path` may be NULL for the defaults; it
 * must match the configuration used for training.
 *
 * # Safety
 * Paths must be NUL-terminated strings and `out` a valid pointer.
 */
enum EvadStatus evad_model_load(const char *config_path,
                                const char *ms_ckpt,
                                const char *gan_ckpt,
                                struct EvadModel **out);

/**
 * # Safety
 * `model` must come from this library or be NULL; it is invalid afterwards.
 */
void evad_model_free(struct EvadModel *model);

/**
 * Scores every window in `[t_start_us, t_end_us)` of the stream.
 *
 * # Safety
 * Handles must come from this library and `out` must be valid.
 */
enum EvadStatus evad_score(const struct EvadModel *model,
                           const struct EvadStream *stream,
                           uint64_t t_start_us,
                           uint64_t t_end_us,
                           struct EvadScores **out);

/**
 * Number of scored frames.
 *
 * # Safety
 * `scores` must come from this library and `out` must be valid.
 */
enum EvadStatus evad_scores_len(const struct EvadScores *scores, size_t *out);

/**
 * Copies up to `cap` scores into `buf` and stores the count in `written`.
 *
 * # Safety
 * `buf` must hold `cap` writable doubles; other pointers must be valid.
 */
enum EvadStatus evad_scores_copy(const struct EvadScores *scores,
                                 double *buf,
                                 size_t cap,
                                 size_t *written);

/**
 * Start time of the first scored frame and the frame spacing, microseconds.
 *
 * # Safety
 * All pointers must be valid.
 */
enum EvadStatus evad_scores_timing(const struct EvadScores *scores,
                                   uint64_t *t0_us,
                                   uint64_t *frame_dt_us);

/**
 * Attaches 0/1 frame labels; `n` must equal the number of frames.
 *
 * # Safety
 * `labels` must hold `n` readable bytes; `scores` must be valid.
 */
enum EvadStatus evad_scores_set_labels(struct EvadScores *scores, const uint8_t *labels, size_t n);

/**
 * Frame-level ROC AUC and best F1. Requires labels with both classes.
 *
 * # Safety
 * All pointers must be valid.
 */
enum EvadStatus evad_scores_evaluate(const struct EvadScores *scores, double *auc, double *best_f1);

/**
 * # Safety
 * `scores` must come from this library or be NULL; it is invalid afterwards.
 */
void evad_scores_free(struct EvadScores *scores);

/**
 * Runs the discrete objective checks; `all_passed` receives 1 or 0.
 *
 * # Safety
 * `all_passed` must be valid.
 */
enum EvadStatus evad_verify_math(size_t instances, uint64_t seed, int32_t *all_passed);

#endif  /* EVAD_H */
