#ifndef QUALITYNET_H
#define QUALITYNET_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every fallible function.
 */
typedef enum QnStatus {
  QN_STATUS_OK = 0,
  QN_STATUS_NULL_POINTER = 1,
  QN_STATUS_INVALID_ARGUMENT = 2,
  QN_STATUS_IO = 3,
  QN_STATUS_CORRUPT_CHECKPOINT = 4,
  QN_STATUS_DIMENSION_MISMATCH = 5,
  QN_STATUS_INVALID_AUDIO = 6,
  QN_STATUS_TOO_SHORT = 7,
  QN_STATUS_INTERNAL = 8,
  QN_STATUS_PANIC = 9,
} QnStatus;

/**
 * A loaded model. Safe to share between threads for scoring.
 */
typedef struct QnModel QnModel;

/**
 * Scores produced by one call to a scoring function.
 */
typedef struct QnResult QnResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or an empty string.
 * The pointer stays valid until the next call into this library on the same thread.
 */
const char *qn_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *qn_version(void);

/**
 * Loads a checkpoint. On success `*out` receives a handle to free with [`qn_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum QnStatus qn_model_load(const char *path, struct QnModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`qn_model_load`] and not be used afterwards.
 */
void qn_model_free(struct QnModel *model);

/**
 * Input bins per frame and LSTM units per direction.
 *
 * # Safety
 * `model` must be a live handle; `input` and `hidden` valid pointers.
 */
enum QnStatus qn_model_dims(const struct QnModel *model, uint32_t *input, uint32_t *hidden);

/**
 * Scores mono samples in [-1, 1]. The rate must be 16 kHz.
 *
 * # Safety
 * `samples` must point to `len` doubles; `out` must be valid.
 */
enum QnStatus qn_score_samples(const struct QnModel *model,
                               const double *samples,
                               size_t len,
                               uint32_t sample_rate_hz,
                               struct QnResult **out);

/**
 * Scores a 16-bit PCM mono 16 kHz WAV file.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be valid.
 */
enum QnStatus qn_score_wav(const struct QnModel *model, const char *path, struct QnResult **out);

/**
 * Utterance score, or NaN for a null handle.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
double qn_result_utterance(const struct QnResult *result);

/**
 * Number of frame scores, or 0 for a null handle.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
size_t qn_result_frame_count(const struct QnResult *result);

/**
 * Copies up to `capacity` frame scores into `buf`; `*written` receives the count.
 *
 * # Safety
 * `buf` must have room for `capacity` doubles; `written` must be valid.
 */
enum QnStatus qn_result_frames(const struct QnResult *result,
                               double *buf,
                               size_t capacity,
                               size_t *written);

/**
 * Releases a result. Null is ignored.
 *
 * # Safety
 * `result` must come from a scoring call and not be used afterwards.
 */
void qn_result_free(struct QnResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QUALITYNET_H */
