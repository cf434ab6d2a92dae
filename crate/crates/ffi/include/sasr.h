#ifndef SASR_H
#define SASR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SasrStatus {
  SASR_STATUS_OK = 0,
  SASR_STATUS_NULL_POINTER = 1,
  SASR_STATUS_INVALID_ARGUMENT = 2,
  SASR_STATUS_IO = 3,
  SASR_STATUS_DATA = 4,
  SASR_STATUS_NUMERIC = 5,
  SASR_STATUS_PANIC = 6,
} SasrStatus;

/*
 Growable list of named speaker profiles.
 */
typedef struct SasrInventory SasrInventory;

/*
 Loaded model parameters.
 */
typedef struct SasrModel SasrModel;

/*
 Outcome of one decode.
 */
typedef struct SasrResult SasrResult;

/*
 One side of a scoring call: `count` utterances with speaker ids and
 token arrays.
 */
typedef struct SasrTranscript {
  size_t count;
  const char *const *speakers;
  const uint32_t *const *tokens;
  const size_t *lengths;
} SasrTranscript;

/*
 Error counts of one mixture.
 */
typedef struct SasrScore {
  size_t ref_utterances;
  size_t ref_words;
  size_t ser_errors;
  size_t wer_errors;
  size_t sa_wer_errors;
  size_t actual_speakers;
  size_t estimated_speakers;
} SasrScore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the most recent failure on this thread, or null. Valid until
 the next call into the library on the same thread.
 */
const char *sasr_last_error(void);

/*
 Loads a checkpoint file into a new model handle.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SasrStatus sasr_model_load(const char *path, struct SasrModel **out);

/*
 # Safety
 `model` must come from [`sasr_model_load`] and not be used afterwards.
 */
void sasr_model_free(struct SasrModel *model);

/*
 Raw frame width expected by the model, or 0 for a null handle.

 # Safety
 `model` must be null or a live handle.
 */
size_t sasr_model_feature_dim(const struct SasrModel *model);

/*
 Output vocabulary size including the delimiter tokens, or 0 for a null handle.

 # Safety
 `model` must be null or a live handle.
 */
size_t sasr_model_vocab_size(const struct SasrModel *model);

/*
 Creates an empty inventory of `dim`-dimensional profiles.

 # Safety
 `out` must be a valid pointer.
 */
enum SasrStatus sasr_inventory_new(size_t dim, struct SasrInventory **out);

/*
 Appends a named profile of `len` values; `len` must equal the inventory dimension.

 # Safety
 `inv` must be a live handle, `id` a NUL-terminated string and `profile` point to `len` doubles.
 */
enum SasrStatus sasr_inventory_add(struct SasrInventory *inv,
                                   const char *id,
                                   const double *profile,
                                   size_t len);

/*
 Number of profiles, or 0 for a null handle.

 # Safety
 `inv` must be null or a live handle.
 */
size_t sasr_inventory_len(const struct SasrInventory *inv);

/*
 # Safety
 `inv` must come from [`sasr_inventory_new`] and not be used afterwards.
 */
void sasr_inventory_free(struct SasrInventory *inv);

/*
 Beam-search decodes a row-major `frames x dim` feature matrix against the
 inventory and attributes each utterance to a profile. `max_steps` 0 selects
 the default limit. Repeated speakers are merged.

 # Safety
 Handles must be live, `features` must point to `frames * dim` doubles and `out` be valid.
 */
enum SasrStatus sasr_decode(const struct SasrModel *model,
                            const double *features,
                            size_t frames,
                            size_t dim,
                            const struct SasrInventory *inv,
                            size_t beam_width,
                            size_t max_steps,
                            struct SasrResult **out);

/*
 # Safety
 `res` must come from [`sasr_decode`] and not be used afterwards.
 */
void sasr_result_free(struct SasrResult *res);

/*
 Log probability of the chosen hypothesis, NaN for a null handle.

 # Safety
 `res` must be null or a live handle.
 */
double sasr_result_score(const struct SasrResult *res);

/*
 1 when decoding hit the step limit and EOS was forced.

 # Safety
 `res` must be null or a live handle.
 */
int32_t sasr_result_truncated(const struct SasrResult *res);

/*
 Full serialized token stream including delimiters and EOS.

 # Safety
 `res` must be a live handle and `len` a valid pointer. The returned
 array lives as long as `res`.
 */
const uint32_t *sasr_result_tokens(const struct SasrResult *res, size_t *len);

/*
 Number of attributed utterances.

 # Safety
 `res` must be null or a live handle.
 */
size_t sasr_result_utterance_count(const struct SasrResult *res);

/*
 Speaker id of utterance `i`, or null when out of range.

 # Safety
 `res` must be null or a live handle. The string lives as long as `res`.
 */
const char *sasr_result_speaker(const struct SasrResult *res, size_t i);

/*
 Word tokens of utterance `i`, or null when out of range.

 # Safety
 `res` must be null or a live handle and `len` a valid pointer. The array lives as long as `res`.
 */
const uint32_t *sasr_result_utterance_tokens(const struct SasrResult *res, size_t i, size_t *len);

/*
 Scores a hypothesis transcript against a reference: permutation-optimal
 SER and WER error counts and speaker-attributed word errors.

 # Safety
 Both transcripts must be valid for their declared counts and `out` a valid pointer.
 */
enum SasrStatus sasr_score(const struct SasrTranscript *hyp,
                           const struct SasrTranscript *reference,
                           struct SasrScore *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SASR_H */
