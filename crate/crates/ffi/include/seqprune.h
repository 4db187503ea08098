#ifndef SEQPRUNE_H
#define SEQPRUNE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status code returned by every fallible function.
typedef enum {
  SP_STATUS_OK = 0,
  SP_STATUS_NULL_POINTER = 1,
  SP_STATUS_INVALID_ARGUMENT = 2,
  SP_STATUS_IO = 3,
  SP_STATUS_FORMAT = 4,
  SP_STATUS_DIMENSION_MISMATCH = 5,
  SP_STATUS_PANIC = 6,
} SpStatus;

// Reference frame used when deciding whether to drop a frame.
typedef enum {
  SP_POLICY_ORIGINAL_ADJACENT = 0,
  SP_POLICY_LAST_KEPT = 1,
} SpPolicy;

// A row-major sequence of `f32` frames.
typedef struct SpFeatures SpFeatures;

// A nearest-centroid transcriber.
typedef struct SpModel SpModel;

// Kept frame indices for one sequence.
typedef struct SpPruneResult SpPruneResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static string.
const char *sp_version(void);

// Message for the last failed call on this thread; empty after a success.
// The pointer stays valid until the next library call on this thread.
const char *sp_last_error_message(void);

// Releases a string returned by the library. Null is ignored.
void sp_string_free(char *s);

// Copies `frames·dim` floats from `data` into a new sequence.
SpStatus sp_features_new(const float *data, size_t frames, size_t dim, SpFeatures **out);

SpStatus sp_features_read(const char *path, SpFeatures **out);

SpStatus sp_features_write(const SpFeatures *features, const char *path);

// Number of frames; 0 for a null handle.
size_t sp_features_len(const SpFeatures *features);

// Frame dimension; 0 for a null handle.
size_t sp_features_dim(const SpFeatures *features);

// Borrowed row-major frame data, valid while the handle lives.
const float *sp_features_data(const SpFeatures *features);

void sp_features_free(SpFeatures *features);

// Cosine similarity of two `dim`-component frames, 0 when either norm is
// below `epsilon`.
SpStatus sp_cosine_sim(const float *x, const float *y, size_t dim, double epsilon, double *out);

// Drops every frame whose similarity to its reference frame exceeds
// `theta` (in [-1, 1]). `policy` is an `SpPolicy` value.
SpStatus sp_prune(const SpFeatures *features, double theta, uint32_t policy, SpPruneResult **out);

size_t sp_prune_result_original_count(const SpPruneResult *result);

size_t sp_prune_result_kept_count(const SpPruneResult *result);

// Kept over original frame count; 1.0 for an empty sequence.
double sp_prune_result_kept_fraction(const SpPruneResult *result);

// Borrowed ascending kept indices, valid while the handle lives.
const size_t *sp_prune_result_kept_indices(const SpPruneResult *result);

// New sequence holding only the kept frames of `features`.
SpStatus sp_prune_apply(const SpFeatures *features, const SpPruneResult *result, SpFeatures **out);

void sp_prune_result_free(SpPruneResult *result);

// Character-level Levenshtein distance.
SpStatus sp_edit_distance(const char *a, const char *b, size_t *out);

// Edit distance over reference length; fails for an empty reference.
SpStatus sp_cer(const char *hypothesis, const char *reference, double *out);

// `cost(length) / cost(max(1, round(kept·length)))` under
// `cost(L) = quad·L² + lin·L + constant`.
SpStatus sp_predicted_sr(double quad,
                         double lin,
                         double constant,
                         size_t length,
                         double kept,
                         double *out);

// Loads a model saved as a JSON header plus sibling `.efea` table.
SpStatus sp_model_load(const char *path, SpModel **out);

SpStatus sp_model_save(const SpModel *model, const char *path);

// Decodes `features` into a new string; release it with `sp_string_free`.
SpStatus sp_model_transcribe(const SpModel *model, const SpFeatures *features, char **out);

void sp_model_free(SpModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEQPRUNE_H */
