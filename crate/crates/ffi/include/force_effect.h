#ifndef FORCE_EFFECT_H
#define FORCE_EFFECT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FeStatus {
  FE_STATUS_OK = 0,
  FE_STATUS_NULL_POINTER = 1,
  FE_STATUS_INVALID_ARGUMENT = 2,
  FE_STATUS_IO = 3,
  FE_STATUS_FORMAT = 4,
  FE_STATUS_NUMERIC = 5,
  FE_STATUS_OUT_OF_RANGE = 6,
  FE_STATUS_BUFFER_TOO_SMALL = 7,
  FE_STATUS_PANIC = 8,
  FE_STATUS_INTERNAL = 9,
} FeStatus;

// Loaded dataset.
typedef struct FeDataset FeDataset;

// Loaded model of any kind.
typedef struct FeModel FeModel;

// Message of the last failed call on this thread; valid until the next failing call.
const char *fe_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *fe_version(void);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum FeStatus fe_dataset_load(const char *path, struct FeDataset **out);

// # Safety
// `ds` must come from [`fe_dataset_load`] and not be used afterwards. Null is ignored.
void fe_dataset_free(struct FeDataset *ds);

// # Safety
// `ds` must be a live dataset handle and `out_len` a valid pointer.
enum FeStatus fe_dataset_len(const struct FeDataset *ds, size_t *out_len);

// Stored ground-truth label of record `index`.
//
// # Safety
// `ds` must be a live handle; `out_tokens` must hold `capacity` bytes.
enum FeStatus fe_dataset_label(const struct FeDataset *ds,
                               size_t index,
                               uint8_t *out_tokens,
                               size_t capacity,
                               size_t *out_len);

// Re-simulates record `index` and writes the extracted label.
//
// # Safety
// As [`fe_dataset_label`].
enum FeStatus fe_simulate_record(const struct FeDataset *ds,
                                 size_t index,
                                 uint8_t *out_tokens,
                                 size_t capacity,
                                 size_t *out_len);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum FeStatus fe_model_load(const char *path, struct FeModel **out);

// # Safety
// `model` must come from [`fe_model_load`] and not be used afterwards. Null is ignored.
void fe_model_free(struct FeModel *model);

// Predicted sequence for record `index` of `ds`.
//
// # Safety
// `model` and `ds` must be live handles; `out_tokens` must hold `capacity` bytes.
enum FeStatus fe_model_predict(const struct FeModel *model,
                               const struct FeDataset *ds,
                               size_t index,
                               uint8_t *out_tokens,
                               size_t capacity,
                               size_t *out_len);

// Token for velocity `(x, y, z)`: nearest direction, or stop below `stop_speed`.
//
// # Safety
// `out_token` must be a valid pointer.
enum FeStatus fe_quantize_velocity(double x,
                                   double y,
                                   double z,
                                   double stop_speed,
                                   uint8_t *out_token);

// Levenshtein distance between two valid token sequences.
//
// # Safety
// `a` and `b` must point to `a_len` and `b_len` bytes; `out` must be valid.
enum FeStatus fe_edit_distance(const uint8_t *a,
                               size_t a_len,
                               const uint8_t *b,
                               size_t b_len,
                               size_t *out);

#endif  /* FORCE_EFFECT_H */
