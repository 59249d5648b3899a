#ifndef INVFORGE_H
#define INVFORGE_H

#include <stdint.h>
#include <stddef.h>

/**
 * Result of every FFI call.
 */
typedef enum InvforgeStatus {
  INVFORGE_STATUS_OK = 0,
  INVFORGE_STATUS_NULL_ARGUMENT = 1,
  INVFORGE_STATUS_INVALID_UTF8 = 2,
  INVFORGE_STATUS_CONFIG_ERROR = 3,
  INVFORGE_STATUS_DATA_ERROR = 4,
  INVFORGE_STATUS_DIMENSION_ERROR = 5,
  INVFORGE_STATUS_IO_ERROR = 6,
  INVFORGE_STATUS_CORRUPT_CHECKPOINT = 7,
  INVFORGE_STATUS_UNSUPPORTED_VERSION = 8,
  INVFORGE_STATUS_TRAINING_DIVERGED = 9,
  INVFORGE_STATUS_INTERNAL_ERROR = 10,
} InvforgeStatus;

/**
 * Opaque dataset handle.
 */
typedef struct InvforgeDataset InvforgeDataset;

/**
 * Opaque trained-model handle.
 */
typedef struct InvforgeModel InvforgeModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the current thread's last error message into `buf` (NUL
 * terminated, truncated to `cap`). Returns the full message length.
 *
 * # Safety
 * `buf` must point to at least `cap` writable bytes (or be null).
 */
uintptr_t invforge_last_error(char *buf, uintptr_t cap);

/**
 * Generates the synthetic two-factor dataset (`n` samples, uniform
 * independent labels).
 *
 * # Safety
 * `out` must be a valid pointer; on `Ok` it receives an owned handle.
 */
enum InvforgeStatus invforge_dataset_synthetic(uint32_t y_classes,
                                               uint32_t z_classes,
                                               uint64_t n,
                                               uint64_t seed,
                                               struct InvforgeDataset **out);

/**
 * Loads one named set from a dataset manifest file.
 *
 * # Safety
 * `manifest_path` and `set_name` must be valid NUL-terminated strings;
 * `out` as in [`invforge_dataset_synthetic`].
 */
enum InvforgeStatus invforge_dataset_from_manifest(const char *manifest_path,
                                                   const char *set_name,
                                                   struct InvforgeDataset **out);

/**
 * Number of samples (0 for a null handle).
 *
 * # Safety
 * `ds` must be a live handle or null.
 */
uint64_t invforge_dataset_len(const struct InvforgeDataset *ds);

/**
 * Feature width (0 for a null handle).
 *
 * # Safety
 * `ds` must be a live handle or null.
 */
uint64_t invforge_dataset_feature_dim(const struct InvforgeDataset *ds);

/**
 * Releases a dataset handle (null is a no-op).
 *
 * # Safety
 * `ds` must be an owned handle from this library, released once.
 */
void invforge_dataset_free(struct InvforgeDataset *ds);

/**
 * Trains a model on `dataset`. `config_text` is the flat key=value run
 * configuration (empty string for all defaults); `variant` is "full",
 * "b0", or "b1".
 *
 * # Safety
 * Pointer arguments must be valid; `out` receives an owned handle on `Ok`.
 */
enum InvforgeStatus invforge_train(const char *config_text,
                                   const char *variant,
                                   const struct InvforgeDataset *dataset,
                                   struct InvforgeModel **out);

/**
 * Writes the model checkpoint to `path`.
 *
 * # Safety
 * `model` must be a live handle; `path` a valid string.
 */
enum InvforgeStatus invforge_model_save(const struct InvforgeModel *model, const char *path);

/**
 * Loads a checkpoint written by [`invforge_model_save`] (or the CLI).
 *
 * # Safety
 * `path` must be a valid string; `out` receives an owned handle on `Ok`.
 */
enum InvforgeStatus invforge_model_load(const char *path, struct InvforgeModel **out);

/**
 * Width of the prediction embedding e1.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
uint64_t invforge_model_dim_e1(const struct InvforgeModel *model);

/**
 * Width of the nuisance embedding e2.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
uint64_t invforge_model_dim_e2(const struct InvforgeModel *model);

/**
 * Expected feature width of inputs.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
uint64_t invforge_model_input_dim(const struct InvforgeModel *model);

/**
 * Encodes `n` rows of `d` features into the split embedding. `e1_out`
 * must hold `n * dim_e1` floats and `e2_out` `n * dim_e2` floats.
 *
 * # Safety
 * All pointers must be valid for the stated lengths.
 */
enum InvforgeStatus invforge_model_embed(const struct InvforgeModel *model,
                                         const float *x,
                                         uint64_t n,
                                         uint64_t d,
                                         float *e1_out,
                                         float *e2_out);

/**
 * Runs probe-based evaluation of the model on one dataset and writes the
 * flat key=value report into `buf` (NUL terminated, truncated to `cap`).
 * `written` (optional) receives the full report length.
 *
 * # Safety
 * Handles must be live; `buf` must point to `cap` writable bytes.
 */
enum InvforgeStatus invforge_eval(const struct InvforgeModel *model,
                                  const struct InvforgeDataset *dataset,
                                  char *buf,
                                  uintptr_t cap,
                                  uintptr_t *written);

/**
 * Convenience: embeds a whole dataset handle. Buffer sizes as in
 * [`invforge_model_embed`] with `n = invforge_dataset_len(dataset)`.
 *
 * # Safety
 * All pointers must be valid for the stated lengths.
 */
enum InvforgeStatus invforge_embed_dataset(const struct InvforgeModel *model,
                                           const struct InvforgeDataset *dataset,
                                           float *e1_out,
                                           float *e2_out);

/**
 * Releases a model handle (null is a no-op).
 *
 * # Safety
 * `model` must be an owned handle from this library, released once.
 */
void invforge_model_free(struct InvforgeModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INVFORGE_H */
