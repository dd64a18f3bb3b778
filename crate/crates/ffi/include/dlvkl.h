#ifndef DLVKL_H
#define DLVKL_H

#include <stddef.h>
#include <stdint.h>

// Result of an FFI call. The first codes match the CLI exit codes.
typedef enum DlvklStatus {
  DLVKL_STATUS_OK = 0,
  // Bad settings, unknown keys or a malformed model file.
  DLVKL_STATUS_CONFIG = 1,
  // Bad shapes, labels or files.
  DLVKL_STATUS_DATA = 2,
  // Non-finite loss or gradient, failed factorization.
  DLVKL_STATUS_NUMERICAL = 3,
  // A required pointer argument was NULL.
  DLVKL_STATUS_NULL_POINTER = 4,
  // The library panicked; the handle involved should be freed.
  DLVKL_STATUS_PANIC = 5,
} DlvklStatus;

// Opaque model handle.
typedef struct DlvklModel DlvklModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *dlvkl_version(void);

// Message of the last failed call on this thread, or NULL. The pointer
// stays valid until the next failing call on this thread.
const char *dlvkl_last_error(void);

// Creates a model for `n` training rows.
//
// `settings` holds `key = value` lines with the model keys of the CLI
// (`variant`, `task`, `prior`, `beta`, `m`, `seed`, ...); it may be empty.
// `x` is `n×d_x`; for the `unsupervised` task pass `d_x = 0` and the
// `n×d_y` outputs in `x` instead, as they feed the encoder.
//
// # Safety
// Pointers must be valid for the stated sizes; `settings` must be a
// NUL-terminated string.
enum DlvklStatus dlvkl_model_new(const char *settings,
                                 const double *x,
                                 size_t n,
                                 size_t d_x,
                                 size_t d_y,
                                 struct DlvklModel **out);

// Releases a handle. NULL is ignored.
//
// # Safety
// `model` must come from this library and not be used afterwards.
void dlvkl_model_free(struct DlvklModel *model);

// Encoder input columns and prediction columns (outputs, or classes).
//
// # Safety
// `model` must be a live handle; the out pointers must be writable.
enum DlvklStatus dlvkl_model_dims(const struct DlvklModel *model,
                                  size_t *input_cols,
                                  size_t *output_cols);

// Runs Adam on all parameters. `x` is `n×d_x` (the encoder input for
// unsupervised models, which ignore `y`), `y` is `n×d_y` targets or one
// label column. On failure the model keeps its previous parameters.
//
// # Safety
// Pointers must be valid for the stated sizes; `final_elbo` may be NULL.
enum DlvklStatus dlvkl_model_fit(struct DlvklModel *model,
                                 const double *x,
                                 const double *y,
                                 size_t n,
                                 size_t iterations,
                                 size_t batch_size,
                                 double learning_rate,
                                 uint64_t seed,
                                 double *final_elbo);

// Full-data ELBO with latent noise drawn from `seed`.
//
// # Safety
// Pointers must be valid for the stated sizes; `out` must be writable.
enum DlvklStatus dlvkl_model_elbo(const struct DlvklModel *model,
                                  const double *x,
                                  const double *y,
                                  size_t n,
                                  uint64_t seed,
                                  double *out);

// Predicts `n` rows with `draws` latent samples. `mean` receives
// `n×output_cols` predictive means, or class probabilities for
// classification. `var` receives predictive variances for Gaussian
// outputs and may be NULL; it is left untouched for classification.
//
// # Safety
// `x` must hold `n×input_cols` values and `mean`/`var` room for
// `n×output_cols`.
enum DlvklStatus dlvkl_model_predict(const struct DlvklModel *model,
                                     const double *x,
                                     size_t n,
                                     size_t draws,
                                     uint64_t seed,
                                     double *mean,
                                     double *var);

// Writes the model in the library's text format.
//
// # Safety
// `model` must be a live handle and `path` a NUL-terminated string.
enum DlvklStatus dlvkl_model_save(const struct DlvklModel *model, const char *path);

// Reads a model written by [`dlvkl_model_save`] or the CLI.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum DlvklStatus dlvkl_model_load(const char *path, struct DlvklModel **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DLVKL_H */
