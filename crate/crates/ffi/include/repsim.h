/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef REPSIM_H
#define REPSIM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes; the nonzero values match the `repsim` CLI exit codes.
typedef enum RepsimStatus {
  REPSIM_STATUS_OK = 0,
  // Bad arguments, malformed files or I/O failure.
  REPSIM_STATUS_INVALID_INPUT = 2,
  // Zero-variance or otherwise degenerate activations.
  REPSIM_STATUS_DEGENERATE = 3,
  // Non-finite values, divergence or SVD non-convergence.
  REPSIM_STATUS_NUMERICAL = 4,
  // A panic was caught at the boundary.
  REPSIM_STATUS_INTERNAL = 5,
} RepsimStatus;

typedef enum RepsimVerdict {
  REPSIM_VERDICT_HEALTHY_POLARISED = 0,
  REPSIM_VERDICT_COLLAPSED = 1,
  REPSIM_VERDICT_NO_PASSIVE_DIMS = 2,
} RepsimVerdict;

// Per-layer activations of a model on an evaluation set.
typedef struct RepsimCapture RepsimCapture;

// Row-major matrix of doubles.
typedef struct RepsimMatrix RepsimMatrix;

// A trained VAE checkpoint.
typedef struct RepsimModel RepsimModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread; empty after a success.
// The pointer stays valid until the next repsim call on the same thread.
const char *repsim_last_error(void);

// Library version as a static NUL-terminated string.
const char *repsim_version(void);

// Copies `rows * cols` row-major values from `data` into a new matrix.
//
// # Safety
// `data` must point to `rows * cols` readable doubles (it may be null when
// that product is zero) and `out` must be writable.
enum RepsimStatus repsim_matrix_new(size_t rows,
                                    size_t cols,
                                    const double *data,
                                    struct RepsimMatrix **out);

// # Safety
// `m` must be null or a handle from this library that has not been freed.
void repsim_matrix_free(struct RepsimMatrix *m);

// # Safety
// `m` must be null or a live matrix handle.
size_t repsim_matrix_rows(const struct RepsimMatrix *m);

// # Safety
// `m` must be null or a live matrix handle.
size_t repsim_matrix_cols(const struct RepsimMatrix *m);

// Borrowed row-major values, valid while the handle lives.
//
// # Safety
// `m` must be null or a live matrix handle.
const double *repsim_matrix_data(const struct RepsimMatrix *m);

// Reads the matrix stored in an activation file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum RepsimStatus repsim_matrix_read_act(const char *path, struct RepsimMatrix **out);

// Writes `m` as an activation file labelled with `layer_name` (may be null).
//
// # Safety
// `m` must be a live matrix handle; `path` and `layer_name` NUL-terminated.
enum RepsimStatus repsim_matrix_write_act(const struct RepsimMatrix *m,
                                          const char *path,
                                          const char *layer_name);

// Linear CKA between two activation matrices with matching row counts.
//
// # Safety
// `x` and `y` must be live matrix handles and `out` writable.
enum RepsimStatus repsim_cka(const struct RepsimMatrix *x,
                             const struct RepsimMatrix *y,
                             double *out);

// Orthogonal Procrustes similarity in [0, 1].
//
// # Safety
// `x` and `y` must be live matrix handles and `out` writable.
enum RepsimStatus repsim_procrustes(const struct RepsimMatrix *x,
                                    const struct RepsimMatrix *y,
                                    double *out);

// Loads a model checkpoint file.
//
// # Safety
// `path` must be NUL-terminated and `out` writable.
enum RepsimStatus repsim_model_load(const char *path, struct RepsimModel **out);

// # Safety
// `m` must be null or a live model handle.
void repsim_model_free(struct RepsimModel *m);

// # Safety
// `m` must be null or a live model handle.
size_t repsim_model_latent_dim(const struct RepsimModel *m);

// Runs `images` (one flattened image per row) through the model and keeps
// every layer. Sampling noise is seeded from the checkpoint's training seed.
//
// # Safety
// `model` and `images` must be live handles and `out` writable.
enum RepsimStatus repsim_model_capture(const struct RepsimModel *model,
                                       const struct RepsimMatrix *images,
                                       struct RepsimCapture **out);

// # Safety
// `c` must be null or a live capture handle.
void repsim_capture_free(struct RepsimCapture *c);

// # Safety
// `c` must be null or a live capture handle.
size_t repsim_capture_layer_count(const struct RepsimCapture *c);

// Name of layer `index`, or null when out of range. Valid while the handle lives.
//
// # Safety
// `c` must be null or a live capture handle.
const char *repsim_capture_layer_name(const struct RepsimCapture *c, size_t index);

// Copies the named layer into a new matrix.
//
// # Safety
// `c` must be a live capture handle, `name` NUL-terminated and `out` writable.
enum RepsimStatus repsim_capture_layer(const struct RepsimCapture *c,
                                       const char *name,
                                       struct RepsimMatrix **out);

// Latent verdict under the default passive-dimension thresholds.
// `active` and `passive` may be null.
//
// # Safety
// `c` must be a live capture handle and `verdict` writable.
enum RepsimStatus repsim_capture_verdict(const struct RepsimCapture *c,
                                         enum RepsimVerdict *verdict,
                                         size_t *active,
                                         size_t *passive);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REPSIM_H */
