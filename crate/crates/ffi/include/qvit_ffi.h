#ifndef QVIT_FFI_H
#define QVIT_FFI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum QvitStatus {
  QVIT_STATUS_OK = 0,
  QVIT_STATUS_NULL_POINTER = 1,
  QVIT_STATUS_INVALID_ARGUMENT = 2,
  QVIT_STATUS_IO = 3,
  QVIT_STATUS_FORMAT = 4,
  QVIT_STATUS_INTERNAL = 5,
} QvitStatus;

/**
 * Model restored from a checkpoint.
 */
typedef struct QvitModel QvitModel;

/**
 * Parameterised ring QNN.
 */
typedef struct QvitQnn QvitQnn;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length, 0 if none.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t qvit_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *qvit_version(void);

/**
 * Creates a ring-topology QNN on `n_qubits` qubits with `2 * n_qubits`
 * angles.
 *
 * # Safety
 * `params` must be valid for `n_params` doubles; `out` must be writable.
 */
enum QvitStatus qvit_qnn_new(size_t n_qubits,
                             const double *params,
                             size_t n_params,
                             struct QvitQnn **out);

/**
 * # Safety
 * `qnn` must be null or a handle from [`qvit_qnn_new`] not yet freed.
 */
void qvit_qnn_free(struct QvitQnn *qnn);

/**
 * # Safety
 * `qnn` must be a live handle.
 */
size_t qvit_qnn_n_qubits(const struct QvitQnn *qnn);

/**
 * Writes the per-qubit `<Z>` readout for input angles `x` into `y`.
 *
 * # Safety
 * `x` and `y` must be valid for `n` doubles each.
 */
enum QvitStatus qvit_qnn_forward(const struct QvitQnn *qnn, const double *x, double *y, size_t n);

/**
 * Outputs and full Jacobians. `d_input` is `n x n` and `d_params` is
 * `n x 2n`, both row-major with one row per output.
 *
 * # Safety
 * `x`, `y` hold `n` doubles, `d_input` `n*n`, `d_params` `2*n*n`.
 */
enum QvitStatus qvit_qnn_gradients(const struct QvitQnn *qnn,
                                   const double *x,
                                   size_t n,
                                   double *y,
                                   double *d_input,
                                   double *d_params);

/**
 * Loads a checkpoint written by the `qvit` CLI.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum QvitStatus qvit_model_load(const char *path, struct QvitModel **out);

/**
 * # Safety
 * `model` must be null or a handle from [`qvit_model_load`] not yet freed.
 */
void qvit_model_free(struct QvitModel *model);

/**
 * Values per input image (`C * H * W`), 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t qvit_model_image_len(const struct QvitModel *model);

/**
 * # Safety
 * `model` must be null or a live handle.
 */
size_t qvit_model_n_classes(const struct QvitModel *model);

/**
 * # Safety
 * `model` must be null or a live handle.
 */
size_t qvit_model_n_parameters(const struct QvitModel *model);

/**
 * Logits for one `[C, H, W]` image whose pixels are already mapped to angles.
 *
 * # Safety
 * `image` holds `image_len` doubles and `logits` holds `n_classes`.
 */
enum QvitStatus qvit_model_predict(const struct QvitModel *model,
                                   const double *image,
                                   size_t image_len,
                                   double *logits,
                                   size_t n_classes);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QVIT_FFI_H */
