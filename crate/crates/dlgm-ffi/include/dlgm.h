#ifndef DLGM_H
#define DLGM_H

/* Generated by cbindgen from crates/dlgm-ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result of every fallible call.
typedef enum DlgmStatus {
  DLGM_STATUS_OK = 0,
  // Bad argument, shape or buffer size.
  DLGM_STATUS_USAGE = 1,
  // Unreadable or malformed file or data.
  DLGM_STATUS_DATA = 2,
  // Numerical failure.
  DLGM_STATUS_NUMERIC = 3,
  // A required pointer was null.
  DLGM_STATUS_NULL_POINTER = 4,
  // An internal panic was caught at the boundary.
  DLGM_STATUS_PANIC = 5,
} DlgmStatus;

// A model together with its training metadata.
typedef struct DlgmModel DlgmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *dlgm_version(void);

// Message for the last failed call on this thread, or NULL. The pointer
// stays valid until the next call into the library on this thread.
const char *dlgm_last_error_message(void);

// Creates an initialized model for data of width `visible` from a JSON
// training configuration (NULL for defaults).
//
// # Safety
// `config_json` must be NULL or a NUL-terminated string; `out` must be a
// valid pointer.
enum DlgmStatus dlgm_model_new(const char *config_json, size_t visible, struct DlgmModel **out);

// Loads a model file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be a valid pointer.
enum DlgmStatus dlgm_model_load(const char *path, struct DlgmModel **out);

// Loads a model from an in-memory model file.
//
// # Safety
// `bytes` must point to `len` readable bytes; `out` must be a valid pointer.
enum DlgmStatus dlgm_model_load_bytes(const uint8_t *bytes, size_t len, struct DlgmModel **out);

// # Safety
// `model` must be a live handle and `path` a NUL-terminated string.
enum DlgmStatus dlgm_model_save(const struct DlgmModel *model, const char *path);

// Releases a handle; NULL is ignored.
//
// # Safety
// `model` must be NULL or a handle not yet freed.
void dlgm_model_free(struct DlgmModel *model);

// Visible width, total latent width, number of stochastic layers, and
// whether the recognition model is rank-one (1) or diagonal (0).
//
// # Safety
// `model` must be a live handle; the outputs must be valid pointers.
enum DlgmStatus dlgm_model_dims(const struct DlgmModel *model,
                                size_t *visible,
                                size_t *latent_total,
                                size_t *stochastic_layers,
                                int32_t *rank_one);

// Writes `count` ancestral samples (observation means, row-major
// `count × visible`) to `out`.
//
// # Safety
// `model` must be a live handle; `out` must hold `out_len` doubles.
enum DlgmStatus dlgm_model_sample(const struct DlgmModel *model,
                                  uint64_t seed,
                                  size_t count,
                                  double *out,
                                  size_t out_len);

// Importance-sampled `log p(v)` with `samples` draws from the recognition model.
//
// # Safety
// `model` must be a live handle; `v` must hold `len` doubles.
enum DlgmStatus dlgm_model_marginal_ll(const struct DlgmModel *model,
                                       const double *v,
                                       size_t len,
                                       size_t samples,
                                       uint64_t seed,
                                       double *out);

// Posterior means of a row-major `rows × cols` batch under a model with a
// single 2-D latent layer; writes `rows × 2` values.
//
// # Safety
// `model` must be a live handle; `batch` must hold `rows·cols` doubles and
// `out` `out_len` doubles.
enum DlgmStatus dlgm_model_embed(const struct DlgmModel *model,
                                 const double *batch,
                                 size_t rows,
                                 size_t cols,
                                 double *out,
                                 size_t out_len);

// Single-sample free energy of a batch (scale 1, no jitter).
//
// # Safety
// `model` must be a live handle; `batch` must hold `rows·cols` doubles.
enum DlgmStatus dlgm_model_free_energy(const struct DlgmModel *model,
                                       const double *batch,
                                       size_t rows,
                                       size_t cols,
                                       uint64_t seed,
                                       double *out);

// Continues training on a row-major `rows × cols` data set until the
// configuration's step count; writes the last minibatch free energy per
// point to `out` (may be NULL).
//
// # Safety
// `model` must be a live handle; `config_json` NULL or a NUL-terminated
// string; `data` must hold `rows·cols` doubles.
enum DlgmStatus dlgm_model_train(struct DlgmModel *model,
                                 const char *config_json,
                                 const double *data,
                                 size_t rows,
                                 size_t cols,
                                 double *out);

// KL(N(mu, C) ‖ N(0, I)) for the Gaussian with precision `diag(d) + u uᵀ`.
//
// # Safety
// `mu`, `d` and `u` must each hold `k` doubles.
enum DlgmStatus dlgm_rank_one_kl(const double *mu,
                                 const double *d,
                                 const double *u,
                                 size_t k,
                                 double *out);

// `mu + R eps` with `R Rᵀ = (diag(d) + u uᵀ)⁻¹`.
//
// # Safety
// `mu`, `d`, `u`, `eps` and `out` must each hold `k` doubles.
enum DlgmStatus dlgm_rank_one_sample(const double *mu,
                                     const double *d,
                                     const double *u,
                                     size_t k,
                                     const double *eps,
                                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DLGM_H */
