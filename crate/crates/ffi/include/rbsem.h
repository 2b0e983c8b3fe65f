#ifndef RBSEM_H
#define RBSEM_H

/* Generated from the rbsem-ffi Rust sources by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Success.
#define RBSEM_OK 0

// The operation itself failed; see `rbsem_last_error`.
#define RBSEM_ERROR 1

// The fit ran but was rejected by the acceptability screen.
#define RBSEM_REJECTED 2

// Estimator codes accepted by `rbsem_fit`.
#define RBSEM_ESTIMATOR_ML 0

#define RBSEM_ESTIMATOR_ERBM 1

#define RBSEM_ESTIMATOR_IRBM 2

#define RBSEM_ESTIMATOR_BOOT 3

#define RBSEM_ESTIMATOR_JACK 4

#define RBSEM_ESTIMATOR_REML 5

// An n×p dataset.
typedef struct RbsemData RbsemData;

// A finished fit.
typedef struct RbsemFit RbsemFit;

// A model specification.
typedef struct RbsemModel RbsemModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread. The pointer stays
// valid until the next failing call on the same thread; copy it if you need
// to keep it.
const char *rbsem_last_error(void);

// Library version as a static NUL-terminated string.
const char *rbsem_version(void);

// Two-factor confirmatory factor model preset (6 indicators, 19 parameters).
struct RbsemModel *rbsem_model_two_factor(void);

// Linear growth-curve model preset (10 occasions, 6 parameters).
struct RbsemModel *rbsem_model_gcm(void);

// Parses a model from the JSON cell format. Returns null on error.
//
// # Safety
// `text` must be a valid NUL-terminated string.
struct RbsemModel *rbsem_model_from_json(const char *text);

// Number of free parameters, or 0 for a null model.
//
// # Safety
// `model` must be a live handle from this library or null.
size_t rbsem_model_n_params(const struct RbsemModel *model);

// # Safety
// `model` must be a live handle from this library or null.
void rbsem_model_free(struct RbsemModel *model);

// Wraps a row-major n×p array of observations. The values are copied.
//
// # Safety
// `values` must point to at least `n * p` doubles.
struct RbsemData *rbsem_data_from_rows(const double *values, size_t n, size_t p);

// Reads a dataset from a CSV file (one row per case, optional header line).
//
// # Safety
// `path` must be a valid NUL-terminated string.
struct RbsemData *rbsem_data_from_csv(const char *path);

// Draws an n-case dataset from `model` at the parameter values `theta`
// (length `n_theta`), with marginal skewness/excess kurtosis applied to the
// latent and residual drivers. Zero skewness and excess kurtosis give
// exact multivariate normal data.
//
// # Safety
// `model` must be a live handle; `theta` must point to `n_theta` doubles.
struct RbsemData *rbsem_simulate_data(const struct RbsemModel *model,
                                      const double *theta,
                                      size_t n_theta,
                                      size_t n,
                                      double skewness,
                                      double excess_kurtosis,
                                      uint64_t seed);

// Number of cases, or 0 for a null dataset.
//
// # Safety
// `data` must be a live handle from this library or null.
size_t rbsem_data_n(const struct RbsemData *data);

// Number of observed variables, or 0 for a null dataset.
//
// # Safety
// `data` must be a live handle from this library or null.
size_t rbsem_data_p(const struct RbsemData *data);

// # Safety
// `data` must be a live handle from this library or null.
void rbsem_data_free(struct RbsemData *data);

// Fits `model` to `data` with the requested estimator and writes a fit
// handle to `*out`. Returns `RBSEM_OK` for an acceptable fit,
// `RBSEM_REJECTED` when the fit ran but failed the acceptability screen
// (`*out` is still set; inspect the rejection reason), and `RBSEM_ERROR`
// when nothing could be fitted (`*out` is null).
//
// # Safety
// `model` and `data` must be live handles; `out` must be a valid pointer.
int rbsem_fit(const struct RbsemModel *model,
              const struct RbsemData *data,
              int estimator,
              uint64_t seed,
              struct RbsemFit **out);

// Number of parameters in the fit, or 0 for a null handle.
//
// # Safety
// `fit` must be a live handle from this library or null.
size_t rbsem_fit_n_params(const struct RbsemFit *fit);

// Copies the parameter estimates into `out` (length `len == n_params`).
//
// # Safety
// `fit` must be a live handle; `out` must point to `len` doubles.
int rbsem_fit_estimates(const struct RbsemFit *fit, double *out, size_t len);

// Copies the standard errors into `out` (length `len == n_params`).
//
// # Safety
// `fit` must be a live handle; `out` must point to `len` doubles.
int rbsem_fit_ses(const struct RbsemFit *fit, double *out, size_t len);

// Maximized log-likelihood (NaN for a null handle or a failed fit).
//
// # Safety
// `fit` must be a live handle from this library or null.
double rbsem_fit_loglik(const struct RbsemFit *fit);

// 1 when the fit passed the acceptability screen, 0 otherwise.
//
// # Safety
// `fit` must be a live handle from this library or null.
int rbsem_fit_acceptable(const struct RbsemFit *fit);

// Static string naming why the fit was rejected: "none", "no_convergence",
// "sigma_not_pd", or "se_out_of_range".
//
// # Safety
// `fit` must be a live handle from this library or null.
const char *rbsem_fit_rejection_reason(const struct RbsemFit *fit);

// # Safety
// `fit` must be a live handle from this library or null.
void rbsem_fit_free(struct RbsemFit *fit);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RBSEM_H */
