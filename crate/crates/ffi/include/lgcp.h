#ifndef LGCP_H
#define LGCP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LgcpStatus {
  LGCP_OK = 0,
  LGCP_NULL_POINTER = 1,
  LGCP_INVALID_ARGUMENT = 2,
  LGCP_LENGTH_MISMATCH = 3,
  LGCP_NOT_POSITIVE_SEMIDEFINITE = 4,
  LGCP_NUMERICAL_FAILURE = 5,
  LGCP_NO_CONVERGENCE = 6,
  LGCP_TOO_FEW_POINTS = 7,
  LGCP_ZERO_ACCEPTANCE = 8,
  LGCP_BUFFER_TOO_SMALL = 9,
  LGCP_PANIC = 99,
} LgcpStatus;

typedef enum LgcpFamily {
  /**
   * `exp(-decay d^exponent)`; parameters are decay and exponent.
   */
  LGCP_POWER_EXPONENTIAL = 0,
  /**
   * Parameters are range and shape.
   */
  LGCP_MATERN = 1,
} LgcpFamily;

typedef enum LgcpPower {
  LGCP_POWER_ONE = 0,
  LGCP_POWER_HALF = 1,
  LGCP_POWER_NEG_HALF = 2,
  LGCP_POWER_STAR = 3,
} LgcpPower;

/**
 * Torus embedding of a correlation model on an `n x n` unit-square grid.
 */
typedef struct LgcpEmbedding LgcpEmbedding;

typedef struct LgcpHmcFit LgcpHmcFit;

typedef struct LgcpPattern LgcpPattern;

typedef struct LgcpVbFit LgcpVbFit;

/**
 * Settings for [`lgcp_fit_hmc`]; start from [`lgcp_hmc_options_default`].
 */
typedef struct LgcpHmcOptions {
  size_t iterations;
  size_t burn_in;
  double epsilon0;
  double target_accept;
  double l_mean;
  /**
   * Upper bound of the flat decay prior; `<= 0` picks the grid default.
   */
  double rho_upper;
  uint64_t seed;
} LgcpHmcOptions;

/**
 * Posterior mean and variance of one quantity.
 */
typedef struct LgcpMoments {
  double mean;
  double variance;
} LgcpMoments;

typedef struct LgcpSummary {
  struct LgcpMoments mu;
  struct LgcpMoments sigma2;
  struct LgcpMoments precision;
  struct LgcpMoments d_half;
  struct LgcpMoments expected_n;
} LgcpSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Length in bytes of the last error message on this thread, excluding the
 * terminating nul; 0 when there is none.
 */
size_t lgcp_last_error_length(void);

/**
 * Copy the last error message (nul-terminated, truncated to fit) into
 * `buf`. Returns the number of bytes written, excluding the nul.
 *
 * # Safety
 * `buf` must point to `len` writable bytes or be null.
 */
size_t lgcp_last_error_message(char *buf, size_t len);

/**
 * Library version as a static nul-terminated string.
 */
const char *lgcp_version(void);

/**
 * Distance at which the correlation equals 0.5.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum LgcpStatus lgcp_d_half(enum LgcpFamily family, double p1, double p2, double *out);

/**
 * Least-squares power-exponential match to a Matérn correlation.
 *
 * # Safety
 * `decay` and `exponent` must be valid pointers.
 */
enum LgcpStatus lgcp_match_power_to_matern(double range,
                                           double shape,
                                           double *decay,
                                           double *exponent);

/**
 * # Safety
 * `out` must be a valid pointer; the handle is released with
 * [`lgcp_embedding_free`].
 */
enum LgcpStatus lgcp_embedding_new(size_t n,
                                   enum LgcpFamily family,
                                   double p1,
                                   double p2,
                                   struct LgcpEmbedding **out);

/**
 * # Safety
 * `emb` must come from [`lgcp_embedding_new`] and not be used afterwards.
 */
void lgcp_embedding_free(struct LgcpEmbedding *emb);

/**
 * Torus side `m`; 0 for a null handle.
 *
 * # Safety
 * `emb` must be a valid handle or null.
 */
size_t lgcp_embedding_side(const struct LgcpEmbedding *emb);

/**
 * `E^p v` for a vector of length `m^2`.
 *
 * # Safety
 * `v` and `out` must hold `len` values.
 */
enum LgcpStatus lgcp_embedding_matvec(const struct LgcpEmbedding *emb,
                                      enum LgcpPower power,
                                      const double *v,
                                      double *out,
                                      size_t len);

/**
 * Pattern in the unit square from coordinate arrays.
 *
 * # Safety
 * `x` and `y` must hold `len` values; `out` must be a valid pointer.
 */
enum LgcpStatus lgcp_pattern_new(const double *x,
                                 const double *y,
                                 size_t len,
                                 struct LgcpPattern **out);

/**
 * # Safety
 * `pattern` must come from this library and not be used afterwards.
 */
void lgcp_pattern_free(struct LgcpPattern *pattern);

/**
 * # Safety
 * `pattern` must be a valid handle or null.
 */
size_t lgcp_pattern_len(const struct LgcpPattern *pattern);

/**
 * Copy the coordinates into `x` and `y`, each of capacity `len`.
 *
 * # Safety
 * `x` and `y` must hold `len` values.
 */
enum LgcpStatus lgcp_pattern_points(const struct LgcpPattern *pattern,
                                    double *x,
                                    double *y,
                                    size_t len);

/**
 * Draw a field `mu + sigma E^{1/2} gamma` and a pattern from it. The
 * window field (`n^2` values, row-major, rows along y) is written to
 * `field` when it is not null.
 *
 * # Safety
 * `field` must hold `field_len` values or be null; `out` must be valid.
 */
enum LgcpStatus lgcp_simulate(const struct LgcpEmbedding *emb,
                              double mu,
                              double sigma2,
                              uint64_t seed,
                              double *field,
                              size_t field_len,
                              struct LgcpPattern **out);

/**
 * Translation-corrected K estimate at the `len` distances in `r`.
 *
 * # Safety
 * `r` and `out` must hold `len` values.
 */
enum LgcpStatus lgcp_k_hat(const struct LgcpPattern *pattern,
                           const double *r,
                           double *out,
                           size_t len);

/**
 * `sqrt(K / pi)` from the translation-corrected K.
 *
 * # Safety
 * `r` and `out` must hold `len` values.
 */
enum LgcpStatus lgcp_l_hat(const struct LgcpPattern *pattern,
                           const double *r,
                           double *out,
                           size_t len);

struct LgcpHmcOptions lgcp_hmc_options_default(void);

/**
 * HMC fit of a unit-square pattern on an `n x n` grid with a
 * power-exponential correlation whose exponent is held fixed.
 *
 * # Safety
 * `pattern` must be a valid handle and `out` a valid pointer.
 */
enum LgcpStatus lgcp_fit_hmc(const struct LgcpPattern *pattern,
                             size_t n,
                             double decay,
                             double exponent,
                             struct LgcpHmcOptions options,
                             struct LgcpHmcFit **out);

/**
 * # Safety
 * `fit` must come from [`lgcp_fit_hmc`] and not be used afterwards.
 */
void lgcp_hmc_free(struct LgcpHmcFit *fit);

/**
 * Number of stored draws; 0 for a null handle.
 *
 * # Safety
 * `fit` must be a valid handle or null.
 */
size_t lgcp_hmc_draws(const struct LgcpHmcFit *fit);

/**
 * Post-burn-in acceptance rate; NaN for a null handle.
 *
 * # Safety
 * `fit` must be a valid handle or null.
 */
double lgcp_hmc_acceptance(const struct LgcpHmcFit *fit);

/**
 * Draws of `(mu, sigma2, rho)`, 3 values per draw.
 *
 * # Safety
 * `out` must hold `len` values.
 */
enum LgcpStatus lgcp_hmc_theta(const struct LgcpHmcFit *fit, double *out, size_t len);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum LgcpStatus lgcp_hmc_summary(const struct LgcpHmcFit *fit, struct LgcpSummary *out);

/**
 * Mean-field VB fit with the correlation held fixed, priors
 * `mu ~ N(0, 625)` and `sigma^2 ~ IG(1, 1)`.
 *
 * # Safety
 * `pattern` must be a valid handle and `out` a valid pointer.
 */
enum LgcpStatus lgcp_fit_vb(const struct LgcpPattern *pattern,
                            size_t n,
                            enum LgcpFamily family,
                            double p1,
                            double p2,
                            struct LgcpVbFit **out);

/**
 * # Safety
 * `fit` must come from [`lgcp_fit_vb`] and not be used afterwards.
 */
void lgcp_vb_free(struct LgcpVbFit *fit);

/**
 * Sweeps run until convergence; 0 for a null handle.
 *
 * # Safety
 * `fit` must be a valid handle or null.
 */
size_t lgcp_vb_iterations(const struct LgcpVbFit *fit);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum LgcpStatus lgcp_vb_summary(const struct LgcpVbFit *fit, struct LgcpSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LGCP_H */
