#ifndef SNCOV_H
#define SNCOV_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SncovStatus {
  SNCOV_STATUS_OK = 0,
  SNCOV_STATUS_NULL_POINTER = 1,
  SNCOV_STATUS_DOMAIN = 2,
  SNCOV_STATUS_UNSUPPORTED = 3,
  SNCOV_STATUS_UNSUPPORTED_REGIME = 4,
  SNCOV_STATUS_DEGENERATE_SPECTRUM = 5,
  SNCOV_STATUS_DEGENERATE_TARGET = 6,
  SNCOV_STATUS_NUMERICAL = 7,
  SNCOV_STATUS_CONFIG = 8,
  SNCOV_STATUS_IO = 9,
  SNCOV_STATUS_PANIC = 10,
} SncovStatus;

typedef enum SncovModel {
  SNCOV_MODEL_IID = 0,
  SNCOV_MODEL_ELLIPTICAL = 1,
  SNCOV_MODEL_GARCH_T4 = 2,
} SncovModel;

typedef enum SncovTestKind {
  SNCOV_TEST_KIND_LR_SN = 0,
  SNCOV_TEST_KIND_JHN_SN = 1,
  /**
   * Uses the `moment_order` argument.
   */
  SNCOV_TEST_KIND_MOMENT = 2,
} SncovTestKind;

/**
 * Opaque p×n panel.
 */
typedef struct SncovObservations SncovObservations;

/**
 * Opaque eigenvalue set of the self-normalized covariance matrix.
 */
typedef struct SncovSpectrum SncovSpectrum;

/**
 * Flat result of a sphericity test.
 */
typedef struct SncovReport {
  double statistic;
  double z;
  double p_value;
  double alpha;
  bool reject;
  size_t p;
  size_t n;
  double y_n;
} SncovReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null.
 *
 * The pointer stays valid until the next `sncov_*` call on the same thread.
 */
const char *sncov_last_error_message(void);

enum SncovStatus sncov_mp_moment(uint32_t k, double y, double *out);

enum SncovStatus sncov_mp_density(double x, double y, double *out);

/**
 * Companion Stieltjes transform at `re + i·im`.
 */
enum SncovStatus sncov_mp_stieltjes(double re, double im, double y, double *out_re, double *out_im);

/**
 * Copies `p * n` column-major values into a new panel.
 */
enum SncovStatus sncov_observations_new(const double *data,
                                        size_t p,
                                        size_t n,
                                        struct SncovObservations **out);

/**
 * Simulates a panel; `rho` is ignored unless `toeplitz` is true.
 */
enum SncovStatus sncov_observations_generate(enum SncovModel model,
                                             bool toeplitz,
                                             double rho,
                                             size_t p,
                                             size_t n,
                                             uint64_t seed,
                                             struct SncovObservations **out);

void sncov_observations_free(struct SncovObservations *obs);

enum SncovStatus sncov_observations_dims(const struct SncovObservations *obs, size_t *p, size_t *n);

/**
 * Copies the panel, column-major, into `buf` of length `p * n`.
 */
enum SncovStatus sncov_observations_copy(const struct SncovObservations *obs,
                                         double *buf,
                                         size_t len);

enum SncovStatus sncov_spectrum_compute(const struct SncovObservations *obs,
                                        struct SncovSpectrum **out);

void sncov_spectrum_free(struct SncovSpectrum *spec);

/**
 * Number of eigenvalues (`p`).
 */
enum SncovStatus sncov_spectrum_len(const struct SncovSpectrum *spec, size_t *len);

/**
 * Copies the eigenvalues, nonincreasing, into `buf`.
 */
enum SncovStatus sncov_spectrum_eigenvalues(const struct SncovSpectrum *spec,
                                            double *buf,
                                            size_t len);

/**
 * Tests `Σ ∝ I`.
 */
enum SncovStatus sncov_test(const struct SncovObservations *obs,
                            enum SncovTestKind kind,
                            uint32_t moment_order,
                            double alpha,
                            struct SncovReport *out);

/**
 * Tests `Σ ∝ diag(d)` with `d` of length `p`.
 */
enum SncovStatus sncov_test_diagonal(const struct SncovObservations *obs,
                                     const double *diag,
                                     enum SncovTestKind kind,
                                     uint32_t moment_order,
                                     double alpha,
                                     struct SncovReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SNCOV_H */
