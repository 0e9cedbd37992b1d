#ifndef NAGMCMC_H
#define NAGMCMC_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum NagStatus {
  NAG_OK = 0,
  NAG_NULL_POINTER = 1,
  NAG_INVALID_ARGUMENT = 2,
  NAG_UNSUPPORTED_ORDER = 3,
  NAG_SINGULAR_CHANNEL = 4,
  NAG_SEARCH_TOO_LARGE = 5,
  NAG_INTERNAL = 6,
} NagStatus;

/**
 * Detector variants for the closed-form multiplication count.
 */
typedef enum NagAlgorithm {
  NAG_ALG_MMSE = 0,
  NAG_ALG_EP = 1,
  NAG_ALG_MHGD = 2,
  NAG_ALG_NAG_MCMC = 3,
  NAG_ALG_NAG_MCMC_SA_ES = 4,
} NagAlgorithm;

/**
 * Opaque detector handle.
 */
typedef struct NagDetector NagDetector;

/**
 * Detector configuration. Fill with [`nag_config_default`] and adjust.
 */
typedef struct NagConfig {
  uint32_t nr;
  uint32_t nt;
  /**
   * QAM order: 4, 16 or 64.
   */
  uint32_t order;
  uint32_t samplers;
  uint32_t iterations;
  uint32_t gd_steps;
  bool sample_augmentation;
  bool early_stopping;
  double momentum;
  double es_threshold;
  /**
   * Step-size coefficient; zero or negative selects `(N_t/8)^(-1/3)`.
   */
  double beta;
  uint64_t seed;
} NagConfig;

/**
 * Per-detection statistics.
 */
typedef struct NagDetectInfo {
  /**
   * Executed sampling iterations.
   */
  uint32_t iterations;
  bool stopped_early;
  /**
   * `‖y − Hx̂‖²` of the decision.
   */
  double residual_sqnorm;
  /**
   * Complex multiplications charged to this detection.
   */
  double multiplications;
} NagDetectInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Writes the default configuration: 8×8, 16-QAM, P = 16, S = 8, Ng = 8,
 * sample augmentation and early stopping on.
 *
 * # Safety
 * `out` must be null or point to writable memory for one `NagConfig`.
 */
enum NagStatus nag_config_default(struct NagConfig *out);

/**
 * Creates a detector. Returns null on failure and sets `status` if it is
 * non-null.
 *
 * # Safety
 * `config` must point to a valid `NagConfig`; `status` may be null.
 */
struct NagDetector *nag_detector_new(const struct NagConfig *config, enum NagStatus *status);

/**
 * Releases a detector. Null is ignored.
 *
 * # Safety
 * `det` must be null or a handle from `nag_detector_new` not yet freed.
 */
void nag_detector_free(struct NagDetector *det);

/**
 * Detects one received vector.
 *
 * `h` holds `nr·nt` and `y` holds `nr` interleaved complex values.
 * `symbols_out` receives `nt` constellation indices. `llr_out`, if non-null,
 * receives `nt·log2(order)` max-log LLRs (positive favours bit 1). `info`
 * may be null. Each call draws fresh sampler streams from the handle's seed
 * and call count, so a sequence of calls is reproducible.
 *
 * # Safety
 * All non-null pointers must reference arrays of the stated lengths.
 */
enum NagStatus nag_detector_detect(struct NagDetector *det,
                                   const double *h,
                                   const double *y,
                                   double sigma2,
                                   uint8_t *symbols_out,
                                   double *llr_out,
                                   struct NagDetectInfo *info);

/**
 * Exhaustive maximum-likelihood detection, capped at 2^24 candidates.
 *
 * # Safety
 * `h` must hold `nr·nt` and `y` `nr` interleaved complex values;
 * `symbols_out` must hold `nt` bytes.
 */
enum NagStatus nag_ml_detect(uint32_t nr,
                             uint32_t nt,
                             uint32_t order,
                             const double *h,
                             const double *y,
                             uint8_t *symbols_out,
                             double *residual_sqnorm_out);

/**
 * Closed-form complex multiplications per detected vector.
 *
 * `iterations` is `S`, or the mean executed count `S_a` for the early
 * stopping variant. `ep_iterations` is only used by the EP formula.
 *
 * # Safety
 * `out` must point to a writable `uint64_t`.
 */
enum NagStatus nag_closed_form_mults(enum NagAlgorithm algorithm,
                                     uint32_t n,
                                     uint32_t order,
                                     uint32_t samplers,
                                     double iterations,
                                     uint32_t gd_steps,
                                     uint32_t ep_iterations,
                                     uint64_t *out);

/**
 * Static description of a status code.
 */
const char *nag_status_message(enum NagStatus status);

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *nag_last_error(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NAGMCMC_H */
