#ifndef SDRKIT_H
#define SDRKIT_H

/* Generated by cbindgen from crates/ffi; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum SdrStatus {
  SDR_STATUS_OK = 0,
  SDR_STATUS_NULL_POINTER = 1,
  SDR_STATUS_INVALID_UTF8 = 2,
  SDR_STATUS_INVALID_ARGUMENT = 3,
  SDR_STATUS_IO = 4,
  SDR_STATUS_PARSE = 5,
  SDR_STATUS_COMPUTATION = 6,
  SDR_STATUS_NOT_FOUND = 7,
  SDR_STATUS_PANIC = 8,
} SdrStatus;

typedef enum SdrCondition {
  SDR_CONDITION_HONEST = 0,
  SDR_CONDITION_FAKE_GOOD = 1,
} SdrCondition;

/**
 * Zone of a direction-corrected |d̃_z|: ≤ 0.2, ≤ 0.5, above.
 */
typedef enum SdrSdrZone {
  SDR_SDR_ZONE_RECOMMENDED = 0,
  SDR_SDR_ZONE_CAUTION = 1,
  SDR_SDR_ZONE_AVOID = 2,
} SdrSdrZone;

/**
 * Zone of a recovery correlation: ≥ 0.70, ≥ 0.50, below.
 */
typedef enum SdrRecoveryZone {
  SDR_RECOVERY_ZONE_STRONG = 0,
  SDR_RECOVERY_ZONE_ACCEPTABLE = 1,
  SDR_RECOVERY_ZONE_INSUFFICIENT = 2,
} SdrRecoveryZone;

/**
 * Opaque fit artifact.
 */
typedef struct SdrFit SdrFit;

/**
 * Opaque forced-choice inventory.
 */
typedef struct SdrInventory SdrInventory;

/**
 * Opaque item pool.
 */
typedef struct SdrItemPool SdrItemPool;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *sdr_version(void);

/**
 * Message of the last failing call on this thread, or NULL if none.
 */
const char *sdr_last_error_message(void);

/**
 * Releases a string returned through a `char **` out-parameter. NULL is a no-op.
 *
 * # Safety
 * `s` must come from this library and must not be used afterwards.
 */
void sdr_string_free(char *s);

/**
 * Loads a tab-separated item pool (`id, text, domain, keying[, desirability]`).
 *
 * # Safety
 * `path` must be a valid C string; `out` must be writable.
 */
enum SdrStatus sdr_pool_load(const char *path, struct SdrItemPool **out);

/**
 * Number of items in the pool (0 for NULL).
 *
 * # Safety
 * `pool` must be NULL or a live handle.
 */
size_t sdr_pool_len(const struct SdrItemPool *pool);

/**
 * # Safety
 * `pool` must be NULL or a handle from [`sdr_pool_load`], not used afterwards.
 */
void sdr_pool_free(struct SdrItemPool *pool);

/**
 * Loads a forced-choice inventory (`block, left, right[, gap]`) against a pool.
 *
 * # Safety
 * Pointers must be valid; `out` must be writable.
 */
enum SdrStatus sdr_inventory_load(const char *path,
                                  const struct SdrItemPool *pool,
                                  struct SdrInventory **out);

/**
 * Assembles a `blocks`-block inventory from a rated pool with the balanced
 * constraint set (or no constraints when `balanced` is false).
 *
 * # Safety
 * Pointers must be valid; `out` must be writable.
 */
enum SdrStatus sdr_inventory_assemble(const struct SdrItemPool *pool,
                                      size_t blocks,
                                      bool balanced,
                                      struct SdrInventory **out);

/**
 * Number of blocks (0 for NULL).
 *
 * # Safety
 * `inv` must be NULL or a live handle.
 */
size_t sdr_inventory_block_count(const struct SdrInventory *inv);

/**
 * Validates against the balanced constraint set for the inventory's block
 * count and returns the constraint report as JSON.
 *
 * # Safety
 * Pointers must be valid; `out_json` must be writable.
 */
enum SdrStatus sdr_inventory_validate_json(const struct SdrInventory *inv,
                                           const struct SdrItemPool *pool,
                                           char **out_json);

/**
 * Writes the inventory as a tab-separated file.
 *
 * # Safety
 * Pointers must be valid.
 */
enum SdrStatus sdr_inventory_write(const struct SdrInventory *inv, const char *path);

/**
 * # Safety
 * `inv` must be NULL or a handle from this library, not used afterwards.
 */
void sdr_inventory_free(struct SdrInventory *inv);

/**
 * Loads a JSON fit artifact.
 *
 * # Safety
 * `path` must be a valid C string; `out` must be writable.
 */
enum SdrStatus sdr_fit_load(const char *path, struct SdrFit **out);

/**
 * Copies θ̂ (A, C, E, N, O) for one respondent, persona and condition into `out_theta[5]`.
 *
 * # Safety
 * Pointers must be valid; `out_theta` must hold 5 doubles.
 */
enum SdrStatus sdr_fit_theta(const struct SdrFit *fit,
                             const char *respondent,
                             const char *persona,
                             enum SdrCondition condition,
                             double *out_theta);

/**
 * Paired fake-good − honest effect summary (d_z, d̃_z per trait, aggregate) as JSON.
 *
 * # Safety
 * Pointers must be valid; `out_json` must be writable.
 */
enum SdrStatus sdr_fit_effect_json(const struct SdrFit *fit,
                                   const char *respondent,
                                   char **out_json);

/**
 * # Safety
 * `fit` must be NULL or a handle from [`sdr_fit_load`], not used afterwards.
 */
void sdr_fit_free(struct SdrFit *fit);

/**
 * Cohen's d_z of paired differences. Zero spread or n < 2 is an error.
 *
 * # Safety
 * `deltas` must point to `n` doubles; `out` must be writable.
 */
enum SdrStatus sdr_cohens_dz(const double *deltas, size_t n, double *out);

/**
 * Zone of a direction-corrected d̃_z (uses |d̃_z|).
 */
enum SdrSdrZone sdr_sdr_zone(double d_tilde);

/**
 * Zone of a recovery correlation.
 */
enum SdrRecoveryZone sdr_recovery_zone(double r);

/**
 * Probabilities of the 7 ordered categories for linear predictor `eta` and
 * 6 increasing thresholds.
 *
 * # Safety
 * `kappa` must hold 6 doubles and `out_probs` room for 7.
 */
enum SdrStatus sdr_category_probs(double eta, const double *kappa, double *out_probs);

/**
 * Samples `n` personas from the default trait covariance and returns the
 * persona set as JSON.
 *
 * # Safety
 * `out_json` must be writable.
 */
enum SdrStatus sdr_personas_sample_json(size_t n, uint64_t seed, char **out_json);

/**
 * Renders the Likert questionnaire prompt for one statement.
 *
 * # Safety
 * String arguments must be valid C strings; `out` must be writable.
 */
enum SdrStatus sdr_render_likert_prompt(const char *persona,
                                        enum SdrCondition condition,
                                        const char *statement,
                                        char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SDRKIT_H */
