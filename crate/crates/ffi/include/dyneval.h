#ifndef DYNEVAL_H
#define DYNEVAL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Output format selector for [`dyneval_report_emit`].
 */
typedef enum DynevalFormat {
  DYNEVAL_FORMAT_JSON = 0,
  DYNEVAL_FORMAT_CSV = 1,
  DYNEVAL_FORMAT_MARKDOWN = 2,
} DynevalFormat;

/**
 * Result codes. Zero is success.
 */
typedef enum DynevalStatus {
  DYNEVAL_STATUS_OK = 0,
  DYNEVAL_STATUS_NULL_POINTER = 1,
  DYNEVAL_STATUS_INVALID_UTF8 = 2,
  DYNEVAL_STATUS_INVALID_ARGUMENT = 3,
  DYNEVAL_STATUS_PARSE = 4,
  DYNEVAL_STATUS_IO = 5,
  DYNEVAL_STATUS_PIPELINE = 6,
  DYNEVAL_STATUS_NOT_FOUND = 7,
  DYNEVAL_STATUS_PANIC = 8,
} DynevalStatus;

/**
 * Opaque experiment configuration.
 */
typedef struct DynevalConfig DynevalConfig;

/**
 * Opaque evaluation report.
 */
typedef struct DynevalReport DynevalReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. Owned by the library;
 * valid until the next failing call on the same thread.
 */
const char *dyneval_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dyneval_version(void);

/**
 * Release a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void dyneval_string_free(char *s);

/**
 * New configuration with every field at its default.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum DynevalStatus dyneval_config_new(struct DynevalConfig **out);

/**
 * Parse a JSON configuration document; absent fields take defaults.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DynevalStatus dyneval_config_from_json(const char *json, struct DynevalConfig **out);

/**
 * # Safety
 * `cfg` must be a live handle.
 */
enum DynevalStatus dyneval_config_set_master_seed(struct DynevalConfig *cfg, uint64_t seed);

/**
 * Serialize a configuration to JSON. Free the result with
 * [`dyneval_string_free`].
 *
 * # Safety
 * `cfg` must be a live handle and `out` a valid pointer.
 */
enum DynevalStatus dyneval_config_to_json(const struct DynevalConfig *cfg, char **out);

/**
 * # Safety
 * `cfg` must come from this library and not be freed twice. NULL is ignored.
 */
void dyneval_config_free(struct DynevalConfig *cfg);

/**
 * Run the whole pipeline.
 *
 * # Safety
 * `cfg` must be a live handle and `out` a valid pointer.
 */
enum DynevalStatus dyneval_run_pipeline(const struct DynevalConfig *cfg,
                                        struct DynevalReport **out);

/**
 * Parse a report previously emitted as JSON.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DynevalStatus dyneval_report_from_json(const char *json, struct DynevalReport **out);

/**
 * # Safety
 * `report` must come from this library and not be freed twice. NULL is ignored.
 */
void dyneval_report_free(struct DynevalReport *report);

/**
 * Serialize a report. Free the result with [`dyneval_string_free`].
 *
 * # Safety
 * `report` must be a live handle and `out` a valid pointer.
 */
enum DynevalStatus dyneval_report_emit(const struct DynevalReport *report,
                                       enum DynevalFormat format,
                                       char **out);

/**
 * Number of test variants in the primary model's rows.
 *
 * # Safety
 * `report` must be a live handle and `out` a valid pointer.
 */
enum DynevalStatus dyneval_report_num_variants(const struct DynevalReport *report, size_t *out);

/**
 * Ground-truth NDCG of variant `index` for the primary model.
 *
 * # Safety
 * `report` must be a live handle and `out` a valid pointer.
 */
enum DynevalStatus dyneval_report_ground_truth(const struct DynevalReport *report,
                                               size_t index,
                                               double *out);

/**
 * Estimate of `method` on variant `index` for the primary model.
 *
 * # Safety
 * `report` must be a live handle, `method` a NUL-terminated string and `out`
 * a valid pointer.
 */
enum DynevalStatus dyneval_report_estimate(const struct DynevalReport *report,
                                           size_t index,
                                           const char *method,
                                           double *out);

/**
 * Mean absolute error of `method` for the primary model.
 *
 * # Safety
 * `report` must be a live handle, `method` a NUL-terminated string and `out`
 * a valid pointer.
 */
enum DynevalStatus dyneval_report_mae(const struct DynevalReport *report,
                                      const char *method,
                                      double *out);

/**
 * NDCG@k of `scores` against the relevance vector `truth`, both of length `n`.
 *
 * # Safety
 * `scores` and `truth` must point to `n` readable doubles; `out` must be valid.
 */
enum DynevalStatus dyneval_ndcg_at_k(const double *scores,
                                     const double *truth,
                                     size_t n,
                                     size_t k,
                                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DYNEVAL_H */
