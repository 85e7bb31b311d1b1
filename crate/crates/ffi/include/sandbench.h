#ifndef SANDBENCH_H
#define SANDBENCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum SbStatus {
  SB_STATUS_OK = 0,
  SB_STATUS_NULL_ARGUMENT = 1,
  SB_STATUS_INVALID_UTF8 = 2,
  SB_STATUS_PARSE_ERROR = 3,
  SB_STATUS_INVALID_ARGUMENT = 4,
  SB_STATUS_INSTANTIATE_ERROR = 5,
  SB_STATUS_STATS_ERROR = 6,
  SB_STATUS_PANIC = 7,
} SbStatus;

/**
 * One instantiated sample with its sandbox on disk.
 */
typedef struct SbItem SbItem;

/**
 * A parsed and validated suite.
 */
typedef struct SbSuite SbSuite;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread. Never NULL.
 */
const char *sb_last_error(void);

/**
 * Library version, static storage.
 */
const char *sb_version(void);

/**
 * Load the bundled reference suite.
 */
enum SbStatus sb_suite_reference(struct SbSuite **out);

/**
 * Parse and validate a suite from YAML text.
 */
enum SbStatus sb_suite_parse(const char *yaml, struct SbSuite **out);

void sb_suite_free(struct SbSuite *suite);

size_t sb_suite_template_count(const struct SbSuite *suite);

/**
 * Question id of template `index`, or 0 when out of range.
 */
uint32_t sb_suite_question_id(const struct SbSuite *suite, size_t index);

/**
 * Items per run; `samples_override` of 0 keeps each template's count.
 */
uint64_t sb_suite_item_count(const struct SbSuite *suite, uint32_t samples_override);

/**
 * Instantiate one sample under `artifacts_root`, building its sandbox.
 */
enum SbStatus sb_item_instantiate(const struct SbSuite *suite,
                                  uint32_t question_id,
                                  uint32_t sample_index,
                                  uint64_t master_seed,
                                  const char *artifacts_root,
                                  struct SbItem **out);

void sb_item_free(struct SbItem *item);

/**
 * Rendered question text.
 */
const char *sb_item_question(const struct SbItem *item);

/**
 * Expected answer or file content; NULL when the scoring type has none.
 */
const char *sb_item_expected(const struct SbItem *item);

const char *sb_item_qs_id(const struct SbItem *item);

uint64_t sb_item_seed(const struct SbItem *item);

/**
 * Score a final assistant message against the item and its sandbox.
 * `reason` receives a static verdict-reason string such as `"match"`.
 */
enum SbStatus sb_item_score(const struct SbItem *item,
                            const char *final_message,
                            bool strict_json,
                            bool *correct,
                            const char **reason);

/**
 * Per-sample seed from the master seed.
 */
uint64_t sb_derive_seed(uint64_t master_seed, uint32_t question_id, uint32_t sample_index);

/**
 * Pooled accuracy over `n` runs given per-run correct and total counts.
 */
enum SbStatus sb_pooled_accuracy(const uint64_t *correct,
                                 const uint64_t *total,
                                 size_t n,
                                 double *out);

/**
 * Relative standard error of the standard deviation for `runs` runs.
 */
enum SbStatus sb_rse(uint32_t runs, double *out);

/**
 * 95% t interval for a mean run accuracy.
 */
enum SbStatus sb_t_interval(double mean, double std_dev, uint32_t runs, double *low, double *high);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SANDBENCH_H */
