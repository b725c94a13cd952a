#ifndef SPEECHPANEL_H
#define SPEECHPANEL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Status codes. Values from 10 upward match the CLI exit codes.
 */
typedef enum SpStatus {
  SP_STATUS_OK = 0,
  SP_STATUS_NULL_ARGUMENT = 1,
  SP_STATUS_INVALID_UTF8 = 2,
  SP_STATUS_PANIC = 3,
  SP_STATUS_IO = 10,
  SP_STATUS_FORMAT = 11,
  SP_STATUS_PARSE = 12,
  SP_STATUS_DUPLICATE = 13,
  SP_STATUS_CAPACITY = 14,
  SP_STATUS_LABEL = 15,
  SP_STATUS_CONFIG = 16,
  SP_STATUS_NUMERIC = 17,
  SP_STATUS_SHAPE = 18,
  SP_STATUS_UNSCORABLE = 19,
  SP_STATUS_UNDEFINED_METRICS = 20,
  SP_STATUS_UNDEFINED_CORRELATION = 21,
  SP_STATUS_STRUCTURE = 22,
  SP_STATUS_EMPTY_RESULT = 23,
  SP_STATUS_SERIALIZATION = 24,
} SpStatus;

typedef enum SpLabel {
  SP_LABEL_HATE = 0,
  SP_LABEL_COUNTER = 1,
  SP_LABEL_NEUTRAL = 2,
} SpLabel;

/**
 * Opaque expert handle.
 */
typedef struct SpExpert SpExpert;

/**
 * Opaque panel handle.
 */
typedef struct SpPanel SpPanel;

/**
 * Panel output for one tweet. `s_hate + s_counter == 1`.
 */
typedef struct SpScore {
  double s_hate;
  double s_counter;
  /**
   * Experts whose vote entered the average.
   */
  size_t voters;
  /**
   * Label at the handle's current gamma.
   */
  enum SpLabel label;
} SpScore;

/**
 * Leakage-guard counters accumulated by a panel handle.
 */
typedef struct SpCounters {
  uint64_t cast;
  uint64_t withheld;
  uint64_t violations;
} SpCounters;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null if none.
 * The pointer stays valid until the next failing call on this thread.
 */
const char *sp_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sp_version(void);

/**
 * Load a panel manifest and every expert it references. Pass NaN as
 * `gamma` to keep the manifest's threshold.
 *
 * # Safety
 * `manifest_path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SpStatus sp_panel_load(const char *manifest_path, double gamma, struct SpPanel **out);

/**
 * # Safety
 * `panel` must come from [`sp_panel_load`] and not be used afterwards.
 */
void sp_panel_free(struct SpPanel *panel);

/**
 * Number of experts in the panel, or 0 for a null handle.
 *
 * # Safety
 * `panel` must be null or a live handle.
 */
size_t sp_panel_len(const struct SpPanel *panel);

/**
 * Current threshold, or NaN for a null handle.
 *
 * # Safety
 * `panel` must be null or a live handle.
 */
double sp_panel_gamma(const struct SpPanel *panel);

/**
 * Change the threshold used for labels; must lie in [0.5, 1].
 *
 * # Safety
 * `panel` must be a live handle not in use by another thread.
 */
enum SpStatus sp_panel_set_gamma(struct SpPanel *panel, double gamma);

/**
 * Score one tweet. `tweet_id` may be null; experts trained on a tweet
 * with the same id withhold their vote.
 *
 * # Safety
 * Pointers must be valid; strings NUL-terminated.
 */
enum SpStatus sp_panel_score(const struct SpPanel *panel,
                             const char *tweet_id,
                             const char *text,
                             struct SpScore *out);

/**
 * # Safety
 * `panel` must be a live handle and `out` a valid pointer.
 */
enum SpStatus sp_panel_counters(const struct SpPanel *panel, struct SpCounters *out);

/**
 * Load one serialized expert.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SpStatus sp_expert_load(const char *path, struct SpExpert **out);

/**
 * Write the expert back to disk in its binary format.
 *
 * # Safety
 * `expert` must be a live handle and `path` a NUL-terminated string.
 */
enum SpStatus sp_expert_save(const struct SpExpert *expert, const char *path);

/**
 * # Safety
 * `expert` must come from [`sp_expert_load`] and not be used afterwards.
 */
void sp_expert_free(struct SpExpert *expert);

/**
 * Fingerprint string owned by the handle, or null for a null handle.
 *
 * # Safety
 * `expert` must be null or a live handle.
 */
const char *sp_expert_fingerprint(const struct SpExpert *expert);

/**
 * p(Hate | text) from a single expert. `low_confidence` may be null; when
 * given it is set when no token of the text was in the vocabulary.
 *
 * # Safety
 * Pointers must be valid; `text` NUL-terminated.
 */
enum SpStatus sp_expert_prob_hate(const struct SpExpert *expert,
                                  const char *text,
                                  double *p_hate,
                                  bool *low_confidence);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPEECHPANEL_H */
