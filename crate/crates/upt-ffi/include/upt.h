/* C interface to the majority-vote self-rewarded training engine. */

#ifndef UPT_H
#define UPT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of an FFI call.
 */
typedef enum UptStatus {
  UPT_STATUS_OK = 0,
  UPT_STATUS_NULL_POINTER = 1,
  UPT_STATUS_INVALID_UTF8 = 2,
  UPT_STATUS_INVALID_ARGUMENT = 3,
  UPT_STATUS_IO_ERROR = 4,
  UPT_STATUS_PARSE_ERROR = 5,
  UPT_STATUS_RUN_ERROR = 6,
} UptStatus;

/**
 * Opaque task-set handle.
 */
typedef struct UptTaskSet UptTaskSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent error on this thread. The pointer stays valid
 * until the next failing call on the same thread. Never null.
 */
const char *upt_last_error(void);

/**
 * Release a string returned through a `char**` out-parameter.
 *
 * # Safety
 * `s` must be a pointer previously returned by this library and not yet
 * freed, or null.
 */
void upt_string_free(char *s);

/**
 * Extract the canonical answer from one response text. On success
 * `*out_line` holds "<kind>\t<canonical>".
 *
 * # Safety
 * `text` must be a valid NUL-terminated string; `out_line` must be a valid
 * pointer to writable memory.
 */
enum UptStatus upt_extract(const char *text, char **out_line);

/**
 * Whether two response texts extract to equivalent answers.
 *
 * # Safety
 * `a` and `b` must be valid NUL-terminated strings; `out` must be writable.
 */
enum UptStatus upt_equivalent(const char *a, const char *b, bool *out);

/**
 * Majority-vote a group of response texts. `*out_winner` receives the
 * winner as "<kind>\t<canonical>" or an empty string when no answer was
 * extractable; `*out_tie` and `*out_voters` receive the tie flag and the
 * number of extractable answers.
 *
 * # Safety
 * `texts` must point to `len` valid NUL-terminated strings; the out
 * pointers must be writable.
 */
enum UptStatus upt_majority_vote(const char *const *texts,
                                 uintptr_t len,
                                 char **out_winner,
                                 bool *out_tie,
                                 uintptr_t *out_voters);

/**
 * Semantic entropy (nats) of a group of response texts and the number of
 * answer clusters. A group with no extractable answer reports entropy 0
 * with 0 clusters.
 *
 * # Safety
 * `texts` must point to `len` valid NUL-terminated strings; the out
 * pointers must be writable.
 */
enum UptStatus upt_semantic_entropy(const char *const *texts,
                                    uintptr_t len,
                                    double *out_entropy,
                                    uintptr_t *out_clusters);

/**
 * P(majority of n draws correct) under per-draw accuracy p. `inclusive`
 * selects the variant whose lower summation index is ceil(n/2); otherwise
 * the strict (> n/2) variant is computed.
 *
 * # Safety
 * `out` must be a valid pointer to writable memory.
 */
enum UptStatus upt_majority_success_prob(double p, uint32_t n, bool inclusive, double *out);

/**
 * Generate a task set. Returns null on error (see `upt_last_error`).
 *
 * # Safety
 * `family` must be a valid NUL-terminated string.
 */
struct UptTaskSet *upt_taskset_generate(const char *family, uintptr_t count, uint64_t seed);

/**
 * Load a task set file. Returns null on error.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string.
 */
struct UptTaskSet *upt_taskset_load(const char *path);

/**
 * Write a task set file.
 *
 * # Safety
 * `set` must be a live handle from this library; `path` a valid string.
 */
enum UptStatus upt_taskset_save(const struct UptTaskSet *set, const char *path);

/**
 * Number of tasks in the set (0 for a null handle).
 *
 * # Safety
 * `set` must be a live handle from this library, or null.
 */
uintptr_t upt_taskset_len(const struct UptTaskSet *set);

/**
 * Release a task-set handle.
 *
 * # Safety
 * `set` must be a handle from this library not yet freed, or null.
 */
void upt_taskset_free(struct UptTaskSet *set);

/**
 * Train on a task set using a `key = value` config file, writing the run
 * directory (config echo, metric log, checkpoints). `*out_final_reward`
 * receives the final step's mean majority reward.
 *
 * # Safety
 * `config_path` and `out_dir` must be valid NUL-terminated strings; `set`
 * must be a live handle; `out_final_reward` may be null when the value is
 * not wanted.
 */
enum UptStatus upt_train_run(const char *config_path,
                             const struct UptTaskSet *set,
                             const char *out_dir,
                             double *out_final_reward);

/**
 * Evaluate a checkpoint on a task set; `*out_accuracy` receives greedy
 * accuracy.
 *
 * # Safety
 * `ckpt_path` must be a valid NUL-terminated string; `set` a live handle;
 * `out_accuracy` writable.
 */
enum UptStatus upt_eval_checkpoint(const char *ckpt_path,
                                   const struct UptTaskSet *set,
                                   double *out_accuracy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UPT_H */
