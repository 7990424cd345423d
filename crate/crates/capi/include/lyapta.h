#ifndef LYAPTA_H
#define LYAPTA_H

/* Generated by cbindgen from lyapta-capi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes mirroring the CLI exit contract.
 */
typedef enum lyapta_status {
  /**
   * Success.
   */
  LYAPTA_OK = 0,
  /**
   * Null pointer, non-UTF-8 input, or an out-of-range index.
   */
  LYAPTA_INVALID_ARGUMENT = 1,
  /**
   * Problem-document parse or schema error.
   */
  LYAPTA_SPEC_ERROR = 2,
  /**
   * Pipeline build error (Lyapunov check, grid, bounds, automaton).
   */
  LYAPTA_BUILD_ERROR = 3,
  /**
   * A validation run finished with violations.
   */
  LYAPTA_VALIDATION_FAILED = 4,
  /**
   * Unexpected internal failure.
   */
  LYAPTA_INTERNAL_ERROR = 5,
} lyapta_status;

/**
 * Opaque abstraction handle: the built partition, bounds, automaton, and
 * abstraction map.
 */
typedef struct lyapta_abstraction lyapta_abstraction;

/**
 * Opaque reach-result handle.
 */
typedef struct lyapta_reach_result lyapta_reach_result;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Build an abstraction from a problem document (TOML text).
 * `mode`: 0 keeps the document's mode, 1 forces sound, 2 forces complete.
 *
 * # Safety
 * `problem_toml` must be a NUL-terminated string; `out` must be a valid
 * pointer. The returned handle is freed with `lyapta_abstraction_free`.
 */
enum lyapta_status lyapta_abstraction_build(const char *problem_toml,
                                            int mode,
                                            struct lyapta_abstraction **out);

/**
 * # Safety
 * `handle` must come from `lyapta_abstraction_build` and not be freed twice.
 */
void lyapta_abstraction_free(struct lyapta_abstraction *handle);

/**
 * Number of automaton locations; 0 for a null handle.
 *
 * # Safety
 * `handle` must be a live abstraction handle or null.
 */
size_t lyapta_abstraction_location_count(const struct lyapta_abstraction *handle);

/**
 * Copy the name of one location into `buf` (NUL-terminated).
 *
 * # Safety
 * `handle` live, `buf` writable for `len` bytes.
 */
enum lyapta_status lyapta_abstraction_location_name(const struct lyapta_abstraction *handle,
                                                    size_t index,
                                                    char *buf,
                                                    size_t len);

/**
 * Structural predicates: 1 or 0. `which`: 0 deterministic, 1 bisimilarity
 * condition, 2 refinability precondition. Returns -1 on a bad argument.
 *
 * # Safety
 * `handle` must be a live abstraction handle or null.
 */
int lyapta_abstraction_predicate(const struct lyapta_abstraction *handle, int which);

/**
 * Fingerprint of the partition the abstraction was built on.
 *
 * # Safety
 * `handle` live, `buf` writable for `len` bytes.
 */
enum lyapta_status lyapta_abstraction_fingerprint(const struct lyapta_abstraction *handle,
                                                  char *buf,
                                                  size_t len);

/**
 * Serialize the abstraction as the native automaton file (JSON).
 *
 * # Safety
 * `handle` live; `out` valid. Free the string with `lyapta_string_free`.
 */
enum lyapta_status lyapta_abstraction_to_json(const struct lyapta_abstraction *handle, char **out);

/**
 * Serialize the abstraction as model-checker XML with integer-scaled
 * constants.
 *
 * # Safety
 * `handle` live; `out` valid. Free the string with `lyapta_string_free`.
 */
enum lyapta_status lyapta_abstraction_to_xml(const struct lyapta_abstraction *handle, char **out);

/**
 * Reachable locations over `[t1, t2]` from the document's initial set.
 * `phase_unknown != 0` uses the sound volume-initial-set semantics.
 *
 * # Safety
 * `handle` live; `out` valid. Free with `lyapta_reach_result_free`.
 */
enum lyapta_status lyapta_reach(const struct lyapta_abstraction *handle,
                                double t1,
                                double t2,
                                int phase_unknown,
                                struct lyapta_reach_result **out);

/**
 * # Safety
 * `result` must come from `lyapta_reach` and not be freed twice.
 */
void lyapta_reach_result_free(struct lyapta_reach_result *result);

/**
 * Number of reached locations.
 *
 * # Safety
 * `result` must be a live reach-result handle or null.
 */
size_t lyapta_reach_result_count(const struct lyapta_reach_result *result);

/**
 * Copy the name of one reached location (sorted order) into `buf`.
 *
 * # Safety
 * `result` live, `buf` writable for `len` bytes.
 */
enum lyapta_status lyapta_reach_result_name(const struct lyapta_reach_result *result,
                                            size_t index,
                                            char *buf,
                                            size_t len);

/**
 * Concretized state-space volume of the reached locations.
 *
 * # Safety
 * `result` must be a live reach-result handle or null.
 */
double lyapta_reach_result_volume(const struct lyapta_reach_result *result);

/**
 * Monte-Carlo soundness validation; writes the violation count and returns
 * `LYAPTA_VALIDATION_FAILED` when it is nonzero.
 *
 * # Safety
 * `handle` live; `violations_out` valid or null.
 */
enum lyapta_status lyapta_validate(const struct lyapta_abstraction *handle,
                                   size_t trajectories,
                                   double horizon,
                                   uint64_t seed,
                                   size_t *violations_out);

/**
 * Free a string returned by this library.
 *
 * # Safety
 * `s` must come from a `lyapta_*` call that documents this free function.
 */
void lyapta_string_free(char *s);

/**
 * Copy the current thread's last error message into `buf`.
 *
 * # Safety
 * `buf` writable for `len` bytes.
 */
enum lyapta_status lyapta_last_error(char *buf, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LYAPTA_H */
