#ifndef SCORELAB_H
#define SCORELAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Success.
 */
#define SCORELAB_OK 0

/**
 * Parse or configuration error; message available.
 */
#define SCORELAB_ERR_CONFIG 1

/**
 * Optimization diverged.
 */
#define SCORELAB_ERR_DIVERGED 2

/**
 * Null pointer or otherwise invalid argument.
 */
#define SCORELAB_ERR_ARGUMENT 3

/**
 * Internal panic caught at the boundary.
 */
#define SCORELAB_ERR_PANIC 4

/**
 * A parsed and statically validated experiment file.
 */
typedef struct ScorelabConfig ScorelabConfig;

/**
 * A world plus the schedule it is evaluated under.
 */
typedef struct ScorelabWorld ScorelabWorld;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null after success.
 * The pointer is valid until the next call on the same thread.
 */
const char *scorelab_last_error(void);

/**
 * Parse and statically validate an experiment JSON document.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be a valid pointer.
 */
int32_t scorelab_config_parse(const char *json, struct ScorelabConfig **out);

/**
 * # Safety
 * `cfg` must come from `scorelab_config_parse` and not be freed twice.
 */
void scorelab_config_free(struct ScorelabConfig *cfg);

/**
 * Re-run static validation on a parsed config.
 *
 * # Safety
 * `cfg` must be a live handle from `scorelab_config_parse`.
 */
int32_t scorelab_config_validate(const struct ScorelabConfig *cfg);

/**
 * Execute the experiment the config requests and return its result as a
 * JSON string. The caller owns the string and frees it with
 * `scorelab_string_free`.
 *
 * # Safety
 * `cfg` must be a live handle; `out_json` must be a valid pointer.
 */
int32_t scorelab_execute(const struct ScorelabConfig *cfg, char **out_json);

/**
 * Free a string returned by `scorelab_execute`.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void scorelab_string_free(char *s);

/**
 * Extract the world and schedule of a parsed config as a standalone handle.
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be a valid pointer.
 */
int32_t scorelab_world_from_config(const struct ScorelabConfig *cfg, struct ScorelabWorld **out);

/**
 * # Safety
 * `world` must come from `scorelab_world_from_config` and not be freed twice.
 */
void scorelab_world_free(struct ScorelabWorld *world);

/**
 * Exact noise prediction at `x_t` (length `len`, which must equal the world
 * dimension) and time `t`, conditioned on `prompt`, or unconditional when
 * `prompt` is null. Writes `len` values to `out`.
 *
 * # Safety
 * `world` must be a live handle; `x_t` and `out` must point to `len` doubles;
 * `prompt`, when non-null, must be NUL-terminated.
 */
int32_t scorelab_eps_pred(const struct ScorelabWorld *world,
                          const double *x_t,
                          uintptr_t len,
                          const char *prompt,
                          double t,
                          double *out);

/**
 * Implicit-classifier log probability log q(prompt | x_t) at time `t`.
 *
 * # Safety
 * Same pointer requirements as `scorelab_eps_pred`; `out` is one double.
 */
int32_t scorelab_classifier_logprob(const struct ScorelabWorld *world,
                                    const double *x_t,
                                    uintptr_t len,
                                    const char *prompt,
                                    double t,
                                    double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCORELAB_H */
