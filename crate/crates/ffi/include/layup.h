#ifndef LAYUP_H
#define LAYUP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum LayupStatus {
  LAYUP_STATUS_OK = 0,
  LAYUP_STATUS_NULL_POINTER = 1,
  LAYUP_STATUS_INVALID_UTF8 = 2,
  /**
   * Malformed or inconsistent input: parse errors, invalid plans,
   * incompatible models.
   */
  LAYUP_STATUS_INVALID_INPUT = 3,
  /**
   * The request was well formed but could not be carried out.
   */
  LAYUP_STATUS_FAILED = 4,
  LAYUP_STATUS_PANIC = 5,
} LayupStatus;

/**
 * A set of ordering and count constraints.
 */
typedef struct LayupConstraints LayupConstraints;

/**
 * The log of one simulated experiment.
 */
typedef struct LayupLog LayupLog;

/**
 * A learned effectiveness model.
 */
typedef struct LayupModel LayupModel;

/**
 * A draping plan.
 */
typedef struct LayupPlan LayupPlan;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The caller
 * owns the returned string.
 */
char *layup_last_error(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, not yet freed.
 */
void layup_string_free(char *s);

/**
 * Parses a plan in the line format (`name: ...`, then one action per line).
 *
 * # Safety
 * `text` must be a NUL-terminated string, `out` a valid pointer.
 */
enum LayupStatus layup_plan_parse(const char *text, struct LayupPlan **out);

/**
 * One of the two expert plans, `which` = 1 or 2.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum LayupStatus layup_plan_expert(uint32_t which, struct LayupPlan **out);

/**
 * # Safety
 * `plan` must be a live plan handle, `out` a valid pointer.
 */
enum LayupStatus layup_plan_emit(const struct LayupPlan *plan, char **out);

/**
 * Number of actions, 0 for NULL.
 *
 * # Safety
 * `plan` must be NULL or a live plan handle.
 */
size_t layup_plan_len(const struct LayupPlan *plan);

/**
 * Paths the plan executes, counting each refinement pass; 0 for NULL.
 *
 * # Safety
 * `plan` must be NULL or a live plan handle.
 */
uint32_t layup_plan_path_equivalents(const struct LayupPlan *plan);

/**
 * # Safety
 * `plan` must be NULL or a handle not yet freed.
 */
void layup_plan_free(struct LayupPlan *plan);

/**
 * Parses `rel (...)` / `abs (...)` lines.
 *
 * # Safety
 * `text` must be a NUL-terminated string, `out` a valid pointer.
 */
enum LayupStatus layup_constraints_parse(const char *text, struct LayupConstraints **out);

/**
 * The layup constraint set; with `initial` true, the set the expert
 * plans are held to (no refinement requirements).
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum LayupStatus layup_constraints_default(bool initial, struct LayupConstraints **out);

/**
 * # Safety
 * `cs` must be NULL or a handle not yet freed.
 */
void layup_constraints_free(struct LayupConstraints *cs);

/**
 * Counts the constraints `plan` violates into `violations`; the first one
 * is described by [`layup_last_error`] when the count is nonzero.
 *
 * # Safety
 * Handles must be live, `violations` a valid pointer.
 */
enum LayupStatus layup_plan_validate(const struct LayupPlan *plan,
                                     const struct LayupConstraints *cs,
                                     size_t *violations);

/**
 * Runs `plan` on a built-in sheet (`sheet1`, `sheet2`) with default
 * ground-truth parameters.
 *
 * # Safety
 * Handles must be live, `sheet` a NUL-terminated string, `out` a valid
 * pointer.
 */
enum LayupStatus layup_simulate(const struct LayupPlan *plan,
                                const struct LayupConstraints *cs,
                                const char *sheet,
                                uint64_t seed,
                                bool refined,
                                struct LayupLog **out);

/**
 * Plan paths plus correction paths; 0 for NULL.
 *
 * # Safety
 * `log` must be NULL or a live log handle.
 */
uint32_t layup_log_total_paths(const struct LayupLog *log);

/**
 * Serializes a log as JSON lines.
 *
 * # Safety
 * `log` must be a live handle, `out` a valid pointer.
 */
enum LayupStatus layup_log_to_jsonl(const struct LayupLog *log, char **out);

/**
 * Reads a log from JSON lines.
 *
 * # Safety
 * `text` must be a NUL-terminated string, `out` a valid pointer.
 */
enum LayupStatus layup_log_from_jsonl(const char *text, struct LayupLog **out);

/**
 * # Safety
 * `log` must be NULL or a handle not yet freed.
 */
void layup_log_free(struct LayupLog *log);

/**
 * Aggregates `count` logs into a model.
 *
 * # Safety
 * `logs` must point to `count` live log handles, `out` a valid pointer.
 */
enum LayupStatus layup_model_learn(const struct LayupLog *const *logs,
                                   size_t count,
                                   struct LayupModel **out);

/**
 * # Safety
 * `text` must be a NUL-terminated string, `out` a valid pointer.
 */
enum LayupStatus layup_model_from_json(const char *text, struct LayupModel **out);

/**
 * # Safety
 * `model` must be a live handle, `out` a valid pointer.
 */
enum LayupStatus layup_model_to_json(const struct LayupModel *model, char **out);

/**
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void layup_model_free(struct LayupModel *model);

/**
 * Refines a plan with the default search settings, starting from the
 * state before the first action of `initial`.
 *
 * # Safety
 * Handles must be live, `out` a valid pointer.
 */
enum LayupStatus layup_refine(const struct LayupModel *model,
                              const struct LayupLog *initial,
                              const struct LayupConstraints *cs,
                              struct LayupPlan **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LAYUP_H */
