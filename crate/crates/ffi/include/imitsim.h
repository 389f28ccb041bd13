#ifndef IMITSIM_H
#define IMITSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum ImsStatus {
  IMS_STATUS_OK = 0,
  IMS_STATUS_NULL_POINTER = 1,
  IMS_STATUS_INVALID_UTF8 = 2,
  IMS_STATUS_IO = 3,
  IMS_STATUS_PARSE = 4,
  IMS_STATUS_VALIDATION = 5,
  IMS_STATUS_SHAPE = 6,
  IMS_STATUS_NON_FINITE = 7,
  IMS_STATUS_CHECKPOINT = 8,
  IMS_STATUS_CONFIG = 9,
  IMS_STATUS_OTHER = 10,
  IMS_STATUS_PANIC = 11,
} ImsStatus;

/**
 * Episode state after a step.
 */
typedef enum ImsTerminal {
  IMS_TERMINAL_RUNNING = 0,
  IMS_TERMINAL_COLLISION = 1,
  IMS_TERMINAL_GOAL = 2,
  IMS_TERMINAL_HORIZON = 3,
  IMS_TERMINAL_PERCEPTION_ERROR = 4,
} ImsTerminal;

/**
 * Loaded imitator plus the grid it perceives on.
 */
typedef struct ImsImitator ImsImitator;

/**
 * One closed-loop episode driven by caller-supplied detections.
 */
typedef struct ImsSim ImsSim;

/**
 * Oriented box in meters and radians; `l` runs along `yaw`.
 */
typedef struct ImsBox {
  double cx;
  double cy;
  double w;
  double l;
  double yaw;
} ImsBox;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call into the library on this thread.
 */
const char *ims_last_error_message(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must be NULL or a pointer obtained from this library, freed once.
 */
void ims_string_free(char *s);

/**
 * Rotated-box IoU.
 *
 * # Safety
 * `a`, `b` and `out` must be NULL or valid pointers.
 */
enum ImsStatus ims_iou_rotated(const struct ImsBox *a, const struct ImsBox *b, double *out);

/**
 * Scores predictions against targets, both as detection lines
 * (`{"scene_id":..,"dets":[..]}` per line). Writes the report as JSON.
 *
 * # Safety
 * String arguments must be NULL or NUL-terminated; `out_json` must be
 * NULL or valid.
 */
enum ImsStatus ims_evaluate(const char *preds_jsonl,
                            const char *targets_jsonl,
                            double fixed_threshold,
                            char **out_json);

/**
 * Loads a checkpoint. `grid_json` may be NULL for the default grid.
 *
 * # Safety
 * `path` must be NUL-terminated; `grid_json` NULL or NUL-terminated; `out`
 * NULL or valid.
 */
enum ImsStatus ims_imitator_load(const char *path, const char *grid_json, struct ImsImitator **out);

/**
 * Runtime score threshold of a loaded model.
 *
 * # Safety
 * `h` and `out` must be NULL or valid.
 */
enum ImsStatus ims_imitator_score_threshold(const struct ImsImitator *h, double *out);

/**
 * Overrides the runtime score threshold.
 *
 * # Safety
 * `h` must be NULL or valid.
 */
enum ImsStatus ims_imitator_set_score_threshold(struct ImsImitator *h, double threshold);

/**
 * Detections for an ego-frame scene (JSON scene record), written as a JSON
 * array of `{cx, cy, w, l, yaw, score}`.
 *
 * # Safety
 * `h` NULL or valid; `scene_json` NUL-terminated; `out_json` NULL or valid.
 */
enum ImsStatus ims_imitator_perceive(struct ImsImitator *h,
                                     const char *scene_json,
                                     char **out_json);

/**
 * # Safety
 * `h` must be NULL or a handle from `ims_imitator_load`, freed once.
 */
void ims_imitator_free(struct ImsImitator *h);

/**
 * Starts a corridor episode. `config_json` may be NULL for defaults.
 *
 * # Safety
 * `config_json` NULL or NUL-terminated; `out` NULL or valid.
 */
enum ImsStatus ims_sim_create(const char *config_json,
                              uint64_t seed,
                              uint64_t episode_id,
                              struct ImsSim **out);

/**
 * Current world in the ego frame, as a JSON scene record.
 *
 * # Safety
 * `h` and `out_json` must be NULL or valid.
 */
enum ImsStatus ims_sim_ego_scene(const struct ImsSim *h, char **out_json);

/**
 * Advances one tick using ego-frame detections (JSON array of
 * `{cx, cy, w, l, yaw, score}`). A step after the end is a no-op.
 *
 * # Safety
 * `h` NULL or valid; `dets_json` NUL-terminated; `out_terminal` NULL or valid.
 */
enum ImsStatus ims_sim_step(struct ImsSim *h,
                            const char *dets_json,
                            enum ImsTerminal *out_terminal);

/**
 * Distance travelled, speed and step count so far.
 *
 * # Safety
 * `h` must be NULL or valid; each output NULL (skipped) or valid.
 */
enum ImsStatus ims_sim_progress(const struct ImsSim *h,
                                double *out_distance,
                                double *out_speed,
                                uint64_t *out_steps);

/**
 * # Safety
 * `h` must be NULL or a handle from `ims_sim_create`, freed once.
 */
void ims_sim_free(struct ImsSim *h);

/**
 * Library version, static string.
 */
const char *ims_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IMITSIM_H */
