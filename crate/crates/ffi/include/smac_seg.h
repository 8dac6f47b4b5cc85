#ifndef SMAC_SEG_H
#define SMAC_SEG_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SmacStatus {
  SMAC_STATUS_OK = 0,
  SMAC_STATUS_NULL_POINTER = 1,
  SMAC_STATUS_INVALID_ARGUMENT = 2,
  SMAC_STATUS_MALFORMED_SCAN = 3,
  SMAC_STATUS_INVALID_POINT = 4,
  SMAC_STATUS_LABEL_COUNT = 5,
  SMAC_STATUS_ENCODING_OVERFLOW = 6,
  SMAC_STATUS_INVALID_KERNEL = 7,
  SMAC_STATUS_DIMENSION = 8,
  SMAC_STATUS_NUMERIC = 9,
  SMAC_STATUS_INVALID_LABEL = 10,
  SMAC_STATUS_PACKING = 11,
  SMAC_STATUS_CONFIG = 12,
  SMAC_STATUS_TAXONOMY = 13,
  SMAC_STATUS_IO = 14,
  SMAC_STATUS_PANIC = 15,
} SmacStatus;

/**
 * Pipeline settings (`key = value` pairs).
 */
typedef struct SmacConfig SmacConfig;

/**
 * Accumulates panoptic statistics over scans.
 */
typedef struct SmacEvaluator SmacEvaluator;

/**
 * A generated synthetic scan.
 */
typedef struct SmacScene SmacScene;

/**
 * Clustering path with loaded taxonomy and attention weights.
 */
typedef struct SmacSegmenter SmacSegmenter;

/**
 * Aggregate panoptic scores, all in `[0, 1]`.
 */
typedef struct SmacScores {
  double pq;
  double pq_dagger;
  double rq;
  double sq;
  double pq_th;
  double rq_th;
  double sq_th;
  double pq_st;
  double rq_st;
  double sq_st;
  double miou;
} SmacScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *smac_version(void);

/**
 * Copies the last error message of this thread into `buf` (truncated and
 * NUL-terminated). Returns the full message length in bytes, excluding the
 * terminator. Passing a null `buf` only queries the length.
 *
 * # Safety
 * `buf` must be null or point to `cap` writable bytes.
 */
size_t smac_last_error(char *buf, size_t cap);

/**
 * Default configuration.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SmacStatus smac_config_new(struct SmacConfig **out);

/**
 * Configuration from a `key = value` file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SmacStatus smac_config_load(const char *path, struct SmacConfig **out);

/**
 * Set one key, e.g. `("cluster.radius", "1.2")`.
 *
 * # Safety
 * `cfg` must be a live handle; `key` and `value` NUL-terminated strings.
 */
enum SmacStatus smac_config_set(struct SmacConfig *cfg, const char *key, const char *value);

/**
 * # Safety
 * `cfg` must be null or a handle from `smac_config_new` / `smac_config_load`.
 */
void smac_config_free(struct SmacConfig *cfg);

/**
 * Run the batch described by `cfg`, writing outputs when `out` is set.
 * `scores` receives the aggregate over all successful scans.
 *
 * # Safety
 * `cfg` must be a live handle; `scores` null or valid.
 */
enum SmacStatus smac_config_run(const struct SmacConfig *cfg, struct SmacScores *scores);

/**
 * # Safety
 * `cfg` must be a live handle and `out` a valid pointer.
 */
enum SmacStatus smac_segmenter_new(const struct SmacConfig *cfg, struct SmacSegmenter **out);

/**
 * # Safety
 * `seg` must be null or a handle from `smac_segmenter_new`.
 */
void smac_segmenter_free(struct SmacSegmenter *seg);

/**
 * Segment one scan.
 *
 * * `points`: `n * 4` floats `(x, y, z, remission)`.
 * * `semantic`: `n` predicted class ids.
 * * `offsets`: `n * 2` predicted `(dx, dy)` per point, or null for none.
 * * `out_semantic`, `out_instance`: `n` fused labels each; points that do
 *   not reach the range image get class and instance 0.
 *
 * # Safety
 * All non-null pointers must reference arrays of the stated lengths.
 */
enum SmacStatus smac_segmenter_run(const struct SmacSegmenter *seg,
                                   const float *points,
                                   const uint32_t *semantic,
                                   const float *offsets,
                                   size_t n,
                                   uint32_t *out_semantic,
                                   uint32_t *out_instance);

/**
 * Evaluator over a class taxonomy given as text (`id: name` lines plus
 * `things:` / `ignore:` lines), or the default 20-class taxonomy when null.
 * Ground-truth instances with fewer than `min_points` points are ignored.
 *
 * # Safety
 * `taxonomy` must be null or NUL-terminated; `out` a valid pointer.
 */
enum SmacStatus smac_evaluator_new(const char *taxonomy,
                                   size_t min_points,
                                   struct SmacEvaluator **out);

/**
 * Add one scan of `n` points.
 *
 * # Safety
 * `ev` must be a live handle and every array must hold `n` elements.
 */
enum SmacStatus smac_evaluator_add(struct SmacEvaluator *ev,
                                   const uint32_t *gt_semantic,
                                   const uint32_t *gt_instance,
                                   const uint32_t *pred_semantic,
                                   const uint32_t *pred_instance,
                                   size_t n);

/**
 * # Safety
 * `ev` must be a live handle and `out` a valid pointer.
 */
enum SmacStatus smac_evaluator_scores(const struct SmacEvaluator *ev, struct SmacScores *out);

/**
 * # Safety
 * `ev` must be null or a handle from `smac_evaluator_new`.
 */
void smac_evaluator_free(struct SmacEvaluator *ev);

/**
 * Pack labels into `.label` words (`semantic | instance << 16`).
 *
 * # Safety
 * Arrays must hold `n` elements.
 */
enum SmacStatus smac_labels_encode(const uint32_t *semantic,
                                   const uint32_t *instance,
                                   size_t n,
                                   uint32_t *out);

/**
 * Split `.label` words into semantic and instance ids.
 *
 * # Safety
 * Arrays must hold `n` elements.
 */
enum SmacStatus smac_labels_decode(const uint32_t *words,
                                   size_t n,
                                   uint32_t *semantic,
                                   uint32_t *instance);

/**
 * Generate a synthetic scan with default settings.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SmacStatus smac_scene_generate(uint64_t seed, size_t num_instances, struct SmacScene **out);

/**
 * Number of points in the scene, or 0 for a null handle.
 *
 * # Safety
 * `scene` must be null or a live handle.
 */
size_t smac_scene_len(const struct SmacScene *scene);

/**
 * Copy points (`n * 4` floats) and labels (`n` each) out of the scene.
 * Any output may be null to skip it.
 *
 * # Safety
 * Non-null outputs must have room for `smac_scene_len(scene)` records.
 */
enum SmacStatus smac_scene_copy(const struct SmacScene *scene,
                                float *points,
                                uint32_t *semantic,
                                uint32_t *instance);

/**
 * # Safety
 * `scene` must be null or a handle from `smac_scene_generate`.
 */
void smac_scene_free(struct SmacScene *scene);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SMAC_SEG_H */
