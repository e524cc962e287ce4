/* C API for the raycal differentiable RF ray tracer. */

#ifndef RAYCAL_H
#define RAYCAL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every API function.
 */
typedef enum RaycalStatus {
  /**
   * Operation completed.
   */
  RAYCAL_OK = 0,
  /**
   * A pointer argument was null or an index was out of range.
   */
  RAYCAL_INVALID_ARGUMENT = 1,
  /**
   * Input could not be parsed or failed validation.
   */
  RAYCAL_INVALID_INPUT = 2,
  /**
   * A numerical failure (non-finite value) occurred.
   */
  RAYCAL_NUMERICAL = 3,
  /**
   * Checkpoint and scene/model are incompatible.
   */
  RAYCAL_INCOMPATIBLE = 4,
  /**
   * An internal panic was caught; see `raycal_last_error`.
   */
  RAYCAL_INTERNAL = 5,
} RaycalStatus;

/**
 * Opaque trained-model handle (checkpoint loaded against a scene).
 */
typedef struct RaycalModel RaycalModel;

/**
 * Opaque traced path-set handle for one transmitter/receiver pair.
 */
typedef struct RaycalPaths RaycalPaths;

/**
 * Opaque triangle-mesh scene handle.
 */
typedef struct RaycalScene RaycalScene;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Returns the error message for the most recent failure on this thread.
 * The pointer is valid until the next API call on the same thread.
 */
const char *raycal_last_error(void);

/**
 * Loads a scene from a JSON file. On success `*out` owns the handle.
 */
enum RaycalStatus raycal_scene_load(const char *path, struct RaycalScene **out);

/**
 * Parses a scene from a JSON string.
 */
enum RaycalStatus raycal_scene_from_json(const char *json, struct RaycalScene **out);

/**
 * Number of triangles in the scene.
 */
enum RaycalStatus raycal_scene_triangle_count(const struct RaycalScene *scene, uintptr_t *out);

/**
 * Releases a scene handle. Passing null is a no-op.
 */
void raycal_scene_free(struct RaycalScene *scene);

/**
 * Traces propagation paths from `tx` to `rx` (both `double[3]`).
 * `max_order` bounds the number of specular bounces; `diffuse_samples`
 * enables single-bounce diffuse paths when nonzero.
 */
enum RaycalStatus raycal_trace(const struct RaycalScene *scene,
                               const double *tx,
                               const double *rx,
                               int max_order,
                               int diffuse_samples,
                               uint64_t seed,
                               struct RaycalPaths **out);

/**
 * Number of traced paths in the set.
 */
enum RaycalStatus raycal_paths_count(const struct RaycalPaths *paths, uintptr_t *out);

/**
 * Propagation delay in seconds of path `index`.
 */
enum RaycalStatus raycal_paths_delay(const struct RaycalPaths *paths, uintptr_t index, double *out);

/**
 * Releases a path-set handle. Passing null is a no-op.
 */
void raycal_paths_free(struct RaycalPaths *paths);

/**
 * Loads a model checkpoint and binds it to a scene. Fails with
 * `RAYCAL_INCOMPATIBLE` when the checkpoint was trained against a
 * different parameterization or scene material list.
 */
enum RaycalStatus raycal_model_load(const struct RaycalScene *scene,
                                    const char *checkpoint_path,
                                    struct RaycalModel **out);

/**
 * Releases a model handle. Passing null is a no-op.
 */
void raycal_model_free(struct RaycalModel *model);

/**
 * Evaluates the channel impulse response predicted by `model` over the
 * traced `paths`. Writes `subcarriers` complex taps as interleaved
 * (re, im) pairs into `out`, which must hold `2 * subcarriers` doubles.
 */
enum RaycalStatus raycal_model_cir(const struct RaycalModel *model,
                                   const struct RaycalPaths *paths,
                                   double carrier_hz,
                                   uintptr_t subcarriers,
                                   double spacing_hz,
                                   double *out);

/**
 * Reads the physical material values (eps_r, sigma, scattering, xpd)
 * the model predicts for the named scene material.
 */
enum RaycalStatus raycal_model_material(const struct RaycalModel *model,
                                        const char *name,
                                        double *out);

/**
 * Library version as a static string.
 */
const char *raycal_version(void);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* RAYCAL_H */
