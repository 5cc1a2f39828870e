#ifndef GSFORGE_H
#define GSFORGE_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GsfStatus {
  GSF_STATUS_OK = 0,
  GSF_STATUS_NULL_POINTER = 1,
  GSF_STATUS_INVALID_ARGUMENT = 2,
  GSF_STATUS_PARSE = 3,
  GSF_STATUS_IO = 4,
  GSF_STATUS_TRANSFORM = 5,
  GSF_STATUS_BUFFER_TOO_SMALL = 6,
  GSF_STATUS_PANIC = 7,
} GsfStatus;

typedef struct GsfImage GsfImage;

typedef struct GsfScene GsfScene;

/**
 * `x -> scale * R x + t`, `rotation` row-major.
 */
typedef struct GsfSimilarity {
  double rotation[9];
  double translation[3];
  double scale;
} GsfSimilarity;

/**
 * Pinhole camera with a world-to-camera pose `x_cam = R x_world + t`.
 * `rotation` is row-major.
 */
typedef struct GsfCamera {
  double fx;
  double fy;
  double cx;
  double cy;
  uint32_t width;
  uint32_t height;
  double rotation[9];
  double translation[3];
} GsfCamera;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *gsf_version(void);

/**
 * Bytes in the calling thread's last error message, excluding the NUL.
 */
size_t gsf_last_error_length(void);

/**
 * Copies the last error message into `buf` as a NUL-terminated string,
 * truncating to `capacity - 1` bytes. Returns the full message length.
 *
 * # Safety
 * `buf` must be null or valid for `capacity` bytes.
 */
size_t gsf_last_error_message(char *buf, size_t capacity);

/**
 * Parses a binary PLY held in memory.
 *
 * # Safety
 * `bytes` must be valid for `len` bytes; `out` must be a valid pointer.
 */
enum GsfStatus gsf_scene_from_ply(const uint8_t *bytes, size_t len, struct GsfScene **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum GsfStatus gsf_scene_load(const char *path, struct GsfScene **out);

/**
 * # Safety
 * `scene` must be a live handle; `path` a NUL-terminated string.
 */
enum GsfStatus gsf_scene_save(const struct GsfScene *scene, const char *path);

/**
 * Number of splats, 0 for a null handle.
 *
 * # Safety
 * `scene` must be null or a live handle.
 */
size_t gsf_scene_len(const struct GsfScene *scene);

/**
 * # Safety
 * `scene` must be null or a handle not yet freed.
 */
void gsf_scene_free(struct GsfScene *scene);

/**
 * New scene with `transform` applied to every splat.
 *
 * # Safety
 * Pointers must be valid; `scene` a live handle.
 */
enum GsfStatus gsf_scene_transform(const struct GsfScene *scene,
                                   const struct GsfSimilarity *transform,
                                   struct GsfScene **out);

/**
 * Renders with default options.
 *
 * # Safety
 * Pointers must be valid; `scene` a live handle.
 */
enum GsfStatus gsf_render(const struct GsfScene *scene,
                          const struct GsfCamera *cam,
                          struct GsfImage **out);

/**
 * # Safety
 * `image` must be null or a live handle.
 */
uint32_t gsf_image_width(const struct GsfImage *image);

/**
 * # Safety
 * `image` must be null or a live handle.
 */
uint32_t gsf_image_height(const struct GsfImage *image);

/**
 * Copies RGB8 row-major pixels; `capacity` must be at least `3 * w * h`.
 *
 * # Safety
 * `image` must be a live handle and `buf` valid for `capacity` bytes.
 */
enum GsfStatus gsf_image_rgb8(const struct GsfImage *image, uint8_t *buf, size_t capacity);

/**
 * Copies ray-plane depth, 0 where undefined; `capacity` in floats.
 *
 * # Safety
 * `image` must be a live handle and `buf` valid for `capacity` floats.
 */
enum GsfStatus gsf_image_depth(const struct GsfImage *image, float *buf, size_t capacity);

/**
 * # Safety
 * `image` must be null or a handle not yet freed.
 */
void gsf_image_free(struct GsfImage *image);

/**
 * Rotates spherical-harmonic coefficients of one splat. `coeffs` and `out`
 * hold `count` RGB triples (`3 * count` doubles) with `count` a square
 * `(degree + 1)^2` up to degree 3. `rotation` is nine doubles, row-major.
 * `out` may alias `coeffs`.
 *
 * # Safety
 * `coeffs` and `out` must be valid for `3 * count` doubles, `rotation` for 9.
 */
enum GsfStatus gsf_rotate_sh(const double *coeffs,
                             size_t count,
                             const double *rotation,
                             double *out);

/**
 * Least-squares similarity taking `src` onto `dst`, both `n` points of
 * three doubles. `rms` may be null.
 *
 * # Safety
 * `src` and `dst` must be valid for `3 * n` doubles, `out` for one struct.
 */
enum GsfStatus gsf_fit_similarity(const double *src,
                                  const double *dst,
                                  size_t n,
                                  struct GsfSimilarity *out,
                                  double *rms);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GSFORGE_H */
