#ifndef DISQUE_H
#define DISQUE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum DisqueStatus {
  DISQUE_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  DISQUE_STATUS_NULL_ARGUMENT = 1,
  DISQUE_STATUS_CONFIG = 2,
  DISQUE_STATUS_DATA = 3,
  DISQUE_STATUS_NUMERICAL = 4,
  /**
   * The caller's output buffer has the wrong length.
   */
  DISQUE_STATUS_BUFFER_SIZE = 5,
  /**
   * A Rust panic was caught at the boundary.
   */
  DISQUE_STATUS_INTERNAL = 6,
} DisqueStatus;

typedef enum DisqueColorspace {
  DISQUE_COLORSPACE_SRGB = 0,
  DISQUE_COLORSPACE_PQ = 1,
  DISQUE_COLORSPACE_LINEAR = 2,
} DisqueColorspace;

typedef enum DisqueMode {
  DISQUE_MODE_MIXING = 0,
  DISQUE_MODE_REPLACEMENT = 1,
} DisqueMode;

/**
 * Opaque RGB float image, row-major, channels interleaved.
 */
typedef struct DisqueImage DisqueImage;

/**
 * Opaque trained network.
 */
typedef struct DisqueModel DisqueModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *disque_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *disque_version(void);

/**
 * Loads a checkpoint written by `disque train`.
 *
 * # Safety
 * `path` must be a valid nul-terminated string and `out` writable.
 */
enum DisqueStatus disque_model_load(const char *path, struct DisqueModel **out);

/**
 * Builds an untrained toy-sized network from a seed. Meant for smoke tests.
 *
 * # Safety
 * `out` must be writable.
 */
enum DisqueStatus disque_model_new_toy(uint64_t seed, struct DisqueModel **out);

/**
 * # Safety
 * `model` must be null or a handle from this library, not yet freed.
 */
void disque_model_free(struct DisqueModel *model);

/**
 * Length of the full-reference feature vector, or 0 for a null model.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uintptr_t disque_model_feature_len(const struct DisqueModel *model);

/**
 * Copies `height * width * 3` floats into a new image.
 *
 * # Safety
 * `data` must point to that many readable floats and `out` be writable.
 */
enum DisqueStatus disque_image_from_rgb(const float *data,
                                        uintptr_t height,
                                        uintptr_t width,
                                        enum DisqueColorspace colorspace,
                                        struct DisqueImage **out);

/**
 * Decodes a PNG or JPEG file.
 *
 * # Safety
 * `path` must be a valid nul-terminated string and `out` writable.
 */
enum DisqueStatus disque_image_load(const char *path,
                                    enum DisqueColorspace colorspace,
                                    struct DisqueImage **out);

/**
 * # Safety
 * `image` must be null or a handle from this library, not yet freed.
 */
void disque_image_free(struct DisqueImage *image);

/**
 * # Safety
 * `image` must be a live handle; the out pointers must be writable.
 */
enum DisqueStatus disque_image_info(const struct DisqueImage *image,
                                    uintptr_t *height,
                                    uintptr_t *width,
                                    enum DisqueColorspace *colorspace);

/**
 * Copies the pixels into `out`, which must hold exactly `height * width * 3` floats.
 *
 * # Safety
 * `image` must be a live handle and `out` point to `len` writable floats.
 */
enum DisqueStatus disque_image_read(const struct DisqueImage *image, float *out, uintptr_t len);

/**
 * Full-reference feature `|z(ref) − z(dis)|` into `out`, which must hold
 * exactly [`disque_model_feature_len`] floats.
 *
 * # Safety
 * Handles must be live and `out` point to `len` writable floats.
 */
enum DisqueStatus disque_fr_features(const struct DisqueModel *model,
                                     const struct DisqueImage *reference,
                                     const struct DisqueImage *distorted,
                                     float *out,
                                     uintptr_t len);

/**
 * Applies the edit shown by `example_src -> example_tgt` to `input`.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum DisqueStatus disque_egip_apply(const struct DisqueModel *model,
                                    const struct DisqueImage *example_src,
                                    const struct DisqueImage *example_tgt,
                                    const struct DisqueImage *input,
                                    enum DisqueMode mode,
                                    uintptr_t workers,
                                    struct DisqueImage **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DISQUE_H */
