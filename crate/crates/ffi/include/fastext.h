#ifndef FASTEXT_H
#define FASTEXT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FstxStatus {
  FSTX_STATUS_OK = 0,
  FSTX_STATUS_NULL_POINTER = 1,
  FSTX_STATUS_INVALID_ARGUMENT = 2,
  FSTX_STATUS_IO = 3,
  FSTX_STATUS_FORMAT = 4,
  FSTX_STATUS_SHAPE = 5,
  FSTX_STATUS_OUT_OF_RANGE = 6,
  FSTX_STATUS_PANIC = 7,
} FstxStatus;

/**
 * Words found by one detection call.
 */
typedef struct FstxDetections FstxDetections;

/**
 * A loaded network with its weights.
 */
typedef struct FstxNetwork FstxNetwork;

typedef struct FstxRunConfig {
  double seg_threshold;
  double link_threshold;
  size_t min_side;
  size_t pad_to;
} FstxRunConfig;

/**
 * One word: corners `x1,y1,...,x4,y4` in original image pixels.
 */
typedef struct FstxBox {
  double corners[8];
  double score;
} FstxBox;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *fstx_last_error_message(void);

/**
 * Default detection settings.
 */
struct FstxRunConfig fstx_run_config_default(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FstxStatus fstx_network_load(const char *path, struct FstxNetwork **out);

/**
 * Builds a network with deterministic pseudo-random weights.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum FstxStatus fstx_network_generate(float alpha, uint64_t seed, struct FstxNetwork **out);

/**
 * # Safety
 * `network` must be a valid handle and `path` a NUL-terminated string.
 */
enum FstxStatus fstx_network_save(const struct FstxNetwork *network, const char *path);

/**
 * # Safety
 * `network` must be null or a handle from this library not yet freed.
 */
void fstx_network_free(struct FstxNetwork *network);

/**
 * # Safety
 * `network` and `out` must be valid pointers.
 */
enum FstxStatus fstx_network_param_count(const struct FstxNetwork *network, size_t *out);

/**
 * Parameter count for a width multiplier, without building weights.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum FstxStatus fstx_count_parameters(float alpha, size_t *out);

/**
 * Detects words in an interleaved 8-bit RGB image of `width * height * 3` bytes.
 *
 * # Safety
 * `network`, `config` and `out` must be valid pointers and `rgb` must point
 * to at least `width * height * 3` readable bytes.
 */
enum FstxStatus fstx_detect_rgb(const struct FstxNetwork *network,
                                const uint8_t *rgb,
                                size_t width,
                                size_t height,
                                const struct FstxRunConfig *config,
                                struct FstxDetections **out);

/**
 * Number of words; 0 for a null handle.
 *
 * # Safety
 * `detections` must be null or a valid handle.
 */
size_t fstx_detections_len(const struct FstxDetections *detections);

/**
 * # Safety
 * `detections` and `out` must be valid pointers.
 */
enum FstxStatus fstx_detections_get(const struct FstxDetections *detections,
                                    size_t index,
                                    struct FstxBox *out);

/**
 * # Safety
 * `detections` must be null or a handle from this library not yet freed.
 */
void fstx_detections_free(struct FstxDetections *detections);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FASTEXT_H */
