#ifndef HDTR_H
#define HDTR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Values are stable.
 */
typedef enum HdtrStatus {
  HDTR_STATUS_OK = 0,
  HDTR_STATUS_NULL_ARGUMENT = 1,
  HDTR_STATUS_INVALID_ARGUMENT = 2,
  HDTR_STATUS_GEOMETRY = 3,
  HDTR_STATUS_CONFIG = 4,
  HDTR_STATUS_SHAPE = 5,
  HDTR_STATUS_LANDMARKS = 6,
  HDTR_STATUS_DATA = 7,
  HDTR_STATUS_CHECKPOINT = 8,
  HDTR_STATUS_IO = 9,
  HDTR_STATUS_INTERNAL = 10,
  HDTR_STATUS_PANIC = 11,
} HdtrStatus;

typedef enum HdtrReferencePolicy {
  HDTR_REFERENCE_POLICY_PREVIOUS_OUTPUT = 0,
  HDTR_REFERENCE_POLICY_SELF_FRAME = 1,
  HDTR_REFERENCE_POLICY_FIXED_FRAME = 2,
} HdtrReferencePolicy;

/**
 * Opaque restoration session.
 */
typedef struct HdtrSession HdtrSession;

/**
 * Half-open mouth box in source pixels.
 */
typedef struct HdtrCropBox {
  uint32_t left;
  uint32_t top;
  uint32_t right;
  uint32_t bottom;
} HdtrCropBox;

/**
 * The eight sharpness scores of one image.
 */
typedef struct HdtrSharpness {
  double brenner;
  double laplacian;
  double smd;
  double smd2;
  double variance;
  double energy;
  double vollath;
  double entropy;
} HdtrSharpness;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *hdtr_version(void);

/**
 * Message for the last failed call on this thread; empty after a success. The pointer
 * stays valid until the next call into this library from the same thread.
 */
const char *hdtr_last_error_message(void);

/**
 * Opens a session from a checkpoint file.
 *
 * # Safety
 * `checkpoint_path` must be a NUL-terminated string; `out` must be a writable pointer.
 */
enum HdtrStatus hdtr_session_open(const char *checkpoint_path,
                                  enum HdtrReferencePolicy policy,
                                  struct HdtrSession **out);

/**
 * Opens a session around a freshly initialized generator. Intended for tests and
 * latency measurements.
 *
 * # Safety
 * `out` must be a writable pointer.
 */
enum HdtrStatus hdtr_session_open_untrained(uint32_t base_channels,
                                            uint64_t seed,
                                            enum HdtrReferencePolicy policy,
                                            struct HdtrSession **out);

/**
 * Releases a session. Null is ignored.
 *
 * # Safety
 * `session` must be null or a pointer returned by an open function, not yet freed.
 */
void hdtr_session_free(struct HdtrSession *session);

/**
 * Forgets the previous output, as at the start of a new video.
 *
 * # Safety
 * `session` must be a live session pointer.
 */
enum HdtrStatus hdtr_session_reset(struct HdtrSession *session);

/**
 * Sets the reference still for the fixed-frame policy: a 96×96 crop, or a full frame
 * with its landmarks.
 *
 * # Safety
 * `session` must be a live session pointer; `rgb` must hold `width * height * 3` bytes;
 * `landmarks` must be null or hold 136 doubles.
 */
enum HdtrStatus hdtr_session_set_fixed_reference(struct HdtrSession *session,
                                                 const uint8_t *rgb,
                                                 uint32_t width,
                                                 uint32_t height,
                                                 const double *landmarks);

/**
 * Restores one frame into `out_rgb` (same size as the input). With `landmarks` null the
 * frame is copied through unchanged. `out_latency_s`, when not null, receives the
 * generator forward time (0 for pass-through frames).
 *
 * # Safety
 * `session` must be a live session pointer; `rgb` and `out_rgb` must each hold
 * `width * height * 3` bytes; `landmarks` must be null or hold 136 doubles;
 * `out_latency_s` must be null or writable.
 */
enum HdtrStatus hdtr_session_restore_frame(struct HdtrSession *session,
                                           const uint8_t *rgb,
                                           uint32_t width,
                                           uint32_t height,
                                           const double *landmarks,
                                           uint8_t *out_rgb,
                                           double *out_latency_s);

/**
 * Mouth crop box for a frame of the given size, with the default margin.
 *
 * # Safety
 * `landmarks` must hold 136 doubles; `out` must be writable.
 */
enum HdtrStatus hdtr_crop_box(const double *landmarks,
                              uint32_t width,
                              uint32_t height,
                              struct HdtrCropBox *out);

/**
 * Scores an RGB image with the eight sharpness metrics (luminance on a 0–255 scale).
 *
 * # Safety
 * `rgb` must hold `width * height * 3` bytes; `out` must be writable.
 */
enum HdtrStatus hdtr_sharpness(const uint8_t *rgb,
                               uint32_t width,
                               uint32_t height,
                               struct HdtrSharpness *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HDTR_H */
