#ifndef SDID_H
#define SDID_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum SdidStatus {
  SDID_STATUS_OK = 0,
  SDID_STATUS_NULL_POINTER = 1,
  SDID_STATUS_INVALID_ARGUMENT = 2,
  SDID_STATUS_DIMENSION = 3,
  SDID_STATUS_CONFIG = 4,
  SDID_STATUS_FORMAT = 5,
  SDID_STATUS_IO = 6,
  SDID_STATUS_NUMERICAL = 7,
  SDID_STATUS_PANIC = 8,
} SdidStatus;

/**
 * Opaque model handle.
 */
typedef struct SdidModel SdidModel;

/**
 * Static facts about a loaded model.
 */
typedef struct SdidModelInfo {
  size_t in_channels;
  /**
   * Image height and width must be multiples of this.
   */
  size_t size_multiple;
  size_t style_dim;
  size_t param_count;
} SdidModelInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *sdid_version(void);

/**
 * Message of the last failed call on this thread, or NULL after a success.
 * The pointer stays valid until the next call into the library on this thread.
 */
const char *sdid_last_error(void);

/**
 * Load a checkpoint written by `sdid train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum SdidStatus sdid_model_load(const char *path, struct SdidModel **out);

/**
 * Fresh, untrained desk-preset model initialized from `seed`.
 *
 * # Safety
 * `out` must be a writable pointer.
 */
enum SdidStatus sdid_model_new_desk(uint64_t seed, struct SdidModel **out);

/**
 * Release a handle. NULL is ignored.
 *
 * # Safety
 * `m` must come from this library and not be used afterwards.
 */
void sdid_model_free(struct SdidModel *m);

/**
 * # Safety
 * `m` must be a live handle and `info` writable.
 */
enum SdidStatus sdid_model_info(const struct SdidModel *m, struct SdidModelInfo *info);

/**
 * Denoise with a style drawn from the generator. Equal seeds give equal output.
 *
 * # Safety
 * `input` and `output` must each hold `c*h*w` floats.
 */
enum SdidStatus sdid_denoise(const struct SdidModel *m,
                             const float *input,
                             size_t c,
                             size_t h,
                             size_t w,
                             uint64_t seed,
                             float *output);

/**
 * Style vector of an image; `style_len` must equal the model's style_dim.
 *
 * # Safety
 * `input` must hold `c*h*w` floats and `style` `style_len` floats.
 */
enum SdidStatus sdid_extract_style(const struct SdidModel *m,
                                   const float *input,
                                   size_t c,
                                   size_t h,
                                   size_t w,
                                   float *style,
                                   size_t style_len);

/**
 * Denoise with an explicit style vector.
 *
 * # Safety
 * `input`/`output` must hold `c*h*w` floats, `style` `style_len` floats.
 */
enum SdidStatus sdid_denoise_with_style(const struct SdidModel *m,
                                        const float *input,
                                        size_t c,
                                        size_t h,
                                        size_t w,
                                        const float *style,
                                        size_t style_len,
                                        float *output);

/**
 * `dec(enc(x))`, bypassing style conversion.
 *
 * # Safety
 * `input` and `output` must each hold `c*h*w` floats.
 */
enum SdidStatus sdid_autoencode(const struct SdidModel *m,
                                const float *input,
                                size_t c,
                                size_t h,
                                size_t w,
                                float *output);

/**
 * Seed stored with the model (the run seed for loaded checkpoints).
 *
 * # Safety
 * `m` must be a live handle.
 */
enum SdidStatus sdid_model_seed(const struct SdidModel *m, uint64_t *seed);

/**
 * PSNR in dB between two buffers of `n` values with the given peak.
 *
 * # Safety
 * `a` and `b` must hold `n` floats, `out` must be writable.
 */
enum SdidStatus sdid_psnr(const float *a, const float *b, size_t n, double peak, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SDID_H */
