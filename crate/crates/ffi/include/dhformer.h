#ifndef DHFORMER_H
#define DHFORMER_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes.
 */
typedef enum DhfStatus {
  DHF_STATUS_OK = 0,
  DHF_STATUS_NULL_ARGUMENT = 1,
  /*
   Bad sizes, shapes or values.
   */
  DHF_STATUS_INVALID_ARGUMENT = 2,
  DHF_STATUS_CONFIG = 3,
  DHF_STATUS_IO = 4,
  DHF_STATUS_IMAGE = 5,
  /*
   Malformed checkpoint file.
   */
  DHF_STATUS_FORMAT = 6,
  DHF_STATUS_CHECKPOINT_MISMATCH = 7,
  DHF_STATUS_DIVERGED = 8,
  /*
   A Rust panic was caught at the boundary.
   */
  DHF_STATUS_INTERNAL = 9,
} DhfStatus;

/*
 A loaded checkpoint. Create with [`dhf_model_load`], release with
 [`dhf_model_free`].
 */
typedef struct DhfModel DhfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version, e.g. `"0.1.0"`. The string is static.
 */
const char *dhf_version(void);

/*
 Message of the last failed call on this thread (empty after a success).
 Valid until the next call on the same thread.
 */
const char *dhf_last_error_message(void);

/*
 Loads a checkpoint file.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable. On
 success `*out` owns a model to be passed to [`dhf_model_free`].
 */
enum DhfStatus dhf_model_load(const char *path, struct DhfModel **out);

/*
 Releases a model; null is ignored.

 # Safety
 `model` must come from [`dhf_model_load`] and not be used afterwards.
 */
void dhf_model_free(struct DhfModel *model);

/*
 Tile edge length the model was trained at (the minimum image size).

 # Safety
 `model` must be a live handle or null (returns 0).
 */
size_t dhf_model_tile_size(const struct DhfModel *model);

/*
 Number of trainable scalars in the model.

 # Safety
 `model` must be a live handle or null (returns 0).
 */
size_t dhf_model_param_count(const struct DhfModel *model);

/*
 Dehazes one image with overlapping tiles. `hazy` and `out` hold
 `3·height·width` values; both sides must be at least the tile size.

 # Safety
 Buffers must be valid for the stated sizes and must not overlap.
 */
enum DhfStatus dhf_dehaze(const struct DhfModel *model,
                          const double *hazy,
                          size_t height,
                          size_t width,
                          double *out);

/*
 PSNR in dB with peak 1; `+inf` for identical images.

 # Safety
 See [`dhf_ssim`].
 */
enum DhfStatus dhf_psnr(const double *x, const double *y, size_t height, size_t width, double *out);

/*
 Luma SSIM with an 11×11 Gaussian window; images need at least 11 pixels per side.

 # Safety
 `x` and `y` must hold `3·height·width` values; `out` must be writable.
 */
enum DhfStatus dhf_ssim(const double *x, const double *y, size_t height, size_t width, double *out);

/*
 FSIM; images need at least 32 pixels per side.

 # Safety
 See [`dhf_ssim`].
 */
enum DhfStatus dhf_fsim(const double *x, const double *y, size_t height, size_t width, double *out);

/*
 `I = J·t + A(1 − t)` with `t = max(exp(−β·d), 0.05)`. `depth` holds
 `height·width` non-negative values; `out_hazy` receives `3·height·width`.

 # Safety
 Buffers must be valid for the stated sizes.
 */
enum DhfStatus dhf_synthesize_haze(const double *clear,
                                   const double *depth,
                                   size_t height,
                                   size_t width,
                                   double airlight,
                                   double beta,
                                   double *out_hazy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DHFORMER_H */
