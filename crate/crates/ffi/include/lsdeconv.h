#ifndef LSDECONV_H
#define LSDECONV_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum LsdStatus {
  LSD_STATUS_OK = 0,
  LSD_STATUS_NULL_POINTER = 1,
  LSD_STATUS_INVALID_ARGUMENT = 2,
  LSD_STATUS_DIMENSION_MISMATCH = 3,
  LSD_STATUS_NON_FINITE = 4,
  LSD_STATUS_IO = 5,
  LSD_STATUS_FORMAT = 6,
  LSD_STATUS_SOLVER = 7,
  LSD_STATUS_CONFIG = 8,
  LSD_STATUS_PANIC = 9,
} LsdStatus;

typedef enum LsdBoundary {
  LSD_BOUNDARY_ZERO_PAD = 0,
  LSD_BOUNDARY_CIRCULAR = 1,
} LsdBoundary;

/**
 * Selects the forward model and data term.
 */
typedef enum LsdVariant {
  LSD_VARIANT_LS_IC = 0,
  LSD_VARIANT_LS_L2 = 1,
  LSD_VARIANT_PSF_IC = 2,
  LSD_VARIANT_PSF_L2 = 3,
} LsdVariant;

/**
 * Both forward models built from one illumination profile and PSF.
 */
typedef struct LsdOperators LsdOperators;

/**
 * Output of one reconstruction.
 */
typedef struct LsdResult LsdResult;

/**
 * A dense 3D field, x fastest.
 */
typedef struct LsdVolume LsdVolume;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error of this thread into `buf`, NUL-terminated and
 * truncated to `len` bytes. Returns the full message length without the
 * terminator, or 0 when there is no error.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t lsd_last_error(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lsd_version(void);

/**
 * Creates a volume by copying `nx·ny·nz` values from `data`.
 *
 * # Safety
 * `data` must be valid for `nx·ny·nz` reads; `out` must be writable.
 */
enum LsdStatus lsd_volume_new(size_t nx,
                              size_t ny,
                              size_t nz,
                              const double *data,
                              struct LsdVolume **out);

/**
 * Reads a volume file (raw payload with JSON sidecar).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum LsdStatus lsd_volume_load(const char *path, struct LsdVolume **out);

/**
 * # Safety
 * `vol` must be a live handle; `path` a NUL-terminated string.
 */
enum LsdStatus lsd_volume_save(const struct LsdVolume *vol, const char *path);

/**
 * Writes the three extents into `dims`.
 *
 * # Safety
 * `vol` must be a live handle; `dims` valid for three writes.
 */
enum LsdStatus lsd_volume_dims(const struct LsdVolume *vol, size_t *dims);

/**
 * Copies the values into `buf`, which must hold exactly `len` elements.
 *
 * # Safety
 * `vol` must be a live handle; `buf` valid for `len` writes.
 */
enum LsdStatus lsd_volume_copy_data(const struct LsdVolume *vol, double *buf, size_t len);

/**
 * # Safety
 * `vol` must be null or a handle not yet freed.
 */
void lsd_volume_free(struct LsdVolume *vol);

/**
 * Synthesises the detection PSF and the illumination profile from a JSON
 * optics model (the `model` section of a run configuration). Either output
 * may be null to skip it.
 *
 * # Safety
 * `model_json` must be a NUL-terminated string; non-null outputs writable.
 */
enum LsdStatus lsd_psf_from_json(const char *model_json,
                                 struct LsdVolume **out_kernel,
                                 struct LsdVolume **out_illumination);

/**
 * Builds the light-sheet and plain-convolution models. Inputs are copied.
 *
 * # Safety
 * `illumination` and `kernel` must be live handles; `out` writable.
 */
enum LsdStatus lsd_operators_new(const struct LsdVolume *illumination,
                                 const struct LsdVolume *kernel,
                                 enum LsdBoundary boundary,
                                 struct LsdOperators **out);

/**
 * Applies the forward model of `variant` to `u`.
 *
 * # Safety
 * `ops` and `u` must be live handles; `out` writable.
 */
enum LsdStatus lsd_forward(const struct LsdOperators *ops,
                           enum LsdVariant variant,
                           const struct LsdVolume *u,
                           struct LsdVolume **out);

/**
 * # Safety
 * `ops` must be null or a handle not yet freed.
 */
void lsd_operators_free(struct LsdOperators *ops);

/**
 * Reconstructs from `data`. `params_json` holds solver parameters as a JSON
 * object; missing fields take their defaults and null means all defaults.
 * The intensity box is `[0, box_factor·max data]`.
 *
 * # Safety
 * Handles must be live; `params_json` null or NUL-terminated; `out` writable.
 */
enum LsdStatus lsd_deconvolve(const struct LsdOperators *ops,
                              const struct LsdVolume *data,
                              enum LsdVariant variant,
                              double sigma_g,
                              double box_factor,
                              const char *params_json,
                              struct LsdResult **out);

/**
 * Copies the reconstructed volume into a new handle.
 *
 * # Safety
 * `res` must be a live handle; `out` writable.
 */
enum LsdStatus lsd_result_volume(const struct LsdResult *res, struct LsdVolume **out);

/**
 * Iterations run, final normalised gap and convergence flag. Any output
 * pointer may be null.
 *
 * # Safety
 * `res` must be a live handle; non-null outputs writable.
 */
enum LsdStatus lsd_result_summary(const struct LsdResult *res,
                                  size_t *iterations,
                                  double *gap,
                                  bool *converged);

/**
 * Gap history as a newly allocated JSON string; release it with
 * [`lsd_string_free`].
 *
 * # Safety
 * `res` must be a live handle; `out` writable.
 */
enum LsdStatus lsd_result_log_json(const struct LsdResult *res, char **out);

/**
 * # Safety
 * `res` must be null or a handle not yet freed.
 */
void lsd_result_free(struct LsdResult *res);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed once.
 */
void lsd_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LSDECONV_H */
