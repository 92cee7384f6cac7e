#ifndef STLGCP_H
#define STLGCP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum StlgcpStatus {
  STLGCP_STATUS_OK = 0,
  STLGCP_STATUS_NULL_POINTER = 1,
  STLGCP_STATUS_INVALID_ARGUMENT = 2,
  STLGCP_STATUS_IO = 3,
  STLGCP_STATUS_PARSE = 4,
  STLGCP_STATUS_NUMERICAL = 5,
  STLGCP_STATUS_CONFIG = 6,
  STLGCP_STATUS_BUFFER_TOO_SMALL = 7,
  STLGCP_STATUS_PANIC = 8,
} StlgcpStatus;

/**
 * A spatio-temporal point pattern.
 */
typedef struct StlgcpPattern StlgcpPattern;

/**
 * A configured pipeline.
 */
typedef struct StlgcpPipeline StlgcpPipeline;

/**
 * A gridded surface.
 */
typedef struct StlgcpRaster StlgcpRaster;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next call into the library from this thread.
 */
const char *stlgcp_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *stlgcp_version(void);

/**
 * Loads `x,y,t` events inside the polygon of `window_path` (CSV `x,y`).
 *
 * # Safety
 * Paths must be NUL-terminated strings; `out` must be writable.
 */
enum StlgcpStatus stlgcp_pattern_load(const char *pattern_path,
                                      const char *window_path,
                                      struct StlgcpPattern **out);

/**
 * Number of events, or zero for a null handle.
 *
 * # Safety
 * `pattern` must be null or a live handle.
 */
size_t stlgcp_pattern_len(const struct StlgcpPattern *pattern);

/**
 * First and last day of the pattern.
 *
 * # Safety
 * `pattern` must be a live handle; outputs must be writable.
 */
enum StlgcpStatus stlgcp_pattern_days(const struct StlgcpPattern *pattern,
                                      int64_t *first,
                                      int64_t *last);

/**
 * # Safety
 * `pattern` must be null or a handle not yet freed.
 */
void stlgcp_pattern_free(struct StlgcpPattern *pattern);

/**
 * Cluster-based bandwidth of `n` planar points.
 *
 * # Safety
 * `xs` and `ys` must hold `n` values; `out` must be writable.
 */
enum StlgcpStatus stlgcp_select_bandwidth(const double *xs,
                                          const double *ys,
                                          size_t n,
                                          size_t k,
                                          uint64_t seed,
                                          double *out);

/**
 * Quartic kernel intensity of the pattern's locations on an `m x p` grid
 * over the window.
 *
 * # Safety
 * `pattern` must be a live handle; `out` must be writable.
 */
enum StlgcpStatus stlgcp_kernel_intensity(const struct StlgcpPattern *pattern,
                                          size_t m,
                                          size_t p,
                                          double bandwidth,
                                          struct StlgcpRaster **out);

/**
 * Grid shape of a raster.
 *
 * # Safety
 * `raster` must be a live handle; outputs must be writable.
 */
enum StlgcpStatus stlgcp_raster_dims(const struct StlgcpRaster *raster, size_t *m, size_t *p);

/**
 * Copies the cell values in row-major order into `buf` of length `len`
 * (at least `m * p`).
 *
 * # Safety
 * `raster` must be a live handle; `buf` must hold `len` values.
 */
enum StlgcpStatus stlgcp_raster_copy_values(const struct StlgcpRaster *raster,
                                            double *buf,
                                            size_t len);

/**
 * Riemann integral of the raster over its mask.
 *
 * # Safety
 * `raster` must be a live handle; `out` must be writable.
 */
enum StlgcpStatus stlgcp_raster_integral(const struct StlgcpRaster *raster, double *out);

/**
 * # Safety
 * `raster` must be null or a handle not yet freed.
 */
void stlgcp_raster_free(struct StlgcpRaster *raster);

/**
 * Pair correlation `exp(sigma2 exp(-u/phi))`.
 */
double stlgcp_theoretical_pcf(double u, double sigma2, double phi);

/**
 * Weight `exp(-delta/theta)` on the current field after `delta` days.
 */
double stlgcp_forecast_weight(double delta, double theta);

/**
 * One zero-mean Gaussian field with exponential covariance on an `m x p`
 * lattice of spacing `dx`, `dy`, written row-major into `buf`.
 *
 * # Safety
 * `buf` must hold `len >= m * p` values.
 */
enum StlgcpStatus stlgcp_grf_sample(size_t m,
                                    size_t p,
                                    double dx,
                                    double dy,
                                    double sigma2,
                                    double phi,
                                    uint64_t seed,
                                    double *buf,
                                    size_t len);

/**
 * Creates a pipeline from a TOML config file. `resume` non-zero reuses
 * stage outputs whose inputs are unchanged.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string; `out` must be writable.
 */
enum StlgcpStatus stlgcp_pipeline_open(const char *config_path,
                                       int32_t resume,
                                       struct StlgcpPipeline **out);

/**
 * Runs every stage.
 *
 * # Safety
 * `pipeline` must be a live handle.
 */
enum StlgcpStatus stlgcp_pipeline_run(struct StlgcpPipeline *pipeline);

/**
 * Fitted covariance parameters, running the stages up to the fit if needed.
 *
 * # Safety
 * `pipeline` must be a live handle; outputs must be writable.
 */
enum StlgcpStatus stlgcp_pipeline_covariance(struct StlgcpPipeline *pipeline,
                                             double *sigma2,
                                             double *phi,
                                             double *theta);

/**
 * Number of manifest entries written so far.
 *
 * # Safety
 * `pipeline` must be null or a live handle.
 */
size_t stlgcp_pipeline_manifest_len(const struct StlgcpPipeline *pipeline);

/**
 * # Safety
 * `pipeline` must be null or a handle not yet freed.
 */
void stlgcp_pipeline_free(struct StlgcpPipeline *pipeline);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STLGCP_H */
