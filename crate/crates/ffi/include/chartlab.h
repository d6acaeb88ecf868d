#ifndef CHARTLAB_H
#define CHARTLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. Values 2 to 4 match the CLI exit codes.
 */
typedef enum ChartlabStatus {
  CHARTLAB_STATUS_OK = 0,
  /**
   * Invalid configuration or arguments.
   */
  CHARTLAB_STATUS_CONFIG = 2,
  /**
   * Bad or inconsistent data, geometry or I/O.
   */
  CHARTLAB_STATUS_DATA = 3,
  /**
   * A numerical routine failed to converge.
   */
  CHARTLAB_STATUS_NUMERICAL = 4,
  /**
   * A required pointer argument was null.
   */
  CHARTLAB_STATUS_NULL_POINTER = 5,
  /**
   * A string argument was not valid UTF-8.
   */
  CHARTLAB_STATUS_INVALID_UTF8 = 6,
  /**
   * The library panicked; the handle arguments should be considered unusable.
   */
  CHARTLAB_STATUS_PANIC = 7,
} ChartlabStatus;

typedef enum ChartlabMode {
  CHARTLAB_MODE_STATIC = 0,
  CHARTLAB_MODE_DYNAMIC = 1,
} ChartlabMode;

/**
 * Fitted chart.
 */
typedef struct ChartlabChart ChartlabChart;

/**
 * Experiment configuration.
 */
typedef struct ChartlabConfig ChartlabConfig;

/**
 * Pairwise dissimilarity matrix.
 */
typedef struct ChartlabDissimilarity ChartlabDissimilarity;

/**
 * Chart quality scores.
 */
typedef struct ChartlabMetrics {
  double continuity;
  double trustworthiness;
  double kruskal_stress;
} ChartlabMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failing call on this thread, or null if none failed.
 * The string stays valid until the next failing call on the same thread.
 */
const char *chartlab_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *chartlab_version(void);

/**
 * Built-in default configuration.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum ChartlabStatus chartlab_config_default(struct ChartlabConfig **out);

/**
 * Parses and validates a TOML configuration.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` as in [`chartlab_config_default`].
 */
enum ChartlabStatus chartlab_config_from_toml(const char *toml, struct ChartlabConfig **out);

/**
 * # Safety
 * `cfg` must be null or a handle from this library that has not been freed.
 */
void chartlab_config_free(struct ChartlabConfig *cfg);

/**
 * # Safety
 * `cfg` must be a live configuration handle.
 */
enum ChartlabStatus chartlab_config_set_seed(struct ChartlabConfig *cfg, uint64_t seed);

/**
 * # Safety
 * `cfg` must be a live configuration handle.
 */
enum ChartlabStatus chartlab_config_set_mode(struct ChartlabConfig *cfg, enum ChartlabMode mode);

/**
 * Sets the number of samples drawn by `chartlab_generate`.
 *
 * # Safety
 * `cfg` must be a live configuration handle.
 */
enum ChartlabStatus chartlab_config_set_samples(struct ChartlabConfig *cfg, size_t samples);

/**
 * Writes the canonical dataset hash (64 hex digits plus NUL) into `buf`.
 *
 * # Safety
 * `cfg` must be a live handle and `buf` must hold at least `len` bytes.
 */
enum ChartlabStatus chartlab_config_dataset_hash(const struct ChartlabConfig *cfg,
                                                 char *buf,
                                                 size_t len);

/**
 * Runs the `generate` stage into `out_dir`.
 *
 * # Safety
 * `cfg` must be a live handle; `out_dir` a NUL-terminated path.
 */
enum ChartlabStatus chartlab_generate(const struct ChartlabConfig *cfg, const char *out_dir);

/**
 * Runs the full static and dynamic sweep into `out_dir`.
 *
 * # Safety
 * As for [`chartlab_generate`].
 */
enum ChartlabStatus chartlab_sweep(const struct ChartlabConfig *cfg, const char *out_dir);

/**
 * Log-Euclidean dissimilarities of `n` Hermitian `n_r × n_r` covariances.
 *
 * `re_im` holds `n · n_r · n_r` complex entries as interleaved (re, im)
 * doubles, each matrix row-major.
 *
 * # Safety
 * `re_im` must point to `2 · n · n_r · n_r` readable doubles; `out` as above.
 */
enum ChartlabStatus chartlab_dissimilarity_from_covariances(size_t n,
                                                            size_t n_r,
                                                            const double *re_im,
                                                            double eig_floor,
                                                            struct ChartlabDissimilarity **out);

/**
 * Builds a dissimilarity handle from a dense row-major `n × n` matrix.
 *
 * # Safety
 * `dense` must point to `n · n` readable doubles; `out` as above.
 */
enum ChartlabStatus chartlab_dissimilarity_from_dense(size_t n,
                                                      const double *dense,
                                                      struct ChartlabDissimilarity **out);

/**
 * Number of samples, or 0 for a null handle.
 *
 * # Safety
 * `d` must be null or a live handle.
 */
size_t chartlab_dissimilarity_len(const struct ChartlabDissimilarity *d);

/**
 * Entry `(i, j)`, written to `value`.
 *
 * # Safety
 * `d` must be a live handle and `value` writable.
 */
enum ChartlabStatus chartlab_dissimilarity_get(const struct ChartlabDissimilarity *d,
                                               size_t i,
                                               size_t j,
                                               double *value);

/**
 * # Safety
 * `d` must be null or a handle from this library that has not been freed.
 */
void chartlab_dissimilarity_free(struct ChartlabDissimilarity *d);

/**
 * Fits a chart with the charting settings of `cfg`.
 *
 * `labeled` lists `n_labeled` sample indices whose true positions are given
 * as interleaved (x, y) pairs in `positions`.
 *
 * # Safety
 * Handles must be live; `labeled` must hold `n_labeled` entries and
 * `positions` `2 · n_labeled` doubles; `out` as above.
 */
enum ChartlabStatus chartlab_chart_fit(const struct ChartlabDissimilarity *d,
                                       const struct ChartlabConfig *cfg,
                                       size_t n_labeled,
                                       const size_t *labeled,
                                       const double *positions,
                                       uint64_t seed,
                                       struct ChartlabChart **out);

/**
 * Number of chart points, or 0 for a null handle.
 *
 * # Safety
 * `chart` must be null or a live handle.
 */
size_t chartlab_chart_len(const struct ChartlabChart *chart);

/**
 * Chart coordinates as interleaved (z_x, z_y) pairs.
 *
 * # Safety
 * `chart` must be live and `xy` must hold `2 · len` writable doubles.
 */
enum ChartlabStatus chartlab_chart_coordinates(const struct ChartlabChart *chart, double *xy);

/**
 * Position estimates in meters as interleaved (x, y) pairs.
 *
 * # Safety
 * As for [`chartlab_chart_coordinates`].
 */
enum ChartlabStatus chartlab_chart_positions(const struct ChartlabChart *chart, double *xy);

/**
 * # Safety
 * `chart` must be null or a handle from this library that has not been freed.
 */
void chartlab_chart_free(struct ChartlabChart *chart);

/**
 * Continuity and trustworthiness at neighborhood size `k`, and Kruskal
 * stress, of `n` chart points against ground truth (both interleaved x, y).
 *
 * # Safety
 * `truth` and `chart` must hold `2 · n` doubles; `out` must be writable.
 */
enum ChartlabStatus chartlab_metrics(size_t n,
                                     const double *truth,
                                     const double *chart,
                                     size_t k,
                                     struct ChartlabMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CHARTLAB_H */
