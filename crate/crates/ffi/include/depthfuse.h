#ifndef DEPTHFUSE_H
#define DEPTHFUSE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DfStatus {
  DF_STATUS_OK = 0,
  DF_STATUS_NULL_POINTER = 1,
  DF_STATUS_INVALID_ARGUMENT = 2,
  DF_STATUS_IO = 3,
  DF_STATUS_FORMAT = 4,
  DF_STATUS_DEGENERATE = 5,
  DF_STATUS_CANNOT_TRAIN = 6,
  DF_STATUS_EMPTY = 7,
  DF_STATUS_WRONG_VOLUME_KIND = 8,
  DF_STATUS_PANIC = 99,
} DfStatus;

typedef enum DfVolumeKind {
  DF_VOLUME_KIND_PSDF = 0,
  DF_VOLUME_KIND_TSDF = 1,
} DfVolumeKind;

typedef struct DfMapping DfMapping;

typedef struct DfMesh DfMesh;

typedef struct DfVolume DfVolume;

typedef struct DfVolumeConfig {
  double origin[3];
  double voxel_size;
  uint32_t dims[3];
  double truncation;
  double f_min;
  double f_max;
  double sigma_thr;
  double pi_thr;
  uint32_t w_thr;
} DfVolumeConfig;

typedef struct DfPhotometricConfig {
  uint32_t window_radius;
  double sigma_mlm;
  int32_t min_disparity;
  int32_t max_disparity;
} DfPhotometricConfig;

typedef struct DfIntrinsics {
  double fx;
  double fy;
  double cx;
  double cy;
  double baseline;
  uint32_t width;
  uint32_t height;
} DfIntrinsics;

typedef struct DfMetricReport {
  /**
   * NaN when no reconstructed vertex is an inlier.
   */
  double mean_p2p;
  double outlier_pct;
  double completeness_pct;
  uint64_t n_inliers;
  uint64_t n_outliers;
} DfMetricReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *df_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *df_version(void);

enum DfStatus df_volume_config_default(struct DfVolumeConfig *out);

enum DfStatus df_photometric_config_default(struct DfPhotometricConfig *out);

/**
 * Combined photometric confidence for every pixel with a finite disparity.
 * `left`, `right`, `disparity` and `out` hold `width * height` values.
 */
enum DfStatus df_confidence_map(const double *left,
                                const double *right,
                                const double *disparity,
                                uint32_t width,
                                uint32_t height,
                                const struct DfPhotometricConfig *config,
                                double *out);

/**
 * Geometric standard deviation for every pixel with a finite depth, using
 * `neighbors` points per local fit.
 */
enum DfStatus df_sigma_map(const double *depth,
                           const struct DfIntrinsics *k,
                           uint32_t neighbors,
                           double sigma_floor,
                           double *out);

/**
 * Trains a mapping from `n` confidences with 0/1 inlier labels.
 */
enum DfStatus df_mapping_train(const double *confidence,
                               const uint8_t *inlier,
                               size_t n,
                               uint32_t bins,
                               struct DfMapping **mapping);

enum DfStatus df_mapping_load(const char *path_, struct DfMapping **mapping);

enum DfStatus df_mapping_save(const struct DfMapping *mapping, const char *path_);

enum DfStatus df_mapping_inlier_probability(const struct DfMapping *mapping,
                                            double confidence,
                                            double *out);

void df_mapping_free(struct DfMapping *mapping);

enum DfStatus df_volume_new(enum DfVolumeKind kind,
                            const struct DfVolumeConfig *config,
                            struct DfVolume **volume);

enum DfStatus df_volume_load(const char *path_, struct DfVolume **volume);

enum DfStatus df_volume_save(const struct DfVolume *volume, const char *path_);

void df_volume_free(struct DfVolume *volume);

enum DfStatus df_volume_kind(const struct DfVolume *volume, enum DfVolumeKind *kind);

enum DfStatus df_volume_config(const struct DfVolume *volume, struct DfVolumeConfig *config);

/**
 * Number of voxels with at least one observation.
 */
enum DfStatus df_volume_observed_count(const struct DfVolume *volume, uint64_t *count);

/**
 * Copies the fused signed distance of every voxel into `out` (x fastest,
 * then y, then z); NaN for unobserved voxels.
 */
enum DfStatus df_volume_sdf(const struct DfVolume *volume, double *out, size_t len);

/**
 * Fuses one depth map into a TSDF volume.
 */
enum DfStatus df_volume_integrate_tsdf(struct DfVolume *volume,
                                       const struct DfIntrinsics *k,
                                       const double (*pose_)[16],
                                       const double *depth);

/**
 * Fuses one depth map into a PSDF volume with per-pixel inlier standard
 * deviation `tau` (mm) and inlier probability `inlier_prob`.
 */
enum DfStatus df_volume_integrate_psdf(struct DfVolume *volume,
                                       const struct DfIntrinsics *k,
                                       const double (*pose_)[16],
                                       const double *depth,
                                       const double *tau,
                                       const double *inlier_prob);

/**
 * Resets TSDF voxels seen fewer than `w_thr` times.
 */
enum DfStatus df_volume_prune(struct DfVolume *volume, uint32_t w_thr, uint64_t *removed);

/**
 * Zero-level mesh. PSDF volumes use the σ and π gates of their
 * configuration; TSDF volumes need `min_weight` observations at both ends
 * of a crossing edge.
 */
enum DfStatus df_volume_extract(const struct DfVolume *volume,
                                uint32_t min_weight,
                                struct DfMesh **mesh);

enum DfStatus df_mesh_load_ply(const char *path_, struct DfMesh **mesh);

/**
 * Writes binary little-endian PLY, or ASCII when `ascii` is non-zero.
 */
enum DfStatus df_mesh_save_ply(const struct DfMesh *mesh, const char *path_, uint8_t ascii);

void df_mesh_free(struct DfMesh *mesh);

enum DfStatus df_mesh_counts(const struct DfMesh *mesh, uint64_t *vertices, uint64_t *triangles);

/**
 * Copies vertex positions as `x, y, z` triples; `len` is the number of
 * doubles and must be three times the vertex count.
 */
enum DfStatus df_mesh_vertices(const struct DfMesh *mesh, double *out, size_t len);

/**
 * Copies triangle vertex indices; `len` must be three times the triangle
 * count.
 */
enum DfStatus df_mesh_triangles(const struct DfMesh *mesh, uint32_t *out, size_t len);

/**
 * Compares a reconstruction with ground truth. `gt_labels` is either null
 * or one 0/1 byte per ground-truth vertex (1 = counts toward the metrics).
 */
enum DfStatus df_evaluate(const struct DfMesh *reconstruction,
                          const struct DfMesh *ground_truth,
                          double inlier_threshold,
                          const uint8_t *gt_labels,
                          struct DfMetricReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEPTHFUSE_H */
