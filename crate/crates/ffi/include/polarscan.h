#ifndef POLARSCAN_H
#define POLARSCAN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

#define PS_KIND_BEV 0

#define PS_KIND_POLAR 1

#define PS_KIND_RANGE 2

#define PS_KIND_FRONT 3

#define PS_CHANNEL_HEIGHT 0

#define PS_CHANNEL_RANGE 1

#define PS_CHANNEL_INTENSITY 2

#define PS_CHANNEL_CURVATURE 3

typedef enum PsStatus {
  PS_STATUS_OK = 0,
  PS_STATUS_NULL_ARGUMENT = 1,
  PS_STATUS_INVALID_ARGUMENT = 2,
  PS_STATUS_FORMAT = 3,
  PS_STATUS_PARSE = 4,
  PS_STATUS_DEGENERATE = 5,
  PS_STATUS_SHAPE = 6,
  PS_STATUS_LOOKUP = 7,
  PS_STATUS_JOIN = 8,
  PS_STATUS_VALIDATION = 9,
  PS_STATUS_CONFIG = 10,
  PS_STATUS_IO = 11,
  PS_STATUS_INTERNAL = 12,
} PsStatus;

typedef struct PsDescriptor PsDescriptor;

typedef struct PsFeatureMap PsFeatureMap;

typedef struct PsImage PsImage;

typedef struct PsIndex PsIndex;

typedef struct PsPointCloud PsPointCloud;

typedef struct PsSensorProfile PsSensorProfile;

/*
 Projection settings. `out_height`/`out_width` of 0 keep the native grid.
 */
typedef struct PsProjectionParams {
  /*
   One of the `PS_KIND_*` constants.
   */
  uint32_t kind;
  uintptr_t height;
  uintptr_t width;
  uintptr_t out_height;
  uintptr_t out_width;
  /*
   Range channel divisor in meters.
   */
  double max_range;
  /*
   Front-view field of view in radians.
   */
  double fov_min;
  double fov_max;
  /*
   `PS_CHANNEL_*` codes in output order.
   */
  const uint32_t *channels;
  uintptr_t n_channels;
} PsProjectionParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *ps_version(void);

/*
 Message of the last failure on this thread, or NULL. Valid until the next
 failing call on the same thread.
 */
const char *ps_last_error_message(void);

/*
 Decodes a KITTI `.bin` blob (little-endian float32 x, y, z, intensity).
 */
enum PsStatus ps_cloud_from_kitti(const uint8_t *data,
                                  uintptr_t len,
                                  uint64_t frame_id,
                                  struct PsPointCloud **out);

/*
 Builds a cloud from `n_points` interleaved `x, y, z, intensity` doubles.
 */
enum PsStatus ps_cloud_from_points(const double *xyzi,
                                   uintptr_t n_points,
                                   uint64_t frame_id,
                                   struct PsPointCloud **out);

uintptr_t ps_cloud_len(const struct PsPointCloud *cloud);

/*
 Replaces every point's curvature with the normalized estimate over `k`
 nearest neighbours.
 */
enum PsStatus ps_cloud_estimate_curvature(struct PsPointCloud *cloud, uintptr_t k);

void ps_cloud_free(struct PsPointCloud *cloud);

/*
 Sensor profile from beam elevations in degrees (ascending).
 */
enum PsStatus ps_profile_new(const double *elevations_deg,
                             uintptr_t n_beams,
                             double max_range,
                             struct PsSensorProfile **out);

/*
 Parses a `key=value` sensor profile (`beams=...`, `max_range=...`).
 */
enum PsStatus ps_profile_parse(const char *text, struct PsSensorProfile **out);

void ps_profile_free(struct PsSensorProfile *profile);

/*
 Projects `cloud` into an image. `profile` may be NULL for BEV and POLAR.
 */
enum PsStatus ps_project(const struct PsPointCloud *cloud,
                         const struct PsSensorProfile *profile,
                         const struct PsProjectionParams *params,
                         struct PsImage **out);

enum PsStatus ps_image_shape(const struct PsImage *image,
                             uintptr_t *height,
                             uintptr_t *width,
                             uintptr_t *channels);

/*
 Copies `height·width·channels` values (row-major, channels interleaved).
 */
enum PsStatus ps_image_copy_data(const struct PsImage *image, float *buffer, uintptr_t len);

/*
 Serializes the image as PPRJ into a buffer released with [`ps_buffer_free`].
 */
enum PsStatus ps_image_to_pprj(const struct PsImage *image, uint8_t **data, uintptr_t *len);

void ps_buffer_free(uint8_t *data, uintptr_t len);

void ps_image_free(struct PsImage *image);

enum PsStatus ps_baseline_encode(const struct PsImage *image,
                                 uintptr_t patch,
                                 uintptr_t c_out,
                                 struct PsFeatureMap **out);

/*
 Decodes a PFEA blob written by an external backbone.
 */
enum PsStatus ps_feature_map_load(const uint8_t *data, uintptr_t len, struct PsFeatureMap **out);

enum PsStatus ps_feature_map_shape(const struct PsFeatureMap *map,
                                   uintptr_t *c,
                                   uintptr_t *h,
                                   uintptr_t *w);

void ps_feature_map_free(struct PsFeatureMap *map);

/*
 Mean and standard deviation pooling, optionally L2-normalized.
 */
enum PsStatus ps_mean_std_descriptor(const struct PsFeatureMap *map,
                                     bool normalize,
                                     struct PsDescriptor **out);

uintptr_t ps_descriptor_dim(const struct PsDescriptor *descriptor);

enum PsStatus ps_descriptor_copy(const struct PsDescriptor *descriptor,
                                 double *buffer,
                                 uintptr_t len);

void ps_descriptor_free(struct PsDescriptor *descriptor);

/*
 Exact L2 index over `n` row-major descriptors of length `dim`, with one
 frame id, timestamp and `x, y, z` position per row.
 */
enum PsStatus ps_index_new(const double *values,
                           uintptr_t n,
                           uintptr_t dim,
                           const uint64_t *frame_ids,
                           const double *timestamps,
                           const double *positions,
                           struct PsIndex **out);

uintptr_t ps_index_len(const struct PsIndex *index);

/*
 Writes up to `k` nearest rows and distances, ascending; `count` receives
 how many were written.
 */
enum PsStatus ps_index_search(const struct PsIndex *index,
                              const double *query,
                              uintptr_t dim,
                              uintptr_t k,
                              uintptr_t *rows,
                              double *distances,
                              uintptr_t *count);

void ps_index_free(struct PsIndex *index);

/*
 max-F1 and PR-AUC of top-1 distances with 0/1 labels.
 */
enum PsStatus ps_pr_summary(const double *distances,
                            const uint8_t *labels,
                            uintptr_t n,
                            double *max_f1_out,
                            double *auc_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POLARSCAN_H */
