#include <math.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "polarscan.h"

#define CHECK(expr)                                                              \
  do {                                                                           \
    PsStatus st_ = (expr);                                                       \
    if (st_ != PS_STATUS_OK) {                                                   \
      const char *msg_ = ps_last_error_message();                                \
      fprintf(stderr, "%s:%d: status %d: %s\n", __FILE__, __LINE__, (int)st_,   \
              msg_ ? msg_ : "(none)");                                           \
      return 1;                                                                  \
    }                                                                            \
  } while (0)

int main(void) {
  enum { N = 300 };
  double xyzi[N * 4];
  for (int i = 0; i < N; i++) {
    double a = i * 0.41, r = 3.0 + (i % 17);
    xyzi[4 * i + 0] = r * cos(a);
    xyzi[4 * i + 1] = r * sin(a);
    xyzi[4 * i + 2] = -1.0 + (i % 5) * 0.5;
    xyzi[4 * i + 3] = (i % 10) / 10.0;
  }

  PsPointCloud *cloud = NULL;
  CHECK(ps_cloud_from_points(xyzi, N, 1, &cloud));
  if (ps_cloud_len(cloud) != N) return 2;

  uint32_t channels[] = {PS_CHANNEL_HEIGHT, PS_CHANNEL_RANGE, PS_CHANNEL_INTENSITY};
  PsProjectionParams params = {0};
  params.kind = PS_KIND_POLAR;
  params.height = 16;
  params.width = 64;
  params.max_range = 30.0;
  params.channels = channels;
  params.n_channels = 3;

  PsImage *image = NULL;
  CHECK(ps_project(cloud, NULL, &params, &image));
  size_t h, w, c;
  CHECK(ps_image_shape(image, &h, &w, &c));
  if (h != 16 || w != 64 || c != 3) return 3;

  PsFeatureMap *fm = NULL;
  CHECK(ps_baseline_encode(image, 8, 32, &fm));
  PsDescriptor *desc = NULL;
  CHECK(ps_mean_std_descriptor(fm, true, &desc));
  size_t dim = ps_descriptor_dim(desc);
  if (dim != 64) return 4;
  double *values = malloc(dim * sizeof(double));
  CHECK(ps_descriptor_copy(desc, values, dim));
  double norm = 0.0;
  for (size_t i = 0; i < dim; i++) norm += values[i] * values[i];
  if (fabs(norm - 1.0) > 1e-9) return 5;

  uint64_t frames[2] = {10, 11};
  double times[2] = {0.0, 0.1};
  double positions[6] = {0, 0, 0, 1, 0, 0};
  double *db = malloc(2 * dim * sizeof(double));
  memcpy(db, values, dim * sizeof(double));
  for (size_t i = 0; i < dim; i++) db[dim + i] = -values[i];
  PsIndex *index = NULL;
  CHECK(ps_index_new(db, 2, dim, frames, times, positions, &index));
  size_t rows[2], count = 0;
  double dist[2];
  CHECK(ps_index_search(index, values, dim, 2, rows, dist, &count));
  if (count != 2 || rows[0] != 0 || dist[0] != 0.0 || fabs(dist[1] - 2.0) > 1e-9) return 6;

  PsStatus bad = ps_baseline_encode(image, 0, 32, &fm);
  if (bad == PS_STATUS_OK || ps_last_error_message() == NULL) return 7;

  ps_index_free(index);
  ps_descriptor_free(desc);
  ps_feature_map_free(fm);
  ps_image_free(image);
  ps_cloud_free(cloud);
  free(values);
  free(db);
  printf("ok %s\n", ps_version());
  return 0;
}
