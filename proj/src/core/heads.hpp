#pragma once

#include <cstdint>
#include <vector>

#include "core/tensor.hpp"

namespace posecert {

// h = horizontal (columns), v = vertical (rows). Padding is applied on the left/top only.
struct PoolingParams {
  int s_h = 1, s_v = 1;
  int k_h = 1, k_v = 1;
  int p_h = 0, p_v = 0;
  // Keep a trailing partial patch (zero filled) instead of dropping it.
  bool ceil_mode = false;

  // Proxy pooling additionally requires odd strides.
  void validate(bool require_odd_stride = false) const;
  bool operator==(const PoolingParams&) const = default;
};

int pooled_extent(int n, int k, int s, int p, bool ceil_mode = false);

// Single 2D plane (rows x cols), values held in double for decoding.
struct Heatmap {
  int rows = 0, cols = 0;
  std::vector<double> v;
  bool normalized = false;

  Heatmap() = default;
  Heatmap(int r, int c, double fill = 0.0) : rows(r), cols(c), v(static_cast<size_t>(r) * c, fill) {}

  double& operator()(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }

  static Heatmap from_channel(const Tensor& t, int64_t channel);
  bool is_normalized(double tol = 1e-5) const;
};

struct DsntResult {
  double row_norm = 0, col_norm = 0;  // in (-1, 1)
  double row_px = 0, col_px = 0;      // 1-based continuous pixel coordinate
};

struct ArgmaxResult {
  int row = 0, col = 0;  // 0-based
  int64_t flat = 0;
};

DsntResult dsnt_decode(const Heatmap& h);
ArgmaxResult argmax_decode(const Heatmap& h);
Heatmap avg_pool(const Heatmap& h, const PoolingParams& p);
Heatmap softmax(const Heatmap& h);

// Plane kernel shared with graph inference: sums in double, writes float.
void avg_pool_plane(const float* in, int rows, int cols, const PoolingParams& p, float* out);

}  // namespace posecert
