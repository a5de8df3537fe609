#include "core/heads.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "core/error.hpp"

namespace posecert {

void PoolingParams::validate(bool require_odd_stride) const {
  for (int v : {s_h, s_v, k_h, k_v})
    require(v >= 1, ErrorCode::InvalidArgument, "pooling stride/kernel must be >= 1");
  require(p_h >= 0 && p_v >= 0, ErrorCode::InvalidArgument, "pooling padding must be non-negative");
  require(k_h == s_h && k_v == s_v, ErrorCode::InvalidArgument, "pooling kernel must equal stride");
  require(p_h < k_h && p_v < k_v, ErrorCode::InvalidArgument, "pooling padding must be smaller than the kernel");
  if (require_odd_stride)
    require(s_h % 2 == 1 && s_v % 2 == 1, ErrorCode::InvalidArgument, "pooling stride must be odd");
}

int pooled_extent(int n, int k, int s, int p, bool ceil_mode) {
  require(n + p >= k || (ceil_mode && n >= 1), ErrorCode::Shape,
          "pooling kernel " + std::to_string(k) + " larger than padded input " + std::to_string(n + p));
  if (ceil_mode) return (std::max(n + p - k, 0) + s - 1) / s + 1;
  return (n + p - k) / s + 1;
}

Heatmap Heatmap::from_channel(const Tensor& t, int64_t channel) {
  require(t.rank() == 3, ErrorCode::Shape, "heatmap channel requires a (C,H,W) tensor");
  require(channel >= 0 && channel < t.dim(0), ErrorCode::Shape, "heatmap channel out of range");
  Heatmap h(static_cast<int>(t.dim(1)), static_cast<int>(t.dim(2)));
  for (int r = 0; r < h.rows; ++r)
    for (int c = 0; c < h.cols; ++c) h(r, c) = t.at(channel, r, c);
  h.normalized = h.is_normalized();
  return h;
}

bool Heatmap::is_normalized(double tol) const {
  if (v.empty()) return false;
  double s = 0;
  for (double x : v) {
    if (!(x >= 0.0)) return false;
    s += x;
  }
  return std::abs(s - 1.0) <= tol;
}

DsntResult dsnt_decode(const Heatmap& h) {
  require(h.is_normalized(), ErrorCode::InvalidArgument, "dsnt_decode needs a normalized heatmap");
  const double m = h.rows, n = h.cols;
  double x = 0, y = 0;
  for (int i = 0; i < h.rows; ++i) {
    const double ci = (2.0 * (i + 1) - (m + 1)) / m;
    for (int j = 0; j < h.cols; ++j) {
      const double cj = (2.0 * (j + 1) - (n + 1)) / n;
      x += h(i, j) * cj;
      y += h(i, j) * ci;
    }
  }
  DsntResult r;
  r.row_norm = y;
  r.col_norm = x;
  r.row_px = (m + 1) / 2 + y * m / 2;
  r.col_px = (n + 1) / 2 + x * n / 2;
  return r;
}

ArgmaxResult argmax_decode(const Heatmap& h) {
  require(!h.v.empty(), ErrorCode::InvalidArgument, "argmax_decode on empty heatmap");
  size_t best = 0;
  for (size_t i = 1; i < h.v.size(); ++i)
    if (h.v[i] > h.v[best]) best = i;
  ArgmaxResult r;
  r.flat = static_cast<int64_t>(best);
  r.row = static_cast<int>(best / static_cast<size_t>(h.cols));
  r.col = static_cast<int>(best % static_cast<size_t>(h.cols));
  return r;
}

namespace {

template <class In, class Out>
void pool_plane(const In* in, int rows, int cols, const PoolingParams& p, Out* out) {
  p.validate();
  const int orows = pooled_extent(rows, p.k_v, p.s_v, p.p_v, p.ceil_mode);
  const int ocols = pooled_extent(cols, p.k_h, p.s_h, p.p_h, p.ceil_mode);
  const double area = static_cast<double>(p.k_h) * p.k_v;
  for (int i = 0; i < orows; ++i)
    for (int j = 0; j < ocols; ++j) {
      double acc = 0;
      for (int a = 0; a < p.k_v; ++a) {
        const int r = i * p.s_v - p.p_v + a;
        if (r < 0 || r >= rows) continue;
        for (int b = 0; b < p.k_h; ++b) {
          const int c = j * p.s_h - p.p_h + b;
          if (c < 0 || c >= cols) continue;
          acc += in[static_cast<size_t>(r) * cols + c];
        }
      }
      out[static_cast<size_t>(i) * ocols + j] = static_cast<Out>(acc / area);
    }
}

}  // namespace

void avg_pool_plane(const float* in, int rows, int cols, const PoolingParams& p, float* out) {
  pool_plane(in, rows, cols, p, out);
}

Heatmap avg_pool(const Heatmap& h, const PoolingParams& p) {
  p.validate();
  Heatmap o(pooled_extent(h.rows, p.k_v, p.s_v, p.p_v, p.ceil_mode), pooled_extent(h.cols, p.k_h, p.s_h, p.p_h, p.ceil_mode));
  pool_plane(h.v.data(), h.rows, h.cols, p, o.v.data());
  return o;
}

Heatmap softmax(const Heatmap& h) {
  require(!h.v.empty(), ErrorCode::InvalidArgument, "softmax on empty heatmap");
  Heatmap o(h.rows, h.cols);
  const double mx = *std::max_element(h.v.begin(), h.v.end());
  double s = 0;
  for (size_t i = 0; i < h.v.size(); ++i) {
    o.v[i] = std::exp(h.v[i] - mx);
    s += o.v[i];
  }
  for (double& x : o.v) x /= s;
  o.normalized = true;
  return o;
}

}  // namespace posecert
