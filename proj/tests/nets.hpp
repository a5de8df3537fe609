#pragma once

#include <algorithm>
#include <random>

#include "core/graph.hpp"
#include "proxy/proxy.hpp"
#include "verifier/hull.hpp"

namespace testing {

struct ProxyCase {
  posecert::ModelGraph model;
  posecert::ImageConvexHull hull;
  posecert::OutputPolytope spec;
};

inline std::vector<float> uniform_floats(std::mt19937_64& rng, size_t n, float lo, float hi) {
  std::uniform_real_distribution<float> U(lo, hi);
  std::vector<float> v(n);
  for (auto& x : v) x = U(rng);
  return v;
}

// Small conv/relu backbone with a pooled proxy head, a random hull of up to four perturbed images
// around a random seed, and keypoints placed at each channel's peak on the seed so that a mix of
// verdicts comes out.
inline ProxyCase random_proxy_case(std::mt19937_64& rng) {
  using namespace posecert;
  using nlohmann::json;
  auto I = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  const int C = I(1, 2), H = I(5, 8), W = I(5, 8), K = I(1, 2), n = I(1, 4), hidden = I(2, 4);

  std::vector<NodeSpec> specs = {
      {"x", "input", json::object(), {}, {}},
      {"c1", "conv2d", {{"out_channels", hidden}, {"kernel", 3}, {"padding", 1}},
       uniform_floats(rng, static_cast<size_t>(hidden * C * 9 + hidden), -0.5f, 0.5f), {"x"}},
      {"r1", "relu", json::object(), {}, {"c1"}},
      {"heat", "conv2d", {{"out_channels", K}, {"kernel", 3}, {"padding", 1}},
       uniform_floats(rng, static_cast<size_t>(K * hidden * 9 + K), -0.5f, 0.5f), {"r1"}},
  };
  const ModelGraph backbone = build_graph({C, H, W}, specs, {"heat"});

  const Tensor seed({C, H, W}, uniform_floats(rng, static_cast<size_t>(C * H * W), 0.0f, 1.0f));
  const float scale = std::vector<float>{0.01f, 0.05f, 0.2f, 0.5f}[static_cast<size_t>(I(0, 3))];
  std::vector<Tensor> rest;
  for (int i = 0; i < n; ++i) {
    Tensor t = seed;
    const auto d = uniform_floats(rng, t.data.size(), -scale, scale);
    for (size_t j = 0; j < d.size(); ++j) t.data[j] += d[j];
    rest.push_back(std::move(t));
  }

  const Tensor heat = run_graph(backbone, seed);
  std::vector<PoolingParams> params;
  std::vector<AveragedKeypoint> avgd;
  for (int k = 0; k < K; ++k) {
    const ArgmaxResult m = argmax_decode(Heatmap::from_channel(heat, k));
    const PoolingParams p = pooling_params(m.col + 1, m.row + 1, I(0, 2), I(0, 2), H, W);
    params.push_back(p);
    avgd.push_back(averaged_keypoint(k, m.col + 1, m.row + 1, p, H, W));
  }
  return {build_proxy(backbone, params).graph, make_hull(seed, rest), output_spec(avgd, {})};
}

// Uniform point of the simplex {alpha >= 0, sum alpha <= 1}.
inline Eigen::VectorXd sample_simplex(std::mt19937_64& rng, int n) {
  std::exponential_distribution<double> E(1.0);
  Eigen::VectorXd e(n + 1);
  for (int i = 0; i <= n; ++i) e[i] = E(rng);
  return e.tail(n) / e.sum();
}

}  // namespace testing
