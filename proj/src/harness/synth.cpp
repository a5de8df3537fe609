#include "harness/synth.hpp"

#include <cmath>

#include "core/error.hpp"

namespace posecert {

using nlohmann::json;

Points3 aircraft_keypoints() {
  static const double pts[23][3] = {
      {0, 0, 20},      {0, 2, 14},      {0, 2.5, 0},     {0, -2.5, 0},    {0, 0, -18},   {0, 8, -17},
      {0, 2.5, -11},   {-20, 0.5, -2},  {20, 0.5, -2},   {-2.5, 0, 5},    {2.5, 0, 5},   {-2.5, 0, -3},
      {2.5, 0, -3},    {-11, 0.2, 2},   {11, 0.2, 2},    {-7, 0.5, -17},  {7, 0.5, -17}, {-7, -2, 6},
      {7, -2, 6},      {-7, -2, 1},     {7, -2, 1},      {0, -2.5, 12},   {-2.5, 0, 10},
  };
  Points3 P(23, 3);
  for (int i = 0; i < 23; ++i) P.row(i) << pts[i][0], pts[i][1], pts[i][2];
  return P;
}

KeypointScene random_scene(std::mt19937_64& rng, const Points3& P, const SceneOptions& opt, const std::string& id) {
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  const double pi = std::acos(-1.0);
  KeypointScene s;
  s.id = id;
  s.K = {opt.focal, opt.focal, (opt.image_size + 1) / 2.0, (opt.image_size + 1) / 2.0};
  s.P = P;
  for (int attempt = 0; attempt < 10000; ++attempt) {
    const Eigen::Vector3d r(pi * U(rng), opt.pitch_range * U(rng), opt.roll_range * U(rng));
    const double z = opt.distance + opt.distance_jitter * U(rng);
    const double cone = std::tan(opt.cone_deg * pi / 180.0);
    Pose pose;
    pose.R = rotation_from_euler(r);
    pose.t = Eigen::Vector3d(z * cone * U(rng), z * cone * U(rng), z);
    Projection pr;
    try {
      pr = project(s.K, pose, P);
    } catch (const Error&) {
      continue;
    }
    const double lo = 1 + opt.margin_px, hi = opt.image_size - opt.margin_px;
    if (pr.V.minCoeff() < lo || pr.V.maxCoeff() > hi) continue;
    s.pose = pose;
    s.V = pr.V;
    s.depth = pr.depth;
    s.validate();
    return s;
  }
  fail(ErrorCode::Internal, "random_scene: could not place the object inside the image");
}

KeypointScene random_scene(std::mt19937_64& rng, const SceneOptions& opt, const std::string& id) {
  return random_scene(rng, aircraft_keypoints(), opt, id);
}

namespace {

std::vector<float> he_weights(std::mt19937_64& rng, size_t n, int fan_in) {
  std::normal_distribution<float> N(0.0f, std::sqrt(2.0f / static_cast<float>(fan_in)));
  std::vector<float> w(n);
  for (auto& v : w) v = N(rng);
  return w;
}

}  // namespace

ModelGraph reference_cnn(uint64_t seed, int keypoints) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> U(0.5f, 1.5f), S(-0.1f, 0.1f);
  std::vector<NodeSpec> specs;
  specs.push_back({"input", "input", json::object(), {}, {}});
  std::string prev = "input";
  int cin = 3;
  auto add = [&](NodeSpec s) {
    prev = s.id;
    specs.push_back(std::move(s));
  };
  auto batchnorm = [&](const std::string& id, int c) {
    std::vector<float> w;
    for (int i = 0; i < c; ++i) w.push_back(U(rng));
    for (int i = 0; i < c; ++i) w.push_back(S(rng));
    for (int i = 0; i < c; ++i) w.push_back(S(rng));
    for (int i = 0; i < c; ++i) w.push_back(U(rng));
    add({id, "batchnorm", {{"eps", 1e-5}}, w, {prev}});
    add({id + "_relu", "relu", json::object(), {}, {id}});
  };
  const int enc[5] = {16, 16, 32, 32, 32};
  for (int i = 0; i < 5; ++i) {
    const std::string id = "enc" + std::to_string(i);
    auto w = he_weights(rng, static_cast<size_t>(enc[i] * cin * 9), cin * 9);
    w.resize(w.size() + static_cast<size_t>(enc[i]), 0.0f);
    add({id, "conv2d", {{"out_channels", enc[i]}, {"kernel", 3}, {"stride", 1}, {"padding", 1}}, w, {prev}});
    batchnorm(id + "_bn", enc[i]);
    cin = enc[i];
    if (i < 4) add({id + "_pool", "avg_pool", {{"kernel", 2}, {"stride", 2}}, {}, {prev}});
  }
  const int dec[5] = {32, 32, 16, 16, 16};
  for (int i = 0; i < 5; ++i) {
    const std::string id = "dec" + std::to_string(i);
    const bool up = i < 4;
    const int k = up ? 4 : 3;
    auto w = he_weights(rng, static_cast<size_t>(dec[i] * cin * k * k), cin * k * k);
    w.resize(w.size() + static_cast<size_t>(dec[i]), 0.0f);
    add({id, "conv_transpose2d",
         {{"out_channels", dec[i]}, {"kernel", k}, {"stride", up ? 2 : 1}, {"padding", 1}}, w, {prev}});
    batchnorm(id + "_bn", dec[i]);
    cin = dec[i];
  }
  auto w = he_weights(rng, static_cast<size_t>(keypoints * cin), cin);
  w.resize(w.size() + static_cast<size_t>(keypoints), 0.0f);
  add({"heatmap", "conv2d", {{"out_channels", keypoints}, {"kernel", 1}}, w, {prev}});
  add({"softmax", "softmax", json::object(), {}, {prev}});
  add({"dsnt", "dsnt", json::object(), {}, {prev}});
  add({"output", "output", json::object(), {}, {prev}});
  return build_graph({3, 64, 64}, specs, {"output"});
}

ToyProblem toy_problem(uint64_t seed, int keypoints, int size, int border) {
  require(keypoints >= 4 && keypoints <= 6, ErrorCode::InvalidArgument, "toy_problem supports 4..6 keypoints");
  require(size >= 32 && border >= 0 && border <= 40, ErrorCode::InvalidArgument, "toy_problem: bad image size/border");
  std::mt19937_64 rng(seed);
  ToyProblem tp;

  // Spread-out, non-coplanar points. The aircraft's nose and tail sit on the optical axis
  // for near-frontal poses and would share a pixel at this resolution.
  const double pts[6][3] = {{18, 0, 0}, {-18, 0, 0}, {0, 18, 0}, {0, -18, 0}, {9, 9, 10}, {-9, -9, -10}};
  Points3 P(keypoints, 3);
  for (int k = 0; k < keypoints; ++k) P.row(k) << pts[k][0], pts[k][1], pts[k][2];
  SceneOptions so;
  so.image_size = size;
  so.focal = 2.0 * size;
  so.margin_px = 8;
  so.cone_deg = 3;
  const double min_sep = 9.0;
  for (int attempt = 0;; ++attempt) {
    require(attempt < 10000, ErrorCode::Internal, "toy_problem: could not separate the keypoints");
    tp.scene = random_scene(rng, P, so, "toy-" + std::to_string(seed));
    bool ok = true;
    for (int a = 0; a < keypoints && ok; ++a)
      for (int b = a + 1; b < keypoints && ok; ++b) ok = (tp.scene.V.row(a) - tp.scene.V.row(b)).norm() >= min_sep;
    if (ok) break;
  }

  // Blob k carries colour 128 + 60 * d_k * profile; detector k fires where profile > 1/2.
  const double dirs[6][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {-1, 0, 0}, {0, -1, 0}, {0, 0, -1}};
  const double gray = 128, amp = 60, radius2 = 9;
  std::uniform_int_distribution<int> noise(-8, 8);
  tp.image = Tensor({3, size, size});
  for (auto& v : tp.image.data) v = static_cast<float>(gray + noise(rng));
  for (int k = 0; k < keypoints; ++k) {
    const int u = static_cast<int>(std::lround(tp.scene.V(k, 0))), v = static_cast<int>(std::lround(tp.scene.V(k, 1)));
    tp.pixels.emplace_back(u, v);
    for (int dr = -3; dr <= 3; ++dr)
      for (int dc = -3; dc <= 3; ++dc) {
        const double prof = std::max(0.0, 1.0 - (dr * dr + dc * dc) / radius2);
        if (prof <= 0) continue;
        for (int c = 0; c < 3; ++c) tp.image.at(c, v - 1 + dr, u - 1 + dc) = static_cast<float>(gray + std::lround(amp * dirs[k][c] * prof));
      }
  }
  for (auto& v : tp.image.data) v = std::clamp(v, static_cast<float>(border), static_cast<float>(255 - border));

  tp.preproc = {1.0 / 255.0, 0.0};
  const double s = 120.0;
  std::vector<float> det;
  for (int k = 0; k < keypoints; ++k)
    for (int c = 0; c < 3; ++c) det.push_back(static_cast<float>(s * dirs[k][c] * 255.0 / amp));
  for (int k = 0; k < keypoints; ++k) {
    double dg = 0;
    for (int c = 0; c < 3; ++c) dg += dirs[k][c] * gray / amp;
    det.push_back(static_cast<float>(-s * (dg + 0.5)));
  }
  const double taps[5] = {1, 4, 6, 4, 1};
  std::vector<float> blur(static_cast<size_t>(keypoints * keypoints * 25), 0.0f);
  for (int k = 0; k < keypoints; ++k)
    for (int a = 0; a < 5; ++a)
      for (int b = 0; b < 5; ++b) blur[static_cast<size_t>(((k * keypoints + k) * 5 + a) * 5 + b)] = static_cast<float>(taps[a] * taps[b] / 256.0);
  std::vector<NodeSpec> specs = {
      {"input", "input", json::object(), {}, {}},
      {"detect", "conv2d", {{"out_channels", keypoints}, {"kernel", 1}}, det, {"input"}},
      {"detect_relu", "relu", json::object(), {}, {"detect"}},
      {"blur", "conv2d", {{"out_channels", keypoints}, {"kernel", 5}, {"padding", 2}, {"bias", false}}, blur, {"detect_relu"}},
      {"softmax", "softmax", json::object(), {}, {"blur"}},
      {"dsnt", "dsnt", json::object(), {}, {"softmax"}},
      {"output", "output", json::object(), {}, {"dsnt"}},
  };
  tp.target = build_graph({3, size, size}, specs, {"output"});
  return tp;
}

}  // namespace posecert
