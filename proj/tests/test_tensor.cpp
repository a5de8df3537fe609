#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "core/graph.hpp"
#include "core/heads.hpp"
#include "harness/synth.hpp"
#include "heatmaps.hpp"
#include "helpers.hpp"

using namespace posecert;
using nlohmann::json;

namespace {

// Straight-line convolution, weights [o][c][kh][kw] then bias.
Tensor naive_conv(const Tensor& x, const std::vector<float>& w, int cout, int k, int s, int p) {
  const int cin = static_cast<int>(x.dim(0)), H = static_cast<int>(x.dim(1)), W = static_cast<int>(x.dim(2));
  const int oh = (H + 2 * p - k) / s + 1, ow = (W + 2 * p - k) / s + 1;
  Tensor y({cout, oh, ow});
  for (int o = 0; o < cout; ++o)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        double acc = w[static_cast<size_t>(cout * cin * k * k + o)];
        for (int c = 0; c < cin; ++c)
          for (int a = 0; a < k; ++a)
            for (int b = 0; b < k; ++b) {
              const int r = i * s - p + a, q = j * s - p + b;
              if (r < 0 || r >= H || q < 0 || q >= W) continue;
              acc += w[static_cast<size_t>(((o * cin + c) * k + a) * k + b)] * x.at(c, r, q);
            }
        y.at(o, i, j) = static_cast<float>(acc);
      }
  return y;
}

// Scatter form of the transposed convolution, weights [c][o][kh][kw] then bias.
Tensor naive_deconv(const Tensor& x, const std::vector<float>& w, int cout, int k, int s, int p) {
  const int cin = static_cast<int>(x.dim(0)), H = static_cast<int>(x.dim(1)), W = static_cast<int>(x.dim(2));
  const int oh = (H - 1) * s - 2 * p + k, ow = (W - 1) * s - 2 * p + k;
  std::vector<double> acc(static_cast<size_t>(cout * oh * ow), 0.0);
  for (int c = 0; c < cin; ++c)
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j)
        for (int o = 0; o < cout; ++o)
          for (int a = 0; a < k; ++a)
            for (int b = 0; b < k; ++b) {
              const int r = i * s - p + a, q = j * s - p + b;
              if (r < 0 || r >= oh || q < 0 || q >= ow) continue;
              acc[static_cast<size_t>((o * oh + r) * ow + q)] +=
                  w[static_cast<size_t>(((c * cout + o) * k + a) * k + b)] * x.at(c, i, j);
            }
  Tensor y({cout, oh, ow});
  for (int o = 0; o < cout; ++o)
    for (int r = 0; r < oh * ow; ++r)
      y.data[static_cast<size_t>(o * oh * ow + r)] = static_cast<float>(
          acc[static_cast<size_t>(o * oh * ow + r)] + w[static_cast<size_t>(cin * cout * k * k + o)]);
  return y;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape == b.shape);
  double m = 0;
  for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a.data[i]) - b.data[i]));
  return m;
}

json single_conv_manifest() {
  return {{"input", {{"shape", {1, 3, 3}}}},
          {"nodes",
           {{{"id", "x"}, {"op", "input"}},
            {{"id", "c"}, {"op", "conv2d"}, {"attrs", {{"out_channels", 1}, {"kernel", 1}}}, {"weight", {{"offset", 0}, {"len", 2}}}},
            {{"id", "y"}, {"op", "output"}}}},
          {"edges", json::array({json::array({"x", "c"}), json::array({"c", "y"})})},
          {"outputs", {"y"}}};
}

}  // namespace

TEST_CASE("manifest with a single convolution builds a three node graph") {
  const ModelGraph g = parse_manifest(single_conv_manifest(), {2.0f, 1.0f});
  CHECK(g.layer_count() == 3);
  const Tensor y = run_graph(g, Tensor({1, 3, 3}, std::vector<float>{0, 1, 2, 3, 4, 5, 6, 7, 8}));
  CHECK(y.shape == Shape{1, 3, 3});
  CHECK(y[4] == doctest::Approx(9.0f));
}

TEST_CASE("weight reference past the end of the blob is rejected") {
  const std::string msg = testing::error_message_of([] { parse_manifest(single_conv_manifest(), {2.0f}); });
  CHECK(msg.find("weight out of range") != std::string::npos);
}

TEST_CASE("unknown operator and cycles are rejected") {
  json m = single_conv_manifest();
  m["nodes"][1]["op"] = "maxpool";
  CHECK(testing::error_code_of([&] { parse_manifest(m, {2.0f, 1.0f}); }) == ErrorCode::Parse);

  json cyc = single_conv_manifest();
  cyc["edges"].push_back(json::array({"c", "c"}));
  CHECK_THROWS_AS(parse_manifest(cyc, {2.0f, 1.0f}), Error);
}

TEST_CASE("reference keypoint CNN has 39 layers and produces a 23x2 keypoint output") {
  const ModelGraph g = reference_cnn(3);
  CHECK(g.layer_count() == 39);
  CHECK(g.input_shape == Shape{3, 64, 64});
  CHECK(g.output_shape() == Shape{23, 2});
}

TEST_CASE("identity linear layer and relu") {
  std::vector<NodeSpec> specs = {{"x", "input", json::object(), {}, {}},
                                 {"l", "linear", {{"out_features", 3}}, {1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0}, {"x"}},
                                 {"y", "output", json::object(), {}, {"l"}}};
  ModelGraph g = build_graph({3}, specs, {"y"});
  CHECK(run_graph(g, Tensor({3}, std::vector<float>{1, 2, 3})).data == std::vector<float>{1, 2, 3});

  specs[1] = {"l", "relu", json::object(), {}, {"x"}};
  g = build_graph({3}, specs, {"y"});
  CHECK(run_graph(g, Tensor({3}, std::vector<float>{-1, 0, 2})).data == std::vector<float>{0, 0, 2});
}

TEST_CASE("two convolution network matches a naive convolution") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const auto w1 = testing::random_vec(rng, 4 * 3 * 9 + 4), w2 = testing::random_vec(rng, 2 * 4 * 25 + 2);
    std::vector<NodeSpec> specs = {
        {"x", "input", json::object(), {}, {}},
        {"c1", "conv2d", {{"out_channels", 4}, {"kernel", 3}, {"stride", 2}, {"padding", 1}}, w1, {"x"}},
        {"c2", "conv2d", {{"out_channels", 2}, {"kernel", 5}, {"padding", 2}}, w2, {"c1"}},
        {"y", "output", json::object(), {}, {"c2"}}};
    const ModelGraph g = build_graph({3, 11, 9}, specs, {"y"});
    const Tensor x({3, 11, 9}, testing::random_vec(rng, 3 * 11 * 9));
    const Tensor expect = naive_conv(naive_conv(x, w1, 4, 3, 2, 1), w2, 2, 5, 1, 2);
    // float32 accumulation against a double oracle
    double scale = 1.0;
    for (float v : expect.data) scale = std::max(scale, std::abs(static_cast<double>(v)));
    CHECK(max_abs_diff(run_graph(g, x), expect) < 1e-6 * scale);
  }
}

TEST_CASE("transposed convolution matches a scatter oracle") {
  std::mt19937_64 rng(12);
  const auto w = testing::random_vec(rng, 3 * 2 * 16 + 2);
  std::vector<NodeSpec> specs = {
      {"x", "input", json::object(), {}, {}},
      {"d", "conv_transpose2d", {{"out_channels", 2}, {"kernel", 4}, {"stride", 2}, {"padding", 1}}, w, {"x"}},
      {"y", "output", json::object(), {}, {"d"}}};
  const ModelGraph g = build_graph({3, 5, 4}, specs, {"y"});
  const Tensor x({3, 5, 4}, testing::random_vec(rng, 60));
  const Tensor y = run_graph(g, x);
  CHECK(y.shape == Shape{2, 10, 8});
  CHECK(max_abs_diff(y, naive_deconv(x, w, 2, 4, 2, 1)) < 1e-6);
}

TEST_CASE("batchnorm, split, concat and add") {
  std::vector<NodeSpec> specs = {
      {"x", "input", json::object(), {}, {}},
      {"bn", "batchnorm", {{"eps", 0.0}}, {2, 1, /*beta*/ 0, 1, /*mean*/ 1, 0, /*var*/ 4, 1}, {"x"}},
      {"s1", "split", {{"channel", 1}}, {}, {"bn"}},
      {"s0", "split", {{"channel", 0}}, {}, {"bn"}},
      {"cat", "concat", {{"axis", 0}}, {}, {"s1", "s0"}},
      {"sum", "add", json::object(), {}, {"cat", "bn"}},
      {"y", "output", json::object(), {}, {"sum"}}};
  const ModelGraph g = build_graph({2, 1, 2}, specs, {"y"});
  // bn: ch0 = 2 (x - 1) / 2 = x - 1, ch1 = x + 1
  const Tensor y = run_graph(g, Tensor({2, 1, 2}, std::vector<float>{1, 3, 5, 7}));
  CHECK(y.data == std::vector<float>{6 + 0, 8 + 2, 0 + 6, 2 + 8});
}

TEST_CASE("inference is bit-identical across runs") {
  const ModelGraph g = reference_cnn(5, 4);
  std::mt19937_64 rng(1);
  const Tensor x({3, 64, 64}, testing::random_vec(rng, 3 * 64 * 64, 0, 1));
  CHECK(run_graph(g, x) == run_graph(g, x));
}

TEST_CASE("dsnt of a centred symmetric heatmap is the origin and a shift of c columns gives 2c/n") {
  const Heatmap h = softmax(testing::symmetric_logits(9, 9, 4, 4, 2, 2, 1.3, 1.1));
  const DsntResult d = dsnt_decode(h);
  CHECK(std::abs(d.row_norm) < 1e-12);
  CHECK(std::abs(d.col_norm) < 1e-12);

  // move every value two columns right (the support fits in the grid)
  Heatmap s(9, 9);
  for (int r = 0; r < 9; ++r)
    for (int c = 0; c + 2 < 9; ++c) s(r, c + 2) = h(r, c);
  REQUIRE(s.is_normalized(1e-12));
  const DsntResult ds = dsnt_decode(s);
  CHECK(ds.col_norm == doctest::Approx(4.0 / 9.0).epsilon(1e-12));
  CHECK(std::abs(ds.row_norm) < 1e-12);
  CHECK(ds.col_px == doctest::Approx(7.0).epsilon(1e-12));

  CHECK(std::abs(dsnt_decode(Heatmap(6, 6, 1.0 / 36)).col_norm) < 1e-12);
  CHECK_THROWS_AS(dsnt_decode(Heatmap(3, 3, 1.0)), Error);
}

TEST_CASE("argmax returns the single maximum and the lowest index on ties") {
  Heatmap h(8, 8);
  h(3, 5) = 1;
  const ArgmaxResult a = argmax_decode(h);
  CHECK(a.row == 3);
  CHECK(a.col == 5);

  Heatmap t(3, 4);
  t.v[4] = 2;
  t.v[9] = 2;
  CHECK(argmax_decode(t).flat == 4);

  const Heatmap g = testing::symmetric_heatmap(15, 15, 7, 7, 2.0, 2.0);
  size_t best = 0;
  for (size_t i = 0; i < g.v.size(); ++i)
    if (g.v[i] > g.v[best]) best = i;
  CHECK(argmax_decode(g).flat == static_cast<int64_t>(best));
  CHECK(argmax_decode(g).row == 7);
  CHECK(argmax_decode(g).col == 7);
}

TEST_CASE("average pooling with the area divisor") {
  const Heatmap ones = avg_pool(Heatmap(4, 4, 1.0), {2, 2, 2, 2, 0, 0});
  CHECK(ones.rows == 2);
  CHECK(ones.cols == 2);
  for (double v : ones.v) CHECK(v == 1.0);

  Heatmap c(3, 3);
  c(1, 1) = 9;
  const Heatmap one = avg_pool(c, {3, 3, 3, 3, 0, 0});
  CHECK(one.v.size() == 1);
  CHECK(one.v[0] == 1.0);

  // padded sum over a 1x2 kernel, divisor 2
  Heatmap row(1, 4);
  row(0, 0) = 8;
  const Heatmap pr = avg_pool(row, {2, 1, 2, 1, 1, 0});
  CHECK(pr.v == std::vector<double>{4.0, 0.0});

  PoolingParams ceil{2, 1, 2, 1, 1, 0, true};
  CHECK(avg_pool(row, ceil).v == std::vector<double>{4.0, 0.0, 0.0});
}

TEST_CASE("softmax normalizes") {
  Heatmap h(2, 2);
  h.v = {0, 1, 2, 3};
  const Heatmap s = softmax(h);
  CHECK(s.is_normalized(1e-12));
  CHECK(s.v[3] > s.v[2]);
}

TEST_CASE("tensor, image and model files round-trip") {
  const auto dir = testing::temp_dir("tensor_io");
  std::mt19937_64 rng(2);
  const Tensor t({2, 3, 4}, testing::random_vec(rng, 24));
  write_tensor((dir / "t.pctn").string(), t);
  CHECK(read_tensor((dir / "t.pctn").string()) == t);
  CHECK(load_image_or_tensor((dir / "t.pctn").string()) == t);

  Tensor img({3, 5, 7});
  for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>((i * 37) % 256);
  write_ppm((dir / "i.ppm").string(), img);
  CHECK(load_image_or_tensor((dir / "i.ppm").string()) == img);

  const ModelGraph g = reference_cnn(9, 3);
  save_model(g, (dir / "m.json").string(), (dir / "m.bin").string());
  const ModelGraph h = load_model((dir / "m.json").string(), (dir / "m.bin").string());
  CHECK(h.layer_count() == g.layer_count());
  const Tensor x({3, 64, 64}, testing::random_vec(rng, 3 * 64 * 64, 0, 1));
  CHECK(run_graph(h, x) == run_graph(g, x));

  std::ofstream((dir / "junk.bin").string()) << "nothing";
  CHECK(testing::error_code_of([&] { load_image_or_tensor((dir / "junk.bin").string()); }) == ErrorCode::Parse);
  CHECK(testing::error_code_of([&] { read_tensor((dir / "missing").string()); }) == ErrorCode::Io);
}
