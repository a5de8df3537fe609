#include "harness/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "core/error.hpp"

namespace posecert {

using nlohmann::json;

namespace {

float clip8(double v) { return static_cast<float>(std::clamp(std::nearbyint(v), 0.0, 255.0)); }

void check_8bit(const Tensor& t) {
  require(t.rank() == 3, ErrorCode::Shape, "perturb: image must be (C,H,W), got " + shape_str(t.shape));
  for (float v : t.data)
    require(v >= 0.0f && v <= 255.0f && v == std::floor(v), ErrorCode::InvalidArgument,
            "perturb: image is not 8-bit (value " + std::to_string(v) + ")");
}

}  // namespace

Tensor perturb(const Tensor& image, const PerturbationConfig& cfg) {
  check_8bit(image);
  Tensor out = image;
  const int64_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  switch (cfg.kind) {
    case PerturbationConfig::Brightness:
      for (auto& v : out.data) v = clip8(v + cfg.amount);
      break;
    case PerturbationConfig::Contrast:
      for (auto& v : out.data) v = clip8(v * (1.0 + cfg.amount));
      break;
    case PerturbationConfig::Block: {
      require(cfg.size > 0 && cfg.row >= 0 && cfg.col >= 0 && cfg.row + cfg.size <= H && cfg.col + cfg.size <= W,
              ErrorCode::InvalidArgument, "perturb: block out of bounds");
      require(0 <= cfg.value_lo && cfg.value_lo <= cfg.value_hi && cfg.value_hi <= 255, ErrorCode::InvalidArgument,
              "perturb: block value range must lie in [0,255]");
      std::mt19937_64 rng(cfg.seed);
      std::uniform_int_distribution<int> dist(cfg.value_lo, cfg.value_hi);
      for (int64_t c = 0; c < C; ++c)
        for (int r = 0; r < cfg.size; ++r)
          for (int q = 0; q < cfg.size; ++q) out.at(c, cfg.row + r, cfg.col + q) = static_cast<float>(dist(rng));
      break;
    }
    case PerturbationConfig::Patch: {
      const Tensor& p = cfg.patch;
      require(p.rank() == 3 && p.dim(0) == C, ErrorCode::Shape, "perturb: patch must be (C,h,w) with matching channels");
      require(cfg.row >= 0 && cfg.col >= 0 && cfg.row + p.dim(1) <= H && cfg.col + p.dim(2) <= W,
              ErrorCode::InvalidArgument, "perturb: patch out of bounds");
      for (int64_t c = 0; c < C; ++c)
        for (int64_t r = 0; r < p.dim(1); ++r)
          for (int64_t q = 0; q < p.dim(2); ++q) out.at(c, cfg.row + r, cfg.col + q) = clip8(p.at(c, r, q));
      break;
    }
  }
  return out;
}

PerturbationConfig perturbation_from_json(const json& j) {
  try {
    PerturbationConfig p;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "brightness") {
      p.kind = PerturbationConfig::Brightness;
      p.amount = j.at("b").get<double>();
    } else if (kind == "contrast") {
      p.kind = PerturbationConfig::Contrast;
      p.amount = j.at("c").get<double>();
    } else if (kind == "block") {
      p.kind = PerturbationConfig::Block;
      p.size = j.value("size", 3);
      p.row = j.at("row").get<int>();
      p.col = j.at("col").get<int>();
      p.value_lo = j.value("value_lo", 0);
      p.value_hi = j.value("value_hi", 255);
      p.seed = j.value("seed", uint64_t{0});
    } else if (kind == "patch") {
      p.kind = PerturbationConfig::Patch;
      p.row = j.at("row").get<int>();
      p.col = j.at("col").get<int>();
      p.patch = load_image_or_tensor(j.at("image").get<std::string>());
    } else {
      fail(ErrorCode::Parse, "unknown perturbation kind '" + kind + "'");
    }
    return p;
  } catch (const json::exception& e) {
    fail(ErrorCode::Parse, std::string("malformed perturbation: ") + e.what());
  }
}

json perturbation_to_json(const PerturbationConfig& p) {
  switch (p.kind) {
    case PerturbationConfig::Brightness:
      return {{"kind", "brightness"}, {"b", p.amount}};
    case PerturbationConfig::Contrast:
      return {{"kind", "contrast"}, {"c", p.amount}};
    case PerturbationConfig::Block:
      return {{"kind", "block"}, {"size", p.size}, {"row", p.row}, {"col", p.col},
              {"value_lo", p.value_lo}, {"value_hi", p.value_hi}, {"seed", p.seed}};
    default:
      return {{"kind", "patch"}, {"row", p.row}, {"col", p.col}, {"shape", p.patch.shape}};
  }
}

}  // namespace posecert
