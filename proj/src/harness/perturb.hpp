#pragma once

#include <cstdint>
#include <json.hpp>
#include <string>

#include "core/tensor.hpp"

namespace posecert {

struct PerturbationConfig {
  enum Kind { Brightness, Contrast, Block, Patch } kind = Brightness;
  double amount = 0;     // b for brightness, c for contrast
  int size = 3;          // block side
  int row = 0, col = 0;  // top-left corner (0-based) for block and patch
  int value_lo = 0, value_hi = 255;
  uint64_t seed = 0;     // block fill values
  Tensor patch;          // (C, h, w) for patch occlusion
};

// Clipped, rounded 8-bit transform of a (C, H, W) image with integral values in [0, 255].
Tensor perturb(const Tensor& image, const PerturbationConfig& cfg);

PerturbationConfig perturbation_from_json(const nlohmann::json& j);
nlohmann::json perturbation_to_json(const PerturbationConfig& p);

}  // namespace posecert
