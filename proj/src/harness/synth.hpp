#pragma once

#include <random>
#include <string>
#include <vector>

#include "core/graph.hpp"
#include "geometry/geometry.hpp"
#include "verifier/hull.hpp"

namespace posecert {

// 23 points on a wireframe aircraft, roughly +-20 units along each axis.
Points3 aircraft_keypoints();

struct SceneOptions {
  int image_size = 512;
  double focal = 600;
  double distance = 150, distance_jitter = 20;
  double cone_deg = 8;                   // half-angle of the visibility cone for the object centre
  double pitch_range = 0.5, roll_range = 0.5;  // radians, yaw is unrestricted
  double margin_px = 4;                  // projections stay this far inside the image
};

// Pixel coordinates are 1-based: the centre of column j is u = j.
KeypointScene random_scene(std::mt19937_64& rng, const Points3& P, const SceneOptions& opt = {},
                           const std::string& id = "");
KeypointScene random_scene(std::mt19937_64& rng, const SceneOptions& opt = {}, const std::string& id = "");

// Encoder-decoder heatmap CNN with a softmax + DSNT head, 39 nodes, 64x64x3 input.
ModelGraph reference_cnn(uint64_t seed, int keypoints = 23);

// Small scene rendered as colour blobs, with a matching colour-detector backbone.
struct ToyProblem {
  KeypointScene scene;
  std::vector<std::pair<int, int>> pixels;  // (u, v) 1-based blob centres
  Tensor image;                             // (3, H, W), 8-bit values
  ModelGraph target;                        // detector -> relu -> blur -> softmax -> dsnt
  Preprocess preproc;
};

ToyProblem toy_problem(uint64_t seed, int keypoints = 6, int size = 64, int border = 2);

}  // namespace posecert
