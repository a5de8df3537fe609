#pragma once

#include <json.hpp>
#include <set>
#include <string>
#include <vector>

#include "allocation/allocation.hpp"
#include "harness/perturb.hpp"
#include "harness/stats.hpp"
#include "proxy/proxy.hpp"
#include "verifier/hull.hpp"

namespace posecert {

struct CertifyConfig {
  ModelGraph target;  // backbone + softmax/DSNT head
  Tensor seed_image;  // 8-bit (C, H, W), before preprocessing
  KeypointScene scene;
  Preprocess preproc;
  std::vector<PerturbationConfig> perturbations;
  double alpha = 1.0, kappa = 1.0, w1 = 1.0, w2 = 5.0;
  Eigen::Vector3d eps_r_deg{10, 10, 10}, eps_t{4, 4, 20};  // multiplied by alpha
  int budget = 150;
  int workers = 1;
  uint64_t seed = 7;
  int attack_iterations = 50;
};

struct CertifyReport {
  VerificationResult verification;
  AllocatedThresholds thresholds;
  std::vector<PoolingParams> pooling;
  std::set<int> skipped;
  bool seed_in_budget = false;
  PoseError seed_error;
  nlohmann::json json;
};

struct PoolingPlan {
  std::vector<PoolingParams> params;
  std::vector<AveragedKeypoint> keypoints;
  std::set<int> skipped;  // keypoints outside the heatmap
};

// Pooling per keypoint from interleaved thresholds (h, v per keypoint) on a rows x cols heatmap.
PoolingPlan plan_pooling(const Points2& V, const std::vector<int>& dv, int rows, int cols);

// Errors from a stage are re-thrown with the stage name in front of the message.
CertifyReport certify(const CertifyConfig& cfg);

// Loads model, image and scene paths relative to `base_dir`.
CertifyConfig certify_config_from_json(const nlohmann::json& j, const std::string& base_dir = ".");

bool validate_report(const nlohmann::json& report, std::string* why = nullptr);
std::string report_text(const nlohmann::json& report);

// Keypoint pixels (u, v, 1-based) decoded by the target head on a preprocessed image.
Points2 decode_keypoints(const ModelGraph& target, const Tensor& input);

}  // namespace posecert
