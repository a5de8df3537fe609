#pragma once

#include <Eigen/Dense>
#include <json.hpp>
#include <set>
#include <string>
#include <vector>

#include "core/graph.hpp"
#include "core/heads.hpp"

namespace posecert {

// Per-axis pooling for a keypoint at 1-based pixel (v_h = column, v_v = row).
PoolingParams pooling_params(int v_h, int v_v, int dv_h, int dv_v, int rows, int cols);

struct AveragedKeypoint {
  int id = 0;
  int v_h = 1, v_v = 1;        // original, 1-based
  int vbar_h = 1, vbar_v = 1;  // pooled patch index, 1-based
  int pooled_rows = 0, pooled_cols = 0;
  PoolingParams params;

  int64_t flat() const { return static_cast<int64_t>(vbar_v - 1) * pooled_cols + (vbar_h - 1); }
};

AveragedKeypoint averaged_keypoint(int id, int v_h, int v_v, const PoolingParams& p, int rows, int cols);

struct ProxySegment {
  int keypoint = 0;
  int64_t offset = 0, len = 0;
  int rows = 0, cols = 0;
};

struct ProxyModel {
  ModelGraph graph;
  std::vector<ProxySegment> segments;
  std::vector<PoolingParams> params;
  size_t backbone_nodes = 0;
};

// Backbone output: the node feeding the first softmax/decode head, or the declared output.
ModelGraph strip_head(const ModelGraph& target);
ProxyModel build_proxy(const ModelGraph& backbone, const std::vector<PoolingParams>& params);
ModelGraph strip_proxy(const ProxyModel& proxy);

// Block-diagonal spec stored by blocks; A and b are materialized on demand.
struct OutputPolytope {
  struct Block {
    int keypoint = 0;
    int64_t offset = 0, len = 0;
    int64_t vbar = 0;  // 0-based flat index within the block
    bool skip = false;
  };
  std::vector<Block> blocks;
  double M = 1e6;

  int64_t dims() const;
  Eigen::MatrixXd dense_A() const;
  Eigen::VectorXd dense_b() const;
  // max over rows of (A y - b); > 0 means the output violates the spec.
  double worst_margin(const float* y, int64_t n) const;
  double worst_margin(const Tensor& y) const { return worst_margin(y.data.data(), y.numel()); }
  bool satisfied(const Tensor& y) const { return worst_margin(y) <= 0.0; }
};

OutputPolytope output_spec(const std::vector<AveragedKeypoint>& avgd, const std::set<int>& skip, double M = 1e6);

nlohmann::json output_spec_to_json(const OutputPolytope& s);
OutputPolytope output_spec_from_json(const nlohmann::json& j);
nlohmann::json proxy_sidecar(const ProxyModel& proxy, const std::vector<AveragedKeypoint>& avgd);

}  // namespace posecert
