#pragma once

#include <Eigen/Dense>
#include <json.hpp>
#include <string>

#include "geometry/geometry.hpp"

namespace posecert {

struct SensitivityMatrices {
  Vec6 G_xi = Vec6::Zero();
  Mat6 G_xixi = Mat6::Zero();
  Eigen::VectorXd G_v;     // 2K, interleaved (u1, v1, u2, v2, ...)
  Eigen::MatrixXd G_xiv;   // 6 x 2K
  Eigen::MatrixXd M_vxi;   // 7 x 2K
  Eigen::Matrix<double, 7, 7> M_xi;
  double cond = 0;         // condition number of M_xi
  double hessian_asymmetry = 0;  // max |H - H^T| / max |H| before symmetrization
  Eigen::RowVectorXd dz;   // objective-value sensitivity row; not used downstream
};

struct DerivativeOptions {
  double rel_step = 1e-6;
  double max_cond = 1e12;
  double grad_warn = 1e-4;
};

// Analytic gradients of the PnP objective.
Vec6 objective_grad_xi(const Intrinsics& K, const Points3& P, const Points2& V, const Vec6& xi);
Eigen::VectorXd objective_grad_v(const Intrinsics& K, const Points3& P, const Points2& V, const Vec6& xi);

SensitivityMatrices nls_derivatives(const KeypointScene& scene, const Vec6& xi, const DerivativeOptions& opt = {});
// d/dxi of the analytic G_v, transposed to 6 x 2K; used to audit G_xiv.
Eigen::MatrixXd cross_derivative_v_then_xi(const KeypointScene& scene, const Vec6& xi, double rel_step = 1e-6);

// Rows of M_xi^{-1} M_vxi that belong to dxi (6 x 2K).
Eigen::MatrixXd pose_jacobian(const SensitivityMatrices& m, const DerivativeOptions& opt = {});

struct TolerancePolytope {
  Eigen::MatrixXd P;
  Eigen::VectorXd b;
  std::string scene_id;
  // Two-sided rows mean |P dv| <= b; one-sided mean P dv <= b.
  bool two_sided = true;

  int dims() const { return static_cast<int>(P.cols()); }
  bool contains(const Eigen::VectorXd& dv, double slack = 1e-9) const;
};

TolerancePolytope keypoint_polytope(const Eigen::MatrixXd& Mtilde, const BudgetPolytope& budget,
                                    const std::string& scene_id = "");
TolerancePolytope keypoint_polytope_signed(const Eigen::MatrixXd& Mtilde, const BudgetPolytope& budget,
                                           const std::string& scene_id = "");

nlohmann::json polytope_to_json(const TolerancePolytope& t);
TolerancePolytope polytope_from_json(const nlohmann::json& j);

}  // namespace posecert
