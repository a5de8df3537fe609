#pragma once

#include <Eigen/Dense>
#include <json.hpp>
#include <string>
#include <vector>

namespace posecert {

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Points3 = Eigen::Matrix<double, Eigen::Dynamic, 3>;
using Points2 = Eigen::Matrix<double, Eigen::Dynamic, 2>;  // columns: (u = column, v = row)

struct Intrinsics {
  double fx = 1, fy = 1, cx = 0, cy = 0;

  Eigen::Matrix3d matrix() const;
  static Intrinsics from_matrix(const Eigen::Matrix3d& K);
  void validate() const;
};

// Intrinsic Z-Y-X Euler angles r = (yaw, pitch, roll): R = Rz(yaw) Ry(pitch) Rx(roll).
Eigen::Matrix3d rotation_from_euler(const Eigen::Vector3d& r);
// d R / d r_i for i = 0..2.
std::array<Eigen::Matrix3d, 3> rotation_euler_derivatives(const Eigen::Vector3d& r);

struct EulerResult {
  Eigen::Vector3d r = Eigen::Vector3d::Zero();
  bool gimbal_lock = false;
};
EulerResult euler_from_rotation(const Eigen::Matrix3d& R);

struct Pose {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  Vec6 xi() const;
  static Pose from_xi(const Vec6& xi);
  bool is_valid(double tol = 1e-9) const;
};

struct Projection {
  Points2 V;
  Eigen::VectorXd depth;
};

Projection project(const Intrinsics& K, const Pose& pose, const Points3& P);

struct PoseError {
  Eigen::Vector3d Dr_deg = Eigen::Vector3d::Zero();
  Eigen::Vector3d Dt = Eigen::Vector3d::Zero();

  bool within(const Eigen::Vector3d& eps_r_deg, const Eigen::Vector3d& eps_t) const;
};

double wrap_angle(double a);  // into (-pi, pi]
PoseError pose_error(const Pose& hat, const Pose& ref);

// Box polytope {dxi | P dxi <= b}, 12 rows [I; -I]; rotation rows in radians.
struct BudgetPolytope {
  Eigen::MatrixXd P;
  Eigen::VectorXd b;
  Eigen::Vector3d eps_r_deg, eps_t;

  bool contains(const Vec6& dxi, double slack = 0.0) const;
};
BudgetPolytope budget_to_polytope(const Eigen::Vector3d& eps_r_deg, const Eigen::Vector3d& eps_t);

struct KeypointScene {
  std::string id;
  Intrinsics K;
  Points3 P;
  Points2 V;
  Pose pose;
  Eigen::VectorXd depth;

  int size() const { return static_cast<int>(P.rows()); }
  void validate() const;
};

KeypointScene scene_from_json(const nlohmann::json& j);
nlohmann::json scene_to_json(const KeypointScene& s);
KeypointScene load_scene(const std::string& path);
nlohmann::json pose_to_json(const Pose& p);
Pose pose_from_json(const nlohmann::json& j);

// Depth-weighted residual: lambda_k [v_k;1] - K(R p_k + t) with lambda_k the depth under xi.
double pnp_objective(const Intrinsics& K, const Points3& P, const Points2& V, const Vec6& xi);
Eigen::VectorXd pnp_residuals(const Intrinsics& K, const Points3& P, const Points2& V, const Vec6& xi);
Eigen::MatrixXd pnp_jacobian(const Intrinsics& K, const Points3& P, const Points2& V, const Vec6& xi);

struct PnpOptions {
  int max_iterations = 200;
  double grad_tol = 1e-10;
  double step_tol = 1e-12;
  double initial_damping = 1e-3;
};

struct PnpResult {
  Pose pose;
  double objective = 0;
  double grad_inf = 0;
  int iterations = 0;
  std::vector<double> accepted_objectives;  // objective after each accepted step, starting at init
};

PnpResult solve_pnp(const Intrinsics& K, const Points3& P, const Points2& V, const Pose& init,
                    const PnpOptions& opt = {});
// Linear initialization for standalone use (needs >= 6 points).
Pose dlt_pose(const Intrinsics& K, const Points3& P, const Points2& V);

}  // namespace posecert
