#include "geometry/geometry.hpp"

#include <cmath>
#include <fstream>

#include "core/error.hpp"

namespace posecert {

using nlohmann::json;

Eigen::Matrix3d Intrinsics::matrix() const {
  Eigen::Matrix3d K;
  K << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  return K;
}

Intrinsics Intrinsics::from_matrix(const Eigen::Matrix3d& K) {
  require(std::abs(K(2, 2) - 1.0) < 1e-12 && K(2, 0) == 0 && K(2, 1) == 0, ErrorCode::InvalidArgument,
          "intrinsics: last row must be (0,0,1)");
  require(std::abs(K(0, 1)) < 1e-12 && K(1, 0) == 0, ErrorCode::InvalidArgument, "intrinsics: skew not supported");
  Intrinsics in{K(0, 0), K(1, 1), K(0, 2), K(1, 2)};
  in.validate();
  return in;
}

void Intrinsics::validate() const {
  require(fx > 0 && fy > 0 && std::isfinite(cx) && std::isfinite(cy), ErrorCode::InvalidArgument,
          "intrinsics: focal lengths must be positive");
}

namespace {

Eigen::Matrix3d rz(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d m;
  m << c, -s, 0, s, c, 0, 0, 0, 1;
  return m;
}
Eigen::Matrix3d ry(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d m;
  m << c, 0, s, 0, 1, 0, -s, 0, c;
  return m;
}
Eigen::Matrix3d rx(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d m;
  m << 1, 0, 0, 0, c, -s, 0, s, c;
  return m;
}
Eigen::Matrix3d drz(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d m;
  m << -s, -c, 0, c, -s, 0, 0, 0, 0;
  return m;
}
Eigen::Matrix3d dry(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d m;
  m << -s, 0, c, 0, 0, 0, -c, 0, -s;
  return m;
}
Eigen::Matrix3d drx(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d m;
  m << 0, 0, 0, 0, -s, -c, 0, c, -s;
  return m;
}

}  // namespace

Eigen::Matrix3d rotation_from_euler(const Eigen::Vector3d& r) { return rz(r[0]) * ry(r[1]) * rx(r[2]); }

std::array<Eigen::Matrix3d, 3> rotation_euler_derivatives(const Eigen::Vector3d& r) {
  const Eigen::Matrix3d Z = rz(r[0]), Y = ry(r[1]), X = rx(r[2]);
  return {drz(r[0]) * Y * X, Z * dry(r[1]) * X, Z * Y * drx(r[2])};
}

EulerResult euler_from_rotation(const Eigen::Matrix3d& R) {
  EulerResult e;
  const double pitch = std::atan2(-R(2, 0), std::hypot(R(0, 0), R(1, 0)));
  if (M_PI / 2 - std::abs(pitch) < 1e-6) {
    // Yaw and roll are coupled; keep roll at zero.
    e.gimbal_lock = true;
    e.r = {std::atan2(-R(0, 1), R(1, 1)), pitch, 0.0};
  } else {
    e.r = {std::atan2(R(1, 0), R(0, 0)), pitch, std::atan2(R(2, 1), R(2, 2))};
  }
  return e;
}

Vec6 Pose::xi() const {
  Vec6 x;
  x.head<3>() = euler_from_rotation(R).r;
  x.tail<3>() = t;
  return x;
}

Pose Pose::from_xi(const Vec6& xi) {
  Pose p;
  p.R = rotation_from_euler(xi.head<3>());
  p.t = xi.tail<3>();
  return p;
}

bool Pose::is_valid(double tol) const {
  return (R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= tol &&
         std::abs(R.determinant() - 1.0) <= tol && t.allFinite();
}

Projection project(const Intrinsics& K, const Pose& pose, const Points3& P) {
  Projection out;
  out.V.resize(P.rows(), 2);
  out.depth.resize(P.rows());
  for (Eigen::Index k = 0; k < P.rows(); ++k) {
    const Eigen::Vector3d q = pose.R * P.row(k).transpose() + pose.t;
    require(q.z() > 0, ErrorCode::Geometry, "point " + std::to_string(k) + " is behind camera (depth " +
                                                std::to_string(q.z()) + ")");
    out.V(k, 0) = K.fx * q.x() / q.z() + K.cx;
    out.V(k, 1) = K.fy * q.y() / q.z() + K.cy;
    out.depth[k] = q.z();
  }
  return out;
}

double wrap_angle(double a) {
  a = std::remainder(a, 2 * M_PI);
  return a <= -M_PI ? a + 2 * M_PI : a;
}

bool PoseError::within(const Eigen::Vector3d& eps_r_deg, const Eigen::Vector3d& eps_t) const {
  return (Dr_deg.array() <= eps_r_deg.array()).all() && (Dt.array() <= eps_t.array()).all();
}

PoseError pose_error(const Pose& hat, const Pose& ref) {
  const Eigen::Vector3d a = euler_from_rotation(hat.R).r, b = euler_from_rotation(ref.R).r;
  PoseError e;
  for (int i = 0; i < 3; ++i) e.Dr_deg[i] = std::abs(wrap_angle(a[i] - b[i])) * 180.0 / M_PI;
  e.Dt = (hat.t - ref.t).cwiseAbs();
  return e;
}

bool BudgetPolytope::contains(const Vec6& dxi, double slack) const {
  return ((P * dxi - b).array() <= slack).all();
}

BudgetPolytope budget_to_polytope(const Eigen::Vector3d& eps_r_deg, const Eigen::Vector3d& eps_t) {
  require((eps_r_deg.array() > 0).all() && (eps_t.array() > 0).all(), ErrorCode::InvalidArgument,
          "pose error budget entries must be positive");
  BudgetPolytope bp;
  bp.eps_r_deg = eps_r_deg;
  bp.eps_t = eps_t;
  bp.P.resize(12, 6);
  bp.P << Mat6::Identity(), -Mat6::Identity();
  Vec6 half;
  half << eps_r_deg * (M_PI / 180.0), eps_t;
  bp.b.resize(12);
  bp.b << half, half;
  return bp;
}

void KeypointScene::validate() const {
  K.validate();
  require(P.rows() == V.rows(), ErrorCode::Shape, "scene: points3d and points2d counts differ");
  require(P.rows() >= 1, ErrorCode::Shape, "scene: no keypoints");
  require(pose.is_valid(1e-6), ErrorCode::InvalidArgument, "scene: pose rotation is not orthonormal");
}

namespace {

Eigen::Matrix3d mat3(const json& j) {
  auto v = j.get<std::vector<double>>();
  require(v.size() == 9, ErrorCode::Parse, "expected 9 numbers for a 3x3 matrix");
  Eigen::Matrix3d m;
  for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = v[static_cast<size_t>(i)];
  return m;
}

std::vector<double> flat(const Eigen::Matrix3d& m) {
  std::vector<double> v;
  for (int i = 0; i < 9; ++i) v.push_back(m(i / 3, i % 3));
  return v;
}

}  // namespace

json pose_to_json(const Pose& p) {
  return {{"R", flat(p.R)}, {"t", {p.t.x(), p.t.y(), p.t.z()}}};
}

Pose pose_from_json(const json& j) {
  Pose p;
  if (j.contains("xi")) {
    auto x = j.at("xi").get<std::vector<double>>();
    require(x.size() == 6, ErrorCode::Parse, "pose xi must have 6 entries");
    return Pose::from_xi(Vec6(x.data()));
  }
  p.R = mat3(j.at("R"));
  auto t = j.at("t").get<std::vector<double>>();
  require(t.size() == 3, ErrorCode::Parse, "pose t must have 3 entries");
  p.t = Eigen::Vector3d(t[0], t[1], t[2]);
  return p;
}

KeypointScene scene_from_json(const json& j) {
  try {
    KeypointScene s;
    s.id = j.value("id", std::string("scene"));
    s.K = Intrinsics::from_matrix(mat3(j.at("K")));
    auto p3 = j.at("points3d").get<std::vector<std::array<double, 3>>>();
    s.P.resize(static_cast<Eigen::Index>(p3.size()), 3);
    for (size_t i = 0; i < p3.size(); ++i)
      for (int c = 0; c < 3; ++c) s.P(static_cast<Eigen::Index>(i), c) = p3[i][static_cast<size_t>(c)];
    if (!j.contains("pose") && !j.contains("points2d")) fail(ErrorCode::Parse, "scene needs a pose or points2d");
    if (j.contains("points2d")) {
      auto p2 = j.at("points2d").get<std::vector<std::array<double, 2>>>();
      s.V.resize(static_cast<Eigen::Index>(p2.size()), 2);
      for (size_t i = 0; i < p2.size(); ++i)
        for (int c = 0; c < 2; ++c) s.V(static_cast<Eigen::Index>(i), c) = p2[i][static_cast<size_t>(c)];
    }
    if (j.contains("pose")) {
      s.pose = pose_from_json(j.at("pose"));
      if (!j.contains("points2d")) s.V = project(s.K, s.pose, s.P).V;
    } else {
      // no nominal pose: linear estimate as the reference
      require(s.V.rows() == s.P.rows(), ErrorCode::Shape, "points2d and points3d differ in length");
      s.pose = dlt_pose(s.K, s.P, s.V);
    }
    s.validate();
    s.depth = project(s.K, s.pose, s.P).depth;
    return s;
  } catch (const json::exception& e) {
    fail(ErrorCode::Parse, std::string("malformed scene: ") + e.what());
  }
}

json scene_to_json(const KeypointScene& s) {
  json j;
  j["id"] = s.id;
  j["K"] = flat(s.K.matrix());
  j["points3d"] = json::array();
  for (Eigen::Index i = 0; i < s.P.rows(); ++i) j["points3d"].push_back({s.P(i, 0), s.P(i, 1), s.P(i, 2)});
  j["points2d"] = json::array();
  for (Eigen::Index i = 0; i < s.V.rows(); ++i) j["points2d"].push_back({s.V(i, 0), s.V(i, 1)});
  j["pose"] = pose_to_json(s.pose);
  return j;
}

KeypointScene load_scene(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(ErrorCode::Io, "cannot open " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    fail(ErrorCode::Parse, path + ": " + e.what());
  }
  return scene_from_json(j);
}

}  // namespace posecert
