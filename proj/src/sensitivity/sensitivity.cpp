#include "sensitivity/sensitivity.hpp"

#include <cmath>
#include <iostream>

#include "core/error.hpp"

namespace posecert {

using nlohmann::json;

namespace {

void check_depths(const Points3& P, const Vec6& xi) {
  const Pose p = Pose::from_xi(xi);
  for (Eigen::Index k = 0; k < P.rows(); ++k)
    require((p.R * P.row(k).transpose() + p.t).z() > 0, ErrorCode::Geometry,
            "depth sign flip inside the finite-difference stencil");
}

Points2 perturb_v(const Points2& V, Eigen::Index j, double h) {
  Points2 W = V;
  W(j / 2, j % 2) += h;
  return W;
}

}  // namespace

Vec6 objective_grad_xi(const Intrinsics& K, const Points3& P, const Points2& V, const Vec6& xi) {
  return 2.0 * pnp_jacobian(K, P, V, xi).transpose() * pnp_residuals(K, P, V, xi);
}

Eigen::VectorXd objective_grad_v(const Intrinsics& K, const Points3& P, const Points2& V, const Vec6& xi) {
  const Pose p = Pose::from_xi(xi);
  const Eigen::VectorXd r = pnp_residuals(K, P, V, xi);
  Eigen::VectorXd g(2 * P.rows());
  for (Eigen::Index k = 0; k < P.rows(); ++k) {
    const double z = (p.R * P.row(k).transpose() + p.t).z();
    g[2 * k] = -2.0 * r[2 * k] * z;
    g[2 * k + 1] = -2.0 * r[2 * k + 1] * z;
  }
  return g;
}

SensitivityMatrices nls_derivatives(const KeypointScene& scene, const Vec6& xi, const DerivativeOptions& opt) {
  const auto& K = scene.K;
  const auto& P = scene.P;
  const auto& V = scene.V;
  require(P.rows() == V.rows() && P.rows() >= 1, ErrorCode::Shape, "sensitivity: malformed scene");
  check_depths(P, xi);
  const Eigen::Index n2 = 2 * P.rows();

  SensitivityMatrices m;
  m.G_xi = objective_grad_xi(K, P, V, xi);
  m.G_v = objective_grad_v(K, P, V, xi);
  require(m.G_xi.allFinite() && m.G_v.allFinite(), ErrorCode::Numeric, "sensitivity: non-finite gradient");
  if (m.G_xi.cwiseAbs().maxCoeff() > opt.grad_warn)
    std::cerr << "warning: sensitivity evaluated away from the PnP optimum (|G_xi|inf = "
              << m.G_xi.cwiseAbs().maxCoeff() << ")\n";

  Mat6 H;
  for (int i = 0; i < 6; ++i) {
    const double h = opt.rel_step * (1.0 + std::abs(xi[i]));
    Vec6 a = xi, b = xi;
    a[i] += h;
    b[i] -= h;
    check_depths(P, a);
    check_depths(P, b);
    H.col(i) = (objective_grad_xi(K, P, V, a) - objective_grad_xi(K, P, V, b)) / (2 * h);
  }
  const double hmax = H.cwiseAbs().maxCoeff();
  m.hessian_asymmetry = hmax > 0 ? (H - H.transpose()).cwiseAbs().maxCoeff() / hmax : 0.0;
  m.G_xixi = 0.5 * (H + H.transpose());

  m.G_xiv.resize(6, n2);
  for (Eigen::Index j = 0; j < n2; ++j) {
    const double h = opt.rel_step * (1.0 + std::abs(V(j / 2, j % 2)));
    m.G_xiv.col(j) =
        (objective_grad_xi(K, P, perturb_v(V, j, h), xi) - objective_grad_xi(K, P, perturb_v(V, j, -h), xi)) /
        (2 * h);
  }
  require(m.G_xixi.allFinite() && m.G_xiv.allFinite(), ErrorCode::Numeric,
          "sensitivity: non-finite second derivative");

  m.M_xi.setZero();
  m.M_xi.block<1, 6>(0, 0) = m.G_xi.transpose();
  m.M_xi(0, 6) = -1.0;
  m.M_xi.block<6, 6>(1, 0) = m.G_xixi;
  m.M_vxi.resize(7, n2);
  m.M_vxi.row(0) = -m.G_v.transpose();
  m.M_vxi.bottomRows(6) = -m.G_xiv;

  Eigen::JacobiSVD<Eigen::Matrix<double, 7, 7>> svd(m.M_xi);
  const auto& s = svd.singularValues();
  m.cond = s[6] > 0 ? s[0] / s[6] : std::numeric_limits<double>::infinity();
  if (m.cond < opt.max_cond) {
    const Eigen::MatrixXd X = m.M_xi.fullPivLu().solve(m.M_vxi);
    m.dz = X.row(6);
  }
  return m;
}

Eigen::MatrixXd cross_derivative_v_then_xi(const KeypointScene& scene, const Vec6& xi, double rel_step) {
  Eigen::MatrixXd D(6, 2 * scene.P.rows());
  for (int i = 0; i < 6; ++i) {
    const double h = rel_step * (1.0 + std::abs(xi[i]));
    Vec6 a = xi, b = xi;
    a[i] += h;
    b[i] -= h;
    D.row(i) = ((objective_grad_v(scene.K, scene.P, scene.V, a) - objective_grad_v(scene.K, scene.P, scene.V, b)) /
                (2 * h))
                   .transpose();
  }
  return D;
}

Eigen::MatrixXd pose_jacobian(const SensitivityMatrices& m, const DerivativeOptions& opt) {
  require(std::isfinite(m.cond) && m.cond < opt.max_cond, ErrorCode::Numeric,
          "sensitivity matrix M_xi is singular or ill-conditioned (cond " + std::to_string(m.cond) + ")");
  const Eigen::MatrixXd X = m.M_xi.fullPivLu().solve(m.M_vxi);
  return X.topRows(6);
}

bool TolerancePolytope::contains(const Eigen::VectorXd& dv, double slack) const {
  require(dv.size() == P.cols(), ErrorCode::Shape, "polytope membership: dimension mismatch");
  const Eigen::VectorXd y = P * dv;
  if (two_sided) return ((y.cwiseAbs() - b).array() <= slack).all();
  return ((y - b).array() <= slack).all();
}

TolerancePolytope keypoint_polytope_signed(const Eigen::MatrixXd& Mtilde, const BudgetPolytope& budget,
                                           const std::string& scene_id) {
  require(Mtilde.rows() == 6 && budget.P.cols() == 6, ErrorCode::Shape, "keypoint_polytope: M~ must have 6 rows");
  TolerancePolytope t;
  t.P = budget.P * Mtilde;
  t.b = budget.b;
  t.scene_id = scene_id;
  t.two_sided = false;
  return t;
}

TolerancePolytope keypoint_polytope(const Eigen::MatrixXd& Mtilde, const BudgetPolytope& budget,
                                    const std::string& scene_id) {
  const TolerancePolytope s = keypoint_polytope_signed(Mtilde, budget, scene_id);
  // Fold each row with its exact negation into one two-sided row.
  const Eigen::Index m = s.P.rows();
  std::vector<bool> used(static_cast<size_t>(m), false);
  std::vector<Eigen::Index> keep;
  bool all_paired = true;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (used[static_cast<size_t>(i)]) continue;
    bool paired = false;
    for (Eigen::Index j = i + 1; j < m && !paired; ++j)
      if (!used[static_cast<size_t>(j)] && s.b[i] == s.b[j] && (s.P.row(i) + s.P.row(j)).isZero(0.0)) {
        used[static_cast<size_t>(j)] = true;
        paired = true;
      }
    all_paired = all_paired && paired;
    keep.push_back(i);
  }
  require(all_paired, ErrorCode::InvalidArgument,
          "keypoint_polytope: budget polytope is not symmetric; use the signed form");
  TolerancePolytope t;
  t.P.resize(static_cast<Eigen::Index>(keep.size()), s.P.cols());
  t.b.resize(static_cast<Eigen::Index>(keep.size()));
  for (size_t r = 0; r < keep.size(); ++r) {
    t.P.row(static_cast<Eigen::Index>(r)) = s.P.row(keep[r]);
    t.b[static_cast<Eigen::Index>(r)] = s.b[keep[r]];
  }
  t.scene_id = scene_id;
  t.two_sided = true;
  return t;
}

json polytope_to_json(const TolerancePolytope& t) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < t.P.rows(); ++i) {
    std::vector<double> r(static_cast<size_t>(t.P.cols()));
    for (Eigen::Index j = 0; j < t.P.cols(); ++j) r[static_cast<size_t>(j)] = t.P(i, j);
    rows.push_back(r);
  }
  return {{"P_v", rows},
          {"b_v", std::vector<double>(t.b.data(), t.b.data() + t.b.size())},
          {"scene_id", t.scene_id},
          {"two_sided", t.two_sided}};
}

TolerancePolytope polytope_from_json(const json& j) {
  try {
    TolerancePolytope t;
    auto rows = j.at("P_v").get<std::vector<std::vector<double>>>();
    auto b = j.at("b_v").get<std::vector<double>>();
    require(!rows.empty() && rows.size() == b.size(), ErrorCode::Parse, "polytope: P_v/b_v row count mismatch");
    const size_t d = rows[0].size();
    t.P.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
    for (size_t i = 0; i < rows.size(); ++i) {
      require(rows[i].size() == d, ErrorCode::Parse, "polytope: ragged P_v");
      for (size_t k = 0; k < d; ++k) t.P(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
    }
    t.b = Eigen::Map<Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
    t.scene_id = j.value("scene_id", std::string());
    t.two_sided = j.value("two_sided", true);
    return t;
  } catch (const json::exception& e) {
    fail(ErrorCode::Parse, std::string("malformed polytope: ") + e.what());
  }
}

}  // namespace posecert
