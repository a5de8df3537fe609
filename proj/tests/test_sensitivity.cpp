#include <doctest.h>

#include <cmath>
#include <random>

#include "geometry/geometry.hpp"
#include "harness/synth.hpp"
#include "helpers.hpp"
#include "sensitivity/sensitivity.hpp"

using namespace posecert;

namespace {

// Fourth-order central difference of the scalar objective in xi.
Vec6 fd_grad_xi(const KeypointScene& s, const Vec6& xi) {
  Vec6 g;
  for (int i = 0; i < 6; ++i) {
    const double h = 1e-4 * (1.0 + std::abs(xi[i]));
    auto f = [&](double d) {
      Vec6 x = xi;
      x[i] += d;
      return pnp_objective(s.K, s.P, s.V, x);
    };
    g[i] = (8 * (f(h) - f(-h)) - (f(2 * h) - f(-2 * h))) / (12 * h);
  }
  return g;
}

Eigen::VectorXd fd_grad_v(const KeypointScene& s, const Vec6& xi) {
  Eigen::VectorXd g(2 * s.size());
  for (Eigen::Index j = 0; j < g.size(); ++j) {
    const double h = 1e-3;
    auto f = [&](double d) {
      Points2 W = s.V;
      W(j / 2, j % 2) += d;
      return pnp_objective(s.K, s.P, W, xi);
    };
    g[j] = (8 * (f(h) - f(-h)) - (f(2 * h) - f(-2 * h))) / (12 * h);
  }
  return g;
}

KeypointScene noisy_scene(std::mt19937_64& rng) {
  KeypointScene s = random_scene(rng);
  std::normal_distribution<double> N(0, 0.5);
  for (Eigen::Index i = 0; i < s.V.size(); ++i) s.V.data()[i] += N(rng);
  return s;
}

}  // namespace

TEST_CASE("first-order optimality at a noiseless optimum") {
  std::mt19937_64 rng(31);
  const KeypointScene s = random_scene(rng);
  const PnpResult r = solve_pnp(s.K, s.P, s.V, s.pose);
  const SensitivityMatrices m = nls_derivatives(s, r.pose.xi());
  // objective scale: residuals are depth-weighted pixels
  CHECK(m.G_xi.cwiseAbs().maxCoeff() < 1e-8 * std::max(1.0, m.G_xixi.cwiseAbs().maxCoeff()));
  const Eigen::SelfAdjointEigenSolver<Mat6> es(m.G_xixi);
  CHECK(es.eigenvalues().minCoeff() > -1e-6);
  CHECK(m.hessian_asymmetry < 1e-5);
}

TEST_CASE("objective gradients match finite differences") {
  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 10; ++trial) {
    const KeypointScene s = noisy_scene(rng);
    Vec6 xi = s.pose.xi();
    xi[0] += 0.01;
    xi[4] += 0.3;
    const Vec6 g = objective_grad_xi(s.K, s.P, s.V, xi), gf = fd_grad_xi(s, xi);
    for (int i = 0; i < 6; ++i) CHECK(std::abs(g[i] - gf[i]) <= 1e-5 * std::abs(gf[i]));
    const Eigen::VectorXd gv = objective_grad_v(s.K, s.P, s.V, xi), gvf = fd_grad_v(s, xi);
    for (Eigen::Index j = 0; j < gv.size(); ++j) CHECK(std::abs(gv[j] - gvf[j]) <= 1e-5 * std::abs(gvf[j]) + 1e-9);
  }
}

TEST_CASE("mixed second derivatives are symmetric in evaluation order") {
  std::mt19937_64 rng(33);
  const KeypointScene s = noisy_scene(rng);
  const PnpResult r = solve_pnp(s.K, s.P, s.V, s.pose);
  const SensitivityMatrices m = nls_derivatives(s, r.pose.xi());
  const Eigen::MatrixXd D = cross_derivative_v_then_xi(s, r.pose.xi());
  CHECK((D - m.G_xiv).cwiseAbs().maxCoeff() <= 1e-4 * m.G_xiv.cwiseAbs().maxCoeff());
}

TEST_CASE("pose jacobian predicts the re-solved pose to second order") {
  std::mt19937_64 rng(34);
  std::uniform_real_distribution<double> U(-1, 1);
  for (int trial = 0; trial < 5; ++trial) {
    const KeypointScene s = random_scene(rng);
    const Vec6 xi0 = solve_pnp(s.K, s.P, s.V, s.pose).pose.xi();
    const Eigen::MatrixXd Mt = pose_jacobian(nls_derivatives(s, xi0));
    CHECK((Mt * Eigen::VectorXd::Zero(Mt.cols())).norm() == 0.0);

    Eigen::VectorXd d(Mt.cols());
    for (Eigen::Index j = 0; j < d.size(); ++j) d[j] = U(rng);
    d /= d.cwiseAbs().maxCoeff();
    std::vector<double> xs, ys;
    for (double scale : {0.5, 0.25, 0.125}) {
      KeypointScene p = s;
      for (Eigen::Index j = 0; j < d.size(); ++j) p.V(j / 2, j % 2) += scale * d[j];
      const Vec6 xi = solve_pnp(p.K, p.P, p.V, s.pose).pose.xi();
      xs.push_back(std::log(scale));
      ys.push_back(std::log(((xi - xi0) - Mt * (scale * d)).norm()));
    }
    const double slope = (ys[2] - ys[0]) / (xs[2] - xs[0]);
    CHECK(slope == doctest::Approx(2.0).epsilon(0.1));
  }
}

TEST_CASE("keypoint polytope for identity substitution and membership agreement") {
  const BudgetPolytope B = budget_to_polytope({10, 10, 10}, {4, 4, 20});
  Eigen::MatrixXd Mt = Eigen::MatrixXd::Zero(6, 8);
  Mt.leftCols(6).setIdentity();
  const TolerancePolytope T = keypoint_polytope(Mt, B);
  CHECK((T.P.leftCols(6) - Eigen::MatrixXd::Identity(6, 6)).norm() == 0.0);
  CHECK(T.P.rightCols(2).norm() == 0.0);
  CHECK((T.b - B.b.head(6)).norm() == 0.0);

  std::mt19937_64 rng(35);
  const KeypointScene s = random_scene(rng);
  const Eigen::MatrixXd M = pose_jacobian(nls_derivatives(s, s.pose.xi()));
  const TolerancePolytope tp = keypoint_polytope(M, B);
  std::normal_distribution<double> N(0, 1);
  for (int i = 0; i < 2000; ++i) {
    Eigen::VectorXd dv(M.cols());
    for (Eigen::Index j = 0; j < dv.size(); ++j) dv[j] = N(rng);
    dv *= std::exp(4 * N(rng)) / dv.norm();
    const Vec6 dxi = M * dv;
    CHECK(tp.contains(dv, 0.0) == B.contains(dxi, 0.0));
  }
}

TEST_CASE("duplicated keypoints make the sensitivity system singular") {
  std::mt19937_64 rng(36);
  KeypointScene s = random_scene(rng);
  Points3 P(4, 3);
  for (int i = 0; i < 4; ++i) P.row(i) = s.P.row(0);
  s.P = P;
  s.V = project(s.K, s.pose, P).V;
  CHECK_THROWS_AS(pose_jacobian(nls_derivatives(s, s.pose.xi())), Error);
}

TEST_CASE("polytope json round-trip") {
  std::mt19937_64 rng(37);
  const KeypointScene s = random_scene(rng);
  const TolerancePolytope tp =
      keypoint_polytope(pose_jacobian(nls_derivatives(s, s.pose.xi())), budget_to_polytope({1, 1, 1}, {1, 1, 1}), "x");
  const TolerancePolytope back = polytope_from_json(polytope_to_json(tp));
  CHECK((back.P - tp.P).norm() == 0.0);
  CHECK((back.b - tp.b).norm() == 0.0);
  CHECK(back.scene_id == "x");
}
