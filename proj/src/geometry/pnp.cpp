#include <cmath>

#include "core/error.hpp"
#include "geometry/geometry.hpp"

namespace posecert {

namespace {

void check_inputs(const Points3& P, const Points2& V) {
  require(P.rows() == V.rows(), ErrorCode::Shape, "PnP: 3D and 2D point counts differ");
  require(P.rows() >= 4, ErrorCode::InvalidArgument,
          "PnP underdetermined: need at least 4 points, got " + std::to_string(P.rows()));
}

bool depths_positive(const Points3& P, const Vec6& xi) {
  const Pose p = Pose::from_xi(xi);
  for (Eigen::Index k = 0; k < P.rows(); ++k)
    if ((p.R * P.row(k).transpose() + p.t).z() <= 0) return false;
  return true;
}

}  // namespace

Eigen::VectorXd pnp_residuals(const Intrinsics& K, const Points3& P, const Points2& V, const Vec6& xi) {
  const Pose p = Pose::from_xi(xi);
  Eigen::VectorXd r(2 * P.rows());
  for (Eigen::Index k = 0; k < P.rows(); ++k) {
    const Eigen::Vector3d q = p.R * P.row(k).transpose() + p.t;
    r[2 * k] = K.fx * q.x() + (K.cx - V(k, 0)) * q.z();
    r[2 * k + 1] = K.fy * q.y() + (K.cy - V(k, 1)) * q.z();
  }
  return r;
}

double pnp_objective(const Intrinsics& K, const Points3& P, const Points2& V, const Vec6& xi) {
  return pnp_residuals(K, P, V, xi).squaredNorm();
}

Eigen::MatrixXd pnp_jacobian(const Intrinsics& K, const Points3& P, const Points2& V, const Vec6& xi) {
  const auto dR = rotation_euler_derivatives(xi.head<3>());
  Eigen::MatrixXd J(2 * P.rows(), 6);
  for (Eigen::Index k = 0; k < P.rows(); ++k) {
    const Eigen::Vector3d pk = P.row(k).transpose();
    Eigen::Matrix<double, 3, 6> dq;
    for (int a = 0; a < 3; ++a) dq.col(a) = dR[static_cast<size_t>(a)] * pk;
    dq.rightCols<3>().setIdentity();
    const Eigen::RowVector3d gu(K.fx, 0, K.cx - V(k, 0)), gv(0, K.fy, K.cy - V(k, 1));
    J.row(2 * k) = gu * dq;
    J.row(2 * k + 1) = gv * dq;
  }
  return J;
}

PnpResult solve_pnp(const Intrinsics& K, const Points3& P, const Points2& V, const Pose& init, const PnpOptions& opt) {
  check_inputs(P, V);
  K.validate();
  Vec6 xi = init.xi();
  require(depths_positive(P, xi), ErrorCode::Geometry, "PnP: initial pose puts points behind the camera");

  {
    // Column-scaled conditioning test separates genuine degeneracy from unit mismatch.
    Eigen::MatrixXd J = pnp_jacobian(K, P, V, xi);
    for (int c = 0; c < 6; ++c) {
      const double n = J.col(c).norm();
      if (n > 0) J.col(c) /= n;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(J);
    const auto& s = svd.singularValues();
    require(s[5] > 1e-8 * s[0], ErrorCode::Geometry,
            "PnP: rank-deficient Jacobian (degenerate point configuration)");
  }

  PnpResult res;
  double mu = opt.initial_damping;
  Eigen::VectorXd r = pnp_residuals(K, P, V, xi);
  double f = r.squaredNorm();
  res.accepted_objectives.push_back(f);
  bool converged = false;
  int it = 0;
  for (; it < opt.max_iterations; ++it) {
    const Eigen::MatrixXd J = pnp_jacobian(K, P, V, xi);
    const Vec6 g = 2.0 * J.transpose() * r;
    res.grad_inf = g.cwiseAbs().maxCoeff();
    if (res.grad_inf < opt.grad_tol) {
      converged = true;
      break;
    }
    const Mat6 A = J.transpose() * J;
    Mat6 D = A.diagonal().asDiagonal();
    const double floor = 1e-12 * A.diagonal().maxCoeff();
    for (int i = 0; i < 6; ++i) D(i, i) = std::max(D(i, i), floor);
    const Vec6 step = (A + mu * D).ldlt().solve(-J.transpose() * r);
    if (!step.allFinite()) fail(ErrorCode::Numeric, "PnP: non-finite LM step");
    const Vec6 cand = xi + step;
    double fc = std::numeric_limits<double>::infinity();
    Eigen::VectorXd rc;
    if (depths_positive(P, cand)) {
      rc = pnp_residuals(K, P, V, cand);
      fc = rc.squaredNorm();
    }
    if (fc < f) {
      xi = cand;
      r = rc;
      f = fc;
      res.accepted_objectives.push_back(f);
      mu = std::max(mu / 10.0, 1e-12);
    } else {
      mu *= 10.0;
    }
    if (step.cwiseAbs().maxCoeff() < opt.step_tol) {
      converged = true;
      break;
    }
    if (mu > 1e20) {
      // No descent direction left at machine precision.
      converged = true;
      break;
    }
  }
  require(converged, ErrorCode::Numeric,
          "PnP diverged: no convergence within " + std::to_string(opt.max_iterations) + " iterations");
  res.iterations = it;
  res.pose = Pose::from_xi(xi);
  res.objective = f;
  return res;
}

Pose dlt_pose(const Intrinsics& K, const Points3& P, const Points2& V) {
  check_inputs(P, V);
  require(P.rows() >= 6, ErrorCode::InvalidArgument, "DLT initialization needs at least 6 points");
  const Eigen::Matrix3d Kinv = K.matrix().inverse();
  Eigen::MatrixXd A(2 * P.rows(), 12);
  for (Eigen::Index k = 0; k < P.rows(); ++k) {
    const Eigen::Vector3d x = Kinv * Eigen::Vector3d(V(k, 0), V(k, 1), 1.0);
    Eigen::Matrix<double, 1, 4> X;
    X << P(k, 0), P(k, 1), P(k, 2), 1.0;
    A.row(2 * k) << X, Eigen::Matrix<double, 1, 4>::Zero(), -x.x() * X;
    A.row(2 * k + 1) << Eigen::Matrix<double, 1, 4>::Zero(), X, -x.y() * X;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd h = svd.matrixV().col(11);
  Eigen::Matrix<double, 3, 4> M;
  for (int i = 0; i < 3; ++i) M.row(i) = h.segment<4>(4 * i).transpose();
  Eigen::JacobiSVD<Eigen::Matrix3d> rs(M.leftCols<3>(), Eigen::ComputeFullU | Eigen::ComputeFullV);
  double scale = rs.singularValues().mean();
  Eigen::Matrix3d R = rs.matrixU() * rs.matrixV().transpose();
  if (R.determinant() < 0) {
    R = -R;
    scale = -scale;
  }
  Pose p;
  p.R = R;
  p.t = M.col(3) / scale;
  require((p.R * P.colwise().mean().transpose() + p.t).z() > 0, ErrorCode::Geometry,
          "DLT initialization placed points behind the camera");
  return p;
}

}  // namespace posecert
