#include "verifier/hull.hpp"

#include <algorithm>
#include <cmath>

#include "core/error.hpp"

namespace posecert {

namespace {

Eigen::VectorXd to_vec(const Tensor& t) {
  Eigen::VectorXd v(t.numel());
  for (int64_t i = 0; i < t.numel(); ++i) v[i] = t[i];
  return v;
}

Eigen::VectorXd row_abs_sum(const SpMat& E) {
  Eigen::VectorXd s = Eigen::VectorXd::Zero(E.rows());
  for (int64_t k = 0; k < E.outerSize(); ++k)
    for (SpMat::InnerIterator it(E, k); it; ++it) s[it.row()] += std::abs(it.value());
  return s;
}

// Appends one generator column per entry of (rows, values), preserving existing columns.
SpMat append_columns(const SpMat& E, const std::vector<int64_t>& rows, const std::vector<double>& vals) {
  SpMat R(E.rows(), E.cols() + static_cast<int64_t>(rows.size()));
  R.reserve(E.nonZeros() + static_cast<int64_t>(rows.size()));
  for (int64_t k = 0; k < E.outerSize(); ++k) {
    R.startVec(k);
    for (SpMat::InnerIterator it(E, k); it; ++it) R.insertBack(it.row(), k) = it.value();
  }
  for (size_t j = 0; j < rows.size(); ++j) {
    const int64_t col = E.cols() + static_cast<int64_t>(j);
    R.startVec(col);
    R.insertBack(rows[j], col) = vals[j];
  }
  R.finalize();
  return R;
}

}  // namespace

Tensor Preprocess::apply(const Tensor& t) const {
  if (scale == 1.0 && shift == 0.0) return t;
  Tensor r = t;
  for (auto& x : r.data) x = static_cast<float>(x * scale + shift);
  return r;
}

ImageConvexHull make_hull(const Tensor& seed, const std::vector<Tensor>& perturbed, const Preprocess& pre) {
  require(seed.numel() > 0, ErrorCode::InvalidArgument, "hull: empty seed image");
  require(seed.all_finite(), ErrorCode::Numeric, "hull: seed image has non-finite values");
  ImageConvexHull h;
  h.preproc = pre;
  h.vertices.push_back(pre.apply(seed));
  for (size_t i = 0; i < perturbed.size(); ++i) {
    require(perturbed[i].shape == seed.shape, ErrorCode::Shape,
            "hull: perturbed image " + std::to_string(i) + " has shape " + shape_str(perturbed[i].shape) +
                ", seed has " + shape_str(seed.shape));
    require(perturbed[i].all_finite(), ErrorCode::Numeric, "hull: perturbed image " + std::to_string(i) + " is non-finite");
    Tensor v = pre.apply(perturbed[i]);
    if (std::none_of(h.vertices.begin(), h.vertices.end(), [&](const Tensor& u) { return u == v; }))
      h.vertices.push_back(std::move(v));
  }
  return h;
}

Tensor hull_point(const ImageConvexHull& hull, const Eigen::VectorXd& alpha) {
  require(alpha.size() == hull.n(), ErrorCode::Shape, "hull_point: alpha has wrong length");
  require(alpha.minCoeff() >= -1e-12 && alpha.sum() <= 1 + 1e-12, ErrorCode::InvalidArgument,
          "hull_point: alpha outside the simplex");
  const Tensor& x0 = hull.vertices[0];
  Tensor r(x0.shape);
  for (int64_t p = 0; p < x0.numel(); ++p) {
    double v = x0[p];
    for (int i = 0; i < hull.n(); ++i) v += alpha[i] * (static_cast<double>(hull.vertices[static_cast<size_t>(i + 1)][p]) - x0[p]);
    r[p] = static_cast<float>(v);
  }
  return r;
}

Eigen::VectorXd HullStar::upper() const {
  Eigen::VectorXd u = c + row_abs_sum(E);
  if (G.cols() > 0) u += G.cwiseMax(0.0).rowwise().maxCoeff();
  return u;
}

Eigen::VectorXd HullStar::lower() const {
  Eigen::VectorXd l = c - row_abs_sum(E);
  if (G.cols() > 0) l += G.cwiseMin(0.0).rowwise().minCoeff();
  return l;
}

Branch root_branch(int n) {
  require(n >= 0, ErrorCode::InvalidArgument, "root_branch: negative dimension");
  Branch b;
  b.verts = Eigen::MatrixXd::Zero(n, n + 1);
  for (int i = 0; i < n; ++i) b.verts(i, i + 1) = 1.0;
  return b;
}

HullStar branch_star(const ImageConvexHull& hull, const Branch& b) {
  const int n = hull.n();
  require(b.verts.rows() == n && b.verts.cols() == n + 1, ErrorCode::Shape, "branch does not match hull dimension");
  const Eigen::VectorXd x0 = to_vec(hull.vertices[0]);
  Eigen::MatrixXd D(x0.size(), n);
  for (int i = 0; i < n; ++i) D.col(i) = to_vec(hull.vertices[static_cast<size_t>(i + 1)]) - x0;
  HullStar s;
  s.shape = hull.shape();
  const Eigen::VectorXd v0 = b.verts.col(0);
  s.c = x0 + D * v0;
  s.G = D * (b.verts.rightCols(n).colwise() - v0);
  s.E = SpMat(x0.size(), 0);
  return s;
}

HullStar propagate(const CompiledModel& cm, HullStar input, PropagationBounds* bounds,
                   const std::vector<Eigen::VectorXd>* prior_lower, const std::vector<Eigen::VectorXd>* prior_upper) {
  const ModelGraph& g = *cm.graph;
  require(shape_numel(input.shape) == shape_numel(g.input_shape), ErrorCode::Shape,
          "reachability: input set has shape " + shape_str(input.shape) + ", model expects " + shape_str(g.input_shape));
  const size_t N = g.nodes.size();
  std::vector<int> uses(N, 0);
  for (const auto& n : g.nodes)
    for (int j : n.in) ++uses[static_cast<size_t>(j)];
  for (int o : g.outputs) ++uses[static_cast<size_t>(o)];

  std::vector<HullStar> val(N);
  if (bounds) {
    bounds->relu_lower.assign(cm.relu_nodes.size(), {});
    bounds->relu_upper.assign(cm.relu_nodes.size(), {});
    bounds->unstable = 0;
  }
  int64_t m = input.E.cols();
  const Eigen::Index gen = input.G.cols();
  size_t relu_idx = 0;
  auto release = [&](int j) {
    if (--uses[static_cast<size_t>(j)] == 0) val[static_cast<size_t>(j)] = HullStar{};
  };

  for (size_t i = 0; i < N; ++i) {
    const Node& n = g.nodes[i];
    const CompiledNode& cn = cm.nodes[i];
    HullStar out;
    if (n.op == OpKind::Input) {
      out = std::move(input);
    } else if (cn.identity) {
      out = val[static_cast<size_t>(n.in[0])];
    } else if (n.op == OpKind::Relu) {
      out = val[static_cast<size_t>(n.in[0])];
      Eigen::VectorXd l = out.lower(), u = out.upper();
      if (prior_lower && relu_idx < prior_lower->size() && (*prior_lower)[relu_idx].size() == l.size())
        l = l.cwiseMax((*prior_lower)[relu_idx]);
      if (prior_upper && relu_idx < prior_upper->size() && (*prior_upper)[relu_idx].size() == u.size())
        u = u.cwiseMin((*prior_upper)[relu_idx]);
      l = l.cwiseMin(u);
      Eigen::VectorXd lam(l.size());
      std::vector<int64_t> rows;
      std::vector<double> vals;
      for (Eigen::Index k = 0; k < l.size(); ++k) {
        if (l[k] >= 0) {
          lam[k] = 1.0;
        } else if (u[k] <= 0) {
          lam[k] = 0.0;
          out.c[k] = 0.0;
        } else {
          const double a = u[k] / (u[k] - l[k]), mu = -a * l[k] / 2;
          lam[k] = a;
          out.c[k] = a * out.c[k] + mu;
          rows.push_back(k);
          vals.push_back(mu);
        }
      }
      for (Eigen::Index k = 0; k < l.size(); ++k)
        if (lam[k] == 0.0) out.c[k] = 0.0;
      out.G = lam.asDiagonal() * out.G;
      SpMat scaled = lam.asDiagonal() * out.E;
      scaled.prune(0.0);
      out.E = append_columns(scaled, rows, vals);
      m = out.E.cols();
      if (bounds) {
        bounds->relu_lower[relu_idx] = l;
        bounds->relu_upper[relu_idx] = u;
        bounds->unstable += rows.size();
      }
      ++relu_idx;
    } else {
      const int64_t rows = shape_numel(n.shape);
      out.c = cn.bias;
      out.G = Eigen::MatrixXd::Zero(rows, gen);
      out.E = SpMat(rows, m);
      for (size_t t = 0; t < n.in.size(); ++t) {
        HullStar& src = val[static_cast<size_t>(n.in[t])];
        if (src.E.cols() < m) src.E.conservativeResize(src.E.rows(), m);
        out.c += cn.W[t] * src.c;
        out.G += cn.W[t] * src.G;
        out.E += SpMat(cn.W[t] * src.E);
      }
    }
    out.shape = n.shape;
    for (int j : n.in) release(j);
    val[i] = std::move(out);
  }
  HullStar r = val[static_cast<size_t>(g.outputs.at(0))];
  if (r.E.cols() < m) r.E.conservativeResize(r.E.rows(), m);
  return r;
}

HullStar propagate(const ModelGraph& g, const HullStar& input) { return propagate(compile_model(g), input); }

InclusionResult check_inclusion(const HullStar& set, const OutputPolytope& spec, const std::vector<double>* inherited_upper) {
  const int64_t dims = spec.dims();
  require(set.size() >= dims, ErrorCode::Shape,
          "output spec needs " + std::to_string(dims) + " outputs, reachable set has " + std::to_string(set.size()));
  const Eigen::SparseMatrix<double, Eigen::RowMajor, int64_t> Er = set.E;
  using RIt = Eigen::SparseMatrix<double, Eigen::RowMajor, int64_t>::InnerIterator;
  const Eigen::VectorXd eabs = row_abs_sum(set.E);
  const bool has_g = set.G.cols() > 0;

  // Bounds of y_j - y_v over the star.
  auto diff_bounds = [&](int64_t j, int64_t v) {
    double lo = set.c[j] - set.c[v], hi = lo;
    if (has_g) {
      const Eigen::VectorXd d = set.G.row(j) - set.G.row(v);
      hi += std::max(0.0, d.maxCoeff());
      lo += std::min(0.0, d.minCoeff());
    }
    double e = 0;
    RIt a(Er, j), b(Er, v);
    while (a || b) {
      if (a && (!b || a.index() < b.index())) {
        e += std::abs(a.value());
        ++a;
      } else if (b && (!a || b.index() < a.index())) {
        e += std::abs(b.value());
        ++b;
      } else {
        e += std::abs(a.value() - b.value());
        ++a;
        ++b;
      }
    }
    return std::pair{lo - e, hi + e};
  };
  auto single_bounds = [&](int64_t j) {
    double lo = set.c[j] - eabs[j], hi = set.c[j] + eabs[j];
    if (has_g) {
      hi += std::max(0.0, set.G.row(j).maxCoeff());
      lo += std::min(0.0, set.G.row(j).minCoeff());
    }
    return std::pair{lo, hi};
  };

  InclusionResult res;
  res.row_upper.assign(static_cast<size_t>(dims), 0.0);
  res.row_lower.assign(static_cast<size_t>(dims), 0.0);
  bool all_hold = true;
  res.worst_upper_margin = -std::numeric_limits<double>::infinity();
  for (const auto& blk : spec.blocks)
    for (int64_t r = 0; r < blk.len; ++r) {
      const int64_t row = blk.offset + r;
      std::pair<double, double> lh;
      double b;
      if (blk.skip || r == blk.vbar) {
        lh = single_bounds(row);
        b = spec.M;
      } else {
        lh = diff_bounds(row, blk.offset + blk.vbar);
        b = 0.0;
      }
      if (inherited_upper && static_cast<size_t>(row) < inherited_upper->size())
        lh.second = std::min(lh.second, (*inherited_upper)[static_cast<size_t>(row)]);
      res.row_lower[static_cast<size_t>(row)] = lh.first;
      res.row_upper[static_cast<size_t>(row)] = lh.second;
      const double margin = lh.second - b;
      if (margin > res.worst_upper_margin) {
        res.worst_upper_margin = margin;
        if (res.status != InclusionResult::CandidateViolation) res.row = row;
      }
      if (margin > 0) all_hold = false;
      if (lh.first > b && res.status != InclusionResult::CandidateViolation) {
        res.status = InclusionResult::CandidateViolation;
        res.row = row;
      }
    }
  if (res.status != InclusionResult::CandidateViolation) res.status = all_hold ? InclusionResult::Holds : InclusionResult::Unknown;
  return res;
}

std::pair<Branch, Branch> split_branch(const ImageConvexHull& hull, const Branch& b) {
  const int n = hull.n();
  require(n >= 1 && b.verts.rows() == n, ErrorCode::InvalidArgument, "split: branch has no free dimension");
  const Eigen::VectorXd x0 = to_vec(hull.vertices[0]);
  Eigen::MatrixXd D(x0.size(), n);
  for (int i = 0; i < n; ++i) D.col(i) = to_vec(hull.vertices[static_cast<size_t>(i + 1)]) - x0;
  const Eigen::MatrixXd gram = D.transpose() * D;
  int ba = -1, bb = -1;
  double best = 0;
  for (int a = 0; a <= n; ++a)
    for (int c = a + 1; c <= n; ++c) {
      const Eigen::VectorXd d = b.verts.col(a) - b.verts.col(c);
      const double len = d.dot(gram * d);
      if (len > best) {
        best = len;
        ba = a;
        bb = c;
      }
    }
  require(ba >= 0, ErrorCode::Geometry, "split: branch is degenerate in image space");
  const Eigen::VectorXd mid = 0.5 * (b.verts.col(ba) + b.verts.col(bb));
  Branch l = b, r = b;
  l.verts.col(ba) = mid;
  r.verts.col(bb) = mid;
  l.depth = r.depth = b.depth + 1;
  return {l, r};
}

}  // namespace posecert
