#include "allocation/allocation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "core/error.hpp"

namespace posecert {

using nlohmann::json;

void AllocationConfig::validate() const {
  require(w1 >= 0 && w2 >= 0 && w1 + w2 > 0, ErrorCode::InvalidArgument, "allocation weights must be >= 0, not both 0");
  require(kappa > 0 && std::isfinite(kappa), ErrorCode::InvalidArgument, "allocation kappa must be positive");
  require(cap >= 0, ErrorCode::InvalidArgument, "allocation cap must be non-negative");
  require(node_limit >= 0, ErrorCode::InvalidArgument, "allocation node_limit must be non-negative");
}

long double allocation_objective(const std::vector<int>& dv, double w1, double w2) {
  if (dv.empty()) return 0;
  long double prod = 1;
  for (int v : dv) prod *= v;
  const int mn = *std::min_element(dv.begin(), dv.end());
  return static_cast<long double>(w1) * prod + static_cast<long double>(w2) * mn;
}

namespace {

constexpr double kSlack = 1e-9;

struct Problem {
  int d = 0, m = 0;
  std::vector<double> A;  // |P|, row-major m x d
  std::vector<double> b;
  double kappa = 1;
  std::vector<int> U;
  double w1 = 1, w2 = 5;

  double a(int i, int j) const { return A[static_cast<size_t>(i) * d + j]; }

  bool feasible(const std::vector<int>& x) const {
    for (int i = 0; i < m; ++i) {
      double s = 0;
      for (int j = 0; j < d; ++j) s += a(i, j) * x[static_cast<size_t>(j)];
      if (kappa * s > b[static_cast<size_t>(i)] + kSlack) return false;
    }
    return true;
  }

  long double obj(const std::vector<int>& x) const { return allocation_objective(x, w1, w2); }
};

Problem make_problem(const TolerancePolytope& poly, const AllocationConfig& cfg) {
  cfg.validate();
  require(poly.P.rows() == poly.b.size() && poly.P.cols() > 0, ErrorCode::Shape, "allocation: malformed polytope");
  require(poly.P.allFinite() && poly.b.allFinite(), ErrorCode::Numeric, "allocation: non-finite polytope");
  for (Eigen::Index i = 0; i < poly.b.size(); ++i)
    require(poly.b[i] >= 0, ErrorCode::Infeasible,
            "allocation: infeasible polytope (b_v row " + std::to_string(i) + " is negative)");
  Problem p;
  p.d = static_cast<int>(poly.P.cols());
  p.m = static_cast<int>(poly.P.rows());
  p.A.resize(static_cast<size_t>(p.m) * p.d);
  for (int i = 0; i < p.m; ++i)
    for (int j = 0; j < p.d; ++j) p.A[static_cast<size_t>(i) * p.d + j] = std::abs(poly.P(i, j));
  p.b.assign(poly.b.data(), poly.b.data() + poly.b.size());
  p.kappa = cfg.kappa;
  p.w1 = cfg.w1;
  p.w2 = cfg.w2;
  p.U.assign(static_cast<size_t>(p.d), cfg.cap);
  if (!cfg.upper.empty()) {
    require(static_cast<int>(cfg.upper.size()) == p.d, ErrorCode::Shape, "allocation: upper bound has wrong length");
    for (int j = 0; j < p.d; ++j) p.U[static_cast<size_t>(j)] = std::min(p.U[static_cast<size_t>(j)], cfg.upper[static_cast<size_t>(j)]);
  }
  return p;
}

// Largest uniform side: closed-form ratio minimum, floored.
int uniform_delta(const Problem& p) {
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < p.m; ++i) {
    double s = 0;
    for (int j = 0; j < p.d; ++j) s += p.a(i, j);
    if (s > 0) best = std::min(best, (p.b[static_cast<size_t>(i)] + kSlack) / (p.kappa * s));
  }
  int ucap = *std::min_element(p.U.begin(), p.U.end());
  if (!std::isfinite(best)) return ucap;
  return static_cast<int>(std::min<double>(std::floor(best), ucap));
}

// Integral ascent: repeatedly raise the smallest coordinate (largest marginal log gain) that stays feasible.
std::vector<int> ascend(const Problem& p, std::vector<int> x) {
  std::vector<double> row(static_cast<size_t>(p.m), 0.0);
  for (int i = 0; i < p.m; ++i)
    for (int j = 0; j < p.d; ++j) row[static_cast<size_t>(i)] += p.a(i, j) * x[static_cast<size_t>(j)];
  std::vector<int> order(static_cast<size_t>(p.d));
  while (true) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int l, int r) { return x[static_cast<size_t>(l)] < x[static_cast<size_t>(r)]; });
    bool moved = false;
    for (int j : order) {
      if (x[static_cast<size_t>(j)] >= p.U[static_cast<size_t>(j)]) continue;
      bool ok = true;
      for (int i = 0; i < p.m && ok; ++i)
        ok = p.kappa * (row[static_cast<size_t>(i)] + p.a(i, j)) <= p.b[static_cast<size_t>(i)] + kSlack;
      if (!ok) continue;
      ++x[static_cast<size_t>(j)];
      for (int i = 0; i < p.m; ++i) row[static_cast<size_t>(i)] += p.a(i, j);
      moved = true;
      break;
    }
    if (!moved) return x;
  }
}

// Exchange moves: lower one coordinate by up to 3, optionally raise another, then re-ascend.
std::vector<int> exchange(const Problem& p, std::vector<int> x) {
  while (true) {
    long double best = p.obj(x);
    std::vector<int> bestx;
    for (int i = 0; i < p.d; ++i)
      for (int di = 1; di <= 3 && x[static_cast<size_t>(i)] - di >= 0; ++di)
        for (int j = -1; j < p.d; ++j) {
          if (j == i) continue;
          std::vector<int> t = x;
          t[static_cast<size_t>(i)] -= di;
          if (j >= 0) {
            if (t[static_cast<size_t>(j)] >= p.U[static_cast<size_t>(j)]) continue;
            ++t[static_cast<size_t>(j)];
            if (!p.feasible(t)) continue;
          }
          t = ascend(p, std::move(t));
          const long double v = p.obj(t);
          if (v > best * (1 + 1e-15L) + 1e-15L) {
            best = v;
            bestx = std::move(t);
          }
        }
    if (bestx.empty()) return x;
    x = std::move(bestx);
  }
}

struct BranchAndBound {
  const Problem& p;
  int64_t limit;
  int64_t nodes = 0;
  std::vector<int> order;  // coordinate visiting order
  std::vector<int> x;
  std::vector<double> row;  // |P| x over assigned coordinates
  std::vector<int> best;
  long double best_val;

  BranchAndBound(const Problem& pr, int64_t lim, std::vector<int> incumbent)
      : p(pr), limit(lim), x(static_cast<size_t>(pr.d), 0), row(static_cast<size_t>(pr.m), 0.0),
        best(std::move(incumbent)) {
    best_val = p.obj(best);
    order.resize(static_cast<size_t>(p.d));
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> colw(static_cast<size_t>(p.d), 0.0);
    for (int j = 0; j < p.d; ++j)
      for (int i = 0; i < p.m; ++i) colw[static_cast<size_t>(j)] += p.a(i, j) / std::max(p.b[static_cast<size_t>(i)], 1e-300);
    std::stable_sort(order.begin(), order.end(),
                     [&](int l, int r) { return colw[static_cast<size_t>(l)] > colw[static_cast<size_t>(r)]; });
  }

  int coord_ub(int j) const {
    double ub = p.U[static_cast<size_t>(j)];
    for (int i = 0; i < p.m; ++i) {
      const double a = p.a(i, j);
      if (a <= 0) continue;
      const double s = (p.b[static_cast<size_t>(i)] + kSlack) / p.kappa - row[static_cast<size_t>(i)];
      ub = std::min(ub, std::floor(s / a));
    }
    return static_cast<int>(std::max(ub, -1.0));
  }

  // Upper bound on log prod over free coordinates: per-row water-filling of the continuous relaxation.
  double free_log_bound(int depth, const std::vector<int>& ub) const {
    double base = 0;
    for (int k = depth; k < p.d; ++k) base += std::log(static_cast<double>(ub[static_cast<size_t>(k)]));
    double bound = base;
    std::vector<std::pair<double, int>> items;
    for (int i = 0; i < p.m; ++i) {
      const double s = (p.b[static_cast<size_t>(i)] + kSlack) / p.kappa - row[static_cast<size_t>(i)];
      items.clear();
      double other = 0;
      for (int k = depth; k < p.d; ++k) {
        const int j = order[static_cast<size_t>(k)];
        const double a = p.a(i, j);
        const double u = ub[static_cast<size_t>(k)];
        if (a > 0)
          items.push_back({a * u, k});
        else
          other += std::log(u);
      }
      if (items.empty()) continue;
      std::sort(items.begin(), items.end());
      double spent = 0, capped_log = 0;
      const size_t n = items.size();
      double rowb = base;
      for (size_t c = 0; c <= n; ++c) {
        const double rest = s - spent;
        const double share = rest / static_cast<double>(n - c);
        if (c == n || items[c].first >= share) {
          if (c == n) {
            rowb = other + capped_log;
          } else {
            double lg = capped_log;
            for (size_t q = c; q < n; ++q) {
              const int j = order[static_cast<size_t>(items[q].second)];
              lg += std::log(share / p.a(i, j));
            }
            rowb = other + lg;
          }
          break;
        }
        spent += items[c].first;
        capped_log += std::log(static_cast<double>(ub[static_cast<size_t>(items[c].second)]));
      }
      bound = std::min(bound, rowb);
    }
    return bound;
  }

  void dfs(int depth, double log_assigned, bool zero_assigned, int min_assigned) {
    if (++nodes > limit) return;
    if (depth == p.d) {
      const long double v = p.obj(x);
      if (v > best_val * (1 + 1e-15L) + 1e-15L && p.feasible(x)) {
        best_val = v;
        best = x;
      }
      return;
    }
    std::vector<int> ub(static_cast<size_t>(p.d), 0);
    int min_ub = std::numeric_limits<int>::max();
    for (int k = depth; k < p.d; ++k) {
      ub[static_cast<size_t>(k)] = coord_ub(order[static_cast<size_t>(k)]);
      if (ub[static_cast<size_t>(k)] < 0) return;
      min_ub = std::min(min_ub, ub[static_cast<size_t>(k)]);
    }
    long double prod_bound = 0;
    if (!zero_assigned && min_ub > 0)
      prod_bound = std::exp(static_cast<long double>(log_assigned + free_log_bound(depth, ub)));
    const long double bound =
        static_cast<long double>(p.w1) * prod_bound + static_cast<long double>(p.w2) * std::min(min_assigned, min_ub);
    if (bound <= best_val * (1 + 1e-12L) + 1e-12L) return;

    const int j = order[static_cast<size_t>(depth)];
    for (int v = ub[static_cast<size_t>(depth)]; v >= 0; --v) {
      x[static_cast<size_t>(j)] = v;
      for (int i = 0; i < p.m; ++i) row[static_cast<size_t>(i)] += p.a(i, j) * v;
      dfs(depth + 1, v > 0 ? log_assigned + std::log(static_cast<double>(v)) : log_assigned, zero_assigned || v == 0,
          std::min(min_assigned, v));
      for (int i = 0; i < p.m; ++i) row[static_cast<size_t>(i)] -= p.a(i, j) * v;
      x[static_cast<size_t>(j)] = 0;
      if (nodes > limit) return;
    }
  }
};

AllocatedThresholds finish(const Problem& p, std::vector<int> x, bool exact, int64_t nodes) {
  AllocatedThresholds r;
  r.Delta = x.empty() ? 0 : *std::min_element(x.begin(), x.end());
  r.objective = p.obj(x);
  r.product = 1;
  for (int v : x) r.product *= v;
  r.dv = std::move(x);
  r.exact = exact;
  r.nodes = nodes;
  return r;
}

}  // namespace

bool rect_in_polytope(const std::vector<int>& dv, const TolerancePolytope& poly, double kappa) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(dv.size()));
  for (size_t i = 0; i < dv.size(); ++i) v[static_cast<Eigen::Index>(i)] = dv[i];
  return rect_in_polytope(v, poly, kappa);
}

bool rect_in_polytope(const Eigen::VectorXd& dv, const TolerancePolytope& poly, double kappa) {
  require(dv.size() == poly.P.cols(), ErrorCode::Shape, "rect_in_polytope: dimension mismatch");
  require((dv.array() >= 0).all(), ErrorCode::InvalidArgument, "rect_in_polytope: half-widths must be >= 0");
  for (Eigen::Index i = 0; i < poly.P.rows(); ++i) {
    double s = 0;
    for (Eigen::Index j = 0; j < poly.P.cols(); ++j) s += std::abs(poly.P(i, j)) * dv[j];
    if (kappa * s > poly.b[i] + kSlack) return false;
  }
  return true;
}

AllocatedThresholds allocate_thresholds(const TolerancePolytope& poly, const AllocationConfig& cfg) {
  const Problem p = make_problem(poly, cfg);
  const int delta = uniform_delta(p);
  std::vector<int> best;
  for (int start : {delta, delta - 1}) {
    if (start < 0) continue;
    std::vector<int> x(static_cast<size_t>(p.d));
    for (int j = 0; j < p.d; ++j) x[static_cast<size_t>(j)] = std::min(start, p.U[static_cast<size_t>(j)]);
    if (!p.feasible(x)) continue;
    x = exchange(p, ascend(p, std::move(x)));
    if (best.empty() || p.obj(x) > p.obj(best)) best = std::move(x);
  }
  if (best.empty()) best.assign(static_cast<size_t>(p.d), 0);
  require(p.feasible(best), ErrorCode::Infeasible, "allocation: origin is infeasible");

  BranchAndBound bb(p, cfg.node_limit, best);
  if (cfg.node_limit > 0) bb.dfs(0, 0.0, false, std::numeric_limits<int>::max());
  const bool exact = cfg.node_limit > 0 && bb.nodes <= cfg.node_limit;
  AllocatedThresholds r = finish(p, bb.best, exact, bb.nodes);
  require(rect_in_polytope(r.dv, poly, cfg.kappa), ErrorCode::Internal, "allocation produced an infeasible rectangle");
  return r;
}

std::vector<AllocatedThresholds> allocate_sweep(const TolerancePolytope& poly, const AllocationConfig& cfg,
                                                const std::vector<double>& kappas) {
  std::vector<size_t> idx(kappas.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](size_t l, size_t r) { return kappas[l] < kappas[r]; });
  std::vector<AllocatedThresholds> out(kappas.size());
  AllocationConfig c = cfg;
  for (size_t i : idx) {
    c.kappa = kappas[i];
    out[i] = allocate_thresholds(poly, c);
    c.upper = out[i].dv;
  }
  return out;
}

AllocatedThresholds brute_force_allocate(const TolerancePolytope& poly, const AllocationConfig& cfg, int cap) {
  require(poly.P.cols() <= 6, ErrorCode::InvalidArgument, "brute_force_allocate: dimension too large (max 6)");
  require(cap >= 0 && cap <= 12, ErrorCode::InvalidArgument, "brute_force_allocate: cap must be in 0..12");
  AllocationConfig c = cfg;
  c.cap = cap;
  c.upper.clear();
  const Problem p = make_problem(poly, c);
  std::vector<int> x(static_cast<size_t>(p.d), 0), best;
  long double best_val = -1;
  while (true) {
    if (p.feasible(x)) {
      const long double v = p.obj(x);
      if (v > best_val) {
        best_val = v;
        best = x;
      }
    }
    int j = 0;
    while (j < p.d && x[static_cast<size_t>(j)] == cap) x[static_cast<size_t>(j++)] = 0;
    if (j == p.d) break;
    ++x[static_cast<size_t>(j)];
  }
  require(!best.empty(), ErrorCode::Infeasible, "brute_force_allocate: empty feasible region");
  return finish(p, best, true, 0);
}

json thresholds_to_json(const AllocatedThresholds& a) {
  return {{"deltas", a.dv},
          {"Delta", a.Delta},
          {"objective", static_cast<double>(a.objective)},
          {"product", static_cast<double>(a.product)},
          {"exact", a.exact},
          {"nodes", a.nodes}};
}

}  // namespace posecert
