#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <mutex>
#include <random>
#include <thread>

#include "core/error.hpp"
#include "verifier/hull.hpp"

namespace posecert {

namespace {

// Euclidean projection onto the probability simplex.
Eigen::VectorXd project_simplex(const Eigen::VectorXd& y) {
  std::vector<double> s(y.data(), y.data() + y.size());
  std::sort(s.begin(), s.end(), std::greater<>());
  double cum = 0, theta = 0;
  for (size_t i = 0; i < s.size(); ++i) {
    cum += s[i];
    const double t = (cum - 1.0) / static_cast<double>(i + 1);
    if (s[i] - t > 0) theta = t;
  }
  return (y.array() - theta).cwiseMax(0.0);
}

struct Evaluator {
  const ModelGraph& model;
  const ImageConvexHull& hull;
  const OutputPolytope& spec;
  const Branch& branch;

  Eigen::VectorXd alpha(const Eigen::VectorXd& lambda) const {
    Eigen::VectorXd a = branch.alpha_of(lambda).cwiseMax(0.0);
    const double s = a.sum();
    if (s > 1.0) a /= s;
    return a;
  }
  double margin(const Eigen::VectorXd& lambda) const {
    return spec.worst_margin(run_graph(model, hull_point(hull, alpha(lambda))));
  }
};

}  // namespace

std::optional<Eigen::VectorXd> attack(const ModelGraph& model, const ImageConvexHull& hull, const OutputPolytope& spec,
                                      const Branch& branch, const AttackOptions& opt) {
  const int k = static_cast<int>(branch.verts.cols());
  Evaluator ev{model, hull, spec, branch};
  std::vector<Eigen::VectorXd> starts;
  for (int i = 0; i < k; ++i) starts.push_back(Eigen::VectorXd::Unit(k, i));
  starts.push_back(Eigen::VectorXd::Constant(k, 1.0 / k));

  Eigen::VectorXd best;
  double best_m = -std::numeric_limits<double>::infinity();
  for (const auto& l : starts) {
    const double m = ev.margin(l);
    if (m > 0) return ev.alpha(l);
    if (m > best_m) {
      best_m = m;
      best = l;
    }
  }
  if (!opt.pgd || opt.iterations <= 0 || k < 2) return std::nullopt;

  std::mt19937_64 rng(opt.seed);
  std::exponential_distribution<double> expo(1.0);
  Eigen::VectorXd lam = best;
  double cur = best_m, eta = 0.25;
  const double h = 1e-3;
  for (int it = 0; it < opt.iterations; ++it) {
    Eigen::VectorXd grad(k);
    for (int i = 0; i < k; ++i) {
      Eigen::VectorXd p = lam;
      p[i] += h;
      grad[i] = (ev.margin(project_simplex(p)) - cur) / h;
    }
    const double gn = grad.norm();
    Eigen::VectorXd cand;
    if (gn > 0 && std::isfinite(gn)) {
      cand = project_simplex(lam + eta * grad / gn);
    } else {
      // flat region: jump to a random point of the branch
      Eigen::VectorXd r(k);
      for (int i = 0; i < k; ++i) r[i] = expo(rng);
      cand = r / r.sum();
    }
    const double m = ev.margin(cand);
    if (m > 0) return ev.alpha(cand);
    if (m > cur) {
      lam = cand;
      cur = m;
      eta = std::min(eta * 1.5, 1.0);
    } else {
      eta *= 0.5;
      if (eta < 1e-4) {
        Eigen::VectorXd r(k);
        for (int i = 0; i < k; ++i) r[i] = expo(rng);
        lam = r / r.sum();
        cur = ev.margin(lam);
        if (cur > 0) return ev.alpha(lam);
        eta = 0.25;
      }
    }
  }
  return std::nullopt;
}

const char* status_name(VerificationResult::Status s) {
  switch (s) {
    case VerificationResult::Holds:
      return "holds";
    case VerificationResult::Violated:
      return "violated";
    default:
      return "unknown";
  }
}

namespace {

struct Outcome {
  bool violated = false;
  Eigen::VectorXd alpha;
  double margin = 0;
  InclusionResult inc;
  PropagationBounds bounds;
};

template <class F>
void parallel_for(size_t n, int workers, F&& f) {
  const size_t w = std::min<size_t>(n, static_cast<size_t>(std::max(1, workers)));
  if (w <= 1) {
    for (size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  std::vector<std::thread> pool;
  for (size_t t = 0; t < w; ++t)
    pool.emplace_back([&] {
      for (size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          f(i);
        } catch (...) {
          std::lock_guard<std::mutex> lk(err_mu);
          if (!err) err = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace

VerificationResult verify(const ModelGraph& model, const ImageConvexHull& hull, const OutputPolytope& spec,
                          const VerifyOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  VerificationResult res;
  auto finish = [&](VerificationResult::Status s, std::string reason) {
    res.status = s;
    res.reason = std::move(reason);
    res.time_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return res;
  };
  for (const Node& nd : model.nodes)
    require(nd.op != OpKind::Softmax && nd.op != OpKind::Dsnt && nd.op != OpKind::Argmax, ErrorCode::Unsupported,
            std::string("reachability does not support operator '") + op_name(nd.op) + "' at node '" + nd.id +
                "'; verify the pooled proxy model instead");
  require(shape_numel(hull.shape()) == shape_numel(model.input_shape), ErrorCode::Shape,
          "hull images have shape " + shape_str(hull.shape()) + ", model expects " + shape_str(model.input_shape));
  require(shape_numel(model.output_shape()) >= spec.dims(), ErrorCode::Shape,
          "output spec has " + std::to_string(spec.dims()) + " dimensions, model output has " +
              std::to_string(shape_numel(model.output_shape())));
  const int n = hull.n();

  if (n == 0) {
    res.branches = 1;
    const double m = spec.worst_margin(run_graph(model, hull.vertices[0]));
    if (m > 0) {
      res.alpha = Eigen::VectorXd(0);
      res.witness_margin = m;
      return finish(VerificationResult::Violated, "seed image violates the output spec");
    }
    return finish(VerificationResult::Holds, "single image satisfies the output spec");
  }
  if (opt.budget <= 0) return finish(VerificationResult::Unknown, "no refinement budget");

  const CompiledModel cm = compile_model(model);
  const Branch root = root_branch(n);
  if (auto a = attack(model, hull, spec, root, {opt.attack_iterations, opt.seed, true})) {
    res.alpha = *a;
    res.witness_margin = spec.worst_margin(run_graph(model, hull_point(hull, *a)));
    res.branches = 1;
    return finish(VerificationResult::Violated, "counterexample found by attack");
  }

  std::vector<Branch> frontier{root};
  bool unresolved = false;
  while (!frontier.empty()) {
    std::vector<Outcome> out(frontier.size());
    const uint64_t level_seed = opt.seed * 1000003ULL + static_cast<uint64_t>(frontier[0].depth);
    parallel_for(frontier.size(), opt.workers, [&](size_t i) {
      const Branch& b = frontier[i];
      Outcome& o = out[i];
      if (b.depth > 0) {
        if (auto a = attack(model, hull, spec, b, {opt.branch_attack_iterations, level_seed + i, true})) {
          o.violated = true;
          o.alpha = *a;
          o.margin = spec.worst_margin(run_graph(model, hull_point(hull, *a)));
          return;
        }
      }
      const HullStar y = propagate(cm, branch_star(hull, b), &o.bounds, b.relu_lower.empty() ? nullptr : &b.relu_lower,
                                   b.relu_upper.empty() ? nullptr : &b.relu_upper);
      o.inc = check_inclusion(y, spec, b.inherited_upper.empty() ? nullptr : &b.inherited_upper);
    });

    std::vector<Branch> next;
    for (size_t i = 0; i < frontier.size(); ++i) {
      const Branch& b = frontier[i];
      Outcome& o = out[i];
      ++res.branches;
      res.max_depth = std::max(res.max_depth, b.depth);
      if (o.violated) {
        res.alpha = o.alpha;
        res.witness_margin = o.margin;
        return finish(VerificationResult::Violated, "counterexample found in branch at depth " + std::to_string(b.depth));
      }
      if (o.inc.status == InclusionResult::Holds) continue;
      if (res.splits >= opt.budget) {
        unresolved = true;
        continue;
      }
      Branch parent = b;
      parent.inherited_upper = std::move(o.inc.row_upper);
      parent.relu_lower = std::move(o.bounds.relu_lower);
      parent.relu_upper = std::move(o.bounds.relu_upper);
      std::pair<Branch, Branch> kids;
      try {
        kids = split_branch(hull, parent);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::Geometry) throw;
        unresolved = true;
        continue;
      }
      auto& [l, r] = kids;
      ++res.splits;
      next.push_back(std::move(l));
      next.push_back(std::move(r));
    }
    frontier = std::move(next);
  }
  if (unresolved) return finish(VerificationResult::Unknown, "refinement budget exhausted");
  return finish(VerificationResult::Holds, "all branches proven");
}

nlohmann::json verification_to_json(const VerificationResult& r) {
  nlohmann::json j = {{"status", status_name(r.status)}, {"branches", r.branches},  {"splits", r.splits},
                      {"max_depth", r.max_depth},        {"time_ms", r.time_ms},     {"reason", r.reason}};
  if (r.alpha) {
    j["counterexample"] = {{"alpha", std::vector<double>(r.alpha->data(), r.alpha->data() + r.alpha->size())},
                           {"margin", r.witness_margin}};
  } else {
    j["counterexample"] = nullptr;
  }
  return j;
}

}  // namespace posecert
