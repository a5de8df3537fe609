#include "harness/montecarlo.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>
#include <thread>

#include "core/error.hpp"

namespace posecert {

namespace {

constexpr int64_t kChunk = 2048;

struct Tally {
  int64_t ok = 0, fail = 0, solver = 0, excluded = 0;
};

// Each chunk owns an RNG stream derived from (seed, chunk), so results do not depend on workers.
template <class F>
MonteCarloResult run_chunks(const MonteCarloOptions& opt, F&& trial) {
  require(opt.samples >= 0, ErrorCode::InvalidArgument, "Monte Carlo sample count must be non-negative");
  const int64_t chunks = (opt.samples + kChunk - 1) / kChunk;
  std::vector<Tally> tallies(static_cast<size_t>(chunks));
  std::atomic<int64_t> next{0};
  auto work = [&] {
    for (int64_t c; (c = next.fetch_add(1)) < chunks;) {
      std::seed_seq ss{static_cast<uint32_t>(opt.seed), static_cast<uint32_t>(opt.seed >> 32), static_cast<uint32_t>(c)};
      std::mt19937_64 rng(ss);
      Tally& t = tallies[static_cast<size_t>(c)];
      const int64_t n = std::min(kChunk, opt.samples - c * kChunk);
      for (int64_t i = 0; i < n; ++i) trial(rng, t);
    }
  };
  const int w = static_cast<int>(std::clamp<int64_t>(opt.workers, 1, std::max<int64_t>(chunks, 1)));
  std::vector<std::thread> pool;
  for (int i = 1; i < w; ++i) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  MonteCarloResult r;
  r.seed = opt.seed;
  for (const auto& t : tallies) {
    r.successes += t.ok;
    r.failures += t.fail;
    r.excluded += t.excluded;
    r.solver_failures += t.solver;
  }
  r.samples = r.successes + r.failures;
  r.ratio = r.samples > 0 ? static_cast<double>(r.successes) / r.samples : 1.0;
  return r;
}

void check_dims(const KeypointScene& scene, const std::vector<int>& dv) {
  scene.validate();
  require(static_cast<int>(dv.size()) == 2 * scene.size(), ErrorCode::Shape,
          "thresholds have " + std::to_string(dv.size()) + " entries, scene needs " + std::to_string(2 * scene.size()));
  for (int v : dv) require(v >= 0, ErrorCode::InvalidArgument, "thresholds must be non-negative");
}

}  // namespace

MonteCarloResult probabilistic_soundness(const KeypointScene& scene, const std::vector<int>& dv,
                                         const BudgetPolytope& budget, const MonteCarloOptions& opt) {
  check_dims(scene, dv);
  const int K = scene.size();
  return run_chunks(opt, [&](std::mt19937_64& rng, Tally& t) {
    Points2 V = scene.V;
    for (int k = 0; k < K; ++k)
      for (int a = 0; a < 2; ++a) {
        const double sign = (rng() >> 63) ? 1.0 : -1.0;
        V(k, a) += sign * dv[static_cast<size_t>(2 * k + a)];
      }
    try {
      const PnpResult r = solve_pnp(scene.K, scene.P, V, scene.pose);
      const PoseError e = pose_error(r.pose, scene.pose);
      if (e.within(budget.eps_r_deg, budget.eps_t))
        ++t.ok;
      else
        ++t.fail;
    } catch (const Error&) {
      ++t.fail;
      ++t.solver;
    }
  });
}

MonteCarloResult probabilistic_completeness(const KeypointScene& scene, const std::vector<int>& dv,
                                            const BudgetPolytope& budget, const MonteCarloOptions& opt) {
  check_dims(scene, dv);
  const int K = scene.size();
  const double deg = std::acos(-1.0) / 180.0;
  Vec6 half;
  half << budget.eps_r_deg * deg, budget.eps_t;
  const Vec6 xi0 = scene.pose.xi();
  return run_chunks(opt, [&](std::mt19937_64& rng, Tally& t) {
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    Vec6 d;
    for (int i = 0; i < 6; ++i) d[i] = half[i] * U(rng);
    Projection pr;
    try {
      pr = project(scene.K, Pose::from_xi(xi0 + d), scene.P);
    } catch (const Error&) {
      ++t.excluded;
      return;
    }
    bool inside = true;
    for (int k = 0; k < K && inside; ++k)
      for (int a = 0; a < 2 && inside; ++a)
        inside = std::abs(pr.V(k, a) - scene.V(k, a)) <= dv[static_cast<size_t>(2 * k + a)];
    if (inside)
      ++t.ok;
    else
      ++t.fail;
  });
}

nlohmann::json monte_carlo_to_json(const MonteCarloResult& r) {
  return {{"ratio", r.ratio},         {"samples", r.samples},   {"successes", r.successes},
          {"failures", r.failures},   {"solver_failures", r.solver_failures},
          {"excluded", r.excluded}, {"seed", r.seed}};
}

}  // namespace posecert
