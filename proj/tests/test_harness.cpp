#include <doctest.h>

#include <cmath>
#include <random>

#include "allocation/allocation.hpp"
#include "harness/certify.hpp"
#include "harness/montecarlo.hpp"
#include "harness/perturb.hpp"
#include "harness/stats.hpp"
#include "harness/synth.hpp"
#include "helpers.hpp"
#include "sensitivity/sensitivity.hpp"
#include "toy.hpp"

using namespace posecert;
using nlohmann::json;

namespace {

Tensor gray(float v) { return Tensor({1, 2, 2}, v); }

PerturbationConfig brightness(double b) {
  PerturbationConfig p;
  p.amount = b;
  return p;
}

// Direct moment formula for a discrete distribution over 1..n.
double oracle_skew(const std::vector<double>& p) {
  double m = 0, s = 0;
  for (size_t i = 0; i < p.size(); ++i) m += (i + 1.0) * p[i], s += p[i];
  m /= s;
  double m2 = 0, m3 = 0;
  for (size_t i = 0; i < p.size(); ++i) {
    const double d = i + 1.0 - m;
    m2 += p[i] / s * d * d;
    m3 += p[i] / s * d * d * d;
  }
  return m3 / std::pow(m2, 1.5);
}

std::vector<int> allocate_for(const KeypointScene& s, const BudgetPolytope& B, double kappa) {
  AllocationConfig c;
  c.kappa = kappa;
  c.cap = 256;
  return allocate_thresholds(keypoint_polytope(pose_jacobian(nls_derivatives(s, s.pose.xi())), B), c).dv;
}

}  // namespace

TEST_CASE("perturbation examples") {
  const Tensor img({1, 1, 3}, {254, 100, 0});
  CHECK(perturb(img, brightness(0)) == img);
  CHECK(perturb(img, brightness(2)).data == std::vector<float>{255, 102, 2});
  CHECK(perturb(img, brightness(-2)).data == std::vector<float>{252, 98, 0});
  PerturbationConfig c;
  c.kind = PerturbationConfig::Contrast;
  c.amount = 0.01;
  CHECK(perturb(img, c)[1] == 101.0f);
  c.amount = 0;
  CHECK(perturb(img, c) == img);
  CHECK(testing::error_code_of([&] { perturb(Tensor({1, 1, 1}, {0.5f}), c); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("block and patch perturbations stay in range") {
  Tensor img({3, 8, 8}, 50.0f);
  PerturbationConfig b;
  b.kind = PerturbationConfig::Block;
  b.row = 2;
  b.col = 4;
  b.seed = 9;
  const Tensor out = perturb(img, b);
  int changed = 0;
  for (int64_t c = 0; c < 3; ++c)
    for (int r = 0; r < 8; ++r)
      for (int q = 0; q < 8; ++q) {
        const float v = out.at(c, r, q);
        CHECK(v >= 0.0f);
        CHECK(v <= 255.0f);
        const bool in_block = r >= 2 && r < 5 && q >= 4 && q < 7;
        if (!in_block) CHECK(v == 50.0f);
        changed += v != 50.0f;
      }
  CHECK(changed > 0);
  CHECK(perturb(img, b) == out);
  b.col = 6;
  CHECK(testing::error_code_of([&] { perturb(img, b); }) == ErrorCode::InvalidArgument);

  PerturbationConfig p;
  p.kind = PerturbationConfig::Patch;
  p.patch = Tensor({3, 2, 2}, 300.0f);
  p.row = 6;
  p.col = 6;
  const Tensor q = perturb(img, p);
  CHECK(q.at(1, 7, 7) == 255.0f);
  CHECK(q.at(1, 5, 7) == 50.0f);
  p.row = 7;
  CHECK(testing::error_code_of([&] { perturb(img, p); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("perturbation json round-trip") {
  PerturbationConfig b;
  b.kind = PerturbationConfig::Block;
  b.size = 4;
  b.row = 1;
  b.seed = 3;
  const PerturbationConfig back = perturbation_from_json(perturbation_to_json(b));
  CHECK(back.kind == PerturbationConfig::Block);
  CHECK(back.size == 4);
  CHECK(back.row == 1);
  CHECK(back.seed == 3);
  CHECK(perturbation_from_json(json{{"kind", "brightness"}, {"b", -3}}).amount == -3);
}

TEST_CASE("brightness hull of a point image") {
  const Tensor img = gray(7);
  const ImageConvexHull h = make_hull(img, {perturb(img, brightness(0))});
  CHECK(h.n() == 0);
}

TEST_CASE("distribution statistics examples") {
  const AxisStats tri = distribution_stats({1, 2, 3, 2, 1});
  CHECK(tri.skewness == doctest::Approx(0.0));
  CHECK(tri.mean_minus_median == doctest::Approx(0.0));
  CHECK(tri.mean_minus_mode == doctest::Approx(0.0));

  std::vector<double> two(10, 0.0);
  two[0] = 0.7;
  two[9] = 0.3;
  const AxisStats s = distribution_stats(two);
  CHECK(s.skewness > 0);
  CHECK(s.skewness == doctest::Approx(oracle_skew(two)));
  CHECK(s.mean == doctest::Approx(0.7 + 3.0));
  CHECK(s.mean_minus_mode == doctest::Approx(2.7));

  for (int n : {8, 20, 101}) {
    const AxisStats u = distribution_stats(std::vector<double>(static_cast<size_t>(n), 1.0));
    CHECK(std::abs(u.iqr - n / 2.0) <= 1.0);
    CHECK(u.skewness == doctest::Approx(0.0).epsilon(1e-9));
  }
  CHECK(testing::error_code_of([] { distribution_stats({0, 0}); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("symmetric heatmaps have zero asymmetry statistics") {
  std::mt19937_64 rng(71);
  for (int t = 0; t < 50; ++t) {
    const int n = std::uniform_int_distribution<int>(9, 30)(rng);
    const int pr = std::uniform_int_distribution<int>(0, n - 1)(rng), pc = std::uniform_int_distribution<int>(0, n - 1)(rng);
    const SymmetryStats s = heatmap_symmetry_stats(softmax(testing::random_symmetric_logits(rng, n, n, pr, pc)));
    for (const AxisStats& a : {s.row, s.col}) {
      CHECK(std::abs(a.skewness) < 1e-9);
      CHECK(std::abs(a.mean_minus_median) < 1e-9);
      CHECK(std::abs(a.mean_minus_mode) < 1e-9);
    }
  }
  const json j = symmetry_stats_to_json(heatmap_symmetry_stats(testing::symmetric_heatmap(9, 9, 4, 4, 1, 1)));
  CHECK(j.contains("row"));
  CHECK(j.at("col").contains("iqr"));
}

TEST_CASE("verified rate recomputed from a log") {
  const std::vector<VerifiedRateEntry> log = {
      {"a", true, "holds"}, {"b", true, "unknown"}, {"c", false, "holds"}, {"d", true, "holds"}, {"e", true, "violated"}};
  int num = 0, den = 0;
  for (const auto& e : log)
    if (e.seed_in_budget) {
      ++den;
      num += e.status == "holds";
    }
  const VerifiedRate r = verified_rate(log);
  CHECK(r.denominator == den);
  CHECK(r.numerator == num);
  CHECK(r.rate == doctest::Approx(0.5));
  CHECK(verified_rate({}).rate == 0.0);
}

TEST_CASE("monte carlo trivial cases") {
  std::mt19937_64 rng(72);
  const KeypointScene s = random_scene(rng);
  const BudgetPolytope B = budget_to_polytope({10, 10, 10}, {4, 4, 20});
  MonteCarloOptions o;
  o.samples = 2000;
  const MonteCarloResult zero = probabilistic_soundness(s, std::vector<int>(46, 0), B, o);
  CHECK(zero.ratio == 1.0);
  CHECK(zero.samples == 2000);

  // a zero budget is rejected by budget_to_polytope, so build the degenerate box by hand
  BudgetPolytope none = B;
  none.eps_r_deg.setZero();
  none.eps_t.setZero();
  none.b.setZero();
  const MonteCarloResult c = probabilistic_completeness(s, std::vector<int>(46, 1), none, o);
  CHECK(c.ratio == 1.0);
}

TEST_CASE("monte carlo is reproducible and independent of worker count") {
  std::mt19937_64 rng(73);
  const KeypointScene s = random_scene(rng);
  const BudgetPolytope B = budget_to_polytope({10, 10, 10}, {4, 4, 20});
  const std::vector<int> dv = allocate_for(s, B, 1.0);
  MonteCarloOptions a, b;
  a.samples = b.samples = 5000;
  b.workers = 4;
  const MonteCarloResult s1 = probabilistic_soundness(s, dv, B, a), s4 = probabilistic_soundness(s, dv, B, b);
  CHECK(s1.successes == s4.successes);
  CHECK(s1.failures == s4.failures);
  const MonteCarloResult c1 = probabilistic_completeness(s, dv, B, a), c4 = probabilistic_completeness(s, dv, B, b);
  CHECK(c1.successes == c4.successes);
  CHECK(c1.excluded == c4.excluded);
  CHECK(monte_carlo_to_json(s1).at("ratio").get<double>() == s1.ratio);
}

TEST_CASE("monte carlo trends in kappa") {
  std::mt19937_64 rng(74);
  const BudgetPolytope B = budget_to_polytope({10, 10, 10}, {4, 4, 20});
  MonteCarloOptions o;
  o.samples = 4000;
  for (int t = 0; t < 3; ++t) {
    const KeypointScene s = random_scene(rng);
    const std::vector<int> d1 = allocate_for(s, B, 1.0), d2 = allocate_for(s, B, 2.0);
    const double s1 = probabilistic_soundness(s, d1, B, o).ratio, s2 = probabilistic_soundness(s, d2, B, o).ratio;
    const double c1 = probabilistic_completeness(s, d1, B, o).ratio, c2 = probabilistic_completeness(s, d2, B, o).ratio;
    CHECK(s2 >= s1);
    CHECK(c2 <= c1);
    CHECK(c1 < 1e-2);
  }
}

TEST_CASE("pooling plan skips keypoints off the heatmap") {
  Points2 V(3, 2);
  V << 5, 5, 70, 3, 10, 0.2;
  const PoolingPlan plan = plan_pooling(V, {1, 1, 2, 2, 0, 0}, 64, 64);
  CHECK(plan.skipped == std::set<int>{1, 2});
  CHECK(plan.params[0].k_h == 3);
  CHECK(plan.params[1] == PoolingParams{});
  CHECK(testing::error_code_of([&] { plan_pooling(V, {1, 1}, 64, 64); }) == ErrorCode::Shape);
}

TEST_CASE("toy certification on a point hull holds") {
  CertifyConfig cfg = testing::toy_config(3, 0);
  cfg.alpha = 2.0;
  const CertifyReport r = certify(cfg);
  CHECK(r.verification.status == VerificationResult::Holds);
  CHECK(r.seed_in_budget);
  std::string why;
  CHECK(validate_report(r.json, &why));
  CHECK(why.empty());
  CHECK(r.json.at("schema") == 1);
  CHECK(r.json.at("stats").at("verified_rate").at("rate") == 1.0);
  CHECK(r.json.at("stats").at("heatmap_symmetry").size() == 6);
}

TEST_CASE("vanishing tolerance gives zero thresholds") {
  CertifyConfig cfg = testing::toy_config(4, 2);
  cfg.eps_r_deg *= 1e-6;
  cfg.eps_t *= 1e-6;
  cfg.budget = 10;
  const CertifyReport r = certify(cfg);
  for (int d : r.thresholds.dv) CHECK(d == 0);
  for (const PoolingParams& p : r.pooling) {
    CHECK(p.s_h == 1);
    CHECK(p.s_v == 1);
  }
  CHECK(validate_report(r.json));
}

TEST_CASE("toy certification over a brightness hull") {
  const CertifyReport r = certify(testing::toy_config(5, 2));
  CHECK(r.json.at("hull").at("vertices") == 3);
  CHECK(r.verification.status != VerificationResult::Violated);
  std::string why;
  CHECK(validate_report(r.json, &why));
  const std::string text = report_text(r.json);
  CHECK(text.find("status: ") == 0);
}

TEST_CASE("stage errors carry the stage name") {
  CertifyConfig cfg = testing::toy_config(6, 0);
  Points3 P = cfg.scene.P.topRows(5);
  Points2 V = cfg.scene.V.topRows(5);
  cfg.scene.P = P;
  cfg.scene.V = V;
  const std::string msg = testing::error_message_of([&] { certify(cfg); });
  CHECK(msg.find("[seed]") == 0);
  cfg = testing::toy_config(6, 0);
  cfg.alpha = -1;
  CHECK(testing::error_code_of([&] { certify(cfg); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("report validation rejects malformed reports") {
  const CertifyReport r = certify(testing::toy_config(7, 0));
  json bad = r.json;
  bad["schema"] = 2;
  std::string why;
  CHECK_FALSE(validate_report(bad, &why));
  CHECK(why.find("schema") != std::string::npos);
  bad = r.json;
  bad["status"] = "violated";
  CHECK_FALSE(validate_report(bad));
  bad = r.json;
  bad.erase("allocation");
  CHECK_FALSE(validate_report(bad));
  CHECK(validate_report(json{{"schema", 1}, {"command", "verify"}, {"status", "holds"}}));
}
