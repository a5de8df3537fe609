#include <doctest.h>

#include <random>

#include "helpers.hpp"
#include "nets.hpp"
#include "verifier/hull.hpp"

using namespace posecert;
using nlohmann::json;

namespace {

Tensor vec2(float a, float b) { return Tensor({1, 1, 2}, {a, b}); }

// Two pixels in, two scores out: y0 = relu(x0 + margin), y1 = relu(x1). The output spec asks for y1 <= y0.
ModelGraph two_layer(float margin) {
  std::vector<NodeSpec> specs = {
      {"x", "input", json::object(), {}, {}},
      {"f", "flatten", json::object(), {}, {"x"}},
      {"l1", "linear", {{"out_features", 2}}, {1, 0, 0, 1, margin, 0}, {"f"}},
      {"r", "relu", json::object(), {}, {"l1"}},
      {"l2", "linear", {{"out_features", 2}}, {1, 0, 0, 1, 0, 0}, {"r"}},
  };
  return build_graph({1, 1, 2}, specs, {"l2"});
}

OutputPolytope first_wins(int64_t len = 2) {
  OutputPolytope s;
  s.blocks.push_back({0, 0, len, 0, false});
  return s;
}

// Seed (0,0) with vertices (1,0) and (0,1).
ImageConvexHull unit_triangle() { return make_hull(vec2(0, 0), {vec2(1, 0), vec2(0, 1)}); }

HullStar point_star(std::vector<double> y) {
  HullStar s;
  s.shape = {static_cast<int64_t>(y.size())};
  s.c = Eigen::Map<Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  s.G = Eigen::MatrixXd::Zero(s.c.size(), 1);
  s.E = SpMat(s.c.size(), 0);
  return s;
}

bool valid_alpha(const Eigen::VectorXd& a) { return a.minCoeff() >= -1e-12 && a.sum() <= 1 + 1e-9; }

}  // namespace

TEST_CASE("hull points are convex combinations of the vertices") {
  const ImageConvexHull h = make_hull(vec2(1, 2), {vec2(3, 2), vec2(1, 6)}, {0.5, 1.0});
  CHECK(h.n() == 2);
  CHECK(h.vertices[0].data == std::vector<float>{1.5f, 2.0f});
  const Tensor p = hull_point(h, Eigen::Vector2d(0.5, 0.25));
  CHECK(p[0] == doctest::Approx(1.5 + 0.5 * 1.0));
  CHECK(p[1] == doctest::Approx(2.0 + 0.25 * 2.0));
  CHECK(testing::error_code_of([] { make_hull(vec2(0, 0), {Tensor({3}, 0.0f)}); }) == ErrorCode::Shape);
}

TEST_CASE("affine networks are propagated exactly") {
  std::mt19937_64 rng(61);
  std::vector<NodeSpec> specs = {
      {"x", "input", json::object(), {}, {}},
      {"c", "conv2d", {{"out_channels", 2}, {"kernel", 2}, {"stride", 1}}, testing::random_vec(rng, 2 * 1 * 4 + 2), {"x"}},
      {"b", "batchnorm", {{"eps", 1e-3}}, {1.5f, 0.5f, 0.1f, -0.2f, 0.3f, 0.0f, 2.0f, 1.0f}, {"c"}},
      {"f", "flatten", json::object(), {}, {"b"}},
      {"l", "linear", {{"out_features", 3}}, testing::random_vec(rng, 3 * 8 + 3), {"f"}},
  };
  const ModelGraph g = build_graph({1, 3, 3}, specs, {"l"});
  std::vector<Tensor> rest;
  for (int i = 0; i < 3; ++i) rest.emplace_back(Shape{1, 3, 3}, testing::random_vec(rng, 9));
  const ImageConvexHull h = make_hull(Tensor({1, 3, 3}, testing::random_vec(rng, 9)), rest);
  const HullStar y = propagate(g, branch_star(h, root_branch(3)));
  CHECK(y.E.nonZeros() == 0);
  for (int t = 0; t < 20; ++t) {
    const Eigen::VectorXd a = testing::sample_simplex(rng, 3);
    const Tensor out = run_graph(g, hull_point(h, a));
    const Eigen::VectorXd pred = y.c + y.G * a;
    for (Eigen::Index i = 0; i < pred.size(); ++i) CHECK(std::abs(pred[i] - out[i]) < 1e-5);
  }
}

TEST_CASE("stably active relu leaves the set unchanged") {
  std::vector<NodeSpec> lin = {
      {"x", "input", json::object(), {}, {}},
      {"f", "flatten", json::object(), {}, {"x"}},
      {"l", "linear", {{"out_features", 2}}, {1, 2, 3, 1, 10, 10}, {"f"}},
  };
  auto with_relu = lin;
  with_relu.push_back({"r", "relu", json::object(), {}, {"l"}});
  const ModelGraph a = build_graph({1, 1, 2}, lin, {"l"}), b = build_graph({1, 1, 2}, with_relu, {"r"});
  const HullStar in = branch_star(unit_triangle(), root_branch(2));
  const HullStar ya = propagate(a, in), yb = propagate(b, in);
  CHECK((ya.c - yb.c).norm() == 0.0);
  CHECK((ya.G - yb.G).norm() == 0.0);
  CHECK(yb.E.nonZeros() == 0);
}

TEST_CASE("sampled hull points stay inside the propagated bounds") {
  std::mt19937_64 rng(62);
  for (int c = 0; c < 30; ++c) {
    const testing::ProxyCase pc = testing::random_proxy_case(rng);
    const CompiledModel cm = compile_model(pc.model);
    const HullStar y = propagate(cm, branch_star(pc.hull, root_branch(pc.hull.n())));
    const Eigen::VectorXd lo = y.lower(), hi = y.upper();
    int outside = 0;
    for (int s = 0; s < 300; ++s) {
      const Tensor out = run_graph(pc.model, hull_point(pc.hull, testing::sample_simplex(rng, pc.hull.n())));
      for (Eigen::Index i = 0; i < lo.size(); ++i)
        if (out[i] < lo[i] - 1e-5 || out[i] > hi[i] + 1e-5) ++outside;
    }
    CHECK(outside == 0);
  }
}

TEST_CASE("inclusion check on single points") {
  const OutputPolytope s = first_wins(3);
  CHECK(check_inclusion(point_star({1, 0, 0}), s).status == InclusionResult::Holds);
  const InclusionResult bad = check_inclusion(point_star({0, 0, 1}), s);
  CHECK(bad.status == InclusionResult::CandidateViolation);
  CHECK(bad.row == 2);
}

TEST_CASE("inherited row bounds only tighten") {
  HullStar s = point_star({0, 0});
  s.G(1, 0) = 2.0;  // y1 ranges over [0, 2]
  const OutputPolytope spec = first_wins();
  const InclusionResult loose = check_inclusion(s, spec);
  CHECK(loose.status == InclusionResult::Unknown);
  CHECK(loose.row_upper[1] == 2.0);
  const std::vector<double> tight = {0.0, 0.0};
  const InclusionResult t = check_inclusion(s, spec, &tight);
  CHECK(t.status == InclusionResult::Holds);
}

TEST_CASE("split examples") {
  const ImageConvexHull seg = make_hull(vec2(0, 0), {vec2(1, 1)});
  auto [l, r] = split_branch(seg, root_branch(1));
  CHECK(l.verts(0, 0) == 0.5);
  CHECK(l.verts(0, 1) == 1.0);
  CHECK(r.verts(0, 0) == 0.0);
  CHECK(r.verts(0, 1) == 0.5);
  CHECK(l.depth == 1);

  // the e1-e2 edge is longest in image space
  const ImageConvexHull tri = make_hull(vec2(0, 0), {vec2(10, 0), vec2(0, 1)});
  auto [a, b] = split_branch(tri, root_branch(2));
  CHECK(a.verts.col(1).isApprox(Eigen::Vector2d(0.5, 0.5)));
  CHECK(a.verts.col(0).isZero());
  CHECK(b.verts.col(2).isApprox(Eigen::Vector2d(0.5, 0.5)));

  // seed-side edge wins once the two perturbations point the same way
  const ImageConvexHull same = make_hull(vec2(0, 0), {vec2(10, 0), vec2(9, 0)});
  auto [c, d] = split_branch(same, root_branch(2));
  CHECK(c.verts.col(0).isApprox(Eigen::Vector2d(0.5, 0)));
  CHECK(d.verts.col(1).isApprox(Eigen::Vector2d(0.5, 0)));

  Branch collapsed = root_branch(1);
  collapsed.verts << 0.3, 0.3;
  CHECK(testing::error_code_of([&] { split_branch(seg, collapsed); }) == ErrorCode::Geometry);
  // duplicate vertices are dropped when the hull is built
  CHECK(make_hull(vec2(0, 0), {vec2(0, 0), vec2(1, 0)}).n() == 1);
}

TEST_CASE("child branches sample inside their own and the parent bounds") {
  std::mt19937_64 rng(63);
  std::exponential_distribution<double> E(1.0);
  for (int c = 0; c < 20; ++c) {
    const testing::ProxyCase pc = testing::random_proxy_case(rng);
    const int n = pc.hull.n();
    const CompiledModel cm = compile_model(pc.model);
    Branch root = root_branch(n);
    PropagationBounds pb;
    const HullStar y = propagate(cm, branch_star(pc.hull, root), &pb);
    root.relu_lower = pb.relu_lower;
    root.relu_upper = pb.relu_upper;
    auto [l, r] = split_branch(pc.hull, root);
    for (const Branch& kid : {l, r}) {
      PropagationBounds kb;
      const HullStar yk = propagate(cm, branch_star(pc.hull, kid), &kb, &kid.relu_lower, &kid.relu_upper);
      // relu input bounds are intersected with the parent's
      for (size_t i = 0; i < kb.relu_upper.size(); ++i) {
        CHECK((kb.relu_upper[i] - pb.relu_upper[i]).maxCoeff() <= 1e-9);
        CHECK((pb.relu_lower[i] - kb.relu_lower[i]).maxCoeff() <= 1e-9);
      }
      const Eigen::VectorXd plo = y.lower(), phi = y.upper(), klo = yk.lower(), khi = yk.upper();
      int outside = 0;
      for (int s = 0; s < 1000; ++s) {
        Eigen::VectorXd lambda(n + 1);
        for (int i = 0; i <= n; ++i) lambda[i] = E(rng);
        const Tensor out = run_graph(pc.model, hull_point(pc.hull, kid.alpha_of(lambda / lambda.sum())));
        for (Eigen::Index i = 0; i < plo.size(); ++i) {
          const double v = out[i];
          if (v < plo[i] - 1e-5 || v > phi[i] + 1e-5 || v < klo[i] - 1e-5 || v > khi[i] + 1e-5) ++outside;
        }
      }
      CHECK(outside == 0);
    }
  }
}

TEST_CASE("the two children cover the parent simplex") {
  const ImageConvexHull tri = make_hull(vec2(0, 0), {vec2(3, 1), vec2(1, 2)});
  const Branch root = root_branch(2);
  auto [l, r] = split_branch(tri, root);
  // every alpha of the parent lies in one of the children: solve for barycentric weights
  std::mt19937_64 rng(66);
  auto inside = [](const Branch& b, const Eigen::Vector2d& a) {
    Eigen::Matrix3d M;
    M.topRows(2) = b.verts;
    M.row(2).setOnes();
    const Eigen::Vector3d lam = M.fullPivLu().solve(Eigen::Vector3d(a[0], a[1], 1.0));
    return lam.minCoeff() >= -1e-12;
  };
  for (int s = 0; s < 1000; ++s) {
    const Eigen::VectorXd a = testing::sample_simplex(rng, 2);
    CHECK((inside(l, a) || inside(r, a)));
  }
}

TEST_CASE("verdicts on a hand-built network") {
  const ImageConvexHull h = unit_triangle();
  const OutputPolytope spec = first_wins();

  const VerificationResult ok = verify(two_layer(1.5f), h, spec);
  CHECK(ok.status == VerificationResult::Holds);
  CHECK_FALSE(ok.alpha.has_value());

  // y1 - y0 = x1 - x0 - 0.5 is positive near the (0,1) vertex
  const ModelGraph bad = two_layer(0.5f);
  const VerificationResult v = verify(bad, h, spec);
  REQUIRE(v.status == VerificationResult::Violated);
  REQUIRE(v.alpha.has_value());
  CHECK(valid_alpha(*v.alpha));
  CHECK(spec.worst_margin(run_graph(bad, hull_point(h, *v.alpha))) > 0);
  CHECK(v.witness_margin > 0);

  VerifyOptions none;
  none.budget = 0;
  CHECK(verify(two_layer(1.5f), h, spec, none).status == VerificationResult::Unknown);

  const auto a = attack(bad, h, spec, root_branch(2), {50, 3, true});
  REQUIRE(a.has_value());
  CHECK(valid_alpha(*a));
  CHECK(spec.worst_margin(run_graph(bad, hull_point(h, *a))) > 0);
  CHECK_FALSE(attack(two_layer(1.5f), h, spec, root_branch(2), {50, 3, true}).has_value());
}

TEST_CASE("unstable relus on both sides still prove an absolute-value margin") {
  // y0 = |x0 - x1| + 0.05 and y1 = 0, with both relus crossing zero over the hull
  std::vector<NodeSpec> specs = {
      {"x", "input", json::object(), {}, {}},
      {"f", "flatten", json::object(), {}, {"x"}},
      {"l1", "linear", {{"out_features", 2}}, {1, -1, -1, 1, 0, 0}, {"f"}},
      {"r", "relu", json::object(), {}, {"l1"}},
      {"l2", "linear", {{"out_features", 2}}, {1, 1, 0, 0, 0.05f, 0}, {"r"}},
  };
  const ModelGraph g = build_graph({1, 1, 2}, specs, {"l2"});
  const ImageConvexHull h = make_hull(vec2(0, 0), {vec2(1, -1), vec2(-1, 1)});
  const VerificationResult r = verify(g, h, first_wins());
  CHECK(r.status == VerificationResult::Holds);
  CHECK(r.branches >= 1);
}

TEST_CASE("single-image hull needs one branch") {
  const ImageConvexHull pt = make_hull(vec2(2, 1), {});
  const VerificationResult r = verify(two_layer(0.0f), pt, first_wins());
  CHECK(r.status == VerificationResult::Holds);
  CHECK(r.branches == 1);
  const VerificationResult w = verify(two_layer(0.0f), make_hull(vec2(1, 2), {}), first_wins());
  CHECK(w.status == VerificationResult::Violated);
}

TEST_CASE("verdicts agree with sampling on random proxy nets") {
  std::mt19937_64 rng(64);
  int holds = 0, violated = 0;
  for (int c = 0; c < 25; ++c) {
    const testing::ProxyCase pc = testing::random_proxy_case(rng);
    VerifyOptions o;
    o.budget = 60;
    o.workers = 2;
    const VerificationResult r = verify(pc.model, pc.hull, pc.spec, o);
    if (r.status == VerificationResult::Violated) {
      ++violated;
      REQUIRE(r.alpha.has_value());
      CHECK(valid_alpha(*r.alpha));
      CHECK(pc.spec.worst_margin(run_graph(pc.model, hull_point(pc.hull, *r.alpha))) > 0);
    } else if (r.status == VerificationResult::Holds) {
      ++holds;
      for (int s = 0; s < 500; ++s)
        CHECK(pc.spec.worst_margin(run_graph(pc.model, hull_point(pc.hull, testing::sample_simplex(rng, pc.hull.n())))) <= 0);
    }
  }
  CHECK(holds > 0);
  CHECK(violated > 0);
}

TEST_CASE("verification is deterministic across worker counts") {
  std::mt19937_64 rng(65);
  for (int c = 0; c < 5; ++c) {
    const testing::ProxyCase pc = testing::random_proxy_case(rng);
    VerifyOptions one, four;
    four.workers = 4;
    const VerificationResult a = verify(pc.model, pc.hull, pc.spec, one), b = verify(pc.model, pc.hull, pc.spec, four);
    CHECK(a.status == b.status);
    CHECK(a.branches == b.branches);
  }
}

TEST_CASE("head operators are rejected by reachability") {
  std::vector<NodeSpec> specs = {
      {"x", "input", json::object(), {}, {}},
      {"s", "softmax", json::object(), {}, {"x"}},
  };
  const ModelGraph g = build_graph({1, 3, 3}, specs, {"s"});
  CHECK(testing::error_code_of([&] { compile_model(g); }) == ErrorCode::Unsupported);
}

TEST_CASE("verification report json") {
  const VerificationResult r = verify(two_layer(0.5f), unit_triangle(), first_wins());
  const json j = verification_to_json(r);
  CHECK(j.at("status") == "violated");
  CHECK(j.at("counterexample").at("alpha").size() == 2);
}
