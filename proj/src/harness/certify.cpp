#include "harness/certify.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "core/error.hpp"
#include "sensitivity/sensitivity.hpp"

namespace posecert {

using nlohmann::json;

namespace {

template <class F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    fail(e.code(), std::string("[") + name + "] " + e.what());
  } catch (const json::exception& e) {
    fail(ErrorCode::Parse, std::string("[") + name + "] " + e.what());
  }
}

json vec3(const Eigen::Vector3d& v) { return {v[0], v[1], v[2]}; }

double ms_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t).count();
}

}  // namespace

Points2 decode_keypoints(const ModelGraph& target, const Tensor& input) {
  const auto vals = run_graph_all(target, input);
  for (size_t i = 0; i < target.nodes.size(); ++i) {
    const Node& n = target.nodes[i];
    if (n.op != OpKind::Dsnt && n.op != OpKind::Argmax) continue;
    const Shape& hs = target.nodes[static_cast<size_t>(n.in.at(0))].shape;
    const double rows = static_cast<double>(hs[1]), cols = static_cast<double>(hs[2]);
    const Tensor& t = vals[i];
    Points2 V(t.dim(0), 2);
    for (int64_t k = 0; k < t.dim(0); ++k) {
      const double x = t[2 * k], y = t[2 * k + 1];
      if (n.op == OpKind::Dsnt) {
        V(k, 0) = (cols + 1) / 2 + x * cols / 2;
        V(k, 1) = (rows + 1) / 2 + y * rows / 2;
      } else {
        V(k, 0) = x + 1;
        V(k, 1) = y + 1;
      }
    }
    return V;
  }
  fail(ErrorCode::Unsupported, "target model has no dsnt or argmax head to decode keypoints");
}

PoolingPlan plan_pooling(const Points2& V, const std::vector<int>& dv, int rows, int cols) {
  require(static_cast<Eigen::Index>(dv.size()) == 2 * V.rows(), ErrorCode::Shape,
          "thresholds have " + std::to_string(dv.size()) + " entries, expected " + std::to_string(2 * V.rows()));
  PoolingPlan plan;
  for (int k = 0; k < V.rows(); ++k) {
    const int vh = static_cast<int>(std::lround(V(k, 0))), vv = static_cast<int>(std::lround(V(k, 1)));
    const bool inside = vh >= 1 && vh <= cols && vv >= 1 && vv <= rows;
    PoolingParams p;
    if (inside) p = pooling_params(vh, vv, dv[static_cast<size_t>(2 * k)], dv[static_cast<size_t>(2 * k + 1)], rows, cols);
    AveragedKeypoint a = averaged_keypoint(k, inside ? vh : 1, inside ? vv : 1, p, rows, cols);
    if (!inside) plan.skipped.insert(k);
    plan.params.push_back(p);
    plan.keypoints.push_back(a);
  }
  return plan;
}

CertifyReport certify(const CertifyConfig& cfg) {
  const auto t_start = std::chrono::steady_clock::now();
  CertifyReport rep;
  json timing = json::object();
  const KeypointScene& scene = cfg.scene;
  require(cfg.alpha > 0, ErrorCode::InvalidArgument, "alpha must be positive");
  const BudgetPolytope budget = budget_to_polytope(cfg.alpha * cfg.eps_r_deg, cfg.alpha * cfg.eps_t);

  auto t = std::chrono::steady_clock::now();
  const Tensor seed_input = cfg.preproc.apply(cfg.seed_image);
  const PnpResult pnp = stage("pnp", [&] {
    scene.validate();
    return solve_pnp(scene.K, scene.P, scene.V, scene.pose);
  });
  timing["pnp"] = ms_since(t);

  // Seed accounting: the unperturbed image must already meet the budget.
  stage("seed", [&] {
    const Points2 Vhat = decode_keypoints(cfg.target, seed_input);
    require(Vhat.rows() == scene.size(), ErrorCode::Shape,
            "target decodes " + std::to_string(Vhat.rows()) + " keypoints, scene has " + std::to_string(scene.size()));
    try {
      const PnpResult r = solve_pnp(scene.K, scene.P, Vhat, scene.pose);
      rep.seed_error = pose_error(r.pose, scene.pose);
      rep.seed_in_budget = rep.seed_error.within(budget.eps_r_deg, budget.eps_t);
    } catch (const Error&) {
      rep.seed_in_budget = false;
    }
    return 0;
  });

  t = std::chrono::steady_clock::now();
  SensitivityMatrices sens;
  const TolerancePolytope poly = stage("sensitivity", [&] {
    sens = nls_derivatives(scene, pnp.pose.xi());
    return keypoint_polytope(pose_jacobian(sens), budget, scene.id);
  });
  timing["sensitivity"] = ms_since(t);

  const ModelGraph backbone = strip_head(cfg.target);
  const Node& heat = backbone.output_node(0);
  require(heat.shape.size() == 3 && heat.shape[0] == scene.size(), ErrorCode::Shape,
          "[proxy] backbone heatmap " + shape_str(heat.shape) + " does not match " + std::to_string(scene.size()) +
              " keypoints");
  const int rows = static_cast<int>(heat.shape[1]), cols = static_cast<int>(heat.shape[2]);

  t = std::chrono::steady_clock::now();
  rep.thresholds = stage("allocation", [&] {
    AllocationConfig ac;
    ac.w1 = cfg.w1;
    ac.w2 = cfg.w2;
    ac.kappa = cfg.kappa;
    ac.cap = std::min(rows, cols) / 2;
    return allocate_thresholds(poly, ac);
  });
  timing["allocation"] = ms_since(t);

  const PoolingPlan plan = stage("pooling", [&] { return plan_pooling(scene.V, rep.thresholds.dv, rows, cols); });
  rep.pooling = plan.params;
  rep.skipped = plan.skipped;
  const std::vector<AveragedKeypoint>& avgd = plan.keypoints;

  t = std::chrono::steady_clock::now();
  const ProxyModel proxy = stage("proxy", [&] { return build_proxy(backbone, rep.pooling); });
  const OutputPolytope spec = stage("spec", [&] { return output_spec(avgd, rep.skipped); });
  timing["proxy"] = ms_since(t);

  const ImageConvexHull hull = stage("hull", [&] {
    std::vector<Tensor> perturbed;
    for (const auto& p : cfg.perturbations) perturbed.push_back(perturb(cfg.seed_image, p));
    return make_hull(cfg.seed_image, perturbed, cfg.preproc);
  });

  t = std::chrono::steady_clock::now();
  rep.verification = stage("verify", [&] {
    VerifyOptions vo;
    vo.budget = cfg.budget;
    vo.workers = cfg.workers;
    vo.seed = cfg.seed;
    vo.attack_iterations = cfg.attack_iterations;
    return verify(proxy.graph, hull, spec, vo);
  });
  timing["verify"] = ms_since(t);

  json assumption = json::array();
  stage("stats", [&] {
    const auto vals = run_graph_all(cfg.target, seed_input);
    for (size_t i = 0; i < cfg.target.nodes.size(); ++i) {
      if (cfg.target.nodes[i].op != OpKind::Softmax) continue;
      for (int64_t k = 0; k < vals[i].dim(0); ++k)
        assumption.push_back(symmetry_stats_to_json(heatmap_symmetry_stats(Heatmap::from_channel(vals[i], k))));
      break;
    }
    return 0;
  });
  timing["total"] = ms_since(t_start);

  const VerifiedRate vr = verified_rate({{scene.id, rep.seed_in_budget, status_name(rep.verification.status)}});
  json thr = thresholds_to_json(rep.thresholds);
  thr["kappa"] = cfg.kappa;
  thr["w1"] = cfg.w1;
  thr["w2"] = cfg.w2;
  std::vector<int> skipped(rep.skipped.begin(), rep.skipped.end());
  json perts = json::array();
  for (const auto& p : cfg.perturbations) perts.push_back(perturbation_to_json(p));
  rep.json = {
      {"schema", 1},
      {"command", "certify"},
      {"scene_id", scene.id},
      {"status", status_name(rep.verification.status)},
      {"verification", verification_to_json(rep.verification)},
      {"budget", {{"alpha", cfg.alpha}, {"eps_r_deg", vec3(budget.eps_r_deg)}, {"eps_t", vec3(budget.eps_t)}}},
      {"pose",
       {{"estimate", pose_to_json(pnp.pose)},
        {"objective", pnp.objective},
        {"seed_error", {{"Dr_deg", vec3(rep.seed_error.Dr_deg)}, {"Dt", vec3(rep.seed_error.Dt)}}},
        {"seed_in_budget", rep.seed_in_budget}}},
      {"sensitivity", {{"cond", sens.cond}, {"hessian_asymmetry", sens.hessian_asymmetry}}},
      {"allocation", thr},
      {"proxy", proxy_sidecar(proxy, avgd)},
      {"skipped", skipped},
      {"hull", {{"vertices", hull.n() + 1}, {"perturbations", perts}}},
      {"stats",
       {{"heatmap_symmetry", assumption},
        {"verified_rate", {{"numerator", vr.numerator}, {"denominator", vr.denominator}, {"rate", vr.rate}}}}},
      {"timing_ms", timing},
  };
  return rep;
}

CertifyConfig certify_config_from_json(const json& j, const std::string& base_dir) {
  namespace fs = std::filesystem;
  auto path = [&](const std::string& key) {
    fs::path p = j.at(key).get<std::string>();
    return (p.is_absolute() ? p : fs::path(base_dir) / p).string();
  };
  try {
    CertifyConfig c;
    c.target = load_model(path("model"), path("weights"));
    c.seed_image = load_image_or_tensor(path("image"));
    c.scene = load_scene(path("scene"));
    if (j.contains("preprocess")) {
      c.preproc.scale = j["preprocess"].value("scale", 1.0);
      c.preproc.shift = j["preprocess"].value("shift", 0.0);
    }
    for (const auto& p : j.value("perturbations", json::array())) {
      json q = p;
      if (q.contains("image")) q["image"] = (fs::path(base_dir) / q["image"].get<std::string>()).string();
      c.perturbations.push_back(perturbation_from_json(q));
    }
    c.alpha = j.value("alpha", c.alpha);
    c.kappa = j.value("kappa", c.kappa);
    c.w1 = j.value("w1", c.w1);
    c.w2 = j.value("w2", c.w2);
    if (j.contains("eps_r_deg")) c.eps_r_deg = Eigen::Vector3d(j["eps_r_deg"].get<std::vector<double>>().data());
    if (j.contains("eps_t")) c.eps_t = Eigen::Vector3d(j["eps_t"].get<std::vector<double>>().data());
    c.budget = j.value("budget", c.budget);
    c.workers = j.value("workers", c.workers);
    c.seed = j.value("seed", c.seed);
    c.attack_iterations = j.value("attack_iterations", c.attack_iterations);
    return c;
  } catch (const json::exception& e) {
    fail(ErrorCode::Parse, std::string("malformed certify config: ") + e.what());
  }
}

bool validate_report(const json& r, std::string* why) {
  auto bad = [&](const std::string& m) {
    if (why) *why = m;
    return false;
  };
  if (!r.is_object()) return bad("report is not an object");
  if (r.value("schema", 0) != 1) return bad("schema must be 1");
  if (!r.contains("command") || !r["command"].is_string()) return bad("missing command");
  const std::string status = r.value("status", std::string());
  if (status != "holds" && status != "violated" && status != "unknown") return bad("status must be holds/violated/unknown");
  if (r["command"] != "certify") return true;
  for (const char* key : {"verification", "budget", "pose", "allocation", "proxy", "hull", "stats", "timing_ms"})
    if (!r.contains(key) || !r[key].is_object()) return bad(std::string("missing object '") + key + "'");
  const json& v = r["verification"];
  for (const char* key : {"branches", "splits", "time_ms"})
    if (!v.contains(key) || !v[key].is_number()) return bad(std::string("verification.") + key + " must be a number");
  if (v["status"] != status) return bad("verification.status disagrees with status");
  if (status == "violated" && !v["counterexample"].is_object()) return bad("violated report without counterexample");
  const json& a = r["allocation"];
  if (!a.contains("deltas") || !a["deltas"].is_array()) return bad("allocation.deltas must be an array");
  for (const auto& d : a["deltas"])
    if (!d.is_number_integer() || d.get<int>() < 0) return bad("allocation.deltas must be non-negative integers");
  const json& vr = r["stats"].value("verified_rate", json());
  if (!vr.is_object() || !vr.contains("rate")) return bad("stats.verified_rate missing");
  const double rate = vr["rate"].get<double>();
  if (rate < 0 || rate > 1) return bad("verified rate outside [0,1]");
  return true;
}

std::string report_text(const json& r) {
  std::ostringstream os;
  os << "status: " << r.value("status", std::string("?")) << "\n";
  if (r.contains("scene_id")) os << "scene: " << r["scene_id"].get<std::string>() << "\n";
  if (r.contains("verification")) {
    const json& v = r["verification"];
    os << "branches: " << v.value("branches", 0) << ", splits: " << v.value("splits", 0)
       << ", time: " << v.value("time_ms", 0.0) << " ms\n";
    if (v.contains("reason")) os << "reason: " << v["reason"].get<std::string>() << "\n";
  }
  if (r.contains("allocation")) os << "thresholds: " << r["allocation"]["deltas"].dump() << "\n";
  if (r.contains("skipped") && !r["skipped"].empty()) os << "skipped keypoints: " << r["skipped"].dump() << "\n";
  if (r.contains("pose")) os << "seed in budget: " << (r["pose"].value("seed_in_budget", false) ? "yes" : "no") << "\n";
  return os.str();
}

}  // namespace posecert
