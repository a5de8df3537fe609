#include "posecert/posecert.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "core/error.hpp"
#include "harness/certify.hpp"
#include "harness/montecarlo.hpp"
#include "harness/synth.hpp"

struct pc_model {
  posecert::ModelGraph g;
};

struct pc_tensor {
  posecert::Tensor t;
};

namespace {

using nlohmann::json;
using namespace posecert;

thread_local std::string g_last_error;

pc_status to_status(ErrorCode c) { return static_cast<pc_status>(static_cast<int>(c)); }

template <class F>
pc_status guard(F&& f) {
  try {
    f();
    g_last_error.clear();
    return PC_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const json::exception& e) {
    g_last_error = e.what();
    return PC_E_PARSE;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return PC_E_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return PC_E_INTERNAL;
  }
}

char* dup(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

void need(const void* p, const char* what) {
  require(p != nullptr, ErrorCode::InvalidArgument, std::string(what) + " must not be NULL");
}

json parse(const char* text, const char* what) {
  need(text, what);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::Parse, std::string(what) + ": " + e.what());
  }
}

pc_status copy_shape(const Shape& s, int64_t* dims, size_t cap, size_t* rank) {
  return guard([&] {
    need(rank, "rank");
    *rank = s.size();
    for (size_t i = 0; i < s.size() && i < cap; ++i) dims[i] = s[i];
  });
}

std::vector<int> thresholds_from(const json& j) {
  if (j.is_array()) return j.get<std::vector<int>>();
  return j.at("deltas").get<std::vector<int>>();
}

Eigen::Vector3d vec3(const double* v, const char* what) {
  need(v, what);
  return {v[0], v[1], v[2]};
}

}  // namespace

extern "C" {

PC_API const char* pc_last_error(void) { return g_last_error.c_str(); }
PC_API const char* pc_version(void) { return "0.1.0"; }
PC_API void pc_string_free(char* s) { std::free(s); }

PC_API pc_status pc_model_load(const char* manifest_path, const char* weights_path, pc_model** out) {
  return guard([&] {
    need(manifest_path, "manifest path");
    need(weights_path, "weights path");
    need(out, "out");
    *out = new pc_model{load_model(manifest_path, weights_path)};
  });
}

PC_API pc_status pc_model_save(const pc_model* m, const char* manifest_path, const char* weights_path) {
  return guard([&] {
    need(m, "model");
    need(manifest_path, "manifest path");
    need(weights_path, "weights path");
    save_model(m->g, manifest_path, weights_path);
  });
}

PC_API void pc_model_free(pc_model* m) { delete m; }

PC_API pc_status pc_model_layer_count(const pc_model* m, size_t* out) {
  return guard([&] {
    need(m, "model");
    need(out, "out");
    *out = m->g.layer_count();
  });
}

PC_API pc_status pc_model_input_shape(const pc_model* m, int64_t* dims, size_t cap, size_t* rank) {
  if (!m) return guard([] { need(nullptr, "model"); });
  return copy_shape(m->g.input_shape, dims, cap, rank);
}

PC_API pc_status pc_model_output_shape(const pc_model* m, int64_t* dims, size_t cap, size_t* rank) {
  if (!m) return guard([] { need(nullptr, "model"); });
  return copy_shape(m->g.output_shape(), dims, cap, rank);
}

PC_API pc_status pc_model_run(const pc_model* m, const float* input, size_t input_len, float* output,
                              size_t output_cap, size_t* output_len) {
  return guard([&] {
    need(m, "model");
    need(input, "input");
    need(output_len, "output_len");
    require(static_cast<int64_t>(input_len) == shape_numel(m->g.input_shape), ErrorCode::Shape,
            "input has " + std::to_string(input_len) + " values, model expects " + shape_str(m->g.input_shape));
    const Tensor y = run_graph(m->g, Tensor(m->g.input_shape, std::vector<float>(input, input + input_len)));
    *output_len = y.data.size();
    require(output != nullptr && output_cap >= y.data.size(), ErrorCode::InvalidArgument,
            "output buffer too small: need " + std::to_string(y.data.size()));
    std::copy(y.data.begin(), y.data.end(), output);
  });
}

PC_API pc_status pc_tensor_load(const char* path, pc_tensor** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = new pc_tensor{load_image_or_tensor(path)};
  });
}

PC_API pc_status pc_tensor_create(const int64_t* dims, size_t rank, const float* data, pc_tensor** out) {
  return guard([&] {
    need(dims, "dims");
    need(out, "out");
    Shape s(dims, dims + rank);
    const int64_t n = shape_numel(s);
    require(n == 0 || data != nullptr, ErrorCode::InvalidArgument, "data must not be NULL");
    *out = new pc_tensor{Tensor(s, std::vector<float>(data, data + n))};
  });
}

PC_API pc_status pc_tensor_save(const pc_tensor* t, const char* path) {
  return guard([&] {
    need(t, "tensor");
    need(path, "path");
    write_tensor(path, t->t);
  });
}

PC_API void pc_tensor_free(pc_tensor* t) { delete t; }

PC_API pc_status pc_tensor_shape(const pc_tensor* t, int64_t* dims, size_t cap, size_t* rank) {
  if (!t) return guard([] { need(nullptr, "tensor"); });
  return copy_shape(t->t.shape, dims, cap, rank);
}

PC_API const float* pc_tensor_data(const pc_tensor* t, size_t* len) {
  if (!t) return nullptr;
  if (len) *len = t->t.data.size();
  return t->t.data.data();
}

PC_API pc_status pc_tensor_perturb(const pc_tensor* image, const char* perturbation_json, pc_tensor** out) {
  return guard([&] {
    need(image, "image");
    need(out, "out");
    *out = new pc_tensor{perturb(image->t, perturbation_from_json(parse(perturbation_json, "perturbation")))};
  });
}

PC_API pc_status pc_pnp(const char* scene_json, char** pose_json) {
  return guard([&] {
    need(pose_json, "out");
    const KeypointScene s = scene_from_json(parse(scene_json, "scene"));
    const PnpResult r = solve_pnp(s.K, s.P, s.V, s.pose);
    json j = pose_to_json(r.pose);
    j["xi"] = std::vector<double>(r.pose.xi().data(), r.pose.xi().data() + 6);
    j["objective"] = r.objective;
    j["grad_inf"] = r.grad_inf;
    j["iterations"] = r.iterations;
    *pose_json = dup(j.dump());
  });
}

PC_API pc_status pc_sensitivity(const char* scene_json, const double eps_r_deg[3], const double eps_t[3],
                                char** polytope_json) {
  return guard([&] {
    need(polytope_json, "out");
    const KeypointScene s = scene_from_json(parse(scene_json, "scene"));
    const BudgetPolytope budget = budget_to_polytope(vec3(eps_r_deg, "eps_r_deg"), vec3(eps_t, "eps_t"));
    const PnpResult r = solve_pnp(s.K, s.P, s.V, s.pose);
    const SensitivityMatrices m = nls_derivatives(s, r.pose.xi());
    json j = polytope_to_json(keypoint_polytope(pose_jacobian(m), budget, s.id));
    j["cond"] = m.cond;
    j["hessian_asymmetry"] = m.hessian_asymmetry;
    *polytope_json = dup(j.dump());
  });
}

PC_API pc_status pc_allocate(const char* polytope_json, double w1, double w2, double kappa, int cap,
                             char** thresholds_json) {
  return guard([&] {
    need(thresholds_json, "out");
    AllocationConfig c;
    c.w1 = w1;
    c.w2 = w2;
    c.kappa = kappa;
    if (cap > 0) c.cap = cap;
    const AllocatedThresholds a = allocate_thresholds(polytope_from_json(parse(polytope_json, "polytope")), c);
    *thresholds_json = dup(thresholds_to_json(a).dump());
  });
}

PC_API pc_status pc_proxy_build(const pc_model* target, const char* scene_json, const char* thresholds_json,
                                pc_model** proxy, char** info_json) {
  return guard([&] {
    need(target, "target");
    need(proxy, "proxy");
    const KeypointScene s = scene_from_json(parse(scene_json, "scene"));
    const std::vector<int> dv = thresholds_from(parse(thresholds_json, "thresholds"));
    const ModelGraph backbone = strip_head(target->g);
    const Shape hs = backbone.output_shape();
    require(hs.size() == 3, ErrorCode::Shape, "backbone output must be a (K,H,W) heatmap stack");
    const PoolingPlan plan = plan_pooling(s.V, dv, static_cast<int>(hs[1]), static_cast<int>(hs[2]));
    ProxyModel pm = build_proxy(backbone, plan.params);
    const OutputPolytope spec = output_spec(plan.keypoints, plan.skipped);
    if (info_json) {
      json j = {{"sidecar", proxy_sidecar(pm, plan.keypoints)},
                {"spec", output_spec_to_json(spec)},
                {"skipped", std::vector<int>(plan.skipped.begin(), plan.skipped.end())}};
      *info_json = dup(j.dump());
    }
    *proxy = new pc_model{std::move(pm.graph)};
  });
}

PC_API pc_status pc_verify(const pc_model* proxy, const pc_tensor* const* vertices, size_t n_vertices,
                           const char* spec_json, double preprocess_scale, double preprocess_shift, int budget,
                           int workers, uint64_t seed, char** result_json) {
  return guard([&] {
    need(proxy, "proxy");
    need(vertices, "vertices");
    need(result_json, "out");
    require(n_vertices >= 1, ErrorCode::InvalidArgument, "hull needs at least the seed image");
    std::vector<Tensor> rest;
    for (size_t i = 1; i < n_vertices; ++i) {
      need(vertices[i], "vertex");
      rest.push_back(vertices[i]->t);
    }
    need(vertices[0], "seed");
    const ImageConvexHull hull = make_hull(vertices[0]->t, rest, {preprocess_scale, preprocess_shift});
    VerifyOptions o;
    o.budget = budget;
    o.workers = workers;
    o.seed = seed;
    const VerificationResult r = verify(proxy->g, hull, output_spec_from_json(parse(spec_json, "spec")), o);
    *result_json = dup(verification_to_json(r).dump());
  });
}

PC_API pc_status pc_heatmap_stats(const pc_model* target, const pc_tensor* input, char** stats_json) {
  return guard([&] {
    need(target, "target");
    need(input, "input");
    need(stats_json, "out");
    const auto vals = run_graph_all(target->g, input->t);
    json out = json::array();
    bool found = false;
    for (size_t i = 0; i < target->g.nodes.size() && !found; ++i) {
      if (target->g.nodes[i].op != OpKind::Softmax) continue;
      found = true;
      for (int64_t k = 0; k < vals[i].dim(0); ++k) {
        json e = symmetry_stats_to_json(heatmap_symmetry_stats(Heatmap::from_channel(vals[i], k)));
        e["keypoint"] = k;
        out.push_back(e);
      }
    }
    require(found, ErrorCode::Unsupported, "model has no softmax heatmap layer");
    *stats_json = dup(out.dump());
  });
}

PC_API pc_status pc_monte_carlo(const char* scene_json, const char* thresholds_json, const double eps_r_deg[3],
                                const double eps_t[3], int64_t samples, uint64_t seed, int workers,
                                char** result_json) {
  return guard([&] {
    need(result_json, "out");
    const KeypointScene s = scene_from_json(parse(scene_json, "scene"));
    const std::vector<int> dv = thresholds_from(parse(thresholds_json, "thresholds"));
    const BudgetPolytope budget = budget_to_polytope(vec3(eps_r_deg, "eps_r_deg"), vec3(eps_t, "eps_t"));
    const MonteCarloOptions o{samples, seed, workers};
    json j = {{"soundness", monte_carlo_to_json(probabilistic_soundness(s, dv, budget, o))},
              {"completeness", monte_carlo_to_json(probabilistic_completeness(s, dv, budget, o))}};
    *result_json = dup(j.dump());
  });
}

PC_API pc_status pc_certify(const char* config_json, const char* base_dir, char** report_json) {
  return guard([&] {
    need(report_json, "out");
    const CertifyConfig c = certify_config_from_json(parse(config_json, "config"), base_dir ? base_dir : ".");
    *report_json = dup(certify(c).json.dump());
  });
}

PC_API pc_status pc_report_validate(const char* report_json, char** why) {
  std::string reason;
  bool ok = false;
  const pc_status st = guard([&] { ok = validate_report(parse(report_json, "report"), &reason); });
  if (st != PC_OK) return st;
  if (why) *why = ok ? nullptr : dup(reason);
  if (!ok) g_last_error = reason;
  return ok ? PC_OK : PC_E_PARSE;
}

PC_API pc_status pc_report_text(const char* report_json, char** text) {
  return guard([&] {
    need(text, "out");
    *text = dup(report_text(parse(report_json, "report")));
  });
}

PC_API pc_status pc_write_toy_problem(const char* dir, uint64_t seed, int brightness, char** config_json) {
  return guard([&] {
    need(dir, "dir");
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const ToyProblem tp = toy_problem(seed, 6, 64, std::max(brightness, 0));
    const fs::path d(dir);
    save_model(tp.target, (d / "model.json").string(), (d / "model.bin").string());
    write_ppm((d / "seed.ppm").string(), tp.image);
    {
      std::ofstream f(d / "scene.json");
      require(static_cast<bool>(f), ErrorCode::Io, "cannot write scene.json");
      f << scene_to_json(tp.scene).dump(2) << "\n";
    }
    json cfg = {{"model", "model.json"},
                {"weights", "model.bin"},
                {"image", "seed.ppm"},
                {"scene", "scene.json"},
                {"preprocess", {{"scale", tp.preproc.scale}, {"shift", tp.preproc.shift}}},
                {"perturbations", json::array({{{"kind", "brightness"}, {"b", brightness}},
                                               {{"kind", "brightness"}, {"b", -brightness}}})},
                {"alpha", 1.0},
                {"kappa", 1.0},
                {"w1", 1.0},
                {"w2", 5.0},
                {"budget", 150},
                {"seed", seed}};
    {
      std::ofstream f(d / "config.json");
      require(static_cast<bool>(f), ErrorCode::Io, "cannot write config.json");
      f << cfg.dump(2) << "\n";
    }
    if (config_json) *config_json = dup(cfg.dump());
  });
}

}  // extern "C"
