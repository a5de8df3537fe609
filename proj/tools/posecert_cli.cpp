// posecert command line. Talks to the library through the C API only.
#include <posecert/posecert.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

using nlohmann::json;

namespace {

// --config file.json: top-level keys are global flags, nested objects address subcommands,
// e.g. {"seed": 3, "verify": {"budget": 40}}.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw CLI::ConversionError(std::string("config file: ") + e.what());
    }
    std::vector<CLI::ConfigItem> items;
    flatten(j, {}, items);
    return items;
  }

 private:
  static std::string scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  static void flatten(const json& j, std::vector<std::string> parents, std::vector<CLI::ConfigItem>& out) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it->is_object()) {
        auto p = parents;
        p.push_back(it.key());
        flatten(*it, p, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = it.key();
      if (it->is_array())
        for (const auto& v : *it) item.inputs.push_back(scalar(v));
      else
        item.inputs.push_back(scalar(*it));
      out.push_back(std::move(item));
    }
  }
};

struct CliError {
  int code;
};

void check(pc_status st, const std::string& what) {
  if (st == PC_OK) return;
  std::cerr << "posecert: " << what << ": " << pc_last_error() << "\n";
  throw CliError{static_cast<int>(st)};
}

struct CString {
  char* p = nullptr;
  ~CString() { pc_string_free(p); }
  std::string str() const { return p ? std::string(p) : std::string(); }
};

struct ModelHandle {
  pc_model* p = nullptr;
  ~ModelHandle() { pc_model_free(p); }
};

struct TensorHandle {
  pc_tensor* p = nullptr;
  TensorHandle() = default;
  TensorHandle(TensorHandle&& o) noexcept : p(o.p) { o.p = nullptr; }
  TensorHandle(const TensorHandle&) = delete;
  ~TensorHandle() { pc_tensor_free(p); }
};

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    std::cerr << "posecert: cannot open " << path << "\n";
    throw CliError{PC_E_IO};
  }
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct Globals {
  uint64_t seed = 7;
  int workers = 1;
  std::string out;
  bool text = false;
};

void emit(const Globals& g, const json& j) {
  const std::string s = j.dump(2) + "\n";
  if (g.out.empty()) {
    std::cout << s;
    return;
  }
  std::ofstream f(g.out);
  if (!f) {
    std::cerr << "posecert: cannot write " << g.out << "\n";
    throw CliError{PC_E_IO};
  }
  f << s;
}

json with_header(json body, const std::string& command) {
  json j = {{"schema", 1}, {"command", command}};
  if (body.is_object())
    j.update(body);
  else
    j["result"] = std::move(body);
  return j;
}

ModelHandle load_model(const std::string& manifest, const std::string& weights) {
  ModelHandle m;
  check(pc_model_load(manifest.c_str(), weights.c_str(), &m.p), "loading model " + manifest);
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pose-estimation robustness certification"};
  app.require_subcommand(1);
  app.fallthrough();
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON file with default flag values");

  Globals g;
  app.add_option("--seed", g.seed, "RNG seed")->capture_default_str();
  app.add_option("--workers", g.workers, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  app.add_option("--out", g.out, "Write the JSON result here instead of stdout");

  std::vector<double> eps_r{10, 10, 10}, eps_t{4, 4, 20};
  auto add_budget = [&](CLI::App* c) {
    c->add_option("--eps-r", eps_r, "Rotation budget (deg) per Euler axis")->expected(3)->capture_default_str();
    c->add_option("--eps-t", eps_t, "Translation budget per axis")->expected(3)->capture_default_str();
  };

  // pnp
  std::string scene_path;
  auto* pnp = app.add_subcommand("pnp", "Solve the pose of a keypoint scene");
  pnp->add_option("--scene", scene_path, "Scene JSON")->required()->check(CLI::ExistingFile);

  // sensitivity
  auto* sens = app.add_subcommand("sensitivity", "Keypoint tolerance polytope for a pose budget");
  sens->add_option("--scene", scene_path, "Scene JSON")->required()->check(CLI::ExistingFile);
  add_budget(sens);

  // allocate
  std::string polytope_path;
  double w1 = 1, w2 = 5, kappa = 1;
  int cap = 0;
  auto* alloc = app.add_subcommand("allocate", "Integer threshold allocation inside a tolerance polytope");
  alloc->add_option("--polytope", polytope_path, "Tolerance polytope JSON")->required()->check(CLI::ExistingFile);
  alloc->add_option("--w1", w1)->capture_default_str();
  alloc->add_option("--w2", w2)->capture_default_str();
  alloc->add_option("--kappa", kappa)->capture_default_str();
  alloc->add_option("--cap", cap, "Per-coordinate ceiling (0: library default)");

  // proxy / spec
  std::string model_path, weights_path, thresholds_path, out_model, out_weights, spec_out;
  auto* proxy = app.add_subcommand("proxy", "Build the pooled proxy of a target model");
  proxy->add_option("--model", model_path, "Target manifest")->required()->check(CLI::ExistingFile);
  proxy->add_option("--weights", weights_path, "Target weights")->required()->check(CLI::ExistingFile);
  proxy->add_option("--scene", scene_path, "Scene JSON")->required()->check(CLI::ExistingFile);
  proxy->add_option("--thresholds", thresholds_path, "Allocation JSON")->required()->check(CLI::ExistingFile);
  proxy->add_option("--out-model", out_model, "Proxy manifest to write")->required();
  proxy->add_option("--out-weights", out_weights, "Proxy weights to write")->required();
  proxy->add_option("--spec-out", spec_out, "Also write the output spec here");

  auto* spec = app.add_subcommand("spec", "Output polytope for a target, scene and thresholds");
  spec->add_option("--model", model_path, "Target manifest")->required()->check(CLI::ExistingFile);
  spec->add_option("--weights", weights_path, "Target weights")->required()->check(CLI::ExistingFile);
  spec->add_option("--scene", scene_path, "Scene JSON")->required()->check(CLI::ExistingFile);
  spec->add_option("--thresholds", thresholds_path, "Allocation JSON")->required()->check(CLI::ExistingFile);

  // verify
  std::vector<std::string> hull_paths;
  std::string spec_path;
  int budget = 150;
  double scale = 1.0, shift = 0.0;
  auto* ver = app.add_subcommand("verify", "Verify a proxy model over a convex hull of images");
  ver->add_option("--model", model_path, "Proxy manifest")->required()->check(CLI::ExistingFile);
  ver->add_option("--weights", weights_path, "Proxy weights")->required()->check(CLI::ExistingFile);
  ver->add_option("--hull", hull_paths, "Seed image followed by perturbed images")
      ->required()
      ->check(CLI::ExistingFile);
  ver->add_option("--spec", spec_path, "Output spec JSON")->required()->check(CLI::ExistingFile);
  ver->add_option("--budget", budget, "Split budget")->capture_default_str();
  ver->add_option("--scale", scale, "Preprocessing scale")->capture_default_str();
  ver->add_option("--shift", shift, "Preprocessing shift")->capture_default_str();

  // stats
  std::string image_path;
  int64_t samples = 100000;
  auto* stats = app.add_subcommand("stats", "Heatmap symmetry statistics or Monte Carlo ratios");
  stats->add_option("--model", model_path, "Target manifest (heatmap statistics)")->check(CLI::ExistingFile);
  stats->add_option("--weights", weights_path, "Target weights")->check(CLI::ExistingFile);
  stats->add_option("--image", image_path, "Input image or tensor")->check(CLI::ExistingFile);
  stats->add_option("--scale", scale, "Preprocessing scale")->capture_default_str();
  stats->add_option("--shift", shift, "Preprocessing shift")->capture_default_str();
  stats->add_option("--scene", scene_path, "Scene JSON (Monte Carlo)")->check(CLI::ExistingFile);
  stats->add_option("--thresholds", thresholds_path, "Allocation JSON (Monte Carlo)")->check(CLI::ExistingFile);
  stats->add_option("--samples", samples, "Monte Carlo samples")->capture_default_str();
  add_budget(stats);

  // certify
  std::string config_path;
  auto* cert = app.add_subcommand("certify", "Run the full certification pipeline");
  cert->add_option("problem", config_path, "Problem JSON (model, weights, image, scene, ...)")
      ->required()
      ->check(CLI::ExistingFile);
  cert->add_flag("--text", g.text, "Also print a human-readable summary to stderr");

  // helpers
  std::string dir;
  int brightness = 2;
  auto* toy = app.add_subcommand("toy", "Write a small synthetic certification problem");
  toy->add_option("--dir", dir, "Output directory")->required();
  toy->add_option("--brightness", brightness, "Brightness hull half-width b")->capture_default_str();

  std::string report_path;
  auto* validate = app.add_subcommand("validate", "Check a certify report against the schema");
  validate->add_option("report", report_path, "Report JSON")->required()->check(CLI::ExistingFile);

  std::string kind = "brightness";
  double amount = 0;
  auto* pert = app.add_subcommand("perturb", "Apply a perturbation to an 8-bit image");
  pert->add_option("--image", image_path, "Input PPM or tensor")->required()->check(CLI::ExistingFile);
  pert->add_option("--kind", kind)->check(CLI::IsMember({"brightness", "contrast"}))->capture_default_str();
  pert->add_option("--amount", amount, "b for brightness, c for contrast")->required();
  pert->add_option("--save", out_model, "Output tensor path (PCTN)")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    CString res;
    if (*pnp) {
      check(pc_pnp(read_file(scene_path).c_str(), &res.p), "pnp");
      emit(g, with_header(json::parse(res.str()), "pnp"));
    } else if (*sens) {
      check(pc_sensitivity(read_file(scene_path).c_str(), eps_r.data(), eps_t.data(), &res.p), "sensitivity");
      emit(g, with_header(json::parse(res.str()), "sensitivity"));
    } else if (*alloc) {
      check(pc_allocate(read_file(polytope_path).c_str(), w1, w2, kappa, cap, &res.p), "allocate");
      emit(g, with_header(json::parse(res.str()), "allocate"));
    } else if (*proxy || *spec) {
      ModelHandle target = load_model(model_path, weights_path);
      ModelHandle pm;
      check(pc_proxy_build(target.p, read_file(scene_path).c_str(), read_file(thresholds_path).c_str(), &pm.p,
                           &res.p),
            "proxy");
      json info = json::parse(res.str());
      if (*proxy) {
        check(pc_model_save(pm.p, out_model.c_str(), out_weights.c_str()), "saving proxy");
        if (!spec_out.empty()) {
          std::ofstream f(spec_out);
          if (!f) throw CliError{PC_E_IO};
          f << info["spec"].dump(2) << "\n";
        }
        emit(g, with_header({{"model", out_model}, {"weights", out_weights}, {"sidecar", info["sidecar"]},
                             {"skipped", info["skipped"]}},
                            "proxy"));
      } else {
        emit(g, with_header({{"spec", info["spec"]}, {"skipped", info["skipped"]}}, "spec"));
      }
    } else if (*ver) {
      ModelHandle pm = load_model(model_path, weights_path);
      std::vector<TensorHandle> ts;
      std::vector<const pc_tensor*> ptrs;
      for (const auto& p : hull_paths) {
        TensorHandle t;
        check(pc_tensor_load(p.c_str(), &t.p), "loading " + p);
        ptrs.push_back(t.p);
        ts.push_back(std::move(t));
      }
      std::string spec_text = read_file(spec_path);
      // accept either a bare spec or the output of `posecert spec`
      json sj = json::parse(spec_text);
      if (sj.contains("spec")) spec_text = sj["spec"].dump();
      check(pc_verify(pm.p, ptrs.data(), ptrs.size(), spec_text.c_str(), scale, shift, budget, g.workers, g.seed,
                      &res.p),
            "verify");
      emit(g, with_header(json::parse(res.str()), "verify"));
    } else if (*stats) {
      json out = json::object();
      if (!model_path.empty()) {
        if (weights_path.empty() || image_path.empty()) {
          std::cerr << "posecert stats: --model needs --weights and --image\n";
          return PC_E_INVALID_ARGUMENT;
        }
        ModelHandle target = load_model(model_path, weights_path);
        TensorHandle img;
        check(pc_tensor_load(image_path.c_str(), &img.p), "loading " + image_path);
        size_t n = 0;
        const float* d = pc_tensor_data(img.p, &n);
        int64_t dims[8];
        size_t rank = 0;
        check(pc_tensor_shape(img.p, dims, 8, &rank), "image shape");
        std::vector<float> x(d, d + n);
        for (auto& v : x) v = static_cast<float>(v * scale + shift);
        TensorHandle in;
        check(pc_tensor_create(dims, rank, x.data(), &in.p), "preprocessing");
        CString hs;
        check(pc_heatmap_stats(target.p, in.p, &hs.p), "stats");
        out["heatmap_symmetry"] = json::parse(hs.str());
      }
      if (!scene_path.empty()) {
        if (thresholds_path.empty()) {
          std::cerr << "posecert stats: --scene needs --thresholds\n";
          return PC_E_INVALID_ARGUMENT;
        }
        CString mc;
        check(pc_monte_carlo(read_file(scene_path).c_str(), read_file(thresholds_path).c_str(), eps_r.data(),
                             eps_t.data(), samples, g.seed, g.workers, &mc.p),
              "monte carlo");
        out["monte_carlo"] = json::parse(mc.str());
      }
      if (out.empty()) {
        std::cerr << "posecert stats: give --model/--weights/--image and/or --scene/--thresholds\n";
        return PC_E_INVALID_ARGUMENT;
      }
      emit(g, with_header(out, "stats"));
    } else if (*cert) {
      json cfg = json::parse(read_file(config_path));
      if (app.count("--seed")) cfg["seed"] = g.seed;
      if (app.count("--workers")) cfg["workers"] = g.workers;
      const std::string base = std::filesystem::path(config_path).parent_path().string();
      check(pc_certify(cfg.dump().c_str(), base.empty() ? "." : base.c_str(), &res.p), "certify");
      if (g.text) {
        CString t;
        check(pc_report_text(res.p, &t.p), "report");
        std::cerr << t.str();
      }
      emit(g, json::parse(res.str()));
    } else if (*toy) {
      check(pc_write_toy_problem(dir.c_str(), g.seed, brightness, &res.p), "toy");
      emit(g, with_header({{"dir", dir}, {"config", json::parse(res.str())}}, "toy"));
    } else if (*validate) {
      CString why;
      const pc_status st = pc_report_validate(read_file(report_path).c_str(), &why.p);
      if (st == PC_E_PARSE) {
        std::cerr << "invalid report: " << (why.p ? why.str() : std::string(pc_last_error())) << "\n";
        return st;
      }
      check(st, "validate");
      std::cout << "valid\n";
    } else if (*pert) {
      TensorHandle img, outt;
      check(pc_tensor_load(image_path.c_str(), &img.p), "loading " + image_path);
      const json pj = kind == "brightness" ? json{{"kind", kind}, {"b", amount}} : json{{"kind", kind}, {"c", amount}};
      check(pc_tensor_perturb(img.p, pj.dump().c_str(), &outt.p), "perturb");
      check(pc_tensor_save(outt.p, out_model.c_str()), "saving " + out_model);
    }
  } catch (const CliError& e) {
    return e.code;
  } catch (const json::exception& e) {
    std::cerr << "posecert: " << e.what() << "\n";
    return PC_E_PARSE;
  }
  return 0;
}
