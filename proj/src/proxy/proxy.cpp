#include "proxy/proxy.hpp"

#include <algorithm>
#include <set>

#include "core/error.hpp"

namespace posecert {

using nlohmann::json;

namespace {

// Returns (stride=kernel, padding) for one axis.
std::pair<int, int> axis_params(int v, int dv) {
  const int k = 2 * dv + 1;
  int r = v % k;
  if (r == 0) r = k;
  const int p = r <= (k + 1) / 2 ? (k + 1) / 2 - r : (3 * k + 1) / 2 - r;
  require(p >= 0 && p < k, ErrorCode::Internal, "pooling padding outside [0, k)");
  return {k, p};
}

int patch_index(int v, int k, int p) { return (v + p + k - 1) / k; }
int patch_center(int q, int k, int p) { return (q - 1) * k + (k + 1) / 2 - p; }

}  // namespace

PoolingParams pooling_params(int v_h, int v_v, int dv_h, int dv_v, int rows, int cols) {
  require(v_h >= 1 && v_h <= cols && v_v >= 1 && v_v <= rows, ErrorCode::InvalidArgument,
          "keypoint (" + std::to_string(v_h) + "," + std::to_string(v_v) + ") outside the " + std::to_string(rows) +
              "x" + std::to_string(cols) + " heatmap");
  require(dv_h >= 0 && dv_v >= 0, ErrorCode::InvalidArgument, "pooling thresholds must be non-negative");
  auto [kh, ph] = axis_params(v_h, dv_h);
  auto [kv, pv] = axis_params(v_v, dv_v);
  // ceil mode: the patches tile the whole plane, so a peak next to the far edge still lands in its own patch
  PoolingParams p{kh, kv, kh, kv, ph, pv, true};
  p.validate(true);
  return p;
}

AveragedKeypoint averaged_keypoint(int id, int v_h, int v_v, const PoolingParams& p, int rows, int cols) {
  p.validate(true);
  AveragedKeypoint a;
  a.id = id;
  a.v_h = v_h;
  a.v_v = v_v;
  a.params = p;
  a.vbar_h = patch_index(v_h, p.k_h, p.p_h);
  a.vbar_v = patch_index(v_v, p.k_v, p.p_v);
  require(patch_center(a.vbar_h, p.k_h, p.p_h) == v_h && patch_center(a.vbar_v, p.k_v, p.p_v) == v_v,
          ErrorCode::Internal, "pooling patch center misaligned with keypoint " + std::to_string(id));
  a.pooled_rows = pooled_extent(rows, p.k_v, p.s_v, p.p_v, p.ceil_mode);
  a.pooled_cols = pooled_extent(cols, p.k_h, p.s_h, p.p_h, p.ceil_mode);
  return a;
}

ModelGraph strip_head(const ModelGraph& target) {
  int heat = -1;
  for (const auto& n : target.nodes)
    if (n.op == OpKind::Softmax || n.op == OpKind::Dsnt || n.op == OpKind::Argmax) {
      heat = n.in.at(0);
      break;
    }
  if (heat < 0) return target;
  std::set<int> keep;
  std::vector<int> stack{heat};
  while (!stack.empty()) {
    int i = stack.back();
    stack.pop_back();
    if (!keep.insert(i).second) continue;
    for (int j : target.nodes[static_cast<size_t>(i)].in) stack.push_back(j);
  }
  auto all = to_specs(target);
  std::vector<NodeSpec> specs;
  for (int i : keep) specs.push_back(all[static_cast<size_t>(i)]);
  return build_graph(target.input_shape, specs, {target.nodes[static_cast<size_t>(heat)].id});
}

ProxyModel build_proxy(const ModelGraph& backbone, const std::vector<PoolingParams>& params) {
  const Node& heat = backbone.output_node(0);
  require(heat.shape.size() == 3, ErrorCode::Shape, "proxy: backbone output must be a (K,H,W) heatmap stack");
  require(static_cast<size_t>(heat.shape[0]) == params.size(), ErrorCode::Shape,
          "proxy: backbone has " + std::to_string(heat.shape[0]) + " heatmap channels but " +
              std::to_string(params.size()) + " pooling parameter sets were given");
  auto specs = to_specs(backbone);
  ProxyModel pm;
  pm.backbone_nodes = specs.size();
  pm.params = params;
  std::vector<std::string> flats;
  int64_t off = 0;
  const int rows = static_cast<int>(heat.shape[1]), cols = static_cast<int>(heat.shape[2]);
  for (size_t k = 0; k < params.size(); ++k) {
    const auto& p = params[k];
    p.validate();
    const std::string ks = std::to_string(k);
    specs.push_back({"proxy/split_" + ks, "split", {{"channel", k}}, {}, {heat.id}});
    specs.push_back({"proxy/pool_" + ks,
                     "avg_pool",
                     {{"kernel", {p.k_v, p.k_h}},
                      {"stride", {p.s_v, p.s_h}},
                      {"padding", {p.p_v, p.p_h}},
                      {"ceil_mode", p.ceil_mode}},
                     {},
                     {"proxy/split_" + ks}});
    specs.push_back({"proxy/flat_" + ks, "flatten", json::object(), {}, {"proxy/pool_" + ks}});
    flats.push_back("proxy/flat_" + ks);
    ProxySegment seg;
    seg.keypoint = static_cast<int>(k);
    seg.rows = pooled_extent(rows, p.k_v, p.s_v, p.p_v, p.ceil_mode);
    seg.cols = pooled_extent(cols, p.k_h, p.s_h, p.p_h, p.ceil_mode);
    seg.offset = off;
    seg.len = static_cast<int64_t>(seg.rows) * seg.cols;
    off += seg.len;
    pm.segments.push_back(seg);
  }
  json cattrs = {{"axis", 0}};
  std::vector<std::string> bouts;
  for (int o : backbone.outputs) bouts.push_back(backbone.nodes[static_cast<size_t>(o)].id);
  cattrs["backbone_outputs"] = bouts;
  specs.push_back({"proxy/concat", "concat", cattrs, {}, flats});
  specs.push_back({"proxy/output", "output", json::object(), {}, {"proxy/concat"}});
  pm.graph = build_graph(backbone.input_shape, specs, {"proxy/output"});
  return pm;
}

ModelGraph strip_proxy(const ProxyModel& proxy) {
  auto specs = to_specs(proxy.graph);
  const Node& c = proxy.graph.nodes.at(static_cast<size_t>(proxy.graph.find("proxy/concat")));
  auto outs = c.attrs.at("backbone_outputs").get<std::vector<std::string>>();
  specs.resize(proxy.backbone_nodes);
  return build_graph(proxy.graph.input_shape, specs, outs);
}

int64_t OutputPolytope::dims() const {
  int64_t n = 0;
  for (const auto& b : blocks) n = std::max(n, b.offset + b.len);
  return n;
}

Eigen::MatrixXd OutputPolytope::dense_A() const {
  const int64_t n = dims();
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  for (const auto& b : blocks)
    for (int64_t r = 0; r < b.len; ++r) {
      A(b.offset + r, b.offset + r) = 1.0;
      if (!b.skip && r != b.vbar) A(b.offset + r, b.offset + b.vbar) = -1.0;
    }
  return A;
}

Eigen::VectorXd OutputPolytope::dense_b() const {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(dims());
  for (const auto& b : blocks)
    for (int64_t r = 0; r < b.len; ++r)
      if (b.skip || r == b.vbar) v[b.offset + r] = M;
  return v;
}

double OutputPolytope::worst_margin(const float* y, int64_t n) const {
  require(n >= dims(), ErrorCode::Shape, "output spec dimension exceeds model output");
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& b : blocks) {
    const float* s = y + b.offset;
    if (b.skip) {
      for (int64_t r = 0; r < b.len; ++r) worst = std::max(worst, static_cast<double>(s[r]) - M);
      continue;
    }
    const double yv = s[b.vbar];
    worst = std::max(worst, yv - M);
    for (int64_t r = 0; r < b.len; ++r)
      if (r != b.vbar) worst = std::max(worst, static_cast<double>(s[r]) - yv);
  }
  return worst;
}

OutputPolytope output_spec(const std::vector<AveragedKeypoint>& avgd, const std::set<int>& skip, double M) {
  OutputPolytope s;
  s.M = M;
  int64_t off = 0;
  for (const auto& a : avgd) {
    OutputPolytope::Block b;
    b.keypoint = a.id;
    b.offset = off;
    b.len = static_cast<int64_t>(a.pooled_rows) * a.pooled_cols;
    b.skip = skip.count(a.id) > 0;
    if (!b.skip) {
      require(a.vbar_h >= 1 && a.vbar_h <= a.pooled_cols && a.vbar_v >= 1 && a.vbar_v <= a.pooled_rows,
              ErrorCode::InvalidArgument, "averaged keypoint " + std::to_string(a.id) + " out of pooled range");
      b.vbar = a.flat();
    }
    off += b.len;
    s.blocks.push_back(b);
  }
  return s;
}

json output_spec_to_json(const OutputPolytope& s) {
  json blocks = json::array();
  for (const auto& b : s.blocks)
    blocks.push_back({{"keypoint", b.keypoint}, {"offset", b.offset}, {"len", b.len}, {"vbar", b.vbar}, {"skip", b.skip}});
  return {{"M", s.M}, {"blocks", blocks}};
}

OutputPolytope output_spec_from_json(const json& j) {
  try {
    OutputPolytope s;
    s.M = j.value("M", 1e6);
    for (const auto& jb : j.at("blocks")) {
      OutputPolytope::Block b;
      b.keypoint = jb.at("keypoint").get<int>();
      b.offset = jb.at("offset").get<int64_t>();
      b.len = jb.at("len").get<int64_t>();
      b.vbar = jb.value("vbar", int64_t{0});
      b.skip = jb.value("skip", false);
      require(b.len > 0 && b.offset >= 0 && (b.skip || (b.vbar >= 0 && b.vbar < b.len)), ErrorCode::Parse,
              "output spec: invalid block");
      s.blocks.push_back(b);
    }
    return s;
  } catch (const json::exception& e) {
    fail(ErrorCode::Parse, std::string("malformed output spec: ") + e.what());
  }
}

json proxy_sidecar(const ProxyModel& proxy, const std::vector<AveragedKeypoint>& avgd) {
  json j = json::object();
  for (size_t k = 0; k < proxy.segments.size(); ++k) {
    const auto& seg = proxy.segments[k];
    const auto& p = proxy.params[k];
    json e = {{"pool", {{"s", {p.s_h, p.s_v}}, {"k", {p.k_h, p.k_v}}, {"p", {p.p_h, p.p_v}}, {"ceil_mode", p.ceil_mode}}},
              {"segment", {{"offset", seg.offset}, {"len", seg.len}, {"rows", seg.rows}, {"cols", seg.cols}}}};
    if (k < avgd.size()) e["v_bar"] = {avgd[k].vbar_h, avgd[k].vbar_v};
    j[std::to_string(k)] = e;
  }
  return j;
}

}  // namespace posecert
