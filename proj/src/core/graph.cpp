#include "core/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <queue>

#include "core/error.hpp"

namespace posecert {

using nlohmann::json;

namespace {

const std::pair<OpKind, const char*> kOpNames[] = {
    {OpKind::Input, "input"},         {OpKind::Output, "output"},   {OpKind::Conv2d, "conv2d"},
    {OpKind::ConvTranspose2d, "conv_transpose2d"}, {OpKind::BatchNorm, "batchnorm"},
    {OpKind::Relu, "relu"},           {OpKind::AvgPool, "avg_pool"}, {OpKind::Linear, "linear"},
    {OpKind::Flatten, "flatten"},     {OpKind::Split, "split"},     {OpKind::Concat, "concat"},
    {OpKind::Add, "add"},             {OpKind::Softmax, "softmax"}, {OpKind::Dsnt, "dsnt"},
    {OpKind::Argmax, "argmax"},
};

std::pair<int, int> pair_attr(const json& a, const char* key, std::pair<int, int> def) {
  if (!a.contains(key)) return def;
  const json& v = a.at(key);
  if (v.is_number_integer()) return {v.get<int>(), v.get<int>()};
  require(v.is_array() && v.size() == 2, ErrorCode::Parse, std::string("attribute '") + key + "' must be int or [a,b]");
  return {v[0].get<int>(), v[1].get<int>()};
}

std::string ctx(const Node& n) { return "node '" + n.id + "' (" + op_name(n.op) + "): "; }

void expect_inputs(const Node& n, size_t lo, size_t hi) {
  require(n.in.size() >= lo && n.in.size() <= hi, ErrorCode::Shape,
          ctx(n) + "expected " + std::to_string(lo) + (lo == hi ? "" : ".." + std::to_string(hi)) +
              " inputs, got " + std::to_string(n.in.size()));
}

void expect_weights(const Node& n, size_t len) {
  require(n.w.size() == len, ErrorCode::Shape,
          ctx(n) + "weight length " + std::to_string(n.w.size()) + " does not match expected " + std::to_string(len));
}

void parse_attrs(Node& n) {
  const json& a = n.attrs;
  try {
    switch (n.op) {
      case OpKind::Conv2d:
      case OpKind::ConvTranspose2d: {
        n.cout = a.at("out_channels").get<int>();
        std::tie(n.kh, n.kw) = pair_attr(a, "kernel", {1, 1});
        std::tie(n.sh, n.sw) = pair_attr(a, "stride", {1, 1});
        std::tie(n.ph, n.pw) = pair_attr(a, "padding", {0, 0});
        std::tie(n.oph, n.opw) = pair_attr(a, "output_padding", {0, 0});
        n.bias = a.value("bias", true);
        require(n.cout > 0 && n.kh > 0 && n.kw > 0 && n.sh > 0 && n.sw > 0 && n.ph >= 0 && n.pw >= 0,
                ErrorCode::Parse, ctx(n) + "invalid convolution attributes");
        break;
      }
      case OpKind::BatchNorm:
        n.eps = a.value("eps", 1e-5);
        break;
      case OpKind::AvgPool: {
        auto [kv, kh] = pair_attr(a, "kernel", {1, 1});
        auto [sv, sh] = pair_attr(a, "stride", {kv, kh});
        auto [pv, ph] = pair_attr(a, "padding", {0, 0});
        n.pool = PoolingParams{sh, sv, kh, kv, ph, pv, a.value("ceil_mode", false)};
        n.pool.validate();
        break;
      }
      case OpKind::Linear:
        n.cout = a.at("out_features").get<int>();
        n.bias = a.value("bias", true);
        require(n.cout > 0, ErrorCode::Parse, ctx(n) + "out_features must be positive");
        break;
      case OpKind::Split:
        n.channel = a.at("channel").get<int>();
        break;
      case OpKind::Concat:
        n.axis = a.value("axis", 0);
        break;
      default:
        break;
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::Parse, ctx(n) + "bad attributes: " + e.what());
  }
}

void infer_shape(ModelGraph& g, Node& n) {
  auto in_shape = [&](size_t i) -> const Shape& { return g.nodes[static_cast<size_t>(n.in[i])].shape; };
  switch (n.op) {
    case OpKind::Input:
      expect_inputs(n, 0, 0);
      n.shape = g.input_shape;
      break;
    case OpKind::Output:
    case OpKind::Relu:
      expect_inputs(n, 1, 1);
      n.shape = in_shape(0);
      break;
    case OpKind::Conv2d:
    case OpKind::ConvTranspose2d: {
      expect_inputs(n, 1, 1);
      const Shape& s = in_shape(0);
      require(s.size() == 3, ErrorCode::Shape, ctx(n) + "expects a (C,H,W) input, got " + shape_str(s));
      const int64_t cin = s[0];
      expect_weights(n, static_cast<size_t>(cin * n.cout * n.kh * n.kw + (n.bias ? n.cout : 0)));
      int64_t h, w;
      if (n.op == OpKind::Conv2d) {
        h = (s[1] + 2 * n.ph - n.kh) / n.sh + 1;
        w = (s[2] + 2 * n.pw - n.kw) / n.sw + 1;
        require(s[1] + 2 * n.ph >= n.kh && s[2] + 2 * n.pw >= n.kw, ErrorCode::Shape,
                ctx(n) + "kernel larger than padded input");
      } else {
        h = (s[1] - 1) * n.sh - 2 * n.ph + n.kh + n.oph;
        w = (s[2] - 1) * n.sw - 2 * n.pw + n.kw + n.opw;
      }
      require(h > 0 && w > 0, ErrorCode::Shape, ctx(n) + "empty output");
      n.shape = {n.cout, h, w};
      break;
    }
    case OpKind::BatchNorm: {
      expect_inputs(n, 1, 1);
      const Shape& s = in_shape(0);
      require(s.size() == 3 || s.size() == 1, ErrorCode::Shape, ctx(n) + "expects rank 1 or 3");
      expect_weights(n, static_cast<size_t>(4 * s[0]));
      n.shape = s;
      break;
    }
    case OpKind::AvgPool: {
      expect_inputs(n, 1, 1);
      const Shape& s = in_shape(0);
      require(s.size() == 3, ErrorCode::Shape, ctx(n) + "expects a (C,H,W) input");
      n.shape = {s[0], pooled_extent(static_cast<int>(s[1]), n.pool.k_v, n.pool.s_v, n.pool.p_v, n.pool.ceil_mode),
                 pooled_extent(static_cast<int>(s[2]), n.pool.k_h, n.pool.s_h, n.pool.p_h, n.pool.ceil_mode)};
      break;
    }
    case OpKind::Linear: {
      expect_inputs(n, 1, 1);
      const int64_t fin = shape_numel(in_shape(0));
      expect_weights(n, static_cast<size_t>(fin * n.cout + (n.bias ? n.cout : 0)));
      n.shape = {n.cout};
      break;
    }
    case OpKind::Flatten:
      expect_inputs(n, 1, 1);
      n.shape = {shape_numel(in_shape(0))};
      break;
    case OpKind::Split: {
      expect_inputs(n, 1, 1);
      const Shape& s = in_shape(0);
      require(s.size() == 3, ErrorCode::Shape, ctx(n) + "expects a (C,H,W) input");
      require(n.channel >= 0 && n.channel < s[0], ErrorCode::Shape, ctx(n) + "channel out of range");
      n.shape = {1, s[1], s[2]};
      break;
    }
    case OpKind::Concat: {
      expect_inputs(n, 1, 64);
      Shape s = in_shape(0);
      require(n.axis >= 0 && n.axis < static_cast<int>(s.size()), ErrorCode::Shape, ctx(n) + "axis out of range");
      for (size_t i = 1; i < n.in.size(); ++i) {
        const Shape& t = in_shape(i);
        require(t.size() == s.size(), ErrorCode::Shape, ctx(n) + "rank mismatch");
        for (size_t d = 0; d < s.size(); ++d)
          if (static_cast<int>(d) != n.axis)
            require(t[d] == s[d], ErrorCode::Shape, ctx(n) + "shape mismatch " + shape_str(s) + " vs " + shape_str(t));
        s[static_cast<size_t>(n.axis)] += t[static_cast<size_t>(n.axis)];
      }
      n.shape = s;
      break;
    }
    case OpKind::Add:
      expect_inputs(n, 2, 2);
      require(in_shape(0) == in_shape(1), ErrorCode::Shape, ctx(n) + "operand shapes differ");
      n.shape = in_shape(0);
      break;
    case OpKind::Softmax:
      expect_inputs(n, 1, 1);
      require(in_shape(0).size() == 3 || in_shape(0).size() == 1, ErrorCode::Shape, ctx(n) + "expects rank 1 or 3");
      n.shape = in_shape(0);
      break;
    case OpKind::Dsnt:
    case OpKind::Argmax:
      expect_inputs(n, 1, 1);
      require(in_shape(0).size() == 3, ErrorCode::Shape, ctx(n) + "expects a (C,H,W) input");
      n.shape = {in_shape(0)[0], 2};
      break;
  }
}

}  // namespace

OpKind op_from_string(const std::string& s) {
  for (auto& [k, name] : kOpNames)
    if (s == name) return k;
  fail(ErrorCode::Parse, "unknown operator '" + s + "'");
}

const char* op_name(OpKind k) {
  for (auto& [kk, name] : kOpNames)
    if (kk == k) return name;
  return "?";
}

bool op_is_affine(OpKind k) {
  switch (k) {
    case OpKind::Input:
    case OpKind::Output:
    case OpKind::Conv2d:
    case OpKind::ConvTranspose2d:
    case OpKind::BatchNorm:
    case OpKind::AvgPool:
    case OpKind::Linear:
    case OpKind::Flatten:
    case OpKind::Split:
    case OpKind::Concat:
    case OpKind::Add:
      return true;
    default:
      return false;
  }
}

int ModelGraph::find(const std::string& id) const {
  for (size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].id == id) return static_cast<int>(i);
  return -1;
}

ModelGraph build_graph(const Shape& input_shape, const std::vector<NodeSpec>& specs,
                       const std::vector<std::string>& outputs) {
  require(!input_shape.empty() && shape_numel(input_shape) > 0, ErrorCode::Shape, "model input shape is empty");
  std::map<std::string, size_t> index;
  for (size_t i = 0; i < specs.size(); ++i) {
    require(!specs[i].id.empty(), ErrorCode::Parse, "node without id");
    require(index.emplace(specs[i].id, i).second, ErrorCode::Parse, "duplicate node id '" + specs[i].id + "'");
  }

  // Kahn's algorithm; ties resolved by declaration order so the result is deterministic.
  const size_t n = specs.size();
  std::vector<std::vector<size_t>> succ(n);
  std::vector<size_t> indeg(n, 0);
  for (size_t i = 0; i < n; ++i)
    for (const auto& src : specs[i].inputs) {
      auto it = index.find(src);
      require(it != index.end(), ErrorCode::Parse, "edge from unknown node '" + src + "' to '" + specs[i].id + "'");
      succ[it->second].push_back(i);
      ++indeg[i];
    }
  std::priority_queue<size_t, std::vector<size_t>, std::greater<>> ready;
  for (size_t i = 0; i < n; ++i)
    if (indeg[i] == 0) ready.push(i);
  std::vector<size_t> order;
  while (!ready.empty()) {
    size_t i = ready.top();
    ready.pop();
    order.push_back(i);
    for (size_t j : succ[i])
      if (--indeg[j] == 0) ready.push(j);
  }
  require(order.size() == n, ErrorCode::Parse, "cycle detected in model graph");

  ModelGraph g;
  g.input_shape = input_shape;
  std::map<std::string, int> pos;
  for (size_t i : order) {
    const NodeSpec& s = specs[i];
    Node node;
    node.id = s.id;
    node.op = op_from_string(s.op);
    node.attrs = s.attrs.is_null() ? json::object() : s.attrs;
    node.w = s.weights;
    for (const auto& src : s.inputs) node.in.push_back(pos.at(src));
    parse_attrs(node);
    if (node.op == OpKind::Input) {
      require(g.input < 0, ErrorCode::Parse, "model has more than one input node");
      g.input = static_cast<int>(g.nodes.size());
    }
    pos[node.id] = static_cast<int>(g.nodes.size());
    g.nodes.push_back(std::move(node));
    infer_shape(g, g.nodes.back());
  }
  require(g.input >= 0, ErrorCode::Parse, "model has no input node");
  require(!outputs.empty(), ErrorCode::Parse, "model declares no outputs");
  for (const auto& o : outputs) {
    auto it = pos.find(o);
    require(it != pos.end(), ErrorCode::Parse, "unknown output node '" + o + "'");
    g.outputs.push_back(it->second);
  }
  return g;
}

ModelGraph parse_manifest(const json& m, const std::vector<float>& blob) {
  try {
    Shape input = m.at("input").at("shape").get<Shape>();
    std::vector<NodeSpec> specs;
    std::map<std::string, size_t> idx;
    for (const auto& jn : m.at("nodes")) {
      NodeSpec s;
      s.id = jn.at("id").get<std::string>();
      s.op = jn.at("op").get<std::string>();
      if (jn.contains("attrs")) s.attrs = jn.at("attrs");
      if (jn.contains("weight") && !jn.at("weight").is_null()) {
        int64_t off = jn.at("weight").at("offset").get<int64_t>();
        int64_t len = jn.at("weight").at("len").get<int64_t>();
        require(off >= 0 && len >= 0, ErrorCode::Parse, "node '" + s.id + "': negative weight reference");
        require(off + len <= static_cast<int64_t>(blob.size()), ErrorCode::Parse,
                "node '" + s.id + "': weight out of range (offset " + std::to_string(off) + " + len " +
                    std::to_string(len) + " > blob " + std::to_string(blob.size()) + ")");
        s.weights.assign(blob.begin() + off, blob.begin() + off + len);
      }
      idx[s.id] = specs.size();
      specs.push_back(std::move(s));
    }
    if (m.contains("edges"))
      for (const auto& e : m.at("edges")) {
        require(e.is_array() && e.size() == 2, ErrorCode::Parse, "edge must be [from, to]");
        auto to = e[1].get<std::string>();
        auto it = idx.find(to);
        require(it != idx.end(), ErrorCode::Parse, "edge to unknown node '" + to + "'");
        specs[it->second].inputs.push_back(e[0].get<std::string>());
      }
    return build_graph(input, specs, m.at("outputs").get<std::vector<std::string>>());
  } catch (const json::exception& e) {
    fail(ErrorCode::Parse, std::string("malformed manifest: ") + e.what());
  }
}

std::vector<float> read_blob(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) fail(ErrorCode::Io, "cannot open " + path);
  auto sz = static_cast<size_t>(f.tellg());
  require(sz % 4 == 0, ErrorCode::Parse, path + ": weight blob length is not a multiple of 4");
  std::vector<float> v(sz / 4);
  f.seekg(0);
  f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(sz));
  return v;
}

void write_blob(const std::string& path, const std::vector<float>& blob) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::Io, "cannot write " + path);
  f.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size() * 4));
}

ModelGraph load_model(const std::string& manifest_path, const std::string& weights_path) {
  std::ifstream f(manifest_path);
  if (!f) fail(ErrorCode::Io, "cannot open " + manifest_path);
  json m;
  try {
    f >> m;
  } catch (const json::exception& e) {
    fail(ErrorCode::Parse, manifest_path + ": " + e.what());
  }
  std::vector<float> blob;
  if (!weights_path.empty()) blob = read_blob(weights_path);
  return parse_manifest(m, blob);
}

std::vector<NodeSpec> to_specs(const ModelGraph& g) {
  std::vector<NodeSpec> specs;
  for (const auto& n : g.nodes) {
    NodeSpec s{n.id, op_name(n.op), n.attrs, n.w, {}};
    for (int i : n.in) s.inputs.push_back(g.nodes[static_cast<size_t>(i)].id);
    specs.push_back(std::move(s));
  }
  return specs;
}

json to_manifest(const ModelGraph& g, std::vector<float>& blob) {
  json m;
  m["input"] = {{"shape", g.input_shape}};
  m["nodes"] = json::array();
  m["edges"] = json::array();
  for (const auto& n : g.nodes) {
    json jn = {{"id", n.id}, {"op", op_name(n.op)}, {"attrs", n.attrs}};
    if (!n.w.empty()) {
      jn["weight"] = {{"offset", blob.size()}, {"len", n.w.size()}};
      blob.insert(blob.end(), n.w.begin(), n.w.end());
    }
    m["nodes"].push_back(jn);
    for (int i : n.in) m["edges"].push_back({g.nodes[static_cast<size_t>(i)].id, n.id});
  }
  m["outputs"] = json::array();
  for (int o : g.outputs) m["outputs"].push_back(g.nodes[static_cast<size_t>(o)].id);
  return m;
}

void save_model(const ModelGraph& g, const std::string& manifest_path, const std::string& weights_path) {
  std::vector<float> blob;
  json m = to_manifest(g, blob);
  std::ofstream f(manifest_path);
  if (!f) fail(ErrorCode::Io, "cannot write " + manifest_path);
  f << m.dump(1) << "\n";
  write_blob(weights_path, blob);
}

namespace {

Tensor conv2d(const Node& n, const Tensor& x) {
  const int64_t cin = x.dim(0), H = x.dim(1), W = x.dim(2);
  Tensor y(n.shape);
  const int64_t oh = n.shape[1], ow = n.shape[2];
  const float* w = n.w.data();
  for (int64_t o = 0; o < n.cout; ++o)
    for (int64_t i = 0; i < oh; ++i)
      for (int64_t j = 0; j < ow; ++j) {
        double acc = n.bias ? n.w[static_cast<size_t>(cin * n.cout * n.kh * n.kw + o)] : 0.0;
        for (int64_t c = 0; c < cin; ++c)
          for (int a = 0; a < n.kh; ++a) {
            const int64_t r = i * n.sh - n.ph + a;
            if (r < 0 || r >= H) continue;
            for (int b = 0; b < n.kw; ++b) {
              const int64_t q = j * n.sw - n.pw + b;
              if (q < 0 || q >= W) continue;
              acc += static_cast<double>(w[((o * cin + c) * n.kh + a) * n.kw + b]) * x.at(c, r, q);
            }
          }
        y.at(o, i, j) = static_cast<float>(acc);
      }
  return y;
}

Tensor conv_transpose2d(const Node& n, const Tensor& x) {
  const int64_t cin = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int64_t oh = n.shape[1], ow = n.shape[2];
  std::vector<double> acc(static_cast<size_t>(n.cout * oh * ow), 0.0);
  if (n.bias)
    for (int64_t o = 0; o < n.cout; ++o)
      std::fill_n(acc.begin() + o * oh * ow, oh * ow, n.w[static_cast<size_t>(cin * n.cout * n.kh * n.kw + o)]);
  for (int64_t c = 0; c < cin; ++c)
    for (int64_t i = 0; i < H; ++i)
      for (int64_t j = 0; j < W; ++j) {
        const double v = x.at(c, i, j);
        if (v == 0.0) continue;
        for (int64_t o = 0; o < n.cout; ++o)
          for (int a = 0; a < n.kh; ++a) {
            const int64_t r = i * n.sh - n.ph + a;
            if (r < 0 || r >= oh) continue;
            for (int b = 0; b < n.kw; ++b) {
              const int64_t q = j * n.sw - n.pw + b;
              if (q < 0 || q >= ow) continue;
              acc[static_cast<size_t>((o * oh + r) * ow + q)] +=
                  v * n.w[static_cast<size_t>(((c * n.cout + o) * n.kh + a) * n.kw + b)];
            }
          }
      }
  Tensor y(n.shape);
  for (size_t i = 0; i < acc.size(); ++i) y.data[i] = static_cast<float>(acc[i]);
  return y;
}

Tensor batchnorm(const Node& n, const Tensor& x) {
  Tensor y = x;
  const int64_t C = x.dim(0);
  const int64_t per = x.numel() / C;
  for (int64_t c = 0; c < C; ++c) {
    const double g = n.w[static_cast<size_t>(c)], b = n.w[static_cast<size_t>(C + c)];
    const double mu = n.w[static_cast<size_t>(2 * C + c)], var = n.w[static_cast<size_t>(3 * C + c)];
    const double scale = g / std::sqrt(var + n.eps);
    for (int64_t k = 0; k < per; ++k) {
      float& v = y.data[static_cast<size_t>(c * per + k)];
      v = static_cast<float>((v - mu) * scale + b);
    }
  }
  return y;
}

Tensor linear(const Node& n, const Tensor& x) {
  const int64_t fin = x.numel();
  Tensor y(n.shape);
  for (int64_t o = 0; o < n.cout; ++o) {
    double acc = n.bias ? n.w[static_cast<size_t>(fin * n.cout + o)] : 0.0;
    const float* row = n.w.data() + o * fin;
    for (int64_t i = 0; i < fin; ++i) acc += static_cast<double>(row[i]) * x.data[static_cast<size_t>(i)];
    y.data[static_cast<size_t>(o)] = static_cast<float>(acc);
  }
  return y;
}

Tensor concat(const Node& n, const std::vector<const Tensor*>& xs) {
  Tensor y(n.shape);
  const Shape& s = n.shape;
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < n.axis; ++d) outer *= s[static_cast<size_t>(d)];
  for (size_t d = static_cast<size_t>(n.axis) + 1; d < s.size(); ++d) inner *= s[d];
  int64_t off = 0;
  const int64_t total = s[static_cast<size_t>(n.axis)];
  for (const Tensor* x : xs) {
    const int64_t len = x->shape[static_cast<size_t>(n.axis)];
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(y.data.data() + (o * total + off) * inner, x->data.data() + o * len * inner,
                  static_cast<size_t>(len * inner) * sizeof(float));
    off += len;
  }
  return y;
}

void softmax_range(float* p, int64_t len) {
  float mx = *std::max_element(p, p + len);
  double s = 0;
  std::vector<double> e(static_cast<size_t>(len));
  for (int64_t i = 0; i < len; ++i) s += (e[static_cast<size_t>(i)] = std::exp(static_cast<double>(p[i]) - mx));
  for (int64_t i = 0; i < len; ++i) p[i] = static_cast<float>(e[static_cast<size_t>(i)] / s);
}

Tensor softmax_t(const Tensor& x) {
  Tensor y = x;
  if (x.rank() == 1) {
    softmax_range(y.data.data(), y.numel());
  } else {
    const int64_t plane = x.dim(1) * x.dim(2);
    for (int64_t c = 0; c < x.dim(0); ++c) softmax_range(y.data.data() + c * plane, plane);
  }
  return y;
}

Tensor decode_head(const Node& n, const Tensor& x) {
  Tensor y(n.shape);
  for (int64_t c = 0; c < x.dim(0); ++c) {
    Heatmap h = Heatmap::from_channel(x, c);
    if (n.op == OpKind::Dsnt) {
      // Tolerate float32 normalization error by renormalizing in double.
      double s = 0;
      for (double v : h.v) s += v;
      require(s > 0, ErrorCode::Numeric, ctx(n) + "heatmap sums to zero");
      for (double& v : h.v) v /= s;
      DsntResult r = dsnt_decode(h);
      y.data[static_cast<size_t>(2 * c)] = static_cast<float>(r.col_norm);
      y.data[static_cast<size_t>(2 * c + 1)] = static_cast<float>(r.row_norm);
    } else {
      ArgmaxResult r = argmax_decode(h);
      y.data[static_cast<size_t>(2 * c)] = static_cast<float>(r.col);
      y.data[static_cast<size_t>(2 * c + 1)] = static_cast<float>(r.row);
    }
  }
  return y;
}

Tensor eval_node(const Node& n, const std::vector<const Tensor*>& xs) {
  switch (n.op) {
    case OpKind::Input:
    case OpKind::Output:
      return *xs[0];
    case OpKind::Conv2d:
      return conv2d(n, *xs[0]);
    case OpKind::ConvTranspose2d:
      return conv_transpose2d(n, *xs[0]);
    case OpKind::BatchNorm:
      return batchnorm(n, *xs[0]);
    case OpKind::Relu: {
      Tensor y = *xs[0];
      for (float& v : y.data) v = v > 0.0f ? v : 0.0f;
      return y;
    }
    case OpKind::AvgPool: {
      const Tensor& x = *xs[0];
      Tensor y(n.shape);
      const int64_t ip = x.dim(1) * x.dim(2), op = n.shape[1] * n.shape[2];
      for (int64_t c = 0; c < x.dim(0); ++c)
        avg_pool_plane(x.data.data() + c * ip, static_cast<int>(x.dim(1)), static_cast<int>(x.dim(2)), n.pool,
                       y.data.data() + c * op);
      return y;
    }
    case OpKind::Linear:
      return linear(n, *xs[0]);
    case OpKind::Flatten:
      return Tensor(n.shape, xs[0]->data);
    case OpKind::Split: {
      const Tensor& x = *xs[0];
      const int64_t plane = x.dim(1) * x.dim(2);
      return Tensor(n.shape, std::vector<float>(x.data.begin() + n.channel * plane,
                                                x.data.begin() + (n.channel + 1) * plane));
    }
    case OpKind::Concat:
      return concat(n, xs);
    case OpKind::Add: {
      Tensor y = *xs[0];
      for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += xs[1]->data[i];
      return y;
    }
    case OpKind::Softmax:
      return softmax_t(*xs[0]);
    case OpKind::Dsnt:
    case OpKind::Argmax:
      return decode_head(n, *xs[0]);
  }
  fail(ErrorCode::Internal, "unhandled operator");
}

}  // namespace

std::vector<Tensor> run_graph_all(const ModelGraph& g, const Tensor& input) {
  require(input.shape == g.input_shape, ErrorCode::Shape,
          "input shape " + shape_str(input.shape) + " does not match model input " + shape_str(g.input_shape));
  std::vector<Tensor> vals(g.nodes.size());
  for (size_t i = 0; i < g.nodes.size(); ++i) {
    const Node& n = g.nodes[i];
    if (n.op == OpKind::Input) {
      vals[i] = input;
    } else {
      std::vector<const Tensor*> xs;
      for (int j : n.in) xs.push_back(&vals[static_cast<size_t>(j)]);
      vals[i] = eval_node(n, xs);
    }
    require(vals[i].all_finite(), ErrorCode::Numeric, "non-finite value produced at node '" + n.id + "'");
  }
  return vals;
}

Tensor run_graph(const ModelGraph& g, const Tensor& input) {
  auto vals = run_graph_all(g, input);
  return std::move(vals[static_cast<size_t>(g.outputs.front())]);
}

}  // namespace posecert
