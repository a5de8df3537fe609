#include <cmath>
#include <vector>

#include "core/error.hpp"
#include "verifier/hull.hpp"

namespace posecert {

namespace {

using Trip = Eigen::Triplet<double, int64_t>;

SpMat from_triplets(int64_t rows, int64_t cols, const std::vector<Trip>& t) {
  SpMat m(rows, cols);
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

CompiledNode compile_conv(const Node& n, const Shape& in) {
  const int64_t cin = in[0], H = in[1], W = in[2];
  const int64_t oh = n.shape[1], ow = n.shape[2];
  const int64_t nout = shape_numel(n.shape), nin = shape_numel(in);
  const size_t wlen = static_cast<size_t>(cin * n.cout * n.kh * n.kw);
  std::vector<Trip> t;
  CompiledNode cn;
  cn.bias = Eigen::VectorXd::Zero(nout);
  if (n.op == OpKind::Conv2d) {
    for (int64_t o = 0; o < n.cout; ++o)
      for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j) {
          const int64_t row = (o * oh + i) * ow + j;
          if (n.bias) cn.bias[row] = n.w[wlen + static_cast<size_t>(o)];
          for (int64_t c = 0; c < cin; ++c)
            for (int a = 0; a < n.kh; ++a) {
              const int64_t r = i * n.sh - n.ph + a;
              if (r < 0 || r >= H) continue;
              for (int b = 0; b < n.kw; ++b) {
                const int64_t q = j * n.sw - n.pw + b;
                if (q < 0 || q >= W) continue;
                const double v = n.w[static_cast<size_t>(((o * cin + c) * n.kh + a) * n.kw + b)];
                if (v != 0.0) t.emplace_back(row, (c * H + r) * W + q, v);
              }
            }
        }
  } else {
    if (n.bias)
      for (int64_t o = 0; o < n.cout; ++o) cn.bias.segment(o * oh * ow, oh * ow).setConstant(n.w[wlen + static_cast<size_t>(o)]);
    for (int64_t c = 0; c < cin; ++c)
      for (int64_t i = 0; i < H; ++i)
        for (int64_t j = 0; j < W; ++j)
          for (int64_t o = 0; o < n.cout; ++o)
            for (int a = 0; a < n.kh; ++a) {
              const int64_t r = i * n.sh - n.ph + a;
              if (r < 0 || r >= oh) continue;
              for (int b = 0; b < n.kw; ++b) {
                const int64_t q = j * n.sw - n.pw + b;
                if (q < 0 || q >= ow) continue;
                const double v = n.w[static_cast<size_t>(((c * n.cout + o) * n.kh + a) * n.kw + b)];
                if (v != 0.0) t.emplace_back((o * oh + r) * ow + q, (c * H + i) * W + j, v);
              }
            }
  }
  cn.W.push_back(from_triplets(nout, nin, t));
  return cn;
}

CompiledNode compile_batchnorm(const Node& n, const Shape& in) {
  const int64_t C = in[0], N = shape_numel(in), per = N / C;
  std::vector<Trip> t;
  CompiledNode cn;
  cn.bias.resize(N);
  for (int64_t c = 0; c < C; ++c) {
    const double g = n.w[static_cast<size_t>(c)], b = n.w[static_cast<size_t>(C + c)];
    const double mu = n.w[static_cast<size_t>(2 * C + c)], var = n.w[static_cast<size_t>(3 * C + c)];
    const double s = g / std::sqrt(var + n.eps);
    for (int64_t k = 0; k < per; ++k) {
      t.emplace_back(c * per + k, c * per + k, s);
      cn.bias[c * per + k] = b - mu * s;
    }
  }
  cn.W.push_back(from_triplets(N, N, t));
  return cn;
}

CompiledNode compile_pool(const Node& n, const Shape& in) {
  const int64_t C = in[0], H = in[1], W = in[2], oh = n.shape[1], ow = n.shape[2];
  const auto& p = n.pool;
  const double inv = 1.0 / (static_cast<double>(p.k_h) * p.k_v);
  std::vector<Trip> t;
  for (int64_t c = 0; c < C; ++c)
    for (int64_t i = 0; i < oh; ++i)
      for (int64_t j = 0; j < ow; ++j)
        for (int a = 0; a < p.k_v; ++a) {
          const int64_t r = i * p.s_v - p.p_v + a;
          if (r < 0 || r >= H) continue;
          for (int b = 0; b < p.k_h; ++b) {
            const int64_t q = j * p.s_h - p.p_h + b;
            if (q < 0 || q >= W) continue;
            t.emplace_back((c * oh + i) * ow + j, (c * H + r) * W + q, inv);
          }
        }
  CompiledNode cn;
  cn.bias = Eigen::VectorXd::Zero(C * oh * ow);
  cn.W.push_back(from_triplets(C * oh * ow, shape_numel(in), t));
  return cn;
}

CompiledNode compile_linear(const Node& n, const Shape& in) {
  const int64_t fin = shape_numel(in);
  std::vector<Trip> t;
  CompiledNode cn;
  cn.bias = Eigen::VectorXd::Zero(n.cout);
  for (int64_t o = 0; o < n.cout; ++o) {
    if (n.bias) cn.bias[o] = n.w[static_cast<size_t>(fin * n.cout + o)];
    for (int64_t i = 0; i < fin; ++i) {
      const double v = n.w[static_cast<size_t>(o * fin + i)];
      if (v != 0.0) t.emplace_back(o, i, v);
    }
  }
  cn.W.push_back(from_triplets(n.cout, fin, t));
  return cn;
}

CompiledNode compile_split(const Node& n, const Shape& in) {
  const int64_t plane = in[1] * in[2];
  std::vector<Trip> t;
  for (int64_t k = 0; k < plane; ++k) t.emplace_back(k, n.channel * plane + k, 1.0);
  CompiledNode cn;
  cn.bias = Eigen::VectorXd::Zero(plane);
  cn.W.push_back(from_triplets(plane, shape_numel(in), t));
  return cn;
}

CompiledNode compile_concat(const Node& n, const std::vector<Shape>& ins) {
  const Shape& s = n.shape;
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < n.axis; ++d) outer *= s[static_cast<size_t>(d)];
  for (size_t d = static_cast<size_t>(n.axis) + 1; d < s.size(); ++d) inner *= s[d];
  const int64_t total = s[static_cast<size_t>(n.axis)], nout = shape_numel(s);
  CompiledNode cn;
  cn.bias = Eigen::VectorXd::Zero(nout);
  int64_t off = 0;
  for (const Shape& in : ins) {
    const int64_t len = in[static_cast<size_t>(n.axis)];
    std::vector<Trip> t;
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t l = 0; l < len; ++l)
        for (int64_t k = 0; k < inner; ++k) t.emplace_back((o * total + off + l) * inner + k, (o * len + l) * inner + k, 1.0);
    cn.W.push_back(from_triplets(nout, shape_numel(in), t));
    off += len;
  }
  return cn;
}

CompiledNode compile_add(const Node& n) {
  const int64_t N = shape_numel(n.shape);
  SpMat I(N, N);
  I.setIdentity();
  CompiledNode cn;
  cn.bias = Eigen::VectorXd::Zero(N);
  cn.W = {I, I};
  return cn;
}

}  // namespace

CompiledModel compile_model(const ModelGraph& g) {
  CompiledModel cm;
  cm.graph = &g;
  cm.nodes.resize(g.nodes.size());
  for (size_t i = 0; i < g.nodes.size(); ++i) {
    const Node& n = g.nodes[i];
    std::vector<Shape> ins;
    for (int j : n.in) ins.push_back(g.nodes[static_cast<size_t>(j)].shape);
    switch (n.op) {
      case OpKind::Input:
      case OpKind::Output:
      case OpKind::Flatten:
        cm.nodes[i].identity = true;
        break;
      case OpKind::Relu:
        cm.relu_nodes.push_back(static_cast<int>(i));
        break;
      case OpKind::Conv2d:
      case OpKind::ConvTranspose2d:
        cm.nodes[i] = compile_conv(n, ins[0]);
        break;
      case OpKind::BatchNorm:
        cm.nodes[i] = compile_batchnorm(n, ins[0]);
        break;
      case OpKind::AvgPool:
        cm.nodes[i] = compile_pool(n, ins[0]);
        break;
      case OpKind::Linear:
        cm.nodes[i] = compile_linear(n, ins[0]);
        break;
      case OpKind::Split:
        cm.nodes[i] = compile_split(n, ins[0]);
        break;
      case OpKind::Concat:
        cm.nodes[i] = compile_concat(n, ins);
        break;
      case OpKind::Add:
        cm.nodes[i] = compile_add(n);
        break;
      case OpKind::Softmax:
      case OpKind::Dsnt:
      case OpKind::Argmax:
        fail(ErrorCode::Unsupported, std::string("reachability does not support operator '") + op_name(n.op) +
                                         "' at node '" + n.id + "'; verify the pooled proxy model instead");
    }
  }
  return cm;
}

}  // namespace posecert
