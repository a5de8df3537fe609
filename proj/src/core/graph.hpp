#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "core/heads.hpp"
#include "core/tensor.hpp"

namespace posecert {

enum class OpKind {
  Input,
  Output,
  Conv2d,
  ConvTranspose2d,
  BatchNorm,
  Relu,
  AvgPool,
  Linear,
  Flatten,
  Split,
  Concat,
  Add,
  Softmax,
  Dsnt,
  Argmax,
};

OpKind op_from_string(const std::string& s);
const char* op_name(OpKind k);
// Ops the reachability analysis can carry exactly (plus relu).
bool op_is_affine(OpKind k);

struct NodeSpec {
  std::string id;
  std::string op;
  nlohmann::json attrs = nlohmann::json::object();
  std::vector<float> weights;
  std::vector<std::string> inputs;
};

struct Node {
  std::string id;
  OpKind op = OpKind::Input;
  nlohmann::json attrs;
  std::vector<float> w;
  std::vector<int> in;  // producer node indices, in edge order
  Shape shape;          // inferred output shape

  // Parsed attributes (only the relevant ones are meaningful per op).
  int cout = 0, kh = 1, kw = 1, sh = 1, sw = 1, ph = 0, pw = 0, oph = 0, opw = 0;
  bool bias = true;
  double eps = 1e-5;
  int channel = 0;
  int axis = 0;
  PoolingParams pool;
};

struct ModelGraph {
  std::vector<Node> nodes;  // topologically sorted
  int input = -1;
  std::vector<int> outputs;
  Shape input_shape;

  int find(const std::string& id) const;
  const Node& output_node(size_t i = 0) const { return nodes.at(static_cast<size_t>(outputs.at(i))); }
  Shape output_shape(size_t i = 0) const { return output_node(i).shape; }
  size_t layer_count() const { return nodes.size(); }
};

ModelGraph build_graph(const Shape& input_shape, const std::vector<NodeSpec>& specs,
                       const std::vector<std::string>& outputs);
ModelGraph parse_manifest(const nlohmann::json& manifest, const std::vector<float>& blob);
ModelGraph load_model(const std::string& manifest_path, const std::string& weights_path);

// Inverse of parse_manifest: fills the blob and returns the manifest.
nlohmann::json to_manifest(const ModelGraph& g, std::vector<float>& blob);
void save_model(const ModelGraph& g, const std::string& manifest_path, const std::string& weights_path);
std::vector<NodeSpec> to_specs(const ModelGraph& g);

std::vector<float> read_blob(const std::string& path);
void write_blob(const std::string& path, const std::vector<float>& blob);

Tensor run_graph(const ModelGraph& g, const Tensor& input);
// Every node's value, indexed like g.nodes.
std::vector<Tensor> run_graph_all(const ModelGraph& g, const Tensor& input);

}  // namespace posecert
