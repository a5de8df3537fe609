#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "core/graph.hpp"
#include "proxy/proxy.hpp"

namespace posecert {

// Per-pixel affine preprocessing x * scale + shift, applied to every vertex before storage.
struct Preprocess {
  double scale = 1.0, shift = 0.0;
  Tensor apply(const Tensor& t) const;
};

struct ImageConvexHull {
  std::vector<Tensor> vertices;  // [0] is the seed
  Preprocess preproc;

  int n() const { return static_cast<int>(vertices.size()) - 1; }
  const Shape& shape() const { return vertices.at(0).shape; }
};

ImageConvexHull make_hull(const Tensor& seed, const std::vector<Tensor>& perturbed, const Preprocess& pre = {});

// X(alpha) = X_0 + sum_i alpha_i (X_i - X_0), evaluated in double and rounded to float.
Tensor hull_point(const ImageConvexHull& hull, const Eigen::VectorXd& alpha);

using SpMat = Eigen::SparseMatrix<double, Eigen::ColMajor, int64_t>;

// center + G a + E e, with a in the simplex {a >= 0, sum a <= 1} and e in [-1, 1]^m.
struct HullStar {
  Shape shape;
  Eigen::VectorXd c;
  Eigen::MatrixXd G;
  SpMat E;

  Eigen::Index size() const { return c.size(); }
  Eigen::VectorXd upper() const;
  Eigen::VectorXd lower() const;
};

// A sub-simplex of the alpha simplex given by its vertices (columns, each of length n).
struct Branch {
  Eigen::MatrixXd verts;
  int depth = 0;
  std::vector<double> inherited_upper;  // per spec row, from the parent
  std::vector<Eigen::VectorXd> relu_lower, relu_upper;  // per relu node, from the parent

  Eigen::VectorXd alpha_of(const Eigen::VectorXd& lambda) const { return verts * lambda; }
};

Branch root_branch(int n);
HullStar branch_star(const ImageConvexHull& hull, const Branch& b);

// Affine ops compiled to sparse matrices, one per producer input.
struct CompiledNode {
  std::vector<SpMat> W;
  Eigen::VectorXd bias;
  bool identity = false;
};

struct CompiledModel {
  const ModelGraph* graph = nullptr;
  std::vector<CompiledNode> nodes;
  std::vector<int> relu_nodes;
};

CompiledModel compile_model(const ModelGraph& g);

struct PropagationBounds {
  std::vector<Eigen::VectorXd> relu_lower, relu_upper;  // pre-activation bounds per relu node
  size_t unstable = 0;
};

HullStar propagate(const CompiledModel& cm, HullStar input, PropagationBounds* bounds = nullptr,
                   const std::vector<Eigen::VectorXd>* prior_lower = nullptr,
                   const std::vector<Eigen::VectorXd>* prior_upper = nullptr);
HullStar propagate(const ModelGraph& g, const HullStar& input);

struct InclusionResult {
  enum Status { Holds, CandidateViolation, Unknown } status = Unknown;
  int64_t row = -1;  // violating direction for CandidateViolation, else worst row
  double worst_upper_margin = 0;
  std::vector<double> row_upper, row_lower;  // bounds of (A y) per row
};

InclusionResult check_inclusion(const HullStar& set, const OutputPolytope& spec,
                                const std::vector<double>* inherited_upper = nullptr);

std::pair<Branch, Branch> split_branch(const ImageConvexHull& hull, const Branch& b);

struct AttackOptions {
  int iterations = 50;
  uint64_t seed = 7;
  bool pgd = true;
};

std::optional<Eigen::VectorXd> attack(const ModelGraph& model, const ImageConvexHull& hull, const OutputPolytope& spec,
                                      const Branch& branch, const AttackOptions& opt = {});

struct VerifyOptions {
  int budget = 150;
  int workers = 1;
  uint64_t seed = 7;
  int attack_iterations = 50;
  int branch_attack_iterations = 5;
};

struct VerificationResult {
  enum Status { Holds, Violated, Unknown } status = Unknown;
  std::optional<Eigen::VectorXd> alpha;
  double witness_margin = 0;
  int branches = 0;
  int splits = 0;
  int max_depth = 0;
  double time_ms = 0;
  std::string reason;
};

const char* status_name(VerificationResult::Status s);

VerificationResult verify(const ModelGraph& model, const ImageConvexHull& hull, const OutputPolytope& spec,
                          const VerifyOptions& opt = {});

nlohmann::json verification_to_json(const VerificationResult& r);

}  // namespace posecert
