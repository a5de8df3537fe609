#pragma once

#include <cstdint>
#include <json.hpp>
#include <vector>

#include "sensitivity/sensitivity.hpp"

namespace posecert {

struct AllocationConfig {
  double w1 = 1.0, w2 = 5.0;
  double kappa = 1.0;
  int cap = 32;             // per-coordinate ceiling (unconstrained axes stop here)
  std::vector<int> upper;   // optional element-wise ceiling, e.g. from a looser kappa
  int64_t node_limit = 20'000;  // small problems close in well under 100 nodes; high-dimensional ones never improve past the local search

  void validate() const;
};

struct AllocatedThresholds {
  std::vector<int> dv;
  int Delta = 0;
  long double objective = 0;
  long double product = 0;
  bool exact = false;  // search finished within node_limit
  int64_t nodes = 0;
};

long double allocation_objective(const std::vector<int>& dv, double w1, double w2);

// kappa |P| dv <= b row-wise, with 1e-9 slack.
bool rect_in_polytope(const std::vector<int>& dv, const TolerancePolytope& poly, double kappa);
bool rect_in_polytope(const Eigen::VectorXd& dv, const TolerancePolytope& poly, double kappa);

AllocatedThresholds allocate_thresholds(const TolerancePolytope& poly, const AllocationConfig& cfg);

// Solves for each kappa, tighter kappas bounded by looser solutions, so thresholds
// never grow with kappa. Results are returned in the order of `kappas`.
std::vector<AllocatedThresholds> allocate_sweep(const TolerancePolytope& poly, const AllocationConfig& cfg,
                                                const std::vector<double>& kappas);

AllocatedThresholds brute_force_allocate(const TolerancePolytope& poly, const AllocationConfig& cfg, int cap);

nlohmann::json thresholds_to_json(const AllocatedThresholds& a);

}  // namespace posecert
