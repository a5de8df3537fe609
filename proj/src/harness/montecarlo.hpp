#pragma once

#include <cstdint>
#include <json.hpp>
#include <vector>

#include "geometry/geometry.hpp"

namespace posecert {

struct MonteCarloResult {
  double ratio = 0;
  int64_t samples = 0;    // counted in the ratio
  int64_t successes = 0;
  int64_t failures = 0;
  int64_t solver_failures = 0;  // PnP divergence or degenerate solve, included in failures
  int64_t excluded = 0;   // behind-camera projections (not counted)
  uint64_t seed = 0;
};

struct MonteCarloOptions {
  int64_t samples = 100000;
  uint64_t seed = 7;
  int workers = 1;
};

// Samples vertices V + A (.) dv (A entries +-1), re-solves PnP from the nominal pose and counts
// pose errors within `budget`.
MonteCarloResult probabilistic_soundness(const KeypointScene& scene, const std::vector<int>& dv,
                                         const BudgetPolytope& budget, const MonteCarloOptions& opt = {});

// Samples pose errors uniformly in the budget box, reprojects and counts keypoint errors inside HR(dv).
MonteCarloResult probabilistic_completeness(const KeypointScene& scene, const std::vector<int>& dv,
                                            const BudgetPolytope& budget, const MonteCarloOptions& opt = {});

nlohmann::json monte_carlo_to_json(const MonteCarloResult& r);

}  // namespace posecert
