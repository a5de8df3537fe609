#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "core/heads.hpp"

namespace posecert {

// Moments and quantiles of a discrete distribution over indices 1..n.
struct AxisStats {
  double mean = 0;
  double skewness = 0;
  double mean_minus_median = 0;
  double mean_minus_mode = 0;
  double iqr = 0;
};

struct SymmetryStats {
  AxisStats row, col;  // marginals over rows and over columns
};

AxisStats distribution_stats(const std::vector<double>& p);
SymmetryStats heatmap_symmetry_stats(const Heatmap& h);

nlohmann::json axis_stats_to_json(const AxisStats& s);
nlohmann::json symmetry_stats_to_json(const SymmetryStats& s);

// One row per certified seed.
struct VerifiedRateEntry {
  std::string id;
  bool seed_in_budget = false;
  std::string status;  // "holds" / "violated" / "unknown"
};

struct VerifiedRate {
  int denominator = 0;
  int numerator = 0;
  double rate = 0;
};

// Denominator: seeds whose unperturbed pose error is within budget. Numerator: "holds" among them.
VerifiedRate verified_rate(const std::vector<VerifiedRateEntry>& log);

}  // namespace posecert
