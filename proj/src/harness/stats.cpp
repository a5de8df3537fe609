#include "harness/stats.hpp"

#include <cmath>

#include "core/error.hpp"

namespace posecert {

using nlohmann::json;

namespace {

int quantile_index(const std::vector<double>& p, double total, double q) {
  double cdf = 0;
  for (size_t i = 0; i < p.size(); ++i) {
    cdf += p[i] / total;
    if (cdf >= q - 1e-12) return static_cast<int>(i) + 1;
  }
  return static_cast<int>(p.size());
}

}  // namespace

AxisStats distribution_stats(const std::vector<double>& p) {
  require(!p.empty(), ErrorCode::InvalidArgument, "statistics of an empty distribution");
  double total = 0;
  for (double v : p) {
    require(v >= 0 && std::isfinite(v), ErrorCode::InvalidArgument, "distribution has negative or non-finite mass");
    total += v;
  }
  require(total > 0, ErrorCode::InvalidArgument, "degenerate (all-zero) heatmap");
  AxisStats s;
  for (size_t i = 0; i < p.size(); ++i) s.mean += (static_cast<double>(i) + 1) * p[i] / total;
  double m2 = 0, m3 = 0;
  for (size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(i) + 1 - s.mean, w = p[i] / total;
    m2 += w * d * d;
    m3 += w * d * d * d;
  }
  s.skewness = m2 > 0 ? m3 / std::pow(m2, 1.5) : 0.0;
  s.mean_minus_median = s.mean - quantile_index(p, total, 0.5);
  size_t mode = 0;
  for (size_t i = 1; i < p.size(); ++i)
    if (p[i] > p[mode]) mode = i;
  s.mean_minus_mode = s.mean - (static_cast<double>(mode) + 1);
  s.iqr = quantile_index(p, total, 0.75) - quantile_index(p, total, 0.25);
  return s;
}

SymmetryStats heatmap_symmetry_stats(const Heatmap& h) {
  require(h.rows > 0 && h.cols > 0, ErrorCode::InvalidArgument, "statistics of an empty heatmap");
  std::vector<double> rows(static_cast<size_t>(h.rows), 0.0), cols(static_cast<size_t>(h.cols), 0.0);
  for (int r = 0; r < h.rows; ++r)
    for (int c = 0; c < h.cols; ++c) {
      rows[static_cast<size_t>(r)] += h(r, c);
      cols[static_cast<size_t>(c)] += h(r, c);
    }
  return {distribution_stats(rows), distribution_stats(cols)};
}

json axis_stats_to_json(const AxisStats& s) {
  return {{"mean", s.mean},
          {"skewness", s.skewness},
          {"mean_minus_median", s.mean_minus_median},
          {"mean_minus_mode", s.mean_minus_mode},
          {"iqr", s.iqr}};
}

json symmetry_stats_to_json(const SymmetryStats& s) {
  return {{"row", axis_stats_to_json(s.row)}, {"col", axis_stats_to_json(s.col)}};
}

VerifiedRate verified_rate(const std::vector<VerifiedRateEntry>& log) {
  VerifiedRate r;
  for (const auto& e : log) {
    if (!e.seed_in_budget) continue;
    ++r.denominator;
    if (e.status == "holds") ++r.numerator;
  }
  r.rate = r.denominator > 0 ? static_cast<double>(r.numerator) / r.denominator : 0.0;
  return r;
}

}  // namespace posecert
