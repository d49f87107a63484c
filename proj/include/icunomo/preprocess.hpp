#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "core.hpp"
#include "feature_matrix.hpp"

namespace icunomo {

/// Keeps a column iff its missing fraction is <= threshold.
inline std::pair<FeatureMatrix, std::vector<std::string>> drop_high_missingness(const FeatureMatrix& m,
                                                                                double threshold = 0.8) {
  if (!(threshold > 0.0 && threshold <= 1.0))
    throw Error(ErrorCode::InvalidArgument, "missingness threshold must lie in (0, 1]");
  std::vector<std::size_t> keep;
  std::vector<std::string> dropped;
  const double n = static_cast<double>(m.rows());
  for (std::size_t j = 0; j < m.cols(); ++j) {
    const double frac = m.rows() ? static_cast<double>(m.missing_count(j)) / n : 0.0;
    if (frac > threshold) dropped.push_back(m.names[j]);
    else keep.push_back(j);
  }
  return {m.select_indices(keep), std::move(dropped)};
}

// ---------------------------------------------------------------------------
// KNN imputation
//
// Distance between rows a and b uses only the columns observed in both, each
// divided by that column's observed sd:
//   d(a,b) = sqrt( sum_shared ((x_a - x_b)/sd)^2 / |shared| )
// Rows with no shared column are infinitely far. Donors for a missing cell
// are the k nearest rows observing that column (ties by row index); the cell
// becomes their raw mean.

inline FeatureMatrix knn_impute(const FeatureMatrix& m, std::size_t k = 5) {
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be positive");
  const auto n = m.rows();
  const auto d = m.cols();
  for (std::size_t j = 0; j < d; ++j)
    if (n - m.missing_count(j) < k)
      throw Error(ErrorCode::InsufficientDonors,
                  "column '" + m.names[j] + "' has fewer than " + std::to_string(k) + " observed rows")
          .with_names({m.names[j]});
  FeatureMatrix out = m;
  if (m.is_complete()) return out;

  std::vector<double> scale(d, 1.0);
  for (std::size_t j = 0; j < d; ++j) {
    auto s = column_stats(m, j);
    if (std::isfinite(s.sd) && s.sd > 0.0) scale[j] = s.sd;
  }

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(n);
  std::vector<std::size_t> order;
  for (std::size_t a = 0; a < n; ++a) {
    const auto ra = static_cast<Eigen::Index>(a);
    if (!m.missing.row(ra).any()) continue;
    if (m.missing.row(ra).all())
      throw Error(ErrorCode::InvalidArgument, "row " + std::to_string(a + 1) + " has no observed values").with_row(a + 1);
    for (std::size_t b = 0; b < n; ++b) {
      const auto rb = static_cast<Eigen::Index>(b);
      if (b == a) {
        dist[b] = inf;
        continue;
      }
      double ss = 0.0;
      std::size_t shared = 0;
      for (std::size_t j = 0; j < d; ++j) {
        const auto c = static_cast<Eigen::Index>(j);
        if (m.missing(ra, c) || m.missing(rb, c)) continue;
        const double diff = (m.values(ra, c) - m.values(rb, c)) / scale[j];
        ss += diff * diff;
        ++shared;
      }
      dist[b] = shared ? std::sqrt(ss / static_cast<double>(shared)) : inf;
    }
    for (std::size_t j = 0; j < d; ++j) {
      const auto c = static_cast<Eigen::Index>(j);
      if (!m.missing(ra, c)) continue;
      order.clear();
      for (std::size_t b = 0; b < n; ++b)
        if (b != a && !m.missing(static_cast<Eigen::Index>(b), c)) order.push_back(b);
      auto closer = [&](std::size_t x, std::size_t y) { return dist[x] < dist[y] || (dist[x] == dist[y] && x < y); };
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), closer);
      double sum = 0.0;
      for (std::size_t t = 0; t < k; ++t) sum += m.values(static_cast<Eigen::Index>(order[t]), c);
      out.values(ra, c) = sum / static_cast<double>(k);
      out.missing(ra, c) = false;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// z-scores (sample sd)

inline FeatureMatrix zscore_apply(const FeatureMatrix& m, const std::vector<NormStat>& stats) {
  if (stats.size() != m.cols()) throw Error(ErrorCode::InvalidArgument, "norm stats width mismatch");
  FeatureMatrix out = m;
  for (std::size_t j = 0; j < m.cols(); ++j) {
    const auto c = static_cast<Eigen::Index>(j);
    for (Eigen::Index i = 0; i < m.values.rows(); ++i)
      out.values(i, c) = (m.values(i, c) - stats[j].mean) / stats[j].sd;
  }
  out.norm_stats = stats;
  return out;
}

inline std::vector<NormStat> zscore_fit(const FeatureMatrix& m) {
  if (!m.is_complete()) throw Error(ErrorCode::InvalidArgument, "z-score fit requires a complete matrix");
  std::vector<NormStat> stats;
  for (std::size_t j = 0; j < m.cols(); ++j) {
    auto s = column_stats(m, j);
    if (!(s.sd > 0.0) || !std::isfinite(s.sd))
      throw Error(ErrorCode::ConstantColumn, "column '" + m.names[j] + "' is constant").with_names({m.names[j]});
    stats.push_back(s);
  }
  return stats;
}

inline FeatureMatrix zscore_fit_transform(const FeatureMatrix& m) { return zscore_apply(m, zscore_fit(m)); }

// ---------------------------------------------------------------------------
// Acute Physiology Score III as a sum of per-variable bin weights.

inline constexpr std::size_t kApsVariables = 17;

struct ApsBin {
  double lo;  // inclusive
  double hi;  // exclusive
  double weight;
};

struct ApsVariable {
  std::string name;
  std::string unit;
  std::vector<ApsBin> bins;
  double missing_weight = 0.0;
};

struct ApsWeightTable {
  std::vector<ApsVariable> variables;  // kApsVariables entries
  double max_score = 252.0;
};

struct ApsIiiInput {
  std::array<std::optional<double>, kApsVariables> values{};
};

inline double aps_bin_weight(const ApsVariable& v, std::optional<double> x) {
  if (!x) return v.missing_weight;
  for (const auto& b : v.bins)
    if (*x >= b.lo && *x < b.hi) return b.weight;
  // Outside every bin: worst listed weight.
  double w = 0.0;
  for (const auto& b : v.bins) w = std::max(w, b.weight);
  return w;
}

inline double aps_iii_score(const ApsIiiInput& input, const ApsWeightTable& table) {
  if (table.variables.size() != kApsVariables)
    throw Error(ErrorCode::InvalidConfig, "APS III table must define 17 variables");
  double score = 0.0;
  for (std::size_t i = 0; i < kApsVariables; ++i) score += aps_bin_weight(table.variables[i], input.values[i]);
  return std::clamp(score, 0.0, table.max_score);
}

/// Default bins. Approximate, illustrative weights, meant to be replaced by a
/// site's licensed table through the JSON config. Slots 15 and 16 are
/// reserved and score zero.
inline ApsWeightTable default_aps_weights() {
  const double inf = std::numeric_limits<double>::infinity();
  auto var = [&](std::string name, std::string unit, std::vector<std::pair<double, double>> cuts) {
    // cuts: (upper bound, weight), last upper bound = +inf
    ApsVariable v{std::move(name), std::move(unit), {}, 0.0};
    double lo = -inf;
    for (auto [hi, w] : cuts) {
      v.bins.push_back({lo, hi, w});
      lo = hi;
    }
    return v;
  };
  ApsWeightTable t;
  t.variables = {
      var("heart_rate", "bpm", {{40, 8}, {50, 5}, {100, 0}, {110, 1}, {120, 5}, {140, 7}, {155, 13}, {inf, 17}}),
      var("mean_arterial_pressure", "mmHg",
          {{40, 23}, {60, 15}, {70, 7}, {80, 6}, {100, 0}, {120, 4}, {130, 7}, {140, 9}, {inf, 10}}),
      var("respiratory_rate", "/min", {{6, 17}, {12, 8}, {14, 7}, {25, 0}, {35, 6}, {40, 9}, {50, 11}, {inf, 18}}),
      var("pao2_fio2", "mmHg", {{100, 15}, {200, 11}, {300, 5}, {400, 2}, {inf, 0}}),
      var("ph", "", {{7.20, 12}, {7.35, 4}, {7.50, 0}, {7.60, 2}, {inf, 12}}),
      var("sodium", "mEq/L", {{120, 3}, {135, 2}, {155, 0}, {inf, 4}}),
      var("potassium", "mEq/L", {{2.5, 4}, {3.5, 2}, {5.5, 0}, {6.5, 2}, {inf, 4}}),
      var("glucose", "mg/dL", {{40, 8}, {60, 9}, {200, 0}, {350, 3}, {inf, 5}}),
      var("creatinine", "mg/dL", {{0.5, 3}, {1.5, 0}, {2.0, 4}, {4.4, 7}, {inf, 10}}),
      var("bun", "mg/dL", {{17, 0}, {20, 2}, {40, 7}, {80, 11}, {inf, 12}}),
      var("wbc", "10^9/L", {{1, 19}, {3, 5}, {20, 0}, {25, 1}, {inf, 5}}),
      var("hematocrit", "%", {{41, 3}, {50, 0}, {inf, 3}}),
      var("temperature", "degC", {{33, 20}, {33.5, 16}, {34, 13}, {35, 8}, {36, 2}, {40, 0}, {inf, 4}}),
      var("urine_output", "mL/day", {{400, 15}, {600, 8}, {900, 7}, {1500, 5}, {2000, 4}, {4000, 0}, {inf, 1}}),
      var("gcs", "", {{6, 48}, {9, 32}, {13, 16}, {15, 5}, {inf, 0}}),
      var("reserved_1", "", {{inf, 0}}),
      var("reserved_2", "", {{inf, 0}}),
  };
  return t;
}

// ---------------------------------------------------------------------------

/// BE = HCO3 - 24.4 + (2.3 Hb + 7.7)(pH - 7.4), mEq/L.
inline double base_excess(double hco3, double hb, double ph) {
  if (!(hco3 > 0.0) || !(hb >= 0.0) || !(ph >= 6.5 && ph <= 8.0))
    throw Error(ErrorCode::OutOfPhysiologicRange, "base excess inputs outside physiologic range");
  return hco3 - 24.4 + (2.3 * hb + 7.7) * (ph - 7.4);
}

}  // namespace icunomo
