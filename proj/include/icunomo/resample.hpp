#pragma once

// SMOTE for a continuous target: instances are drawn with probability
// proportional to the weight of the target interval they fall in, and each
// draw synthesizes a row from the mean of its nearest neighbours plus
// uniform noise.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "core.hpp"
#include "feature_matrix.hpp"

namespace icunomo {

struct SmoteConfig {
  std::vector<double> thresholds = {7.0, 35.0};
  std::vector<double> weights = {40.0, 20.0, 1.0};
  std::size_t n_synthetic = 2000;
  std::size_t k_neighbors = 5;
  std::size_t pool_size = 0;               // 0: use exactly the k nearest
  std::optional<double> noise_delta;       // target noise half-width; unset = 0.05 sd(y)
  double feature_noise_delta = 0.05;       // feature noise half-width, in column sd units
  std::uint64_t seed = 0;
};

inline void validate(const SmoteConfig& c) {
  for (std::size_t i = 1; i < c.thresholds.size(); ++i)
    if (!(c.thresholds[i] > c.thresholds[i - 1]))
      throw Error(ErrorCode::InvalidConfig, "SMOTE thresholds must be strictly ascending");
  if (c.weights.size() != c.thresholds.size() + 1)
    throw Error(ErrorCode::InvalidConfig, "SMOTE needs one more weight than thresholds");
  for (double w : c.weights)
    if (!(w > 0.0) || !std::isfinite(w)) throw Error(ErrorCode::InvalidConfig, "SMOTE weights must be positive");
  if (c.k_neighbors == 0) throw Error(ErrorCode::InvalidConfig, "k_neighbors must be positive");
  if (c.pool_size != 0 && c.pool_size < c.k_neighbors)
    throw Error(ErrorCode::InvalidConfig, "pool size must be at least k_neighbors");
  if (c.noise_delta && !(*c.noise_delta >= 0.0)) throw Error(ErrorCode::InvalidConfig, "noise delta must be >= 0");
  if (!(c.feature_noise_delta >= 0.0)) throw Error(ErrorCode::InvalidConfig, "feature noise delta must be >= 0");
}

/// Right-closed intervals: (-inf, T1], (T1, T2], ..., (Tn, inf).
inline std::size_t interval_index(double y, std::span<const double> thresholds) {
  return static_cast<std::size_t>(std::lower_bound(thresholds.begin(), thresholds.end(), y) - thresholds.begin());
}

/// p_i = w(interval of y_i) / sum_j w(interval of y_j).
inline std::vector<double> sampling_probabilities(std::span<const double> y, const SmoteConfig& cfg) {
  validate(cfg);
  if (y.empty()) throw Error(ErrorCode::InvalidArgument, "empty target vector");
  std::vector<double> w(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) w[i] = cfg.weights[interval_index(y[i], cfg.thresholds)];
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& v : w) v /= total;
  return w;
}

/// Index drawn for synthetic sample `s`; each sample owns a substream so the
/// draw is independent of evaluation order.
inline std::size_t draw_seed_index(std::span<const double> cumulative, std::uint64_t seed, std::size_t s) {
  Rng rng = make_rng(derive_seed(seed, s));
  const double u = uniform01(rng) * cumulative.back();
  auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  return std::min(static_cast<std::size_t>(it - cumulative.begin()), cumulative.size() - 1);
}

inline std::vector<std::size_t> draw_seed_indices(std::span<const double> probabilities, std::size_t count,
                                                  std::uint64_t seed) {
  std::vector<double> cum(probabilities.size());
  std::partial_sum(probabilities.begin(), probabilities.end(), cum.begin());
  std::vector<std::size_t> out(count);
  for (std::size_t s = 0; s < count; ++s) out[s] = draw_seed_index(cum, seed, s);
  return out;
}

struct SmoteResult {
  FeatureMatrix X;                                // (n + n_synthetic) x d, originals first
  std::vector<double> y;                          // n + n_synthetic
  std::vector<int> synthetic;                     // 1 for appended rows
  std::vector<std::size_t> seed_rows;             // per synthetic row
  std::vector<std::vector<std::size_t>> donors;   // neighbours averaged per synthetic row
  double noise_delta = 0.0;                       // target noise actually used
};

inline SmoteResult smote_augment(const FeatureMatrix& X, std::span<const double> y, const SmoteConfig& cfg) {
  validate(cfg);
  const auto n = X.rows();
  const auto d = X.cols();
  if (y.size() != n) throw Error(ErrorCode::InvalidArgument, "target length differs from row count");
  if (!X.is_complete()) throw Error(ErrorCode::InvalidArgument, "SMOTE requires imputed features");

  SmoteResult out;
  out.X = X;
  out.y.assign(y.begin(), y.end());
  out.synthetic.assign(n, 0);
  if (cfg.n_synthetic == 0) return out;
  if (n < cfg.k_neighbors + 1)
    throw Error(ErrorCode::TooFewInstances,
                "need at least " + std::to_string(cfg.k_neighbors + 1) + " rows, have " + std::to_string(n));

  const std::size_t pool = std::min(n - 1, std::max(cfg.pool_size, cfg.k_neighbors));
  std::vector<double> scale(d, 1.0);
  for (std::size_t j = 0; j < d; ++j) {
    const double s = column_stats(X, j).sd;
    if (s > 0.0 && std::isfinite(s)) scale[j] = s;
  }
  if (cfg.noise_delta) {
    out.noise_delta = *cfg.noise_delta;
  } else {
    const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double v : y) ss += (v - mean) * (v - mean);
    out.noise_delta = n > 1 ? 0.05 * std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
  }

  const auto probs = sampling_probabilities(y, cfg);
  std::vector<double> cum(n);
  std::partial_sum(probs.begin(), probs.end(), cum.begin());

  const auto total = n + cfg.n_synthetic;
  out.X.values.conservativeResize(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(d));
  out.X.missing = Mask::Constant(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(d), false);
  out.y.resize(total);
  out.synthetic.resize(total, 1);

  std::vector<double> dist(n);
  std::vector<std::size_t> order(n);
  for (std::size_t s = 0; s < cfg.n_synthetic; ++s) {
    const std::size_t seed_row = draw_seed_index(cum, cfg.seed, s);
    // Noise and neighbour choice draw from a second substream of sample s.
    Rng rng = make_rng(derive_seed(derive_seed(cfg.seed, s), 1));
    const auto si = static_cast<Eigen::Index>(seed_row);
    for (std::size_t b = 0; b < n; ++b) {
      double ss = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = (X.values(si, static_cast<Eigen::Index>(j)) -
                             X.values(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(j))) /
                            scale[j];
        ss += diff * diff;
      }
      dist[b] = ss;
    }
    order.clear();
    for (std::size_t b = 0; b < n; ++b)
      if (b != seed_row) order.push_back(b);
    auto closer = [&](std::size_t a, std::size_t b) { return dist[a] < dist[b] || (dist[a] == dist[b] && a < b); };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(pool), order.end(), closer);
    std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(pool));
    if (pool > cfg.k_neighbors) {
      shuffle(chosen.begin(), chosen.end(), rng);
      chosen.resize(cfg.k_neighbors);
      std::sort(chosen.begin(), chosen.end());
    }

    const auto row = static_cast<Eigen::Index>(n + s);
    const double k = static_cast<double>(chosen.size());
    double ysum = 0.0;
    for (auto b : chosen) ysum += y[b];
    out.y[n + s] = ysum / k + uniform(rng, -out.noise_delta, out.noise_delta);
    for (std::size_t j = 0; j < d; ++j) {
      double xs = 0.0;
      for (auto b : chosen) xs += X.values(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(j));
      const double half = cfg.feature_noise_delta * scale[j];
      out.X.values(row, static_cast<Eigen::Index>(j)) = xs / k + uniform(rng, -half, half);
    }
    out.seed_rows.push_back(seed_row);
    out.donors.push_back(std::move(chosen));
  }
  return out;
}

}  // namespace icunomo
