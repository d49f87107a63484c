#pragma once

// Filter (F-test), wrapper (recursive elimination) and VIF screening.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/QR>

#include "core.hpp"
#include "feature_matrix.hpp"
#include "model.hpp"

namespace icunomo {

enum class RankingMethod { f_test, rfe, vif };

inline const char* to_string(RankingMethod m) {
  switch (m) {
    case RankingMethod::f_test: return "f_test";
    case RankingMethod::rfe: return "rfe";
    case RankingMethod::vif: return "vif";
  }
  return "?";
}

struct FeatureRanking {
  RankingMethod method = RankingMethod::f_test;
  std::vector<std::string> names;
  std::vector<double> scores;
  std::vector<std::string> eliminated_order;  // rfe only, first removed first
};

/// Two-group one-way ANOVA F. A constant feature scores 0; perfect
/// separation (zero within-class variance) returns +infinity.
inline double f_score(std::span<const double> feature, std::span<const int> labels) {
  if (feature.size() != labels.size()) throw Error(ErrorCode::InvalidArgument, "feature/label length mismatch");
  if (feature.size() < 4) throw Error(ErrorCode::InsufficientSamples, "F-test needs at least 4 observations");
  require_both_classes(labels);
  double sum[2] = {0, 0};
  double cnt[2] = {0, 0};
  for (std::size_t i = 0; i < feature.size(); ++i) {
    const int g = labels[i] ? 1 : 0;
    sum[g] += feature[i];
    cnt[g] += 1;
  }
  const double n = cnt[0] + cnt[1];
  const double mean[2] = {sum[0] / cnt[0], sum[1] / cnt[1]};
  const double grand = (sum[0] + sum[1]) / n;
  double ssw = 0.0;
  for (std::size_t i = 0; i < feature.size(); ++i) {
    const double r = feature[i] - mean[labels[i] ? 1 : 0];
    ssw += r * r;
  }
  const double ssb = cnt[0] * (mean[0] - grand) * (mean[0] - grand) + cnt[1] * (mean[1] - grand) * (mean[1] - grand);
  // Differences below rounding of the data scale count as zero.
  double scale = 0.0;
  for (double v : feature) scale = std::max(scale, std::abs(v - grand));
  const double eps = 64 * std::numeric_limits<double>::epsilon() * scale;
  if (ssb <= eps * eps * n) return 0.0;
  if (ssw <= eps * eps * n) return std::numeric_limits<double>::infinity();
  return (ssb / 1.0) / (ssw / (n - 2.0));
}

inline std::vector<double> column(const FeatureMatrix& m, std::size_t j) {
  const auto c = m.values.col(static_cast<Eigen::Index>(j));
  return std::vector<double>(c.data(), c.data() + c.size());
}

/// Top-k by F, descending; ties keep column order.
inline FeatureRanking select_k_best(const FeatureMatrix& m, std::span<const int> labels, std::size_t k = 50) {
  if (k == 0 || k > m.cols())
    throw Error(ErrorCode::KExceedsDimensions,
                "k=" + std::to_string(k) + " outside [1, " + std::to_string(m.cols()) + "]");
  std::vector<double> scores(m.cols());
  for (std::size_t j = 0; j < m.cols(); ++j) scores[j] = f_score(column(m, j), labels);
  std::vector<std::size_t> idx(m.cols());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  FeatureRanking r;
  r.method = RankingMethod::f_test;
  for (std::size_t t = 0; t < k; ++t) {
    r.names.push_back(m.names[idx[t]]);
    // JSON cannot carry infinity; the largest double keeps the order.
    r.scores.push_back(std::isinf(scores[idx[t]]) ? std::numeric_limits<double>::max() : scores[idx[t]]);
  }
  return r;
}

/// Recursive elimination wrapped around the logistic fitter: refit, drop the
/// feature with the smallest |coefficient x column sd|, repeat. Names in
/// `keep` are never eliminated.
inline FeatureRanking rfe(const FeatureMatrix& m, std::span<const int> labels, std::size_t n_target = 7,
                          const std::vector<std::string>& keep = {}, const LogisticFitOptions& fit = {}) {
  if (n_target == 0 || n_target > m.cols())
    throw Error(ErrorCode::KExceedsDimensions,
                "target " + std::to_string(n_target) + " outside [1, " + std::to_string(m.cols()) + "]");
  std::vector<std::size_t> active(m.cols());
  std::iota(active.begin(), active.end(), std::size_t{0});
  std::vector<double> sd(m.cols());
  for (std::size_t j = 0; j < m.cols(); ++j) sd[j] = column_stats(m, j).sd;
  const std::set<std::string> protect(keep.begin(), keep.end());

  FeatureRanking r;
  r.method = RankingMethod::rfe;
  std::vector<double> importance;
  for (std::size_t step = 0;; ++step) {
    LogisticModel model;
    try {
      model = fit_logistic(m.select_indices(active), labels, fit);
    } catch (Error& e) {
      if (e.code() == ErrorCode::NonConvergence) e.with_iteration(step);
      throw;
    }
    importance.assign(active.size(), 0.0);
    for (std::size_t a = 0; a < active.size(); ++a) importance[a] = std::abs(model.coefficients[a]) * sd[active[a]];
    if (active.size() <= n_target) break;
    std::size_t worst = active.size();
    for (std::size_t a = 0; a < active.size(); ++a) {
      if (protect.count(m.names[active[a]])) continue;
      if (worst == active.size() || importance[a] < importance[worst]) worst = a;
    }
    if (worst == active.size()) break;  // only protected features left
    r.eliminated_order.push_back(m.names[active[worst]]);
    active.erase(active.begin() + static_cast<std::ptrdiff_t>(worst));
  }
  std::vector<std::size_t> idx(active.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return importance[a] > importance[b]; });
  for (auto a : idx) {
    r.names.push_back(m.names[active[a]]);
    r.scores.push_back(importance[a]);
  }
  return r;
}

/// VIF_j = 1 / (1 - R^2_j), regressing column j on the others with intercept.
inline FeatureRanking vif(const FeatureMatrix& m) {
  const auto n = m.values.rows();
  const auto d = m.values.cols();
  if (d < 2) throw Error(ErrorCode::InvalidArgument, "VIF needs at least two columns");
  if (n <= d) throw Error(ErrorCode::InsufficientSamples, "VIF needs more rows than columns");
  if (!m.is_complete()) throw Error(ErrorCode::InvalidArgument, "VIF requires complete features");
  for (Eigen::Index j = 0; j < d; ++j)
    if (!(m.values.col(j).maxCoeff() > m.values.col(j).minCoeff()))
      throw Error(ErrorCode::ConstantColumn, "column '" + m.names[static_cast<std::size_t>(j)] + "' is constant")
          .with_names({m.names[static_cast<std::size_t>(j)]});

  Matrix centered = m.values.rowwise() - m.values.colwise().mean();
  std::vector<double> scores(static_cast<std::size_t>(d));
  for (Eigen::Index j = 0; j < d; ++j) {
    Matrix others(n, d - 1);
    for (Eigen::Index c = 0, k = 0; c < d; ++c)
      if (c != j) others.col(k++) = centered.col(c);
    Eigen::ColPivHouseholderQR<Matrix> qr(others);
    Vector target = centered.col(j);
    // A rank drop in [others | target] means target is an exact combination.
    Matrix with_target(n, d);
    with_target << others, target;
    Eigen::ColPivHouseholderQR<Matrix> qr_all(with_target);
    if (qr.rank() < d - 1 || qr_all.rank() < d) {
      // Name the partner most correlated with column j.
      Eigen::Index best = j == 0 ? 1 : 0;
      double best_corr = -1.0;
      for (Eigen::Index c = 0; c < d; ++c) {
        if (c == j) continue;
        const double corr = std::abs(centered.col(c).dot(target)) / (centered.col(c).norm() * target.norm());
        if (corr > best_corr) {
          best_corr = corr;
          best = c;
        }
      }
      auto a = m.names[static_cast<std::size_t>(j)];
      auto b = m.names[static_cast<std::size_t>(best)];
      throw Error(ErrorCode::SingularDesign, "exactly collinear columns: " + a + ", " + b).with_names({a, b});
    }
    Vector coef = qr.solve(target);
    const double rss = (target - others * coef).squaredNorm();
    const double tss = target.squaredNorm();
    scores[static_cast<std::size_t>(j)] = tss / rss;
  }
  std::vector<std::size_t> idx(static_cast<std::size_t>(d));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  FeatureRanking r;
  r.method = RankingMethod::vif;
  for (auto j : idx) {
    r.names.push_back(m.names[j]);
    r.scores.push_back(scores[j]);
  }
  return r;
}

/// Drops the highest-VIF unprotected feature until every VIF is below the
/// threshold. Returns the dropped names in order.
inline std::vector<std::string> vif_screen(FeatureMatrix& m, double threshold = 5.0,
                                           const std::vector<std::string>& keep = {}) {
  std::vector<std::string> dropped;
  const std::set<std::string> protect(keep.begin(), keep.end());
  while (m.cols() >= 2) {
    auto r = vif(m);
    std::optional<std::string> victim;
    for (std::size_t t = 0; t < r.names.size() && r.scores[t] >= threshold; ++t)
      if (!protect.count(r.names[t])) {
        victim = r.names[t];
        break;
      }
    if (!victim) break;
    dropped.push_back(*victim);
    std::vector<std::string> rest;
    for (const auto& n : m.names)
      if (n != *victim) rest.push_back(n);
    m = m.select_columns(rest);
  }
  return dropped;
}

}  // namespace icunomo
