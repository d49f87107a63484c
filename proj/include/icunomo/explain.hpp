#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"
#include "evaluate.hpp"
#include "feature_matrix.hpp"
#include "model.hpp"

namespace icunomo {

enum class AttributionMethod { permutation, linear_additive };

struct AttributionReport {
  AttributionMethod method = AttributionMethod::permutation;
  std::vector<std::string> feature_names;
  std::vector<double> values;
  std::vector<double> spread;  // permutation: sd of the drop over repeats
  double base_value = 0.0;     // linear: logit at the background mean; permutation: baseline AUROC
};

/// AUROC drop when one column is shuffled, averaged over repeats. `score`
/// maps a raw-unit matrix to one score per row. Features are reported in
/// descending order of mean drop.
template <class Scorer>
AttributionReport permutation_importance(const Scorer& score, const FeatureMatrix& X, std::span<const int> labels,
                                         std::size_t n_repeats = 20, std::uint64_t seed = 0) {
  require_both_classes(labels);
  if (labels.size() != X.rows()) throw Error(ErrorCode::InvalidArgument, "label count differs from row count");
  const double base = auroc(score(X), labels);
  const auto d = X.cols();
  std::vector<double> mean(d, 0.0), sd(d, 0.0);
  FeatureMatrix work = X;
  std::vector<std::size_t> perm(X.rows());
  for (std::size_t j = 0; j < d; ++j) {
    const auto c = static_cast<Eigen::Index>(j);
    std::vector<double> drops(n_repeats);
    for (std::size_t r = 0; r < n_repeats; ++r) {
      Rng rng = make_rng(derive_seed(derive_seed(seed, j), r));
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      shuffle(perm.begin(), perm.end(), rng);
      for (std::size_t i = 0; i < perm.size(); ++i)
        work.values(static_cast<Eigen::Index>(i), c) = X.values(static_cast<Eigen::Index>(perm[i]), c);
      drops[r] = base - auroc(score(work), labels);
    }
    work.values.col(c) = X.values.col(c);
    if (n_repeats) {
      mean[j] = std::accumulate(drops.begin(), drops.end(), 0.0) / static_cast<double>(n_repeats);
      double ss = 0.0;
      for (double v : drops) ss += (v - mean[j]) * (v - mean[j]);
      sd[j] = n_repeats > 1 ? std::sqrt(ss / static_cast<double>(n_repeats - 1)) : 0.0;
    }
  }
  std::vector<std::size_t> idx(d);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return mean[a] > mean[b]; });
  AttributionReport rep;
  rep.method = AttributionMethod::permutation;
  rep.base_value = base;
  for (auto j : idx) {
    rep.feature_names.push_back(X.names[j]);
    rep.values.push_back(mean[j]);
    rep.spread.push_back(sd[j]);
  }
  return rep;
}

inline AttributionReport permutation_importance(const LogisticModel& model, const FeatureMatrix& X,
                                                std::span<const int> labels, std::size_t n_repeats = 20,
                                                std::uint64_t seed = 0) {
  return permutation_importance([&](const FeatureMatrix& m) { return predict_probs(model, m); },
                                X.select_columns(model.feature_names), labels, n_repeats, seed);
}

/// Mean z-score of each model feature over a raw-unit background sample.
inline std::vector<double> background_z_mean(const LogisticModel& model, const FeatureMatrix& background) {
  if (background.rows() == 0) throw Error(ErrorCode::InvalidArgument, "empty background");
  const auto bg = background.select_columns(model.feature_names);
  std::vector<double> out(model.dims(), 0.0);
  for (std::size_t j = 0; j < model.dims(); ++j) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < bg.values.rows(); ++i)
      s += (bg.values(i, static_cast<Eigen::Index>(j)) - model.norm_stats[j].mean) / model.norm_stats[j].sd;
    out[j] = s / static_cast<double>(bg.rows());
  }
  return out;
}

/// Exact additive decomposition of the logit around a background mean:
/// phi_j = beta_j (z_j(x) - mean_bg z_j), base = logit at the mean.
inline AttributionReport linear_attribution(const LogisticModel& model, std::span<const double> bg_z_mean,
                                            std::span<const double> raw) {
  const auto z = detail::standardize(raw, model.feature_names, model.norm_stats);
  AttributionReport rep;
  rep.method = AttributionMethod::linear_additive;
  rep.feature_names = model.feature_names;
  rep.base_value = model.intercept;
  for (std::size_t j = 0; j < model.dims(); ++j) {
    rep.base_value += model.coefficients[j] * bg_z_mean[j];
    rep.values.push_back(model.coefficients[j] * (z[j] - bg_z_mean[j]));
  }
  return rep;
}

inline AttributionReport linear_attribution(const LogisticModel& model, const FeatureMatrix& background,
                                            std::span<const double> raw) {
  const auto m = background_z_mean(model, background);
  return linear_attribution(model, m, raw);
}

struct AttributionSummary {
  std::vector<std::string> feature_names;  // model order
  Matrix attributions;                     // rows = instances
  std::vector<std::string> ranking;        // by mean |attribution|, descending
  std::vector<double> mean_abs;            // aligned with ranking
};

inline AttributionSummary summary_distribution(const LogisticModel& model, const FeatureMatrix& X_test,
                                               const FeatureMatrix& background) {
  if (X_test.rows() == 0) throw Error(ErrorCode::InvalidArgument, "empty test set");
  const auto bg = background_z_mean(model, background);
  const auto X = X_test.select_columns(model.feature_names);
  AttributionSummary s;
  s.feature_names = model.feature_names;
  s.attributions.resize(X.values.rows(), static_cast<Eigen::Index>(model.dims()));
  std::vector<double> row(model.dims());
  for (Eigen::Index i = 0; i < X.values.rows(); ++i) {
    for (std::size_t j = 0; j < model.dims(); ++j) row[j] = X.values(i, static_cast<Eigen::Index>(j));
    const auto rep = linear_attribution(model, bg, row);
    for (std::size_t j = 0; j < model.dims(); ++j) s.attributions(i, static_cast<Eigen::Index>(j)) = rep.values[j];
  }
  std::vector<double> mean_abs(model.dims());
  for (std::size_t j = 0; j < model.dims(); ++j)
    mean_abs[j] = s.attributions.col(static_cast<Eigen::Index>(j)).cwiseAbs().sum() / static_cast<double>(X.rows());
  std::vector<std::size_t> idx(model.dims());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return mean_abs[a] > mean_abs[b]; });
  for (auto j : idx) {
    s.ranking.push_back(model.feature_names[j]);
    s.mean_abs.push_back(mean_abs[j]);
  }
  return s;
}

}  // namespace icunomo
