#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "core.hpp"

namespace icunomo {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct NormStat {
  double mean = 0.0;
  double sd = 1.0;

  bool operator==(const NormStat&) const = default;
};

/// Rows are patients, columns are features. Missing slots hold NaN and are
/// flagged in `missing`.
struct FeatureMatrix {
  Matrix values;
  Mask missing;
  std::vector<std::string> names;
  std::vector<std::string> units;
  std::optional<std::vector<NormStat>> norm_stats;

  FeatureMatrix() = default;

  FeatureMatrix(Matrix v, std::vector<std::string> n, std::vector<std::string> u = {})
      : values(std::move(v)), names(std::move(n)), units(std::move(u)) {
    if (units.empty()) units.assign(names.size(), "");
    if (static_cast<std::size_t>(values.cols()) != names.size() || units.size() != names.size())
      throw Error(ErrorCode::InvalidArgument, "column names do not match matrix width");
    missing = values.array().isNaN();
  }

  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(values.cols()); }

  bool is_complete() const { return !missing.any(); }

  std::size_t missing_count(std::size_t col) const {
    return static_cast<std::size_t>(missing.col(static_cast<Eigen::Index>(col)).count());
  }

  std::optional<std::size_t> index_of(const std::string& name) const {
    for (std::size_t j = 0; j < names.size(); ++j)
      if (names[j] == name) return j;
    return std::nullopt;
  }

  void mark(std::size_t r, std::size_t c, double v) {
    values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
    missing(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = std::isnan(v);
  }

  /// Columns in the requested order; norm stats follow their columns.
  FeatureMatrix select_columns(const std::vector<std::string>& wanted) const {
    std::vector<std::size_t> idx;
    idx.reserve(wanted.size());
    std::vector<std::string> absent;
    for (const auto& w : wanted) {
      auto j = index_of(w);
      if (!j) absent.push_back(w);
      else idx.push_back(*j);
    }
    if (!absent.empty())
      throw Error(ErrorCode::MissingFeature, "columns not present: " + join(absent)).with_names(absent);
    return select_indices(idx);
  }

  FeatureMatrix select_indices(const std::vector<std::size_t>& idx) const {
    FeatureMatrix out;
    out.values.resize(values.rows(), static_cast<Eigen::Index>(idx.size()));
    out.missing.resize(values.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      out.values.col(static_cast<Eigen::Index>(k)) = values.col(static_cast<Eigen::Index>(idx[k]));
      out.missing.col(static_cast<Eigen::Index>(k)) = missing.col(static_cast<Eigen::Index>(idx[k]));
      out.names.push_back(names[idx[k]]);
      out.units.push_back(units[idx[k]]);
    }
    if (norm_stats) {
      out.norm_stats.emplace();
      for (auto j : idx) out.norm_stats->push_back((*norm_stats)[j]);
    }
    return out;
  }

  FeatureMatrix select_rows(const std::vector<std::size_t>& rows_wanted) const {
    FeatureMatrix out;
    out.values.resize(static_cast<Eigen::Index>(rows_wanted.size()), values.cols());
    out.missing.resize(static_cast<Eigen::Index>(rows_wanted.size()), values.cols());
    for (std::size_t i = 0; i < rows_wanted.size(); ++i) {
      out.values.row(static_cast<Eigen::Index>(i)) = values.row(static_cast<Eigen::Index>(rows_wanted[i]));
      out.missing.row(static_cast<Eigen::Index>(i)) = missing.row(static_cast<Eigen::Index>(rows_wanted[i]));
    }
    out.names = names;
    out.units = units;
    out.norm_stats = norm_stats;
    return out;
  }

  static std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s += ", ";
      s += v[i];
    }
    return s;
  }
};

/// Sample (n-1) mean and standard deviation over the observed entries of a column.
inline NormStat column_stats(const FeatureMatrix& m, std::size_t col) {
  const auto c = static_cast<Eigen::Index>(col);
  double sum = 0.0;
  std::size_t n = 0;
  for (Eigen::Index i = 0; i < m.values.rows(); ++i)
    if (!m.missing(i, c)) {
      sum += m.values(i, c);
      ++n;
    }
  if (n == 0) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (Eigen::Index i = 0; i < m.values.rows(); ++i)
    if (!m.missing(i, c)) ss += (m.values(i, c) - mean) * (m.values(i, c) - mean);
  const double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
  return {mean, sd};
}

}  // namespace icunomo
