#pragma once

// Horizon-specific logistic models and the Cox proportional-hazards model.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cohort.hpp"
#include "core.hpp"
#include "feature_matrix.hpp"

namespace icunomo {

using Labels = std::vector<int>;

inline Labels binarize_outcome(std::span<const SurvivalOutcome> outcomes, double horizon_days) {
  Labels out;
  out.reserve(outcomes.size());
  for (const auto& o : outcomes) out.push_back(o.event && o.time_days <= horizon_days ? 1 : 0);
  return out;
}

inline void require_both_classes(std::span<const int> labels) {
  std::size_t pos = 0;
  for (int y : labels) pos += y != 0;
  if (pos == 0 || pos == labels.size()) throw Error(ErrorCode::SingleClass, "labels contain a single class");
}

struct FitMeta {
  std::size_t iterations = 0;
  double gradient_norm = 0.0;  // max-norm at the returned parameters
  double log_likelihood = 0.0;
  double l2 = 0.0;
  bool converged = false;
};

namespace detail {

inline std::vector<NormStat> stats_or_identity(const FeatureMatrix& X) {
  if (X.norm_stats) return *X.norm_stats;
  return std::vector<NormStat>(X.cols(), NormStat{0.0, 1.0});
}

inline std::vector<double> standardize(std::span<const double> raw, const std::vector<std::string>& names,
                                       const std::vector<NormStat>& stats) {
  std::vector<std::string> absent;
  if (raw.size() != names.size()) throw Error(ErrorCode::InvalidArgument, "feature vector width mismatch");
  std::vector<double> z(raw.size());
  for (std::size_t j = 0; j < raw.size(); ++j) {
    if (std::isnan(raw[j])) absent.push_back(names[j]);
    z[j] = (raw[j] - stats[j].mean) / stats[j].sd;
  }
  if (!absent.empty())
    throw Error(ErrorCode::MissingFeature, "missing feature(s): " + FeatureMatrix::join(absent)).with_names(absent);
  return z;
}

inline double log1p_exp(double eta) { return eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta)); }

inline double sigmoid(double eta) {
  if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

}  // namespace detail

/// Reorders a named raw record into model column order; NaN marks absent names.
inline std::vector<double> align_features(const std::map<std::string, double>& values,
                                          const std::vector<std::string>& names) {
  std::vector<double> out;
  for (const auto& n : names) {
    auto it = values.find(n);
    out.push_back(it == values.end() ? std::numeric_limits<double>::quiet_NaN() : it->second);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Logistic regression

struct LogisticModel {
  double intercept = 0.0;
  std::vector<double> coefficients;  // z-score scale
  double horizon_days = 28.0;
  std::vector<std::string> feature_names;
  std::vector<std::string> units;
  std::vector<NormStat> norm_stats;
  FitMeta fit_meta;
  // Raw-unit mean profile (attribution background) and plausible value range
  // per feature (nomogram axes). Filled by the pipeline from training data.
  std::vector<double> background_mean;
  std::vector<std::pair<double, double>> value_ranges;

  std::size_t dims() const { return coefficients.size(); }

  double logit(std::span<const double> raw) const {
    auto z = detail::standardize(raw, feature_names, norm_stats);
    double eta = intercept;
    for (std::size_t j = 0; j < z.size(); ++j) eta += coefficients[j] * z[j];
    return eta;
  }
};

/// Penalized log-likelihood of the design [1 | X] at params = (b0, b).
inline double logistic_objective(const Matrix& X, std::span<const int> y, const Vector& params, double l2) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double eta = params(0) + X.row(i).dot(params.tail(X.cols()));
    ll += (y[static_cast<std::size_t>(i)] ? eta : 0.0) - detail::log1p_exp(eta);
  }
  return ll - 0.5 * l2 * params.tail(X.cols()).squaredNorm();
}

inline Vector logistic_gradient(const Matrix& X, std::span<const int> y, const Vector& params, double l2) {
  Vector g = Vector::Zero(X.cols() + 1);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double eta = params(0) + X.row(i).dot(params.tail(X.cols()));
    const double r = (y[static_cast<std::size_t>(i)] ? 1.0 : 0.0) - detail::sigmoid(eta);
    g(0) += r;
    g.tail(X.cols()) += r * X.row(i).transpose();
  }
  g.tail(X.cols()) -= l2 * params.tail(X.cols());
  return g;
}

struct LogisticFitOptions {
  double l2 = 1e-6;
  double tolerance = 1e-8;
  std::size_t max_iterations = 100;
};

/// Damped Newton (IRLS) on the L2-penalized log-likelihood; the intercept is
/// not penalized. Expects z-scored, complete features.
inline LogisticModel fit_logistic(const FeatureMatrix& Xm, std::span<const int> labels,
                                  const LogisticFitOptions& opt = {}) {
  if (labels.size() != Xm.rows()) throw Error(ErrorCode::InvalidArgument, "label count differs from row count");
  if (!Xm.is_complete()) throw Error(ErrorCode::InvalidArgument, "logistic fit requires complete features");
  require_both_classes(labels);
  const Matrix& X = Xm.values;
  const auto d = X.cols();
  Vector params = Vector::Zero(d + 1);
  double pos = 0.0;
  for (int y : labels) pos += y != 0;
  params(0) = std::log(pos / (static_cast<double>(labels.size()) - pos));

  double obj = logistic_objective(X, labels, params, opt.l2);
  FitMeta meta;
  meta.l2 = opt.l2;
  for (std::size_t it = 0;; ++it) {
    Vector g = logistic_gradient(X, labels, params, opt.l2);
    meta.gradient_norm = g.cwiseAbs().maxCoeff();
    meta.iterations = it;
    if (meta.gradient_norm < opt.tolerance) {
      meta.converged = true;
      break;
    }
    if (it == opt.max_iterations)
      throw Error(ErrorCode::NonConvergence, "logistic fit did not converge in " + std::to_string(it) +
                                                 " iterations (gradient " + std::to_string(meta.gradient_norm) + ")")
          .with_iteration(it);

    Matrix H = Matrix::Zero(d + 1, d + 1);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      const double p = detail::sigmoid(params(0) + X.row(i).dot(params.tail(d)));
      const double w = std::max(p * (1.0 - p), 1e-300);
      Vector xi(d + 1);
      xi(0) = 1.0;
      xi.tail(d) = X.row(i).transpose();
      H.selfadjointView<Eigen::Lower>().rankUpdate(xi, w);
    }
    H = H.selfadjointView<Eigen::Lower>();
    for (Eigen::Index j = 1; j <= d; ++j) H(j, j) += opt.l2;
    Vector step = H.ldlt().solve(g);
    if (!step.allFinite()) step = g;

    double t = 1.0;
    for (int halving = 0; halving < 40; ++halving, t *= 0.5) {
      Vector trial = params + t * step;
      const double trial_obj = logistic_objective(X, labels, trial, opt.l2);
      if (trial_obj >= obj - 1e-12 * std::abs(obj)) {
        params = trial;
        obj = trial_obj;
        break;
      }
    }
  }
  meta.log_likelihood = obj;

  LogisticModel m;
  m.intercept = params(0);
  m.coefficients.assign(params.data() + 1, params.data() + 1 + d);
  m.feature_names = Xm.names;
  m.units = Xm.units;
  m.norm_stats = detail::stats_or_identity(Xm);
  m.fit_meta = meta;
  return m;
}

inline LogisticModel fit_logistic(const FeatureMatrix& X, std::span<const int> labels, double l2) {
  LogisticFitOptions o;
  o.l2 = l2;
  return fit_logistic(X, labels, o);
}

inline constexpr double kProbFloor = 1e-15;

inline double predict_prob(const LogisticModel& m, std::span<const double> raw) {
  return std::clamp(detail::sigmoid(m.logit(raw)), kProbFloor, 1.0 - kProbFloor);
}

inline double predict_prob(const LogisticModel& m, const std::map<std::string, double>& raw) {
  auto x = align_features(raw, m.feature_names);
  return predict_prob(m, x);
}

/// Probabilities for every row of a raw-unit matrix.
inline std::vector<double> predict_probs(const LogisticModel& m, const FeatureMatrix& raw) {
  std::vector<double> out(raw.rows());
  std::vector<double> x(raw.cols());
  for (std::size_t i = 0; i < raw.rows(); ++i) {
    for (std::size_t j = 0; j < raw.cols(); ++j)
      x[j] = raw.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    out[i] = predict_prob(m, x);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cox proportional hazards, Breslow ties

struct CoxModel {
  std::vector<double> coefficients;
  std::vector<std::string> feature_names;
  std::vector<NormStat> norm_stats;
  std::vector<double> event_times;     // distinct, ascending
  std::vector<double> baseline_cumhaz;  // H0 at event_times[k], right-continuous steps
  FitMeta fit_meta;

  double cumulative_hazard(double t) const {
    auto it = std::upper_bound(event_times.begin(), event_times.end(), t);
    if (it == event_times.begin()) return 0.0;
    return baseline_cumhaz[static_cast<std::size_t>(it - event_times.begin()) - 1];
  }

  double linear_predictor(std::span<const double> raw) const {
    auto z = detail::standardize(raw, feature_names, norm_stats);
    double lp = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) lp += coefficients[j] * z[j];
    return lp;
  }
};

namespace detail {

struct CoxTerms {
  double loglik = 0.0;
  Vector gradient;
  Matrix hessian;  // of the log-likelihood (negative semidefinite)
};

/// Walks subjects from the longest time down; the risk set at time t is every
/// subject with time >= t.
inline CoxTerms cox_terms(const Matrix& X, std::span<const SurvivalOutcome> y, const Vector& beta, bool want_hessian) {
  const auto n = X.rows();
  const auto d = X.cols();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
    return y[static_cast<std::size_t>(a)].time_days > y[static_cast<std::size_t>(b)].time_days;
  });
  CoxTerms out;
  out.gradient = Vector::Zero(d);
  if (want_hessian) out.hessian = Matrix::Zero(d, d);
  double s0 = 0.0;
  Vector s1 = Vector::Zero(d);
  Matrix s2 = Matrix::Zero(d, d);
  Vector event_sum(d);
  std::size_t k = 0;
  while (k < order.size()) {
    const double t = y[static_cast<std::size_t>(order[k])].time_days;
    std::size_t end = k;
    std::size_t deaths = 0;
    event_sum.setZero();
    double event_lp = 0.0;
    while (end < order.size() && y[static_cast<std::size_t>(order[end])].time_days == t) {
      const auto i = order[end];
      const double lp = X.row(i).dot(beta);
      const double w = std::exp(lp);
      s0 += w;
      s1 += w * X.row(i).transpose();
      if (want_hessian) s2.noalias() += w * X.row(i).transpose() * X.row(i);
      if (y[static_cast<std::size_t>(i)].event) {
        ++deaths;
        event_sum += X.row(i).transpose();
        event_lp += lp;
      }
      ++end;
    }
    if (deaths) {
      const double dd = static_cast<double>(deaths);
      out.loglik += event_lp - dd * std::log(s0);
      Vector mean = s1 / s0;
      out.gradient += event_sum - dd * mean;
      if (want_hessian) out.hessian -= dd * (s2 / s0 - mean * mean.transpose());
    }
    k = end;
  }
  return out;
}

}  // namespace detail

inline double cox_partial_loglik(const Matrix& X, std::span<const SurvivalOutcome> y, const Vector& beta) {
  return detail::cox_terms(X, y, beta, false).loglik;
}

inline Vector cox_gradient(const Matrix& X, std::span<const SurvivalOutcome> y, const Vector& beta) {
  return detail::cox_terms(X, y, beta, false).gradient;
}

struct CoxFitOptions {
  double tolerance = 1e-8;
  std::size_t max_iterations = 100;
};

/// Newton-Raphson with step halving on the Breslow partial likelihood.
/// Columns without variation carry no information and stay at zero.
inline CoxModel fit_cox(const FeatureMatrix& Xm, std::span<const SurvivalOutcome> outcomes,
                        const CoxFitOptions& opt = {}) {
  if (outcomes.size() != Xm.rows()) throw Error(ErrorCode::InvalidArgument, "outcome count differs from row count");
  if (!Xm.is_complete()) throw Error(ErrorCode::InvalidArgument, "Cox fit requires complete features");
  if (std::none_of(outcomes.begin(), outcomes.end(), [](const auto& o) { return o.event; }))
    throw Error(ErrorCode::NoEvents, "no observed events");

  std::vector<Eigen::Index> active;
  for (Eigen::Index j = 0; j < Xm.values.cols(); ++j) {
    const auto col = Xm.values.col(j);
    if (col.maxCoeff() > col.minCoeff()) active.push_back(j);
  }
  Matrix X(Xm.values.rows(), static_cast<Eigen::Index>(active.size()));
  for (std::size_t a = 0; a < active.size(); ++a) X.col(static_cast<Eigen::Index>(a)) = Xm.values.col(active[a]);

  const auto d = X.cols();
  Vector beta = Vector::Zero(d);
  FitMeta meta;
  auto terms = detail::cox_terms(X, outcomes, beta, true);
  for (std::size_t it = 0;; ++it) {
    meta.iterations = it;
    meta.gradient_norm = d ? terms.gradient.cwiseAbs().maxCoeff() : 0.0;
    if (meta.gradient_norm < opt.tolerance) {
      meta.converged = true;
      break;
    }
    if (it == opt.max_iterations)
      throw Error(ErrorCode::NonConvergence, "Cox fit did not converge in " + std::to_string(it) + " iterations")
          .with_iteration(it);
    Matrix info = -terms.hessian;
    Vector step = info.ldlt().solve(terms.gradient);
    if (!step.allFinite()) step = terms.gradient;
    double t = 1.0;
    bool moved = false;
    for (int halving = 0; halving < 40; ++halving, t *= 0.5) {
      Vector trial = beta + t * step;
      auto trial_terms = detail::cox_terms(X, outcomes, trial, true);
      if (std::isfinite(trial_terms.loglik) && trial_terms.loglik >= terms.loglik - 1e-12 * std::abs(terms.loglik)) {
        beta = trial;
        terms = std::move(trial_terms);
        moved = true;
        break;
      }
    }
    if (!moved)
      throw Error(ErrorCode::NonConvergence, "Cox line search failed at iteration " + std::to_string(it))
          .with_iteration(it);
  }
  meta.log_likelihood = terms.loglik;

  CoxModel m;
  m.coefficients.assign(static_cast<std::size_t>(Xm.values.cols()), 0.0);
  for (std::size_t a = 0; a < active.size(); ++a) m.coefficients[static_cast<std::size_t>(active[a])] = beta(static_cast<Eigen::Index>(a));
  m.feature_names = Xm.names;
  m.norm_stats = detail::stats_or_identity(Xm);
  m.fit_meta = meta;

  // Breslow baseline: dH0(t) = d(t) / sum_{risk set} exp(lp).
  std::vector<std::size_t> order(outcomes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](auto a, auto b) { return outcomes[a].time_days < outcomes[b].time_days; });
  std::vector<double> risk(outcomes.size());
  for (std::size_t i = 0; i < outcomes.size(); ++i)
    risk[i] = std::exp(X.row(static_cast<Eigen::Index>(i)).dot(beta));
  double at_risk = std::accumulate(risk.begin(), risk.end(), 0.0);
  double cum = 0.0;
  std::size_t k = 0;
  while (k < order.size()) {
    const double t = outcomes[order[k]].time_days;
    std::size_t end = k;
    std::size_t deaths = 0;
    double leaving = 0.0;
    while (end < order.size() && outcomes[order[end]].time_days == t) {
      deaths += outcomes[order[end]].event;
      leaving += risk[order[end]];
      ++end;
    }
    if (deaths) {
      cum += static_cast<double>(deaths) / at_risk;
      m.event_times.push_back(t);
      m.baseline_cumhaz.push_back(cum);
    }
    at_risk -= leaving;
    k = end;
  }
  return m;
}

/// S(t | x) = exp(-H0(t) exp(beta' z)); right-constant past the last event.
inline double cox_survival(const CoxModel& m, std::span<const double> raw, double t) {
  if (t < 0) throw Error(ErrorCode::InvalidArgument, "time must be nonnegative");
  const double lp = m.linear_predictor(raw);
  return std::exp(-m.cumulative_hazard(t) * std::exp(lp));
}

}  // namespace icunomo
