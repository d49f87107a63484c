#pragma once

// Discrimination, calibration and two-sample statistics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "cohort.hpp"
#include "core.hpp"
#include "model.hpp"

namespace icunomo {

namespace detail {

inline void check_scores(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw Error(ErrorCode::InvalidArgument, "score/label length mismatch");
  for (double s : scores)
    if (std::isnan(s)) throw Error(ErrorCode::InvalidArgument, "NaN score");
}

}  // namespace detail

/// Mann-Whitney AUROC with mid-ranks, so tied scores count one half.
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
  detail::check_scores(scores, labels);
  require_both_classes(labels);
  const auto n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  double pos = 0.0;
  for (std::size_t k = 0; k < n;) {
    std::size_t end = k;
    while (end < n && scores[idx[end]] == scores[idx[k]]) ++end;
    const double mid = 0.5 * static_cast<double>(k + 1 + end);  // mean of ranks k+1..end
    for (std::size_t t = k; t < end; ++t)
      if (labels[idx[t]]) {
        rank_sum += mid;
        pos += 1.0;
      }
    k = end;
  }
  const double neg = static_cast<double>(n) - pos;
  const double u = rank_sum - pos * (pos + 1.0) / 2.0;
  return u / (pos * neg);
}

/// Average precision: sum over distinct thresholds of (recall step) x precision.
inline double pr_auc(std::span<const double> scores, std::span<const int> labels) {
  detail::check_scores(scores, labels);
  const auto n = scores.size();
  const auto positives = static_cast<double>(std::count_if(labels.begin(), labels.end(), [](int y) { return y != 0; }));
  if (positives == 0) throw Error(ErrorCode::NoPositives, "no positive labels");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  double tp = 0.0, fp = 0.0, ap = 0.0, prev_recall = 0.0;
  for (std::size_t k = 0; k < n;) {
    std::size_t end = k;
    while (end < n && scores[idx[end]] == scores[idx[k]]) {
      (labels[idx[end]] ? tp : fp) += 1.0;
      ++end;
    }
    const double recall = tp / positives;
    ap += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
    k = end;
  }
  return ap;
}

struct CurvePoint {
  double threshold;
  double x;  // FPR for ROC, recall for PR
  double y;  // TPR for ROC, precision for PR
};

inline std::vector<CurvePoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  detail::check_scores(scores, labels);
  require_both_classes(labels);
  const auto n = scores.size();
  const double P = static_cast<double>(std::count_if(labels.begin(), labels.end(), [](int y) { return y != 0; }));
  const double N = static_cast<double>(n) - P;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  std::vector<CurvePoint> pts = {{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
  double tp = 0.0, fp = 0.0;
  for (std::size_t k = 0; k < n;) {
    std::size_t end = k;
    while (end < n && scores[idx[end]] == scores[idx[k]]) {
      (labels[idx[end]] ? tp : fp) += 1.0;
      ++end;
    }
    pts.push_back({scores[idx[k]], fp / N, tp / P});
    k = end;
  }
  return pts;
}

inline std::vector<CurvePoint> pr_curve(std::span<const double> scores, std::span<const int> labels) {
  detail::check_scores(scores, labels);
  const auto n = scores.size();
  const double P = static_cast<double>(std::count_if(labels.begin(), labels.end(), [](int y) { return y != 0; }));
  if (P == 0) throw Error(ErrorCode::NoPositives, "no positive labels");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  std::vector<CurvePoint> pts;
  double tp = 0.0, fp = 0.0;
  for (std::size_t k = 0; k < n;) {
    std::size_t end = k;
    while (end < n && scores[idx[end]] == scores[idx[k]]) {
      (labels[idx[end]] ? tp : fp) += 1.0;
      ++end;
    }
    pts.push_back({scores[idx[k]], tp / P, tp / (tp + fp)});
    k = end;
  }
  return pts;
}

// ---------------------------------------------------------------------------

struct BootstrapInterval {
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.95;
  std::size_t replicates = 0;
  std::size_t redraws = 0;  // resamples discarded for lacking a class
};

using MetricFn = std::function<double(std::span<const double>, std::span<const int>)>;

namespace detail {

/// Linear-interpolated sample quantile of sorted data.
inline double quantile_sorted(const std::vector<double>& v, double q) {
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace detail

/// Percentile bootstrap over class-stratified resamples; replicate b draws
/// from its own substream of `seed`.
inline BootstrapInterval bootstrap_ci(std::span<const double> scores, std::span<const int> labels,
                                      const MetricFn& metric, std::size_t B = 2000, double level = 0.95,
                                      std::uint64_t seed = 0) {
  detail::check_scores(scores, labels);
  require_both_classes(labels);
  if (B == 0 || !(level > 0.0 && level < 1.0)) throw Error(ErrorCode::InvalidArgument, "bad bootstrap settings");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos : neg).push_back(i);

  BootstrapInterval out;
  out.level = level;
  out.replicates = B;
  std::vector<double> stats(B);
  std::vector<double> s(scores.size());
  std::vector<int> y(scores.size());
  for (std::size_t b = 0; b < B; ++b) {
    Rng rng = make_rng(derive_seed(seed, b));
    for (;;) {
      std::size_t k = 0;
      int classes_seen = 0;
      for (const auto* group : {&pos, &neg}) {
        for (std::size_t t = 0; t < group->size(); ++t, ++k) {
          const auto i = (*group)[uniform_index(rng, group->size())];
          s[k] = scores[i];
          y[k] = labels[i];
        }
        classes_seen += !group->empty();
      }
      if (classes_seen == 2) break;
      ++out.redraws;
    }
    stats[b] = metric(s, y);
  }
  std::sort(stats.begin(), stats.end());
  const double alpha = 1.0 - level;
  out.lower = detail::quantile_sorted(stats, alpha / 2.0);
  out.upper = detail::quantile_sorted(stats, 1.0 - alpha / 2.0);
  return out;
}

// ---------------------------------------------------------------------------

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double sensitivity = 0.0, specificity = 0.0, ppv = 0.0, npv = 0.0;  // NaN when undefined
};

/// Predicted positive iff score >= threshold.
inline Confusion confusion_at(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5) {
  detail::check_scores(scores, labels);
  require_both_classes(labels);
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (labels[i]) (pred ? c.tp : c.fn)++;
    else (pred ? c.fp : c.tn)++;
  }
  auto ratio = [](std::size_t a, std::size_t b) {
    return b ? static_cast<double>(a) / static_cast<double>(b) : std::numeric_limits<double>::quiet_NaN();
  };
  c.sensitivity = ratio(c.tp, c.tp + c.fn);
  c.specificity = ratio(c.tn, c.tn + c.fp);
  c.ppv = ratio(c.tp, c.tp + c.fp);
  c.npv = ratio(c.tn, c.tn + c.fn);
  return c;
}

// ---------------------------------------------------------------------------
// Harrell's C. A pair (i, j) is admissible when i has an observed event and
// either t_i < t_j, or t_i == t_j with j censored. Concordant when i carries
// the higher risk; equal risks count one half.

inline double c_index(std::span<const double> risk, std::span<const SurvivalOutcome> outcomes) {
  if (risk.size() != outcomes.size()) throw Error(ErrorCode::InvalidArgument, "risk/outcome length mismatch");
  const auto n = risk.size();
  std::vector<double> levels(risk.begin(), risk.end());
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  auto rank_of = [&](double r) {
    return static_cast<std::size_t>(std::lower_bound(levels.begin(), levels.end(), r) - levels.begin()) + 1;
  };
  // Fenwick tree over risk ranks of subjects with strictly later times.
  std::vector<std::uint64_t> tree(levels.size() + 1, 0);
  std::uint64_t in_tree = 0;
  auto add = [&](std::size_t i) {
    for (; i < tree.size(); i += i & (~i + 1)) ++tree[i];
  };
  auto prefix = [&](std::size_t i) {
    std::uint64_t s = 0;
    for (; i > 0; i -= i & (~i + 1)) s += tree[i];
    return s;
  };

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return outcomes[a].time_days > outcomes[b].time_days; });
  std::uint64_t concordant = 0, tied = 0, admissible = 0;
  for (std::size_t k = 0; k < n;) {
    std::size_t end = k;
    while (end < n && outcomes[order[end]].time_days == outcomes[order[k]].time_days) ++end;
    for (std::size_t a = k; a < end; ++a) {
      const auto i = order[a];
      if (!outcomes[i].event) continue;
      const auto r = rank_of(risk[i]);
      const auto below = prefix(r - 1);
      const auto equal = prefix(r) - below;
      concordant += below;
      tied += equal;
      admissible += in_tree;
      for (std::size_t b = k; b < end; ++b) {
        const auto j = order[b];
        if (outcomes[j].event) continue;
        ++admissible;
        if (risk[i] > risk[j]) ++concordant;
        else if (risk[i] == risk[j]) ++tied;
      }
    }
    for (std::size_t a = k; a < end; ++a) {
      add(rank_of(risk[order[a]]));
      ++in_tree;
    }
    k = end;
  }
  if (admissible == 0) throw Error(ErrorCode::NoComparablePairs, "no admissible pairs");
  return (static_cast<double>(concordant) + 0.5 * static_cast<double>(tied)) / static_cast<double>(admissible);
}

// ---------------------------------------------------------------------------

struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
};

/// Welch two-sample t-test with Satterthwaite df, two-sided p.
inline TTestResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw Error(ErrorCode::DegenerateSample, "each sample needs at least 2 values");
  auto moments = [](std::span<const double> v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::pair{m, ss / static_cast<double>(v.size() - 1)};
  };
  auto [ma, va] = moments(a);
  auto [mb, vb] = moments(b);
  const double qa = va / static_cast<double>(a.size());
  const double qb = vb / static_cast<double>(b.size());
  if (!(qa + qb > 0.0)) throw Error(ErrorCode::DegenerateSample, "both samples have zero variance");
  TTestResult r;
  r.t = (ma - mb) / std::sqrt(qa + qb);
  r.df = (qa + qb) * (qa + qb) /
         (qa * qa / static_cast<double>(a.size() - 1) + qb * qb / static_cast<double>(b.size() - 1));
  boost::math::students_t dist(r.df);
  r.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t))));
  return r;
}

// ---------------------------------------------------------------------------

struct CalibrationBin {
  double mean_pred = 0.0;
  double observed_rate = 0.0;
  std::size_t n = 0;
};

/// Equal-frequency bins over sorted scores. A boundary never splits a run of
/// tied scores, so heavily tied data yields fewer, larger bins.
inline std::vector<CalibrationBin> calibration_curve(std::span<const double> scores, std::span<const int> labels,
                                                     std::size_t bins = 10) {
  detail::check_scores(scores, labels);
  require_both_classes(labels);
  if (bins == 0) throw Error(ErrorCode::InvalidArgument, "bins must be positive");
  const auto n = scores.size();
  bins = std::min(bins, n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  std::vector<CalibrationBin> out;
  std::size_t start = 0;
  for (std::size_t b = 1; b <= bins && start < n; ++b) {
    std::size_t end = b == bins ? n : (b * n) / bins;
    if (end <= start) continue;
    while (end < n && scores[idx[end]] == scores[idx[end - 1]]) ++end;
    CalibrationBin c;
    double ps = 0.0, ys = 0.0;
    for (std::size_t t = start; t < end; ++t) {
      ps += scores[idx[t]];
      ys += labels[idx[t]] ? 1.0 : 0.0;
    }
    c.n = end - start;
    c.mean_pred = ps / static_cast<double>(c.n);
    c.observed_rate = ys / static_cast<double>(c.n);
    out.push_back(c);
    start = end;
  }
  return out;
}

// ---------------------------------------------------------------------------

struct MetricReport {
  double horizon_days = 0.0;
  double auroc = 0.0;
  BootstrapInterval auroc_ci;
  double pr_auc = 0.0;
  double threshold = 0.5;
  Confusion confusion;
  std::size_t n_test = 0;
  std::size_t n_events = 0;
  std::vector<CalibrationBin> calibration;
};

struct EvaluationOptions {
  std::size_t bootstrap_replicates = 2000;
  double level = 0.95;
  double threshold = 0.5;
  std::size_t calibration_bins = 10;
  std::uint64_t seed = 0;
};

inline MetricReport evaluate_scores(std::span<const double> scores, std::span<const int> labels, double horizon_days,
                                    const EvaluationOptions& opt = {}) {
  MetricReport r;
  r.horizon_days = horizon_days;
  r.n_test = scores.size();
  r.n_events = static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](int y) { return y != 0; }));
  r.auroc = auroc(scores, labels);
  r.auroc_ci = bootstrap_ci(scores, labels, [](auto s, auto y) { return auroc(s, y); }, opt.bootstrap_replicates,
                            opt.level, opt.seed);
  r.pr_auc = pr_auc(scores, labels);
  r.threshold = opt.threshold;
  r.confusion = confusion_at(scores, labels, opt.threshold);
  r.calibration = calibration_curve(scores, labels, opt.calibration_bins);
  return r;
}

/// Monte-Carlo AUROC of the planted probabilities themselves: the best
/// discrimination any model can reach on data drawn from the oracle.
inline double planted_bayes_auroc(const OracleModel& oracle, double horizon, std::size_t n, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> z(oracle.coefficients.size());
  std::vector<double> p(n);
  Labels y(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& v : z) v = normal(rng);
    p[i] = 1.0 / (1.0 + std::exp(-oracle.logit_latent(z.data(), horizon)));
    y[i] = uniform01(rng) < p[i] ? 1 : 0;
  }
  return auroc(p, y);
}

}  // namespace icunomo
