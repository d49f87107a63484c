#pragma once

// Regression nomogram built from a logistic model.
//
// Each feature gets a point axis whose span is proportional to
// |beta| x (range in z units); the widest axis spans 100 points. Negative
// coefficients reverse their axis so points are never negative. Because the
// logit is affine in total points,
//     logit = offset + total / points_per_logit,
// the probability table only has to resolve a sigmoid.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"
#include "model.hpp"

namespace icunomo {

struct NomogramAxis {
  std::string name;
  std::string unit;
  double lo = 0.0;
  double hi = 1.0;
  double coefficient = 0.0;  // z scale
  double mean = 0.0;         // normalization used by the model
  double sd = 1.0;
  double max_points = 0.0;   // span of this axis
  bool reversed = false;     // higher value, fewer points
  bool flat = false;         // zero coefficient

  /// Affine value -> points map on [lo, hi]; callers clamp first.
  double points(double v) const {
    if (flat) return 0.0;
    const double frac = (v - lo) / (hi - lo);
    return max_points * (reversed ? 1.0 - frac : frac);
  }
};

struct ProbabilityMap {
  double total_min = 0.0;
  double total_max = 0.0;
  std::vector<double> probability;  // evenly spaced over [total_min, total_max]

  double operator()(double total) const {
    if (probability.size() == 1 || total_max <= total_min) return probability.front();
    const double t = std::clamp(total, total_min, total_max);
    const double pos = (t - total_min) / (total_max - total_min) * static_cast<double>(probability.size() - 1);
    const auto k = std::min(static_cast<std::size_t>(pos), probability.size() - 2);
    const double w = pos - static_cast<double>(k);
    return probability[k] + w * (probability[k + 1] - probability[k]);
  }
};

struct NomogramSpec {
  double horizon_days = 0.0;
  std::vector<NomogramAxis> axes;
  double max_points_per_feature = 100.0;
  double total_points_max = 0.0;
  double logit_offset = 0.0;
  double points_per_logit = 1.0;
  ProbabilityMap prob_map;
  std::string model_ref;
};

struct NomogramOptions {
  std::size_t min_table_size = 1001;
  double interpolation_error = 2.5e-7;  // bound on table-interpolation error
};

/// Ranges are per feature (lo, hi) in raw units, model order. When empty the
/// model's stored value ranges are used.
inline NomogramSpec build_nomogram(const LogisticModel& model, std::vector<std::pair<double, double>> ranges = {},
                                   std::string model_ref = {}, const NomogramOptions& opt = {}) {
  if (ranges.empty()) ranges = model.value_ranges;
  if (ranges.size() != model.dims())
    throw Error(ErrorCode::DegenerateRange, "need one (lo, hi) range per model feature");
  NomogramSpec spec;
  spec.horizon_days = model.horizon_days;
  spec.model_ref = std::move(model_ref);

  double widest = 0.0;
  std::vector<double> raw_span(model.dims());
  for (std::size_t j = 0; j < model.dims(); ++j) {
    auto [lo, hi] = ranges[j];
    if (!std::isfinite(lo) || !std::isfinite(hi) || !(lo < hi))
      throw Error(ErrorCode::DegenerateRange, "invalid range for '" + model.feature_names[j] + "'")
          .with_names({model.feature_names[j]});
    NomogramAxis a;
    a.name = model.feature_names[j];
    a.unit = j < model.units.size() ? model.units[j] : "";
    a.lo = lo;
    a.hi = hi;
    a.coefficient = model.coefficients[j];
    a.mean = model.norm_stats[j].mean;
    a.sd = model.norm_stats[j].sd;
    a.reversed = a.coefficient < 0.0;
    a.flat = a.coefficient == 0.0;
    raw_span[j] = std::abs(a.coefficient) * (hi - lo) / a.sd;  // logit units
    widest = std::max(widest, raw_span[j]);
    spec.axes.push_back(a);
  }

  spec.points_per_logit = widest > 0.0 ? spec.max_points_per_feature / widest : 1.0;
  spec.logit_offset = model.intercept;
  for (std::size_t j = 0; j < model.dims(); ++j) {
    auto& a = spec.axes[j];
    a.max_points = raw_span[j] * spec.points_per_logit;
    const double zero_end = a.reversed ? a.hi : a.lo;
    spec.logit_offset += a.coefficient * (zero_end - a.mean) / a.sd;
    spec.total_points_max += a.max_points;
  }

  // Linear interpolation of a sigmoid over logit step h errs by at most
  // h^2/8 * max|sigmoid''| = h^2 / (48 sqrt 3).
  const double logit_range = spec.total_points_max / spec.points_per_logit;
  const double h = std::sqrt(opt.interpolation_error * 48.0 * std::sqrt(3.0));
  const auto needed = static_cast<std::size_t>(std::ceil(logit_range / h)) + 1;
  const std::size_t size = std::max(opt.min_table_size, needed);
  spec.prob_map.total_min = 0.0;
  spec.prob_map.total_max = spec.total_points_max;
  spec.prob_map.probability.resize(size);
  for (std::size_t k = 0; k < size; ++k) {
    const double total = spec.total_points_max * static_cast<double>(k) / static_cast<double>(size - 1);
    spec.prob_map.probability[k] = detail::sigmoid(spec.logit_offset + total / spec.points_per_logit);
  }
  return spec;
}

struct PatientScore {
  std::vector<double> points;   // per axis
  std::vector<bool> clamped;    // value fell outside the axis range
  double total = 0.0;
  double probability = 0.0;     // prob_map(total)

  bool any_clamped() const { return std::any_of(clamped.begin(), clamped.end(), [](bool b) { return b; }); }
};

inline PatientScore score_patient(const NomogramSpec& spec, std::span<const double> raw) {
  if (raw.size() != spec.axes.size()) throw Error(ErrorCode::InvalidArgument, "feature vector width mismatch");
  std::vector<std::string> absent;
  for (std::size_t j = 0; j < raw.size(); ++j)
    if (std::isnan(raw[j])) absent.push_back(spec.axes[j].name);
  if (!absent.empty())
    throw Error(ErrorCode::MissingFeature, "missing feature(s): " + FeatureMatrix::join(absent)).with_names(absent);
  PatientScore s;
  for (std::size_t j = 0; j < raw.size(); ++j) {
    const auto& a = spec.axes[j];
    const double v = std::clamp(raw[j], a.lo, a.hi);
    s.clamped.push_back(v != raw[j]);
    s.points.push_back(a.points(v));
    s.total += s.points.back();
  }
  s.probability = spec.prob_map(s.total);
  return s;
}

inline PatientScore score_patient(const NomogramSpec& spec, const std::map<std::string, double>& raw) {
  std::vector<std::string> names;
  for (const auto& a : spec.axes) names.push_back(a.name);
  return score_patient(spec, align_features(raw, names));
}

// ---------------------------------------------------------------------------
// SVG

namespace detail {

inline std::string fmt_px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string fmt_label(double v) {
  char buf[32];
  if (v == 0.0) v = 0.0;  // no "-0"
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

/// 1-2-5 step giving roughly `target` intervals over [lo, hi].
inline std::vector<double> nice_ticks(double lo, double hi, int target = 6) {
  const double raw = (hi - lo) / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    step = m * mag;
    if (raw <= step) break;
  }
  std::vector<double> out;
  const double first = std::ceil(lo / step - 1e-9);
  for (double k = first;; k += 1.0) {
    const double v = k * step;
    if (v > hi + 1e-9 * step) break;
    out.push_back(std::abs(v) < 1e-12 * step ? 0.0 : v);
  }
  return out;
}

}  // namespace detail

struct SvgLayout {
  double width = 920.0;
  double label_x = 20.0;
  double axis_x0 = 220.0;
  double axis_width = 640.0;  // 100 points, and the full total-points range
  double row_height = 56.0;
  double top = 70.0;
};

inline std::string render_svg(const NomogramSpec& spec, const SvgLayout& L = {}) {
  using detail::fmt_label;
  using detail::fmt_px;
  using detail::xml_escape;
  const double px_per_point = L.axis_width / spec.max_points_per_feature;
  const double px_per_total = spec.total_points_max > 0 ? L.axis_width / spec.total_points_max : 0.0;
  const std::size_t rows = spec.axes.size() + 3;
  const double height = L.top + static_cast<double>(rows) * L.row_height + 30.0;

  std::ostringstream o;
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << fmt_px(L.width) << "\" height=\""
    << fmt_px(height) << "\" viewBox=\"0 0 " << fmt_px(L.width) << " " << fmt_px(height) << "\""
    << " font-family=\"Helvetica, Arial, sans-serif\" font-size=\"11\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << fmt_px(L.width / 2) << "\" y=\"32\" text-anchor=\"middle\" font-size=\"16\">"
    << fmt_label(spec.horizon_days) << "-day mortality nomogram</text>\n";

  double y = L.top;
  auto axis = [&](const char* cls, const std::string& name, const std::string& label, double x_end,
                  const std::vector<std::pair<double, double>>& ticks /* (x, value) */, const std::string& extra) {
    o << "<g class=\"axis " << cls << "\" data-name=\"" << xml_escape(name) << "\"" << extra << ">\n";
    o << "  <text x=\"" << fmt_px(L.label_x) << "\" y=\"" << fmt_px(y + 4) << "\">" << xml_escape(label)
      << "</text>\n";
    o << "  <line class=\"baseline\" x1=\"" << fmt_px(L.axis_x0) << "\" y1=\"" << fmt_px(y) << "\" x2=\""
      << fmt_px(x_end) << "\" y2=\"" << fmt_px(y) << "\" stroke=\"black\"/>\n";
    for (auto [x, v] : ticks) {
      o << "  <line class=\"tick\" data-value=\"" << fmt_label(v) << "\" x1=\"" << fmt_px(x) << "\" y1=\""
        << fmt_px(y) << "\" x2=\"" << fmt_px(x) << "\" y2=\"" << fmt_px(y - 6) << "\" stroke=\"black\"/>\n";
      o << "  <text class=\"tick-label\" x=\"" << fmt_px(x) << "\" y=\"" << fmt_px(y - 9)
        << "\" text-anchor=\"middle\">" << fmt_label(v) << "</text>\n";
    }
    o << "</g>\n";
    y += L.row_height;
  };

  {
    std::vector<std::pair<double, double>> ticks;
    for (int p = 0; p <= 100; p += 10) ticks.emplace_back(L.axis_x0 + p * px_per_point, p);
    axis("scale-axis", "points", "Points", L.axis_x0 + L.axis_width, ticks, "");
  }
  for (const auto& a : spec.axes) {
    std::vector<std::pair<double, double>> ticks;
    for (double v : detail::nice_ticks(a.lo, a.hi)) ticks.emplace_back(L.axis_x0 + a.points(v) * px_per_point, v);
    const std::string label = a.unit.empty() ? a.name : a.name + " (" + a.unit + ")";
    std::string extra = " data-max-points=\"" + fmt_label(a.max_points) + "\"";
    if (a.reversed) extra += " data-reversed=\"true\"";
    if (a.flat) extra += " data-flat=\"true\"";
    axis("feature-axis", a.name, label, L.axis_x0 + a.max_points * px_per_point, ticks, extra);
  }
  {
    std::vector<std::pair<double, double>> ticks;
    if (spec.total_points_max > 0)
      for (double v : detail::nice_ticks(0.0, spec.total_points_max, 8)) ticks.emplace_back(L.axis_x0 + v * px_per_total, v);
    axis("scale-axis", "total-points", "Total points", L.axis_x0 + L.axis_width, ticks, "");
  }
  {
    std::vector<std::pair<double, double>> ticks;
    const double p_lo = spec.prob_map.probability.front();
    const double p_hi = spec.prob_map.probability.back();
    for (double p : {0.001, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.98, 0.99,
                     0.995, 0.999}) {
      if (p < p_lo || p > p_hi || px_per_total == 0.0) continue;
      const double total = (std::log(p / (1 - p)) - spec.logit_offset) * spec.points_per_logit;
      ticks.emplace_back(L.axis_x0 + total * px_per_total, p);
    }
    axis("scale-axis", "probability", "Risk of death", L.axis_x0 + L.axis_width, ticks, "");
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace icunomo
