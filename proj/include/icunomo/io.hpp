#pragma once

// JSON forms of every persisted artifact, plus the risk-calculator bundle.

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cohort.hpp"
#include "evaluate.hpp"
#include "explain.hpp"
#include "model.hpp"
#include "nomogram.hpp"
#include "preprocess.hpp"
#include "resample.hpp"
#include "select.hpp"

namespace icunomo {

using json = nlohmann::json;

inline constexpr int kBundleSchemaVersion = 1;

namespace detail {

// JSON has no NaN/inf; null round-trips to NaN and large sentinels clamp.
inline json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline double num(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

inline json nums(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(num(x));
  return a;
}

inline std::vector<double> nums(const json& j) {
  std::vector<double> out;
  for (const auto& x : j) out.push_back(num(x));
  return out;
}

}  // namespace detail

inline json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path + ": " + e.what());
  }
}

/// Stable formatting: sorted keys, two-space indent, trailing newline.
inline std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out << text;
}

inline void write_json(const std::string& path, const json& j) { write_text(path, dump_json(j)); }

inline std::string json_hash(const json& j) { return hex64(fnv1a64(j.dump())); }

// ---------------------------------------------------------------------------

inline void to_json(json& j, const NormStat& s) { j = json{{"mean", s.mean}, {"sd", s.sd}}; }
inline void from_json(const json& j, NormStat& s) {
  s.mean = j.at("mean").get<double>();
  s.sd = j.at("sd").get<double>();
}

inline void to_json(json& j, const DictEntry& e) {
  j = json{{"name", e.name}, {"unit", e.unit}, {"lo", detail::num(e.lo)}, {"hi", detail::num(e.hi)}};
}
inline void from_json(const json& j, DictEntry& e) {
  e.name = j.at("name").get<std::string>();
  e.unit = j.value("unit", "");
  e.lo = j.contains("lo") && !j["lo"].is_null() ? j["lo"].get<double>() : -std::numeric_limits<double>::infinity();
  e.hi = j.contains("hi") && !j["hi"].is_null() ? j["hi"].get<double>() : std::numeric_limits<double>::infinity();
}

inline void to_json(json& j, const DataDictionary& d) { j = json{{"features", d.entries}}; }
inline void from_json(const json& j, DataDictionary& d) { d.entries = j.at("features").get<std::vector<DictEntry>>(); }

inline void to_json(json& j, const ExclusionReport& r) {
  j = json{{"input", r.input},
           {"retained", r.retained},
           {"excluded",
            {{"icu_stay_under_24h", r.short_icu_stay},
             {"death_within_24h", r.early_death},
             {"age_out_of_range", r.age_out_of_range},
             {"repeat_admission", r.repeat_admission}}}};
}
inline void from_json(const json& j, ExclusionReport& r) {
  r.input = j.at("input").get<std::size_t>();
  r.retained = j.at("retained").get<std::size_t>();
  const auto& e = j.at("excluded");
  r.short_icu_stay = e.at("icu_stay_under_24h").get<std::size_t>();
  r.early_death = e.at("death_within_24h").get<std::size_t>();
  r.age_out_of_range = e.at("age_out_of_range").get<std::size_t>();
  r.repeat_admission = e.at("repeat_admission").get<std::size_t>();
}

// APS III table -------------------------------------------------------------

inline void to_json(json& j, const ApsWeightTable& t) {
  json vars = json::array();
  for (const auto& v : t.variables) {
    json bins = json::array();
    for (const auto& b : v.bins) bins.push_back({{"lo", detail::num(b.lo)}, {"hi", detail::num(b.hi)}, {"weight", b.weight}});
    vars.push_back({{"name", v.name}, {"unit", v.unit}, {"missing_weight", v.missing_weight}, {"bins", bins}});
  }
  j = json{{"max_score", t.max_score}, {"variables", vars}};
}
inline void from_json(const json& j, ApsWeightTable& t) {
  t.max_score = j.value("max_score", 252.0);
  t.variables.clear();
  for (const auto& v : j.at("variables")) {
    ApsVariable var;
    var.name = v.at("name").get<std::string>();
    var.unit = v.value("unit", "");
    var.missing_weight = v.value("missing_weight", 0.0);
    for (const auto& b : v.at("bins")) {
      const double inf = std::numeric_limits<double>::infinity();
      double lo = b.at("lo").is_null() ? -inf : b["lo"].get<double>();
      double hi = b.at("hi").is_null() ? inf : b["hi"].get<double>();
      var.bins.push_back({lo, hi, b.at("weight").get<double>()});
    }
    t.variables.push_back(std::move(var));
  }
  if (t.variables.size() != kApsVariables) throw Error(ErrorCode::InvalidConfig, "APS III table must list 17 variables");
}

// Selection -------------------------------------------------------------------

inline void to_json(json& j, const FeatureRanking& r) {
  j = json{{"method", to_string(r.method)},
           {"names", r.names},
           {"scores", detail::nums(r.scores)},
           {"eliminated_order", r.eliminated_order}};
}
inline void from_json(const json& j, FeatureRanking& r) {
  const auto m = j.at("method").get<std::string>();
  r.method = m == "rfe" ? RankingMethod::rfe : m == "vif" ? RankingMethod::vif : RankingMethod::f_test;
  r.names = j.at("names").get<std::vector<std::string>>();
  r.scores = detail::nums(j.at("scores"));
  r.eliminated_order = j.value("eliminated_order", std::vector<std::string>{});
}

inline void to_json(json& j, const SmoteConfig& c) {
  j = json{{"thresholds", c.thresholds},
           {"weights", c.weights},
           {"n_synthetic", c.n_synthetic},
           {"k_neighbors", c.k_neighbors},
           {"pool_size", c.pool_size},
           {"noise_delta", c.noise_delta ? json(*c.noise_delta) : json("auto")},
           {"feature_noise_delta", c.feature_noise_delta}};
}
inline void from_json(const json& j, SmoteConfig& c) {
  c.thresholds = j.value("thresholds", c.thresholds);
  c.weights = j.value("weights", c.weights);
  c.n_synthetic = j.value("n_synthetic", c.n_synthetic);
  c.k_neighbors = j.value("k_neighbors", c.k_neighbors);
  c.pool_size = j.value("pool_size", c.pool_size);
  if (j.contains("noise_delta") && j["noise_delta"].is_number()) c.noise_delta = j["noise_delta"].get<double>();
  else c.noise_delta.reset();
  c.feature_noise_delta = j.value("feature_noise_delta", c.feature_noise_delta);
}

// Models ----------------------------------------------------------------------

inline void to_json(json& j, const FitMeta& m) {
  j = json{{"iterations", m.iterations},
           {"gradient_norm", m.gradient_norm},
           {"log_likelihood", m.log_likelihood},
           {"l2", m.l2},
           {"converged", m.converged}};
}
inline void from_json(const json& j, FitMeta& m) {
  m.iterations = j.at("iterations").get<std::size_t>();
  m.gradient_norm = j.at("gradient_norm").get<double>();
  m.log_likelihood = j.at("log_likelihood").get<double>();
  m.l2 = j.value("l2", 0.0);
  m.converged = j.value("converged", true);
}

inline void to_json(json& j, const LogisticModel& m) {
  json ranges = json::array();
  for (auto [lo, hi] : m.value_ranges) ranges.push_back({lo, hi});
  j = json{{"model", "logistic"},
           {"horizon_days", m.horizon_days},
           {"intercept", m.intercept},
           {"coefficients", m.coefficients},
           {"feature_names", m.feature_names},
           {"units", m.units},
           {"norm_stats", m.norm_stats},
           {"fit_meta", m.fit_meta},
           {"background_mean", m.background_mean},
           {"value_ranges", ranges}};
}
inline void from_json(const json& j, LogisticModel& m) {
  m.horizon_days = j.at("horizon_days").get<double>();
  m.intercept = j.at("intercept").get<double>();
  m.coefficients = j.at("coefficients").get<std::vector<double>>();
  m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  m.units = j.value("units", std::vector<std::string>(m.feature_names.size()));
  m.norm_stats = j.at("norm_stats").get<std::vector<NormStat>>();
  if (j.contains("fit_meta")) m.fit_meta = j["fit_meta"].get<FitMeta>();
  m.background_mean = j.value("background_mean", std::vector<double>{});
  m.value_ranges.clear();
  if (j.contains("value_ranges"))
    for (const auto& r : j["value_ranges"]) m.value_ranges.emplace_back(r.at(0).get<double>(), r.at(1).get<double>());
  if (m.coefficients.size() != m.feature_names.size() || m.norm_stats.size() != m.feature_names.size())
    throw Error(ErrorCode::ParseError, "logistic model arrays differ in length");
}

inline void to_json(json& j, const CoxModel& m) {
  j = json{{"model", "cox"},
           {"coefficients", m.coefficients},
           {"feature_names", m.feature_names},
           {"norm_stats", m.norm_stats},
           {"event_times", m.event_times},
           {"baseline_cumhaz", m.baseline_cumhaz},
           {"fit_meta", m.fit_meta},
           {"ties", "breslow"}};
}
inline void from_json(const json& j, CoxModel& m) {
  m.coefficients = j.at("coefficients").get<std::vector<double>>();
  m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  m.norm_stats = j.at("norm_stats").get<std::vector<NormStat>>();
  m.event_times = j.at("event_times").get<std::vector<double>>();
  m.baseline_cumhaz = j.at("baseline_cumhaz").get<std::vector<double>>();
  if (j.contains("fit_meta")) m.fit_meta = j["fit_meta"].get<FitMeta>();
}

// Metrics -----------------------------------------------------------------------

inline void to_json(json& j, const Confusion& c) {
  j = json{{"tp", c.tp},
           {"fp", c.fp},
           {"tn", c.tn},
           {"fn", c.fn},
           {"sensitivity", detail::num(c.sensitivity)},
           {"specificity", detail::num(c.specificity)},
           {"ppv", detail::num(c.ppv)},
           {"npv", detail::num(c.npv)}};
}

inline void to_json(json& j, const MetricReport& r) {
  json cal = json::array();
  for (const auto& b : r.calibration) cal.push_back({{"mean_pred", b.mean_pred}, {"observed_rate", b.observed_rate}, {"n", b.n}});
  j = json{{"horizon_days", r.horizon_days},
           {"auroc", r.auroc},
           {"auroc_ci",
            {{"lower", r.auroc_ci.lower},
             {"upper", r.auroc_ci.upper},
             {"level", r.auroc_ci.level},
             {"method", "percentile bootstrap, class-stratified"},
             {"replicates", r.auroc_ci.replicates},
             {"redraws", r.auroc_ci.redraws}}},
           {"pr_auc", r.pr_auc},
           {"pr_auc_method", "average precision"},
           {"threshold", r.threshold},
           {"confusion", r.confusion},
           {"n_test", r.n_test},
           {"n_events", r.n_events},
           {"calibration", cal}};
}

inline void to_json(json& j, const AttributionReport& r) {
  j = json{{"method", r.method == AttributionMethod::permutation ? "permutation" : "linear_additive"},
           {"feature_names", r.feature_names},
           {"values", detail::nums(r.values)},
           {"spread", detail::nums(r.spread)},
           {"base_value", r.base_value}};
}

inline void to_json(json& j, const OracleModel& o) {
  j = json{{"feature_names", o.feature_names},
           {"coefficients", o.coefficients},
           {"intercepts", o.intercepts},
           {"horizons", kHorizons},
           {"scales", o.scales}};
}
inline void from_json(const json& j, OracleModel& o) {
  o.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  o.coefficients = j.at("coefficients").get<std::vector<double>>();
  o.intercepts = j.at("intercepts").get<std::array<double, 3>>();
  o.scales = j.at("scales").get<std::vector<NormStat>>();
}

// Nomogram ----------------------------------------------------------------------

inline void to_json(json& j, const NomogramAxis& a) {
  j = json{{"name", a.name},     {"unit", a.unit},         {"lo", a.lo},   {"hi", a.hi},
           {"coefficient", a.coefficient}, {"mean", a.mean}, {"sd", a.sd}, {"max_points", a.max_points},
           {"reversed", a.reversed}, {"flat", a.flat}};
}
inline void from_json(const json& j, NomogramAxis& a) {
  a.name = j.at("name").get<std::string>();
  a.unit = j.value("unit", "");
  a.lo = j.at("lo").get<double>();
  a.hi = j.at("hi").get<double>();
  a.coefficient = j.at("coefficient").get<double>();
  a.mean = j.at("mean").get<double>();
  a.sd = j.at("sd").get<double>();
  a.max_points = j.at("max_points").get<double>();
  a.reversed = j.at("reversed").get<bool>();
  a.flat = j.at("flat").get<bool>();
}

inline void to_json(json& j, const NomogramSpec& s) {
  j = json{{"horizon_days", s.horizon_days},
           {"axes", s.axes},
           {"max_points_per_feature", s.max_points_per_feature},
           {"total_points_max", s.total_points_max},
           {"logit_offset", s.logit_offset},
           {"points_per_logit", s.points_per_logit},
           {"prob_map",
            {{"total_min", s.prob_map.total_min},
             {"total_max", s.prob_map.total_max},
             {"interpolation", "linear"},
             {"probability", s.prob_map.probability}}},
           {"model_ref", s.model_ref}};
}
inline void from_json(const json& j, NomogramSpec& s) {
  s.horizon_days = j.at("horizon_days").get<double>();
  s.axes = j.at("axes").get<std::vector<NomogramAxis>>();
  s.max_points_per_feature = j.at("max_points_per_feature").get<double>();
  s.total_points_max = j.at("total_points_max").get<double>();
  s.logit_offset = j.at("logit_offset").get<double>();
  s.points_per_logit = j.at("points_per_logit").get<double>();
  const auto& pm = j.at("prob_map");
  s.prob_map.total_min = pm.at("total_min").get<double>();
  s.prob_map.total_max = pm.at("total_max").get<double>();
  s.prob_map.probability = pm.at("probability").get<std::vector<double>>();
  if (s.prob_map.probability.empty()) throw Error(ErrorCode::ParseError, "empty probability table");
  s.model_ref = j.value("model_ref", "");
}

// Bundle ------------------------------------------------------------------------

struct Bundle {
  std::vector<LogisticModel> models;  // ascending horizon
  std::vector<NomogramSpec> specs;
  json provenance = json::object();

  const LogisticModel& model(double horizon) const {
    for (const auto& m : models)
      if (m.horizon_days == horizon) return m;
    throw Error(ErrorCode::IncompleteBundle, "no model for horizon " + std::to_string(horizon));
  }
  const NomogramSpec& spec(double horizon) const {
    for (const auto& s : specs)
      if (s.horizon_days == horizon) return s;
    throw Error(ErrorCode::IncompleteBundle, "no nomogram for horizon " + std::to_string(horizon));
  }
};

inline void require_complete(const std::vector<LogisticModel>& models, const std::vector<NomogramSpec>& specs) {
  for (double h : kHorizons) {
    const bool has_model = std::any_of(models.begin(), models.end(), [&](const auto& m) { return m.horizon_days == h; });
    const bool has_spec = std::any_of(specs.begin(), specs.end(), [&](const auto& s) { return s.horizon_days == h; });
    if (!has_model || !has_spec)
      throw Error(ErrorCode::IncompleteBundle, "bundle lacks the " + detail::fmt_label(h) + "-day horizon");
  }
}

inline json make_bundle(const std::vector<LogisticModel>& models, const std::vector<NomogramSpec>& specs,
                        const json& provenance = json::object()) {
  require_complete(models, specs);
  json horizons = json::array();
  for (double h : kHorizons) {
    const auto& m = *std::find_if(models.begin(), models.end(), [&](const auto& x) { return x.horizon_days == h; });
    const auto& s = *std::find_if(specs.begin(), specs.end(), [&](const auto& x) { return x.horizon_days == h; });
    horizons.push_back({{"horizon_days", h},
                        {"intercept", m.intercept},
                        {"coefficients", m.coefficients},
                        {"feature_names", m.feature_names},
                        {"units", m.units},
                        {"norm_stats", m.norm_stats},
                        {"background_mean", m.background_mean},
                        {"nomogram", s}});
  }
  return json{{"schema_version", kBundleSchemaVersion}, {"horizons", horizons}, {"provenance", provenance}};
}

inline void export_bundle(const std::vector<LogisticModel>& models, const std::vector<NomogramSpec>& specs,
                          const std::string& path, const json& provenance = json::object()) {
  write_json(path, make_bundle(models, specs, provenance));
}

inline Bundle parse_bundle(const json& j) {
  if (!j.is_object() || !j.contains("schema_version"))
    throw Error(ErrorCode::SchemaMismatch, "bundle has no schema_version");
  if (j["schema_version"] != kBundleSchemaVersion)
    throw Error(ErrorCode::SchemaMismatch, "unsupported bundle schema_version " + j["schema_version"].dump());
  Bundle b;
  try {
    for (const auto& h : j.at("horizons")) {
      LogisticModel m;
      m.horizon_days = h.at("horizon_days").get<double>();
      m.intercept = h.at("intercept").get<double>();
      m.coefficients = h.at("coefficients").get<std::vector<double>>();
      m.feature_names = h.at("feature_names").get<std::vector<std::string>>();
      m.units = h.value("units", std::vector<std::string>(m.feature_names.size()));
      m.norm_stats = h.at("norm_stats").get<std::vector<NormStat>>();
      m.background_mean = h.value("background_mean", std::vector<double>{});
      b.models.push_back(std::move(m));
      b.specs.push_back(h.at("nomogram").get<NomogramSpec>());
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("malformed bundle: ") + e.what());
  }
  b.provenance = j.value("provenance", json::object());
  require_complete(b.models, b.specs);
  return b;
}

inline Bundle load_bundle(const std::string& path) { return parse_bundle(read_json(path)); }

}  // namespace icunomo
