#pragma once

// End-to-end orchestration. Every stage reads its inputs from the artifacts
// directory and writes CSV/JSON intermediates back, so any stage can be
// re-run alone from persisted state. `run_pipeline` chains the stages and
// writes a manifest of shapes and derived seeds.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "cohort.hpp"
#include "core.hpp"
#include "evaluate.hpp"
#include "explain.hpp"
#include "io.hpp"
#include "model.hpp"
#include "nomogram.hpp"
#include "preprocess.hpp"
#include "resample.hpp"
#include "select.hpp"

namespace icunomo {

inline constexpr const char* kToolVersion = "1.0.0";

struct PipelineConfig {
  std::string input;       // cohort CSV
  std::string dictionary;  // optional dictionary JSON; inferred from the header otherwise
  std::string aps_weights; // optional APS III weight table JSON
  std::string out_dir = "artifacts";
  std::optional<std::uint64_t> seed;
  double split_ratio = 0.7;
  InclusionCriteria inclusion;
  double missing_threshold = 0.8;
  std::size_t knn_k = 5;
  std::size_t k_best = 50;
  std::size_t n_target = 7;
  std::vector<std::string> force_include;
  std::vector<std::string> force_exclude;
  double vif_threshold = 5.0;
  SmoteConfig smote;
  std::vector<double> horizons = {7.0, 14.0, 28.0};
  double l2 = 1e-6;
  std::size_t bootstrap_replicates = 2000;
  std::size_t permutation_repeats = 20;
  double threshold = 0.5;
};

inline void validate(const PipelineConfig& c) {
  auto bad = [](const std::string& m) { return Error(ErrorCode::InvalidConfig, m); };
  if (!(c.split_ratio > 0.0 && c.split_ratio < 1.0)) throw bad("split_ratio must lie strictly between 0 and 1");
  if (c.horizons.empty()) throw bad("at least one horizon required");
  for (std::size_t i = 0; i < c.horizons.size(); ++i) {
    if (!(c.horizons[i] > 0.0)) throw bad("horizons must be positive");
    if (i && !(c.horizons[i] > c.horizons[i - 1])) throw bad("horizons must be strictly ascending");
  }
  if (c.knn_k == 0 || c.k_best == 0 || c.n_target == 0) throw bad("knn_k, k_best and n_target must be positive");
  if (!(c.missing_threshold > 0.0 && c.missing_threshold <= 1.0)) throw bad("missing_threshold must lie in (0,1]");
  if (c.bootstrap_replicates == 0) throw bad("bootstrap replicates must be positive");
  validate(c.smote);
}

inline void to_json(json& j, const PipelineConfig& c) {
  j = json{{"input", c.input},
           {"dictionary", c.dictionary},
           {"aps_weights", c.aps_weights},
           {"out_dir", c.out_dir},
           {"seed", c.seed ? json(*c.seed) : json(nullptr)},
           {"split_ratio", c.split_ratio},
           {"inclusion",
            {{"min_age", c.inclusion.min_age},
             {"max_age", c.inclusion.max_age},
             {"min_icu_days", c.inclusion.min_icu_days},
             {"min_survival_days", c.inclusion.min_survival_days}}},
           {"missing_threshold", c.missing_threshold},
           {"knn_k", c.knn_k},
           {"select",
            {{"k_best", c.k_best},
             {"n_target", c.n_target},
             {"force_include", c.force_include},
             {"force_exclude", c.force_exclude},
             {"vif_threshold", c.vif_threshold}}},
           {"smote", c.smote},
           {"horizons", c.horizons},
           {"l2", c.l2},
           {"bootstrap_replicates", c.bootstrap_replicates},
           {"permutation_repeats", c.permutation_repeats},
           {"threshold", c.threshold}};
}

inline void from_json(const json& j, PipelineConfig& c) {
  c.input = j.value("input", c.input);
  c.dictionary = j.value("dictionary", c.dictionary);
  c.aps_weights = j.value("aps_weights", c.aps_weights);
  c.out_dir = j.value("out_dir", c.out_dir);
  if (j.contains("seed") && !j["seed"].is_null()) c.seed = j["seed"].get<std::uint64_t>();
  c.split_ratio = j.value("split_ratio", c.split_ratio);
  if (j.contains("inclusion")) {
    const auto& i = j["inclusion"];
    c.inclusion.min_age = i.value("min_age", c.inclusion.min_age);
    c.inclusion.max_age = i.value("max_age", c.inclusion.max_age);
    c.inclusion.min_icu_days = i.value("min_icu_days", c.inclusion.min_icu_days);
    c.inclusion.min_survival_days = i.value("min_survival_days", c.inclusion.min_survival_days);
  }
  c.missing_threshold = j.value("missing_threshold", c.missing_threshold);
  c.knn_k = j.value("knn_k", c.knn_k);
  if (j.contains("select")) {
    const auto& s = j["select"];
    c.k_best = s.value("k_best", c.k_best);
    c.n_target = s.value("n_target", c.n_target);
    c.force_include = s.value("force_include", c.force_include);
    c.force_exclude = s.value("force_exclude", c.force_exclude);
    c.vif_threshold = s.value("vif_threshold", c.vif_threshold);
  }
  if (j.contains("smote")) c.smote = j["smote"].get<SmoteConfig>();
  c.horizons = j.value("horizons", c.horizons);
  c.l2 = j.value("l2", c.l2);
  c.bootstrap_replicates = j.value("bootstrap_replicates", c.bootstrap_replicates);
  c.permutation_repeats = j.value("permutation_repeats", c.permutation_repeats);
  c.threshold = j.value("threshold", c.threshold);
}

/// Hash of the settings that determine results; paths are excluded so the
/// same analysis written to different directories hashes the same.
inline std::string config_hash(const PipelineConfig& c) {
  json j = c;
  j.erase("out_dir");
  j.erase("input");
  j.erase("dictionary");
  j.erase("aps_weights");
  return json_hash(j);
}

/// Per-stage seed: splitmix64 mix of the global seed with FNV-1a of the stage name.
inline std::uint64_t stage_seed(const PipelineConfig& c, std::string_view stage) {
  if (!c.seed) throw Error(ErrorCode::InvalidConfig, "a seed is required");
  return derive_seed(*c.seed, stage);
}

inline std::string horizon_tag(double h) { return detail::fmt_label(h) + "d"; }

// ---------------------------------------------------------------------------
// Datasets on disk: subject_id, time_days, event, [synthetic], features...

struct Dataset {
  std::vector<std::string> ids;
  std::vector<SurvivalOutcome> outcomes;
  FeatureMatrix features;
  std::vector<int> synthetic;  // empty when the file has no synthetic column

  std::size_t rows() const { return ids.size(); }
};

inline void write_dataset(const std::string& path, const Dataset& d) {
  CsvTable t;
  t.header = {"subject_id", "time_days", "event"};
  if (!d.synthetic.empty()) t.header.push_back("synthetic");
  for (const auto& n : d.features.names) t.header.push_back(n);
  for (std::size_t i = 0; i < d.rows(); ++i) {
    std::vector<std::string> row = {d.ids[i], format_double(d.outcomes[i].time_days), d.outcomes[i].event ? "1" : "0"};
    if (!d.synthetic.empty()) row.push_back(d.synthetic[i] ? "1" : "0");
    for (std::size_t j = 0; j < d.features.cols(); ++j)
      row.push_back(format_double(d.features.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))));
    t.rows.push_back(std::move(row));
  }
  write_csv(path, t);
}

inline Dataset read_dataset(const std::string& path, const DataDictionary* dict = nullptr) {
  const auto t = read_csv(path);
  for (auto c : {"subject_id", "time_days", "event"})
    if (!t.column(c)) throw Error(ErrorCode::MissingColumn, path + ": missing column " + c).with_names({c});
  const auto c_syn = t.column("synthetic");
  const std::size_t first = c_syn ? 4 : 3;
  Dataset d;
  std::vector<std::string> names(t.header.begin() + static_cast<std::ptrdiff_t>(first), t.header.end());
  Matrix v(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(names.size()));
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    bool ok = true;
    d.ids.push_back(r[0]);
    auto time = parse_number(r[1], ok);
    if (!ok || !time) throw Error(ErrorCode::ParseError, path + ": bad time_days").with_row(i + 1);
    d.outcomes.push_back({*time, r[2] == "1"});
    if (c_syn) d.synthetic.push_back(r[3] == "1" ? 1 : 0);
    for (std::size_t j = 0; j < names.size(); ++j) {
      auto x = parse_number(r[first + j], ok);
      if (!ok) throw Error(ErrorCode::ParseError, path + ": bad value in " + names[j]).with_row(i + 1);
      v(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = x ? *x : std::numeric_limits<double>::quiet_NaN();
    }
  }
  std::vector<std::string> units;
  for (const auto& n : names) {
    std::string u;
    if (dict)
      if (auto k = dict->index_of(n)) u = dict->entries[*k].unit;
    units.push_back(u);
  }
  d.features = FeatureMatrix(std::move(v), std::move(names), std::move(units));
  return d;
}

inline Dataset subset(const Dataset& d, const std::vector<std::size_t>& rows) {
  Dataset out;
  for (auto i : rows) {
    out.ids.push_back(d.ids[i]);
    out.outcomes.push_back(d.outcomes[i]);
    if (!d.synthetic.empty()) out.synthetic.push_back(d.synthetic[i]);
  }
  out.features = d.features.select_rows(rows);
  return out;
}

inline json norm_stats_json(const std::vector<std::string>& names, const std::vector<NormStat>& stats) {
  json a = json::array();
  for (std::size_t j = 0; j < names.size(); ++j) a.push_back({{"name", names[j]}, {"mean", stats[j].mean}, {"sd", stats[j].sd}});
  return json{{"convention", "sample sd (n-1)"}, {"features", a}};
}

inline std::vector<NormStat> norm_stats_for(const json& j, const std::vector<std::string>& names) {
  std::map<std::string, NormStat> by_name;
  for (const auto& f : j.at("features")) by_name[f.at("name").get<std::string>()] = {f.at("mean").get<double>(), f.at("sd").get<double>()};
  std::vector<NormStat> out;
  for (const auto& n : names) {
    auto it = by_name.find(n);
    if (it == by_name.end()) throw Error(ErrorCode::MissingFeature, "no normalization stats for " + n).with_names({n});
    out.push_back(it->second);
  }
  return out;
}

// ---------------------------------------------------------------------------

struct ArtifactPaths {
  std::filesystem::path dir;

  std::string operator()(const std::string& name) const { return (dir / name).string(); }
};

inline ArtifactPaths artifacts(const PipelineConfig& c) {
  std::filesystem::create_directories(c.out_dir);
  return {std::filesystem::path(c.out_dir)};
}

inline DataDictionary load_dictionary(const ArtifactPaths& p) { return read_json(p("dictionary.json")).get<DataDictionary>(); }

inline json stage_ingest(const PipelineConfig& cfg) {
  const auto p = artifacts(cfg);
  const auto csv = read_csv(cfg.input);
  const DataDictionary dict =
      cfg.dictionary.empty() ? infer_dictionary(csv.header) : read_json(cfg.dictionary).get<DataDictionary>();
  const auto table = cohort_from_csv(csv, dict);
  write_csv(p("cohort.csv"), cohort_to_csv(table));
  write_json(p("dictionary.json"), json(dict));
  return json{{"rows", table.size()}, {"clinical_columns", dict.size()}};
}

inline json stage_filter(const PipelineConfig& cfg) {
  const auto p = artifacts(cfg);
  const auto dict = load_dictionary(p);
  const auto table = load_cohort(p("cohort.csv"), dict);
  auto [kept, report] = apply_inclusion(table, cfg.inclusion);
  write_csv(p("filtered.csv"), cohort_to_csv(kept));
  write_json(p("exclusion_report.json"), json(report));
  return json{{"rows_in", report.input}, {"rows_out", report.retained}, {"report", report}};
}

namespace detail {

/// Appends base excess and APS III columns when their inputs are present and
/// the score itself is not.
inline json add_derived_scores(FeatureMatrix& m, DataDictionary& dict, const ApsWeightTable& aps) {
  json derived = json::array();
  auto col = [&](const char* name) { return m.index_of(name); };
  auto append = [&](const std::string& name, const std::string& unit, std::vector<double> values) {
    Matrix v(m.values.rows(), m.values.cols() + 1);
    v << m.values, Eigen::Map<Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
    auto names = m.names;
    auto units = m.units;
    names.push_back(name);
    units.push_back(unit);
    m = FeatureMatrix(std::move(v), std::move(names), std::move(units));
    dict.entries.push_back({name, unit, -std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()});
    derived.push_back(name);
  };
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (!col("base_excess") && col("bicarbonate") && col("hemoglobin") && col("ph")) {
    const auto a = static_cast<Eigen::Index>(*col("bicarbonate"));
    const auto b = static_cast<Eigen::Index>(*col("hemoglobin"));
    const auto c = static_cast<Eigen::Index>(*col("ph"));
    std::vector<double> be(m.rows(), nan);
    for (Eigen::Index i = 0; i < m.values.rows(); ++i) {
      try {
        if (!m.missing(i, a) && !m.missing(i, b) && !m.missing(i, c))
          be[static_cast<std::size_t>(i)] = base_excess(m.values(i, a), m.values(i, b), m.values(i, c));
      } catch (const Error&) {
        // out-of-range inputs leave the score missing for imputation
      }
    }
    append("base_excess", "mEq/L", std::move(be));
  }
  bool have_all = !col("aps_iii");
  std::vector<std::optional<std::size_t>> idx;
  for (std::size_t k = 0; k + 2 < kApsVariables; ++k) {
    idx.push_back(col(aps.variables[k].name.c_str()));
    have_all = have_all && idx.back().has_value();
  }
  if (have_all) {
    std::vector<double> score(m.rows());
    for (Eigen::Index i = 0; i < m.values.rows(); ++i) {
      ApsIiiInput in;
      for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto c = static_cast<Eigen::Index>(*idx[k]);
        if (!m.missing(i, c)) in.values[k] = m.values(i, c);
      }
      score[static_cast<std::size_t>(i)] = aps_iii_score(in, aps);
    }
    append("aps_iii", "points", std::move(score));
  }
  return derived;
}

}  // namespace detail

inline json stage_preprocess(const PipelineConfig& cfg) {
  const auto p = artifacts(cfg);
  auto dict = load_dictionary(p);
  const auto table = load_cohort(p("filtered.csv"), dict);
  const double window = cfg.horizons.back();
  Dataset d;
  for (const auto& r : table.records) {
    d.ids.push_back(r.subject_id);
    d.outcomes.push_back(derive_outcome(r, window));
  }
  auto m = to_feature_matrix(table);
  const auto aps = cfg.aps_weights.empty() ? default_aps_weights() : read_json(cfg.aps_weights).get<ApsWeightTable>();
  const auto derived = detail::add_derived_scores(m, dict, aps);
  const auto cols_in = m.cols();
  auto [kept, dropped] = drop_high_missingness(m, cfg.missing_threshold);
  std::size_t missing_cells = static_cast<std::size_t>(kept.missing.count());
  d.features = knn_impute(kept, cfg.knn_k);
  write_dataset(p("features.csv"), d);
  write_json(p("dictionary.json"), json(dict));
  json info{{"dropped_for_missingness", dropped},
            {"missing_threshold", cfg.missing_threshold},
            {"knn_k", cfg.knn_k},
            {"imputed_cells", missing_cells},
            {"derived_scores", derived},
            {"outcome_window_days", window}};
  write_json(p("preprocess.json"), info);
  return json{{"rows", d.rows()}, {"cols_in", cols_in}, {"cols_out", d.features.cols()}, {"imputed_cells", missing_cells}};
}

/// Stratified on the label at the longest horizon.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(const Labels& labels, double ratio,
                                                                                      std::uint64_t seed) {
  std::vector<std::size_t> train, test;
  for (int cls : {0, 1}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if ((labels[i] != 0) == (cls == 1)) idx.push_back(i);
    Rng rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(cls)));
    shuffle(idx.begin(), idx.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(idx.size())));
    train.insert(train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    test.insert(test.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

inline json stage_split(const PipelineConfig& cfg) {
  const auto p = artifacts(cfg);
  const auto dict = load_dictionary(p);
  const auto d = read_dataset(p("features.csv"), &dict);
  const auto labels = binarize_outcome(d.outcomes, cfg.horizons.back());
  auto [tr, te] = stratified_split(labels, cfg.split_ratio, stage_seed(cfg, "split"));
  const auto train = subset(d, tr);
  const auto test = subset(d, te);
  write_dataset(p("train.csv"), train);
  write_dataset(p("test.csv"), test);
  const auto stats = zscore_fit(train.features);
  write_json(p("norm_stats.json"), norm_stats_json(train.features.names, stats));
  return json{{"rows_train", train.rows()}, {"rows_test", test.rows()}, {"stratified_on", horizon_tag(cfg.horizons.back())}};
}

inline std::vector<std::string> selected_features(const ArtifactPaths& p) {
  return read_json(p("selection.json")).at("selected").get<std::vector<std::string>>();
}

inline json stage_select(const PipelineConfig& cfg) {
  const auto p = artifacts(cfg);
  const auto dict = load_dictionary(p);
  const auto train = read_dataset(p("train.csv"), &dict);
  const auto stats = norm_stats_for(read_json(p("norm_stats.json")), train.features.names);
  const auto labels = binarize_outcome(train.outcomes, cfg.horizons.back());

  const std::set<std::string> excluded(cfg.force_exclude.begin(), cfg.force_exclude.end());
  std::vector<std::string> candidates;
  for (const auto& n : train.features.names)
    if (!excluded.count(n)) candidates.push_back(n);
  for (const auto& n : cfg.force_include)
    if (!train.features.index_of(n)) throw Error(ErrorCode::MissingFeature, "forced feature not present: " + n).with_names({n});
  const auto z = zscore_apply(train.features, stats).select_columns(candidates);

  const auto kbest = select_k_best(z, labels, std::min(cfg.k_best, z.cols()));
  std::vector<std::string> pool = kbest.names;
  for (const auto& n : cfg.force_include)
    if (std::find(pool.begin(), pool.end(), n) == pool.end()) pool.push_back(n);
  LogisticFitOptions fit;
  fit.l2 = cfg.l2;
  const auto ranked = rfe(z.select_columns(pool), labels, std::min(cfg.n_target, pool.size()), cfg.force_include, fit);

  // Selected features keep their original column order.
  std::vector<std::string> chosen;
  for (const auto& n : z.names)
    if (std::find(ranked.names.begin(), ranked.names.end(), n) != ranked.names.end()) chosen.push_back(n);
  auto screened = z.select_columns(chosen);
  std::vector<std::string> vif_dropped;
  json vif_json = nullptr;
  if (screened.cols() >= 2) {
    vif_dropped = vif_screen(screened, cfg.vif_threshold, cfg.force_include);
    if (screened.cols() >= 2) vif_json = vif(screened);
  }
  json sel{{"k_best", kbest},
           {"rfe", ranked},
           {"vif", vif_json},
           {"vif_threshold", cfg.vif_threshold},
           {"vif_dropped", vif_dropped},
           {"force_include", cfg.force_include},
           {"force_exclude", cfg.force_exclude},
           {"selected", screened.names}};
  write_json(p("selection.json"), sel);
  return json{{"candidates", candidates.size()}, {"k_best", kbest.names.size()}, {"selected", screened.cols()}};
}

/// Synthetic rows inherit the majority event status of the neighbours they
/// were averaged from; their time is the synthesized target, or the window
/// end when censored.
inline std::vector<SurvivalOutcome> synthetic_outcomes(const SmoteResult& r, std::span<const SurvivalOutcome> original,
                                                       double window) {
  std::vector<SurvivalOutcome> out(original.begin(), original.end());
  const auto n = original.size();
  for (std::size_t s = 0; s < r.donors.size(); ++s) {
    std::size_t events = 0;
    for (auto b : r.donors[s]) events += original[b].event;
    const bool event = 2 * events >= r.donors[s].size();
    const double t = event ? std::clamp(r.y[n + s], 1.0 / 86400.0, window) : window;
    out.push_back({t, event});
  }
  return out;
}

inline json stage_resample(const PipelineConfig& cfg) {
  const auto p = artifacts(cfg);
  const auto dict = load_dictionary(p);
  const auto train = read_dataset(p("train.csv"), &dict);
  const auto names = selected_features(p);
  const auto stats = norm_stats_for(read_json(p("norm_stats.json")), names);
  const auto z = zscore_apply(train.features.select_columns(names), stats);
  std::vector<double> y;
  for (const auto& o : train.outcomes) y.push_back(o.time_days);
  SmoteConfig sc = cfg.smote;
  sc.seed = stage_seed(cfg, "resample");
  const auto res = smote_augment(z, y, sc);

  Dataset out;
  out.ids = train.ids;
  for (std::size_t s = 0; s < sc.n_synthetic; ++s) out.ids.push_back("synthetic_" + std::to_string(s + 1));
  out.outcomes = synthetic_outcomes(res, train.outcomes, cfg.horizons.back());
  out.features = res.X;
  out.synthetic = res.synthetic;
  write_dataset(p("resampled.csv"), out);

  std::vector<std::size_t> interval_counts(sc.weights.size(), 0), seed_counts(sc.weights.size(), 0);
  for (double v : y) ++interval_counts[interval_index(v, sc.thresholds)];
  for (auto s : res.seed_rows) ++seed_counts[interval_index(y[s], sc.thresholds)];
  json info{{"config", sc},
            {"noise_delta_used", res.noise_delta},
            {"target", "time_days"},
            {"interval_counts", interval_counts},
            {"seed_draws_per_interval", seed_counts},
            {"shape_before", {train.rows(), z.cols()}},
            {"shape_after", {out.rows(), z.cols()}}};
  write_json(p("resample.json"), info);
  return json{{"rows_train", train.rows()}, {"n_synthetic", sc.n_synthetic}, {"rows_after_smote", out.rows()},
              {"cols", z.cols()}};
}

inline double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  return detail::quantile_sorted(v, q);
}

inline std::vector<LogisticModel> load_models(const ArtifactPaths& p, const std::vector<double>& horizons) {
  std::vector<LogisticModel> out;
  for (double h : horizons) out.push_back(read_json(p("model_" + horizon_tag(h) + ".json")).get<LogisticModel>());
  return out;
}

inline json stage_train(const PipelineConfig& cfg) {
  const auto p = artifacts(cfg);
  const auto dict = load_dictionary(p);
  const auto names = selected_features(p);
  const auto stats = norm_stats_for(read_json(p("norm_stats.json")), names);
  const auto data = read_dataset(p("resampled.csv"), &dict);
  const auto train_raw = read_dataset(p("train.csv"), &dict).features.select_columns(names);
  FeatureMatrix X = data.features.select_columns(names);
  X.norm_stats = stats;

  std::vector<std::pair<double, double>> ranges;
  std::vector<double> means;
  for (std::size_t j = 0; j < names.size(); ++j) {
    const auto col = column(train_raw, j);
    double lo = percentile(col, 0.01), hi = percentile(col, 0.99);
    if (!(lo < hi)) {
      lo -= stats[j].sd;
      hi += stats[j].sd;
    }
    ranges.emplace_back(lo, hi);
    means.push_back(stats[j].mean);
  }
  LogisticFitOptions fit;
  fit.l2 = cfg.l2;
  json out = json::object();
  for (double h : cfg.horizons) {
    const auto labels = binarize_outcome(data.outcomes, h);
    auto m = fit_logistic(X, labels, fit);
    m.horizon_days = h;
    m.background_mean = means;
    m.value_ranges = ranges;
    write_json(p("model_" + horizon_tag(h) + ".json"), json(m));
    out[horizon_tag(h)] = {{"events", std::count(labels.begin(), labels.end(), 1)}, {"iterations", m.fit_meta.iterations}};
  }
  const auto cox = fit_cox(X, data.outcomes);
  write_json(p("cox.json"), json(cox));
  out["cox"] = {{"iterations", cox.fit_meta.iterations}};
  out["rows"] = X.rows();
  return out;
}

namespace detail {

inline void write_curve(const std::string& path, const std::vector<CurvePoint>& pts, const char* x, const char* y) {
  CsvTable t;
  t.header = {"threshold", x, y};
  for (const auto& c : pts) t.rows.push_back({std::isinf(c.threshold) ? "inf" : format_double(c.threshold), format_double(c.x), format_double(c.y)});
  write_csv(path, t);
}

}  // namespace detail

inline json stage_evaluate(const PipelineConfig& cfg) {
  const auto p = artifacts(cfg);
  const auto dict = load_dictionary(p);
  const auto names = selected_features(p);
  const auto test = read_dataset(p("test.csv"), &dict);
  const auto train = read_dataset(p("train.csv"), &dict);
  const auto X = test.features.select_columns(names);
  const auto models = load_models(p, cfg.horizons);

  json summary = json::object();
  std::ostringstream table;
  table << "horizon  n_test  events  AUROC   95% CI           PR-AUC  sens    spec\n";
  for (const auto& m : models) {
    const auto tag = horizon_tag(m.horizon_days);
    const auto scores = predict_probs(m, X);
    const auto labels = binarize_outcome(test.outcomes, m.horizon_days);
    EvaluationOptions eo;
    eo.bootstrap_replicates = cfg.bootstrap_replicates;
    eo.threshold = cfg.threshold;
    eo.seed = stage_seed(cfg, "evaluate:" + tag);
    const auto rep = evaluate_scores(scores, labels, m.horizon_days, eo);
    write_json(p("metrics_" + tag + ".json"), json(rep));
    detail::write_curve(p("roc_" + tag + ".csv"), roc_curve(scores, labels), "fpr", "tpr");
    detail::write_curve(p("pr_" + tag + ".csv"), pr_curve(scores, labels), "recall", "precision");
    CsvTable cal;
    cal.header = {"mean_pred", "observed_rate", "n"};
    for (const auto& b : rep.calibration) cal.rows.push_back({format_double(b.mean_pred), format_double(b.observed_rate), std::to_string(b.n)});
    write_csv(p("calibration_" + tag + ".csv"), cal);
    summary[tag] = {{"auroc", rep.auroc}, {"pr_auc", rep.pr_auc}, {"events", rep.n_events}};
    char line[160];
    std::snprintf(line, sizeof line, "%-8s %-7zu %-7zu %.4f  (%.4f, %.4f)  %.4f  %.4f  %.4f\n", tag.c_str(), rep.n_test,
                  rep.n_events, rep.auroc, rep.auroc_ci.lower, rep.auroc_ci.upper, rep.pr_auc,
                  rep.confusion.sensitivity, rep.confusion.specificity);
    table << line;
  }
  write_text(p("metrics.txt"), table.str());

  const auto cox = read_json(p("cox.json")).get<CoxModel>();
  std::vector<double> lp;
  std::vector<double> x(names.size());
  for (std::size_t i = 0; i < X.rows(); ++i) {
    for (std::size_t j = 0; j < names.size(); ++j) x[j] = X.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    lp.push_back(cox.linear_predictor(x));
  }
  json cox_json{{"c_index", c_index(lp, test.outcomes)}, {"n_test", X.rows()}};
  for (double h : cfg.horizons) {
    std::vector<double> risk;
    for (std::size_t i = 0; i < X.rows(); ++i) risk.push_back(1.0 - std::exp(-cox.cumulative_hazard(h) * std::exp(lp[i])));
    cox_json["auroc_" + horizon_tag(h)] = auroc(risk, binarize_outcome(test.outcomes, h));
  }
  write_json(p("cox_metrics.json"), cox_json);
  summary["cox_c_index"] = cox_json["c_index"];

  // Train/test comparison of the selected predictors in raw units.
  json cmp = json::array();
  const auto tr = train.features.select_columns(names);
  for (std::size_t j = 0; j < names.size(); ++j) {
    const auto a = column(tr, j), b = column(X, j);
    const auto t = welch_t_test(a, b);
    const auto sa = column_stats(tr, j), sb = column_stats(X, j);
    cmp.push_back({{"feature", names[j]},
                   {"unit", X.units[j]},
                   {"train_mean", sa.mean},
                   {"train_sd", sa.sd},
                   {"test_mean", sb.mean},
                   {"test_sd", sb.sd},
                   {"t", t.t},
                   {"df", t.df},
                   {"p", t.p}});
  }
  write_json(p("cohort_comparison.json"), json{{"test", "welch"}, {"features", cmp}});
  return summary;
}

inline json stage_explain(const PipelineConfig& cfg) {
  const auto p = artifacts(cfg);
  const auto dict = load_dictionary(p);
  const auto names = selected_features(p);
  const auto test = read_dataset(p("test.csv"), &dict);
  const auto background = read_dataset(p("train.csv"), &dict).features.select_columns(names);
  const auto X = test.features.select_columns(names);
  json out = json::object();
  for (const auto& m : load_models(p, cfg.horizons)) {
    const auto tag = horizon_tag(m.horizon_days);
    const auto labels = binarize_outcome(test.outcomes, m.horizon_days);
    const auto perm = permutation_importance(m, X, labels, cfg.permutation_repeats, stage_seed(cfg, "explain:" + tag));
    const auto summary = summary_distribution(m, X, background);
    json j{{"permutation", perm},
           {"attribution_scale", "logit"},
           {"attribution_ranking", {{"names", summary.ranking}, {"mean_abs", summary.mean_abs}}}};
    write_json(p("importance_" + tag + ".json"), j);
    CsvTable t;
    t.header = {"subject_id"};
    for (const auto& n : summary.feature_names) t.header.push_back(n);
    for (std::size_t i = 0; i < X.rows(); ++i) {
      std::vector<std::string> row = {test.ids[i]};
      for (std::size_t k = 0; k < summary.feature_names.size(); ++k)
        row.push_back(format_double(summary.attributions(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k))));
      t.rows.push_back(std::move(row));
    }
    write_csv(p("attributions_" + tag + ".csv"), t);
    out[tag] = perm.feature_names.empty() ? json(nullptr) : json(perm.feature_names.front());
  }
  return out;
}

inline json stage_nomogram(const PipelineConfig& cfg) {
  const auto p = artifacts(cfg);
  const auto models = load_models(p, cfg.horizons);
  std::vector<NomogramSpec> specs;
  json out = json::object();
  for (const auto& m : models) {
    const auto tag = horizon_tag(m.horizon_days);
    auto spec = build_nomogram(m, {}, json_hash(json(m)));
    write_text(p("nomogram_" + tag + ".svg"), render_svg(spec));
    write_json(p("nomogram_" + tag + ".json"), json(spec));
    out[tag] = {{"total_points_max", spec.total_points_max}, {"table_size", spec.prob_map.probability.size()}};
    specs.push_back(std::move(spec));
  }
  json prov{{"tool", "icunomo"}, {"version", kToolVersion}, {"config_hash", config_hash(cfg)},
            {"seed", cfg.seed ? json(*cfg.seed) : json(nullptr)}};
  export_bundle(models, specs, p("bundle.json"), prov);
  return out;
}

inline const std::vector<std::pair<std::string, json (*)(const PipelineConfig&)>>& pipeline_stages() {
  static const std::vector<std::pair<std::string, json (*)(const PipelineConfig&)>> stages = {
      {"ingest", stage_ingest},   {"filter", stage_filter}, {"preprocess", stage_preprocess},
      {"split", stage_split},     {"select", stage_select}, {"resample", stage_resample},
      {"train", stage_train},     {"evaluate", stage_evaluate}, {"explain", stage_explain},
      {"nomogram", stage_nomogram}};
  return stages;
}

/// Runs one stage, tagging any failure with the stage name.
inline json run_stage(const std::string& name, const PipelineConfig& cfg) {
  for (const auto& [n, fn] : pipeline_stages()) {
    if (n != name) continue;
    try {
      return fn(cfg);
    } catch (const Error& e) {
      Error wrapped(e.code(), "stage '" + name + "': " + e.detail());
      wrapped.row = e.row;
      wrapped.iteration = e.iteration;
      wrapped.names = e.names;
      wrapped.stage = name;
      throw wrapped;
    } catch (const std::filesystem::filesystem_error& e) {
      Error wrapped(ErrorCode::IoError, "stage '" + name + "': " + e.what());
      wrapped.stage = name;
      throw wrapped;
    }
  }
  throw Error(ErrorCode::InvalidArgument, "unknown stage " + name);
}

inline json run_pipeline(const PipelineConfig& cfg) {
  validate(cfg);
  if (!cfg.seed) throw Error(ErrorCode::InvalidConfig, "run requires an explicit seed");
  if (cfg.input.empty()) throw Error(ErrorCode::InvalidConfig, "no input CSV configured");
  const auto p = artifacts(cfg);
  json stages = json::object();
  for (const auto& [name, fn] : pipeline_stages()) stages[name] = run_stage(name, cfg);

  std::ifstream in(cfg.input, std::ios::binary);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  json seeds = json::object();
  for (const char* s : {"split", "resample"}) seeds[s] = stage_seed(cfg, s);
  for (double h : cfg.horizons) {
    seeds["evaluate:" + horizon_tag(h)] = stage_seed(cfg, "evaluate:" + horizon_tag(h));
    seeds["explain:" + horizon_tag(h)] = stage_seed(cfg, "explain:" + horizon_tag(h));
  }
  const auto& rs = stages["resample"];
  json manifest{{"tool", "icunomo"},
                {"version", kToolVersion},
                {"bundle_schema_version", kBundleSchemaVersion},
                {"config", [&] {
                   json c = cfg;
                   c.erase("out_dir");
                   c.erase("input");
                   return c;
                 }()},
                {"config_hash", config_hash(cfg)},
                {"input_hash", hex64(fnv1a64(content))},
                {"seed", *cfg.seed},
                {"stage_seeds", seeds},
                {"stages", stages},
                {"checks",
                 {{"rows_after_smote_equals_rows_train_plus_synthetic",
                   rs["rows_after_smote"].get<std::size_t>() ==
                       rs["rows_train"].get<std::size_t>() + rs["n_synthetic"].get<std::size_t>()}}}};
  write_json(p("manifest.json"), manifest);
  return manifest;
}

// ---------------------------------------------------------------------------
// Bedside prediction from a bundle

struct HorizonPrediction {
  double horizon_days = 0.0;
  double probability = 0.0;              // logistic formula
  double nomogram_probability = 0.0;     // points table
  std::vector<double> points;
  double total_points = 0.0;
  std::vector<double> attributions;      // logit scale, around the training mean
  double attribution_base = 0.0;
  std::vector<std::string> clamped;
};

inline std::vector<HorizonPrediction> predict(const Bundle& b, const std::map<std::string, double>& patient) {
  std::vector<HorizonPrediction> out;
  for (std::size_t h = 0; h < b.models.size(); ++h) {
    const auto& m = b.models[h];
    const auto& spec = b.specs[h];
    const auto x = align_features(patient, m.feature_names);
    HorizonPrediction r;
    r.horizon_days = m.horizon_days;
    r.probability = predict_prob(m, x);
    const auto s = score_patient(spec, x);
    r.points = s.points;
    r.total_points = s.total;
    r.nomogram_probability = s.probability;
    for (std::size_t j = 0; j < s.clamped.size(); ++j)
      if (s.clamped[j]) r.clamped.push_back(spec.axes[j].name);
    std::vector<double> bg(m.dims(), 0.0);
    for (std::size_t j = 0; j < m.dims() && j < m.background_mean.size(); ++j)
      bg[j] = (m.background_mean[j] - m.norm_stats[j].mean) / m.norm_stats[j].sd;
    const auto att = linear_attribution(m, bg, x);
    r.attributions = att.values;
    r.attribution_base = att.base_value;
    out.push_back(std::move(r));
  }
  return out;
}

inline json prediction_json(const Bundle& b, const std::vector<HorizonPrediction>& preds) {
  json out = json::array();
  for (std::size_t h = 0; h < preds.size(); ++h) {
    const auto& r = preds[h];
    json pts = json::object(), att = json::object();
    for (std::size_t j = 0; j < r.points.size(); ++j) {
      pts[b.models[h].feature_names[j]] = r.points[j];
      att[b.models[h].feature_names[j]] = r.attributions[j];
    }
    out.push_back({{"horizon_days", r.horizon_days},
                   {"probability", r.probability},
                   {"nomogram_probability", r.nomogram_probability},
                   {"points", pts},
                   {"total_points", r.total_points},
                   {"attributions", att},
                   {"attribution_base", r.attribution_base},
                   {"clamped", r.clamped}});
  }
  return out;
}

/// Random in-range patients with their CLI probabilities: the golden file a
/// risk-calculator front end is checked against.
inline json golden_cases(const Bundle& b, std::size_t n, std::uint64_t seed) {
  std::map<std::string, std::pair<double, double>> ranges;
  for (const auto& s : b.specs)
    for (const auto& a : s.axes) {
      auto [it, fresh] = ranges.try_emplace(a.name, a.lo, a.hi);
      if (!fresh) it->second = {std::max(it->second.first, a.lo), std::min(it->second.second, a.hi)};
    }
  json cases = json::array();
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = make_rng(derive_seed(seed, i));
    std::map<std::string, double> patient;
    for (const auto& [name, r] : ranges) patient[name] = uniform(rng, r.first, std::max(r.first, r.second));
    const auto preds = predict(b, patient);
    json probs = json::object();
    for (const auto& pr : preds) probs[horizon_tag(pr.horizon_days)] = pr.probability;
    cases.push_back({{"patient", patient}, {"probabilities", probs}});
  }
  return json{{"schema_version", kBundleSchemaVersion}, {"tolerance", 1e-6}, {"cases", cases}};
}

}  // namespace icunomo
