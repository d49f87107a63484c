#pragma once

// Patient records: CSV ingest, inclusion criteria, survival outcomes and a
// synthetic cohort generator with a known logistic ground truth.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "core.hpp"
#include "csv.hpp"
#include "feature_matrix.hpp"

namespace icunomo {

struct DictEntry {
  std::string name;
  std::string unit;
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
};

struct DataDictionary {
  std::vector<DictEntry> entries;

  std::size_t size() const { return entries.size(); }
  std::optional<std::size_t> index_of(const std::string& name) const {
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (entries[i].name == name) return i;
    return std::nullopt;
  }
  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& e : entries) out.push_back(e.name);
    return out;
  }
};

inline constexpr std::array<const char*, 5> kMandatoryColumns = {"subject_id", "admission_time", "discharge_time",
                                                                 "age_years", "death_time"};
inline constexpr std::array<const char*, 3> kOptionalColumns = {"stay_id", "icu_los_days", "followup_end"};

inline bool is_reserved_column(const std::string& name) {
  for (auto c : kMandatoryColumns)
    if (name == c) return true;
  for (auto c : kOptionalColumns)
    if (name == c) return true;
  return false;
}

/// admission/discharge are ICU stay timestamps. followup_end, when present,
/// is the last time the patient was known alive; absent means vital status is
/// known beyond any outcome window.
struct PatientRecord {
  std::string subject_id;
  std::string stay_id;
  Timestamp admission_time{};
  Timestamp discharge_time{};
  double icu_los_days = 0.0;
  double age_years = 0.0;
  std::optional<Timestamp> death_time;
  std::optional<Timestamp> followup_end;
  std::vector<std::optional<double>> clinical_values;  // aligned with dictionary
};

struct CohortTable {
  std::vector<PatientRecord> records;
  DataDictionary dictionary;

  std::size_t size() const { return records.size(); }
};

struct SurvivalOutcome {
  double time_days = 0.0;
  bool event = false;

  bool operator==(const SurvivalOutcome&) const = default;
};

/// Every non-reserved header column becomes a unitless feature.
inline DataDictionary infer_dictionary(const std::vector<std::string>& header) {
  DataDictionary d;
  for (const auto& h : header)
    if (!is_reserved_column(h)) d.entries.push_back({h, "", -std::numeric_limits<double>::infinity(),
                                                     std::numeric_limits<double>::infinity()});
  return d;
}

inline CohortTable cohort_from_csv(const CsvTable& csv, const DataDictionary& dictionary) {
  std::vector<std::string> absent;
  for (auto c : kMandatoryColumns)
    if (!csv.column(c)) absent.emplace_back(c);
  for (const auto& e : dictionary.entries)
    if (!csv.column(e.name)) absent.push_back(e.name);
  if (!absent.empty())
    throw Error(ErrorCode::MissingColumn, "missing column(s): " + FeatureMatrix::join(absent)).with_names(absent);
  if (csv.rows.empty()) throw Error(ErrorCode::EmptyFile, "no data rows");

  const auto c_subject = *csv.column("subject_id");
  const auto c_adm = *csv.column("admission_time");
  const auto c_dis = *csv.column("discharge_time");
  const auto c_age = *csv.column("age_years");
  const auto c_death = *csv.column("death_time");
  const auto c_stay = csv.column("stay_id");
  const auto c_los = csv.column("icu_los_days");
  const auto c_follow = csv.column("followup_end");
  std::vector<std::size_t> c_feat;
  for (const auto& e : dictionary.entries) c_feat.push_back(*csv.column(e.name));

  CohortTable table;
  table.dictionary = dictionary;
  table.records.reserve(csv.rows.size());
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    const std::size_t row_no = r + 1;
    auto parse_error = [&](const std::string& col, const std::string& cell) {
      return Error(ErrorCode::ParseError, "row " + std::to_string(row_no) + ", column '" + col + "': cannot parse '" +
                                              cell + "'")
          .with_row(row_no)
          .with_names({col});
    };
    auto required_time = [&](std::size_t c, const char* col) {
      auto t = parse_timestamp(row[c]);
      if (!t) throw parse_error(col, row[c]);
      return *t;
    };
    auto optional_time = [&](std::size_t c, const char* col) -> std::optional<Timestamp> {
      if (detail::trim(row[c]).empty()) return std::nullopt;
      auto t = parse_timestamp(row[c]);
      if (!t) throw parse_error(col, row[c]);
      return t;
    };
    auto number = [&](std::size_t c, const std::string& col) {
      bool ok = true;
      auto v = parse_number(row[c], ok);
      if (!ok) throw parse_error(col, row[c]);
      return v;
    };

    PatientRecord rec;
    rec.subject_id = std::string(detail::trim(row[c_subject]));
    if (rec.subject_id.empty()) throw parse_error("subject_id", row[c_subject]);
    rec.stay_id = c_stay ? std::string(detail::trim(row[*c_stay])) : std::to_string(row_no);
    rec.admission_time = required_time(c_adm, "admission_time");
    rec.discharge_time = required_time(c_dis, "discharge_time");
    rec.death_time = optional_time(c_death, "death_time");
    if (c_follow) rec.followup_end = optional_time(*c_follow, "followup_end");
    auto age = number(c_age, "age_years");
    if (!age || *age < 0) throw parse_error("age_years", row[c_age]);
    rec.age_years = *age;
    std::optional<double> los = c_los ? number(*c_los, "icu_los_days") : std::nullopt;
    rec.icu_los_days = los ? *los : days_between(rec.admission_time, rec.discharge_time);
    if (rec.discharge_time < rec.admission_time || rec.icu_los_days < 0)
      throw Error(ErrorCode::InvalidTimestamp, "row " + std::to_string(row_no) + ": discharge before admission")
          .with_row(row_no);
    if (rec.death_time && *rec.death_time < rec.admission_time)
      throw Error(ErrorCode::InvalidTimestamp, "row " + std::to_string(row_no) + ": death before admission")
          .with_row(row_no);
    rec.clinical_values.reserve(c_feat.size());
    for (std::size_t k = 0; k < c_feat.size(); ++k) rec.clinical_values.push_back(number(c_feat[k], dictionary.entries[k].name));
    table.records.push_back(std::move(rec));
  }
  return table;
}

inline CohortTable load_cohort(const std::string& path, const DataDictionary& dictionary) {
  return cohort_from_csv(read_csv(path), dictionary);
}

inline CsvTable cohort_to_csv(const CohortTable& t) {
  CsvTable csv;
  csv.header = {"subject_id", "stay_id", "admission_time", "discharge_time", "icu_los_days",
                "age_years",  "death_time", "followup_end"};
  for (const auto& e : t.dictionary.entries) csv.header.push_back(e.name);
  for (const auto& r : t.records) {
    std::vector<std::string> row = {r.subject_id,
                                    r.stay_id,
                                    format_timestamp(r.admission_time),
                                    format_timestamp(r.discharge_time),
                                    format_double(r.icu_los_days),
                                    format_double(r.age_years),
                                    r.death_time ? format_timestamp(*r.death_time) : "",
                                    r.followup_end ? format_timestamp(*r.followup_end) : ""};
    for (const auto& v : r.clinical_values) row.push_back(v ? format_double(*v) : "");
    csv.rows.push_back(std::move(row));
  }
  return csv;
}

// ---------------------------------------------------------------------------
// Inclusion criteria

struct InclusionCriteria {
  double min_age = 18.0;
  double max_age = 90.0;
  double min_icu_days = 1.0;
  double min_survival_days = 1.0;  // death within the first 24 h of ICU admission excludes
};

/// One count per excluded record, attributed to the first failing check in
/// the order LOS, early death, age, duplicate admission.
struct ExclusionReport {
  std::size_t input = 0;
  std::size_t retained = 0;
  std::size_t short_icu_stay = 0;
  std::size_t early_death = 0;
  std::size_t age_out_of_range = 0;
  std::size_t repeat_admission = 0;

  std::size_t excluded() const { return short_icu_stay + early_death + age_out_of_range + repeat_admission; }
  bool operator==(const ExclusionReport&) const = default;
};

inline std::pair<CohortTable, ExclusionReport> apply_inclusion(const CohortTable& table,
                                                               const InclusionCriteria& c = {}) {
  ExclusionReport rep;
  rep.input = table.size();
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& r = table.records[i];
    if (r.icu_los_days < c.min_icu_days) {
      ++rep.short_icu_stay;
    } else if (r.death_time && days_between(r.admission_time, *r.death_time) < c.min_survival_days) {
      ++rep.early_death;
    } else if (r.age_years < c.min_age || r.age_years > c.max_age) {
      ++rep.age_out_of_range;
    } else {
      eligible.push_back(i);
    }
  }

  // Earliest eligible ICU admission per subject; ties by stay id.
  std::unordered_map<std::string, std::size_t> first;
  for (auto i : eligible) {
    const auto& r = table.records[i];
    auto [it, inserted] = first.try_emplace(r.subject_id, i);
    if (!inserted) {
      const auto& cur = table.records[it->second];
      if (r.admission_time < cur.admission_time ||
          (r.admission_time == cur.admission_time && r.stay_id < cur.stay_id))
        it->second = i;
    }
  }

  CohortTable out;
  out.dictionary = table.dictionary;
  for (auto i : eligible) {
    if (first.at(table.records[i].subject_id) == i) out.records.push_back(table.records[i]);
    else ++rep.repeat_admission;
  }
  rep.retained = out.size();
  return {std::move(out), rep};
}

/// Censored within the window means follow-up ended early; later deaths are
/// censored at the window end.
inline SurvivalOutcome derive_outcome(const PatientRecord& r, double window_days = 28.0) {
  constexpr double kMinTime = 1.0 / 86400.0;
  if (r.death_time) {
    const double d = days_between(r.admission_time, *r.death_time);
    if (d < 0)
      throw Error(ErrorCode::InvalidTimestamp, "death before admission for subject " + r.subject_id);
    if (d <= window_days) return {std::max(d, kMinTime), true};
  }
  double follow = window_days;
  if (r.followup_end) follow = std::min(window_days, days_between(r.admission_time, *r.followup_end));
  return {std::max(follow, kMinTime), false};
}

inline FeatureMatrix to_feature_matrix(const CohortTable& t) {
  const auto d = t.dictionary.size();
  Matrix v(static_cast<Eigen::Index>(t.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const auto& c = t.records[i].clinical_values[j];
      v(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          c ? *c : std::numeric_limits<double>::quiet_NaN();
    }
  std::vector<std::string> units;
  for (const auto& e : t.dictionary.entries) units.push_back(e.unit);
  return FeatureMatrix(std::move(v), t.dictionary.names(), std::move(units));
}

// ---------------------------------------------------------------------------
// Synthetic cohorts

inline constexpr std::array<double, 3> kHorizons = {7.0, 14.0, 28.0};

struct ClinicalProfile {
  const char* name;
  const char* unit;
  double mean;
  double sd;
};

// Marginal scales of the seven bedside predictors, so synthetic axes read in
// clinical units. Latent values remain standard normal.
inline constexpr std::array<ClinicalProfile, 7> kClinicalProfiles = {{
    {"aps_iii", "points", 51.8, 18.5},
    {"anion_gap", "mEq/L", 12.9, 2.6},
    {"base_excess", "mEq/L", -1.1, 3.5},
    {"bicarbonate", "mEq/L", 23.8, 3.2},
    {"fibrinogen", "mg/dL", 337.4, 143.9},
    {"ld", "U/L", 283.1, 112.9},
    {"platelet_count", "10^9/L", 95.8, 54.4},
}};

struct SyntheticCohortSpec {
  std::size_t n_patients = 2000;
  std::size_t n_features = 20;
  std::vector<double> planted_coefficients;             // logit scale, per standard-normal feature
  std::array<double, 3> planted_intercepts = {-2.2, -1.4, -0.8};  // 7 / 14 / 28 day
  double missingness_rate = 0.0;
  double censoring_rate = 0.0;
  std::uint64_t seed = 1;
  bool clinical_names = true;  // first seven features take the profiles above
};

struct OracleModel {
  std::vector<std::string> feature_names;
  std::vector<double> coefficients;
  std::array<double, 3> intercepts{};
  std::vector<NormStat> scales;  // raw = mean + sd * z

  double horizon_intercept(double horizon) const {
    for (std::size_t h = 0; h < kHorizons.size(); ++h)
      if (kHorizons[h] == horizon) return intercepts[h];
    throw Error(ErrorCode::InvalidArgument, "horizon not planted: " + std::to_string(horizon));
  }

  double logit_latent(const double* z, double horizon) const {
    double eta = horizon_intercept(horizon);
    for (std::size_t j = 0; j < coefficients.size(); ++j) eta += coefficients[j] * z[j];
    return eta;
  }

  /// Planted event probability for a record expressed in raw clinical units.
  double probability(const std::vector<double>& raw, double horizon) const {
    std::vector<double> z(raw.size());
    for (std::size_t j = 0; j < raw.size(); ++j) z[j] = (raw[j] - scales[j].mean) / scales[j].sd;
    return 1.0 / (1.0 + std::exp(-logit_latent(z.data(), horizon)));
  }

  std::vector<std::string> informative_features() const {
    std::vector<std::string> out;
    for (std::size_t j = 0; j < coefficients.size(); ++j)
      if (coefficients[j] != 0.0) out.push_back(feature_names[j]);
    return out;
  }
};

/// Alternating-sign planted effects of decreasing size on the first
/// `informative` features; the rest are pure noise.
inline std::vector<double> default_planted_coefficients(std::size_t n_features, std::size_t informative = 7) {
  static constexpr std::array<double, 7> base = {1.0, -0.9, 0.8, -0.7, 0.65, -0.6, 0.55};
  std::vector<double> c(n_features, 0.0);
  for (std::size_t j = 0; j < std::min(informative, n_features); ++j)
    c[j] = j < base.size() ? base[j] : (j % 2 ? -0.5 : 0.5);
  return c;
}

inline void validate(const SyntheticCohortSpec& s) {
  if (s.n_features == 0) throw Error(ErrorCode::InvalidArgument, "n_features must be positive");
  if (s.planted_coefficients.size() != s.n_features)
    throw Error(ErrorCode::InvalidArgument, "planted coefficient count differs from n_features");
  if (!(s.missingness_rate >= 0.0 && s.missingness_rate < 1.0))
    throw Error(ErrorCode::InvalidArgument, "missingness_rate must lie in [0,1)");
  if (!(s.censoring_rate >= 0.0 && s.censoring_rate < 1.0))
    throw Error(ErrorCode::InvalidArgument, "censoring_rate must lie in [0,1)");
  if (!(s.planted_intercepts[0] <= s.planted_intercepts[1] && s.planted_intercepts[1] <= s.planted_intercepts[2]))
    throw Error(ErrorCode::InvalidArgument, "planted intercepts must be nondecreasing with horizon");
}

inline std::pair<CohortTable, OracleModel> generate_synthetic_cohort(const SyntheticCohortSpec& spec) {
  validate(spec);
  OracleModel oracle;
  oracle.coefficients = spec.planted_coefficients;
  oracle.intercepts = spec.planted_intercepts;

  CohortTable table;
  for (std::size_t j = 0; j < spec.n_features; ++j) {
    DictEntry e;
    NormStat s{0.0, 1.0};
    if (spec.clinical_names && j < kClinicalProfiles.size()) {
      e.name = kClinicalProfiles[j].name;
      e.unit = kClinicalProfiles[j].unit;
      s = {kClinicalProfiles[j].mean, kClinicalProfiles[j].sd};
    } else {
      char buf[32];
      std::snprintf(buf, sizeof buf, "x%02zu", j + 1);
      e.name = buf;
    }
    table.dictionary.entries.push_back(e);
    oracle.feature_names.push_back(e.name);
    oracle.scales.push_back(s);
  }

  const Timestamp epoch = *parse_timestamp("2150-01-01T00:00:00");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::exponential_distribution<double> los_tail(0.25);
  std::vector<double> z(spec.n_features);
  for (std::size_t i = 0; i < spec.n_patients; ++i) {
    Rng rng = make_rng(derive_seed(spec.seed, i));
    PatientRecord r;
    char id[32];
    std::snprintf(id, sizeof id, "P%06zu", i + 1);
    r.subject_id = id;
    r.stay_id = std::string("S") + (id + 1);
    r.admission_time = add_days(epoch, std::floor(uniform(rng, 0.0, 3650.0) * 1440.0) / 1440.0);
    r.age_years = std::round(uniform(rng, 18.0, 90.0) * 10.0) / 10.0;
    for (std::size_t j = 0; j < spec.n_features; ++j) z[j] = normal(rng);
    const double u = uniform01(rng);
    const double eta_lin = oracle.logit_latent(z.data(), 7.0) - spec.planted_intercepts[0];
    auto p = [&](std::size_t h) { return 1.0 / (1.0 + std::exp(-(spec.planted_intercepts[h] + eta_lin))); };
    const double u_time = uniform01(rng);
    std::optional<double> death_day;
    if (u < p(0)) death_day = 7.0 - 6.0 * u_time;         // (1, 7]
    else if (u < p(1)) death_day = 14.0 - 7.0 * u_time;   // (7, 14]
    else if (u < p(2)) death_day = 28.0 - 14.0 * u_time;  // (14, 28]

    double los = 1.0 + los_tail(rng);
    if (death_day && *death_day < los) los = *death_day;
    r.discharge_time = add_days(r.admission_time, los);
    r.icu_los_days = days_between(r.admission_time, r.discharge_time);
    if (death_day) r.death_time = add_days(r.admission_time, *death_day);

    const double u_censor = uniform01(rng);
    const double censor_day = uniform(rng, 1.0, 28.0);
    if (u_censor < spec.censoring_rate) {
      r.followup_end = add_days(r.admission_time, censor_day);
      if (r.death_time && *r.death_time > *r.followup_end) r.death_time.reset();
    }

    r.clinical_values.resize(spec.n_features);
    for (std::size_t j = 0; j < spec.n_features; ++j) {
      const double missing_draw = uniform01(rng);
      if (missing_draw < spec.missingness_rate) continue;
      r.clinical_values[j] = oracle.scales[j].mean + oracle.scales[j].sd * z[j];
    }
    table.records.push_back(std::move(r));
  }
  return {std::move(table), std::move(oracle)};
}

}  // namespace icunomo
