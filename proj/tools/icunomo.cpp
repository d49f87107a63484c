#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <icunomo/icunomo.hpp>

namespace {

using namespace icunomo;

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    bool ok = true;
    auto v = parse_number(item, ok);
    if (!ok || !v) throw Error(ErrorCode::InvalidArgument, "not a number list: " + s);
    out.push_back(*v);
  }
  return out;
}

// Flag values are captured as strings so that only flags actually given
// override the config file.
struct Overrides {
  std::string config_path;
  std::string input, out, dictionary, aps_weights;
  std::optional<std::uint64_t> seed;
  std::optional<double> split_ratio, missing_threshold, l2, threshold, vif;
  std::optional<std::size_t> knn_k, k_best, n_target, n_synthetic, k_neighbors, pool_size, bootstrap, repeats;
  std::vector<std::string> force_include, force_exclude;
  std::string thresholds, weights, delta, horizons;

  PipelineConfig resolve() const {
    PipelineConfig c;
    if (!config_path.empty()) c = read_json(config_path).get<PipelineConfig>();
    if (!input.empty()) c.input = input;
    if (!out.empty()) c.out_dir = out;
    if (!dictionary.empty()) c.dictionary = dictionary;
    if (!aps_weights.empty()) c.aps_weights = aps_weights;
    if (seed) c.seed = seed;
    if (split_ratio) c.split_ratio = *split_ratio;
    if (missing_threshold) c.missing_threshold = *missing_threshold;
    if (l2) c.l2 = *l2;
    if (threshold) c.threshold = *threshold;
    if (vif) c.vif_threshold = *vif;
    if (knn_k) c.knn_k = *knn_k;
    if (k_best) c.k_best = *k_best;
    if (n_target) c.n_target = *n_target;
    if (n_synthetic) c.smote.n_synthetic = *n_synthetic;
    if (k_neighbors) c.smote.k_neighbors = *k_neighbors;
    if (pool_size) c.smote.pool_size = *pool_size;
    if (bootstrap) c.bootstrap_replicates = *bootstrap;
    if (repeats) c.permutation_repeats = *repeats;
    if (!force_include.empty()) c.force_include = force_include;
    if (!force_exclude.empty()) c.force_exclude = force_exclude;
    if (!thresholds.empty()) c.smote.thresholds = parse_list(thresholds);
    if (!weights.empty()) c.smote.weights = parse_list(weights);
    if (!horizons.empty()) c.horizons = parse_list(horizons);
    if (delta == "auto")
      c.smote.noise_delta.reset();
    else if (!delta.empty())
      c.smote.noise_delta = parse_list(delta).at(0);
    validate(c);
    return c;
  }
};

void common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path, "pipeline config JSON");
  cmd->add_option("--out", o.out, "artifacts directory");
  cmd->add_option("--seed", o.seed, "global seed");
  cmd->add_option("--split-ratio", o.split_ratio, "training fraction");
}

void ingest_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--input", o.input, "cohort CSV");
  cmd->add_option("--dictionary", o.dictionary, "data dictionary JSON");
}

void preprocess_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--knn-k", o.knn_k, "neighbours for KNN imputation");
  cmd->add_option("--missing-threshold", o.missing_threshold, "drop columns missing above this fraction");
  cmd->add_option("--aps-weights", o.aps_weights, "APS III weight table JSON");
}

void select_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--k", o.k_best, "features kept by the F-test");
  cmd->add_option("--target", o.n_target, "features kept by RFE");
  cmd->add_option("--force-include", o.force_include, "features never eliminated")->delimiter(',');
  cmd->add_option("--force-exclude", o.force_exclude, "features never considered")->delimiter(',');
  cmd->add_option("--vif", o.vif, "VIF screening threshold");
}

void resample_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--thresholds", o.thresholds, "interval thresholds, comma separated");
  cmd->add_option("--weights", o.weights, "interval weights, comma separated");
  cmd->add_option("--n", o.n_synthetic, "synthetic rows");
  cmd->add_option("--k-neighbors", o.k_neighbors, "neighbours averaged per synthetic row");
  cmd->add_option("--delta", o.delta, "target noise half-width or 'auto'");
  cmd->add_option("--smote-pool-size", o.pool_size, "nearest-row pool from which k are drawn");
}

// Standalone `resample` also takes --k; under `run` that name belongs to select.
void resample_stage_flags(CLI::App* cmd, Overrides& o) {
  resample_flags(cmd, o);
  cmd->add_option("--k", o.k_neighbors, "same as --k-neighbors");
}

void train_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--l2", o.l2, "L2 penalty on coefficients");
  cmd->add_option("--horizons", o.horizons, "horizons in days, comma separated");
}

void evaluate_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--bootstrap", o.bootstrap, "bootstrap replicates");
  cmd->add_option("--threshold", o.threshold, "decision threshold");
  cmd->add_option("--repeats", o.repeats, "permutation repeats");
}

void print(const json& j) { std::cout << dump_json(j); }

int run_predict(const std::string& bundle_path, const std::string& patient_path, const std::vector<std::string>& sets) {
  const auto b = load_bundle(bundle_path);
  std::map<std::string, double> patient;
  if (!patient_path.empty())
    for (const auto& [k, v] : read_json(patient_path).items()) patient[k] = v.get<double>();
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    bool ok = eq != std::string::npos;
    std::optional<double> v;
    if (ok) v = parse_number(s.substr(eq + 1), ok);
    if (!ok || !v) throw Error(ErrorCode::InvalidArgument, "expected name=value, got " + s);
    patient[s.substr(0, eq)] = *v;
  }
  print(prediction_json(b, predict(b, patient)));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ICU short-term mortality pipeline and nomogram tool"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));
  Overrides o;

  struct Stage {
    const char* name;
    const char* help;
    void (*flags)(CLI::App*, Overrides&);
  };
  const Stage stages[] = {
      {"ingest", "load and validate the cohort CSV", ingest_flags},
      {"filter", "apply inclusion criteria", nullptr},
      {"preprocess", "derive scores, drop sparse columns, impute", preprocess_flags},
      {"split", "stratified train/test split and normalization", nullptr},
      {"select", "F-test, RFE and VIF screening", select_flags},
      {"resample", "augment the training set", resample_stage_flags},
      {"train", "fit logistic and Cox models", train_flags},
      {"evaluate", "metrics on the test split", evaluate_flags},
      {"explain", "permutation importance and attributions", evaluate_flags},
  };
  std::string chosen_stage;
  for (const auto& s : stages) {
    auto* cmd = app.add_subcommand(s.name, s.help);
    common(cmd, o);
    if (s.flags) s.flags(cmd, o);
    cmd->callback([&chosen_stage, name = s.name] { chosen_stage = name; });
  }

  auto* run = app.add_subcommand("run", "full pipeline");
  common(run, o);
  for (auto f : {ingest_flags, preprocess_flags, select_flags, resample_flags, train_flags, evaluate_flags}) f(run, o);

  std::vector<std::string> model_paths;
  std::string svg_out, bundle_out;
  auto* nomo = app.add_subcommand("nomogram", "nomogram SVGs and the bedside bundle");
  nomo->add_option("--config", o.config_path, "pipeline config JSON");
  nomo->add_option("--artifacts", o.out, "artifacts directory (used when no --model is given)");
  nomo->add_option("--seed", o.seed, "global seed");
  nomo->add_option("--model", model_paths, "fitted model JSON; repeat for each horizon");
  nomo->add_option("--out", svg_out, "SVG path (single model) or directory");
  nomo->add_option("--bundle", bundle_out, "bundle JSON path");

  std::string bundle_in, patient_in, golden_out;
  std::vector<std::string> sets;
  std::size_t golden_n = 100;
  std::uint64_t golden_seed = 1;
  auto* pred = app.add_subcommand("predict", "risk for one patient from a bundle");
  pred->add_option("--bundle", bundle_in, "bundle JSON")->required();
  pred->add_option("--patient", patient_in, "patient JSON object of raw values");
  pred->add_option("--set", sets, "name=value, repeatable");
  pred->add_option("--golden", golden_out, "write a golden file of random patients instead");
  pred->add_option("--golden-n", golden_n, "patients in the golden file");
  pred->add_option("--golden-seed", golden_seed, "seed for golden patients");

  SyntheticCohortSpec syn;
  std::size_t informative = 7;
  std::string syn_out, oracle_out;
  auto* synth = app.add_subcommand("synth", "write a synthetic cohort with a planted model");
  synth->add_option("--n", syn.n_patients, "patients");
  synth->add_option("--features", syn.n_features, "clinical features");
  synth->add_option("--informative", informative, "features with nonzero planted effect");
  synth->add_option("--missingness", syn.missingness_rate, "MCAR missing fraction");
  synth->add_option("--censoring", syn.censoring_rate, "fraction censored before the window");
  synth->add_option("--seed", syn.seed, "seed")->required();
  synth->add_option("--out", syn_out, "cohort CSV")->required();
  synth->add_option("--oracle", oracle_out, "planted model JSON");

  std::string default_pipeline, default_aps;
  auto* defaults = app.add_subcommand("defaults", "write the default config and APS III weight table");
  defaults->add_option("--pipeline", default_pipeline, "pipeline config JSON path");
  defaults->add_option("--aps", default_aps, "APS III weight table JSON path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (!chosen_stage.empty()) {
      print(run_stage(chosen_stage, o.resolve()));
    } else if (run->parsed()) {
      if (!o.seed && o.config_path.empty()) throw Error(ErrorCode::InvalidConfig, "run requires --seed");
      const auto cfg = o.resolve();
      print(run_pipeline(cfg)["stages"]);
    } else if (nomo->parsed()) {
      std::vector<LogisticModel> models;
      if (model_paths.empty()) {
        const auto cfg = o.resolve();
        print(run_stage("nomogram", cfg));
        if (!svg_out.empty() || !bundle_out.empty()) models = load_models(artifacts(cfg), cfg.horizons);
      } else {
        for (const auto& path : model_paths) models.push_back(read_json(path).get<LogisticModel>());
      }
      if (!models.empty()) {
        std::vector<NomogramSpec> specs;
        for (const auto& m : models) specs.push_back(build_nomogram(m, {}, json_hash(json(m))));
        for (const auto& s : specs) {
          if (svg_out.empty() && model_paths.empty()) break;  // the stage already wrote the artifacts copies
          std::string path = svg_out;
          if (specs.size() > 1 || path.empty()) {
            const std::filesystem::path dir = path.empty() ? "." : path;
            std::filesystem::create_directories(dir);
            path = (dir / ("nomogram_" + horizon_tag(s.horizon_days) + ".svg")).string();
          }
          write_text(path, render_svg(s));
        }
        if (!bundle_out.empty()) export_bundle(models, specs, bundle_out, json{{"tool", "icunomo"}, {"version", kToolVersion}});
      }
    } else if (pred->parsed()) {
      if (!golden_out.empty()) {
        write_json(golden_out, golden_cases(load_bundle(bundle_in), golden_n, golden_seed));
      } else {
        return run_predict(bundle_in, patient_in, sets);
      }
    } else if (defaults->parsed()) {
      if (!default_pipeline.empty()) {
        json c = PipelineConfig{};
        c.erase("out_dir");
        c["input"] = "cohort.csv";
        write_json(default_pipeline, c);
      }
      if (!default_aps.empty()) write_json(default_aps, json(default_aps_weights()));
    } else if (synth->parsed()) {
      syn.planted_coefficients = default_planted_coefficients(syn.n_features, informative);
      auto [table, oracle] = generate_synthetic_cohort(syn);
      write_csv(syn_out, cohort_to_csv(table));
      if (!oracle_out.empty()) write_json(oracle_out, json(oracle));
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
