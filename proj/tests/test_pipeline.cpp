#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <icunomo/icunomo.hpp>

using namespace icunomo;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class Pipeline : public ::testing::Test {
 protected:
  static inline fs::path root;
  static inline json manifest_a, manifest_b;

  static PipelineConfig config(const std::string& out) {
    PipelineConfig c;
    c.input = (root / "cohort.csv").string();
    c.out_dir = (root / out).string();
    c.seed = 42;
    return c;
  }

  static void SetUpTestSuite() {
    root = fs::temp_directory_path() / "icunomo_pipeline_test";
    fs::remove_all(root);
    fs::create_directories(root);
    SyntheticCohortSpec s;
    s.n_patients = 2000;
    s.seed = 3;
    s.planted_coefficients = default_planted_coefficients(s.n_features);
    write_csv((root / "cohort.csv").string(), cohort_to_csv(generate_synthetic_cohort(s).first));
    manifest_a = run_pipeline(config("a"));
    manifest_b = run_pipeline(config("b"));
  }
};

}  // namespace

TEST_F(Pipeline, EmitsArtifacts) {
  for (const char* f : {"manifest.json", "bundle.json", "metrics.txt", "cox.json", "cox_metrics.json",
                        "cohort_comparison.json", "exclusion_report.json", "selection.json", "resample.json"})
    EXPECT_TRUE(fs::exists(root / "a" / f)) << f;
  for (const char* t : {"7d", "14d", "28d"})
    for (const std::string f : {"nomogram_", "model_", "metrics_", "importance_"}) {
      const auto ext = f == "nomogram_" ? ".svg" : ".json";
      EXPECT_TRUE(fs::exists(root / "a" / (f + t + ext))) << f << t;
    }
  EXPECT_NO_THROW(load_bundle((root / "a" / "bundle.json").string()));
}

TEST_F(Pipeline, ByteIdenticalAcrossRuns) {
  for (const char* f : {"manifest.json", "bundle.json", "metrics_7d.json", "metrics_28d.json", "nomogram_14d.svg",
                        "resampled.csv", "attributions_28d.csv", "selection.json"})
    EXPECT_EQ(slurp(root / "a" / f), slurp(root / "b" / f)) << f;
}

TEST_F(Pipeline, ManifestRecordsRun) {
  const auto& m = manifest_a;
  EXPECT_EQ(m["seed"], 42u);
  EXPECT_EQ(m["version"], kToolVersion);
  EXPECT_TRUE(m["checks"]["rows_after_smote_equals_rows_train_plus_synthetic"].get<bool>());
  const auto& rs = m["stages"]["resample"];
  EXPECT_EQ(rs["rows_after_smote"].get<std::size_t>(),
            rs["rows_train"].get<std::size_t>() + rs["n_synthetic"].get<std::size_t>());
  EXPECT_EQ(rs["n_synthetic"], 2000u);
  EXPECT_EQ(m["stage_seeds"]["split"], derive_seed(42, "split"));
  EXPECT_FALSE(m["config"].contains("out_dir"));
  EXPECT_EQ(m["config_hash"], manifest_b["config_hash"]);
}

TEST_F(Pipeline, SelectionRecoversPlantedSignal) {
  const auto sel = read_json((root / "a" / "selection.json").string());
  const auto names = sel.at("selected").get<std::vector<std::string>>();
  EXPECT_LE(names.size(), 7u);
  const auto cohort = read_csv((root / "cohort.csv").string());
  // The planted features are the first seven non-reserved columns.
  std::vector<std::string> planted;
  for (const auto& h : cohort.header)
    if (!is_reserved_column(h) && planted.size() < 7) planted.push_back(h);
  std::size_t hit = 0;
  for (const auto& n : names) hit += std::count(planted.begin(), planted.end(), n);
  EXPECT_GE(hit, 6u);
}

TEST_F(Pipeline, SplitIsStratifiedAndDisjoint) {
  const auto tr = read_dataset((root / "a" / "train.csv").string());
  const auto te = read_dataset((root / "a" / "test.csv").string());
  std::set<std::string> ids(tr.ids.begin(), tr.ids.end());
  for (const auto& i : te.ids) EXPECT_FALSE(ids.count(i));
  const auto rate = [](const Dataset& d) {
    const auto y = binarize_outcome(d.outcomes, 28.0);
    return std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  };
  EXPECT_NEAR(rate(tr), rate(te), 0.01);
  EXPECT_NEAR(static_cast<double>(tr.rows()) / static_cast<double>(tr.rows() + te.rows()), 0.7, 0.002);
}

TEST_F(Pipeline, StageRerunReproducesOutput) {
  const auto cfg = config("a");
  const auto before = slurp(root / "a" / "model_14d.json");
  const auto metrics = slurp(root / "a" / "metrics_14d.json");
  run_stage("train", cfg);
  run_stage("evaluate", cfg);
  EXPECT_EQ(slurp(root / "a" / "model_14d.json"), before);
  EXPECT_EQ(slurp(root / "a" / "metrics_14d.json"), metrics);
}

TEST_F(Pipeline, DiscriminationAndPrOrdering) {
  double prev = 0.0;
  for (const char* t : {"7d", "14d", "28d"}) {
    const auto m = read_json((root / "a" / (std::string("metrics_") + t + ".json")).string());
    EXPECT_GT(m["auroc"].get<double>(), 0.75) << t;
    EXPECT_LE(m["auroc_ci"]["lower"].get<double>(), m["auroc"].get<double>());
    EXPECT_GT(m["pr_auc"].get<double>(), prev) << t;
    prev = m["pr_auc"].get<double>();
  }
  EXPECT_GT(read_json((root / "a" / "cox_metrics.json").string())["c_index"].get<double>(), 0.7);
}

TEST_F(Pipeline, PredictAtMeansIsSigmoidOfIntercept) {
  const auto b = load_bundle((root / "a" / "bundle.json").string());
  for (const auto& m : b.models) {
    std::map<std::string, double> patient;
    for (std::size_t j = 0; j < m.dims(); ++j) patient[m.feature_names[j]] = m.norm_stats[j].mean;
    const auto preds = predict(b, patient);
    const auto& r = *std::find_if(preds.begin(), preds.end(), [&](auto& x) { return x.horizon_days == m.horizon_days; });
    EXPECT_NEAR(r.probability, 1.0 / (1.0 + std::exp(-m.intercept)), 1e-12);
    EXPECT_NEAR(r.probability, predict_prob(m, patient), 1e-15);
    EXPECT_NEAR(r.nomogram_probability, r.probability, 1e-6);
    for (double a : r.attributions) EXPECT_NEAR(a, 0.0, 1e-12);
    EXPECT_NEAR(r.attribution_base, m.intercept, 1e-12);
  }
}

TEST_F(Pipeline, PredictNamesMissingFeatures) {
  const auto b = load_bundle((root / "a" / "bundle.json").string());
  try {
    predict(b, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingFeature);
    EXPECT_EQ(e.names.size(), b.models.front().dims());
  }
}

TEST_F(Pipeline, GoldenCasesAgreeWithModels) {
  const auto b = load_bundle((root / "a" / "bundle.json").string());
  const auto g = golden_cases(b, 50, 1);
  ASSERT_EQ(g["cases"].size(), 50u);
  for (const auto& c : g["cases"]) {
    const auto patient = c["patient"].get<std::map<std::string, double>>();
    for (const auto& m : b.models)
      EXPECT_NEAR(c["probabilities"][horizon_tag(m.horizon_days)].get<double>(), predict_prob(m, patient), 1e-15);
  }
  EXPECT_EQ(golden_cases(b, 5, 9).dump(), golden_cases(b, 5, 9).dump());
}

TEST(PipelineConfigTest, RejectsBadValues) {
  PipelineConfig c;
  c.seed = 1;
  c.input = "x.csv";
  c.split_ratio = 1.0;
  try {
    run_pipeline(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidConfig);
    EXPECT_NE(std::string(e.what()).find("split_ratio"), std::string::npos);
  }
  c.split_ratio = 0.7;
  c.horizons = {14, 7};
  EXPECT_THROW(validate(c), Error);
  c.horizons = {7, 14, 28};
  c.seed.reset();
  EXPECT_THROW(run_pipeline(c), Error);
}

TEST(PipelineConfigTest, JsonRoundTripAndHash) {
  PipelineConfig c;
  c.seed = 5;
  c.k_best = 30;
  c.force_include = {"lactate"};
  c.smote.n_synthetic = 100;
  const auto back = json(c).get<PipelineConfig>();
  EXPECT_EQ(json(back).dump(), json(c).dump());
  EXPECT_EQ(config_hash(back), config_hash(c));
  auto d = c;
  d.out_dir = "elsewhere";
  EXPECT_EQ(config_hash(d), config_hash(c));
  d.k_best = 31;
  EXPECT_NE(config_hash(d), config_hash(c));
}

TEST(PipelineConfigTest, StageErrorsCarryStageName) {
  PipelineConfig c;
  c.out_dir = (fs::temp_directory_path() / "icunomo_empty_stage").string();
  fs::remove_all(c.out_dir);
  fs::create_directories(c.out_dir);
  c.seed = 1;
  try {
    run_stage("train", c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.stage, "train");
    EXPECT_EQ(std::string(e.what()).find("IoError: stage 'train'"), 0u) << e.what();
  }
}

#ifdef ICUNOMO_CLI
TEST(Cli, SynthRunPredictGolden) {
  const auto dir = fs::temp_directory_path() / "icunomo_cli_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cli = ICUNOMO_CLI;
  auto sh = [&](const std::string& args) { return std::system((cli + " " + args + " > /dev/null 2>&1").c_str()); };
  const auto d = dir.string();
  ASSERT_EQ(sh("synth --n 1500 --seed 8 --out " + d + "/c.csv --oracle " + d + "/oracle.json"), 0);
  ASSERT_EQ(sh("run --input " + d + "/c.csv --out " + d + "/art --seed 4 --bootstrap 100 --repeats 3"), 0);
  EXPECT_TRUE(fs::exists(dir / "art" / "nomogram_28d.svg"));
  ASSERT_EQ(sh("predict --bundle " + d + "/art/bundle.json --golden " + d + "/golden.json --golden-n 20"), 0);
  const auto g = read_json((dir / "golden.json").string());
  const auto b = load_bundle((dir / "art" / "bundle.json").string());
  const auto patient = g["cases"][3]["patient"].get<std::map<std::string, double>>();
  EXPECT_NEAR(g["cases"][3]["probabilities"]["7d"].get<double>(), predict_prob(b.model(7), patient), 1e-12);
  // Stage-by-stage reruns of a finished run must succeed.
  EXPECT_EQ(sh("nomogram --artifacts " + d + "/art --out " + d + "/figs"), 0);
  EXPECT_TRUE(fs::exists(dir / "figs" / "nomogram_7d.svg"));
  EXPECT_NE(sh("run --input " + d + "/c.csv --out " + d + "/bad --seed 4 --split-ratio 1.0"), 0);
  EXPECT_NE(sh("predict --bundle " + d + "/absent.json"), 0);
}
#endif
