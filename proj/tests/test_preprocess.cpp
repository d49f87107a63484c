#include <gtest/gtest.h>

#include <map>

#include <icunomo/cohort.hpp>
#include <icunomo/io.hpp>
#include <icunomo/preprocess.hpp>

using namespace icunomo;

namespace {

const double NaN = std::numeric_limits<double>::quiet_NaN();

FeatureMatrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix v(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (auto r : rows) {
    Eigen::Index j = 0;
    for (double x : r) v(i, j++) = x;
    ++i;
  }
  std::vector<std::string> names;
  for (Eigen::Index j = 0; j < v.cols(); ++j) names.push_back("c" + std::to_string(j));
  return FeatureMatrix(v, names);
}

// Independent KNN oracle: all pairwise distances from scratch, donors
// ranked by (distance, index) with a full sort.
double knn_oracle(const FeatureMatrix& m, std::size_t row, std::size_t col, std::size_t k) {
  const auto n = m.rows(), d = m.cols();
  std::vector<double> sd(d);
  for (std::size_t j = 0; j < d; ++j) {
    std::vector<double> obs;
    for (std::size_t i = 0; i < n; ++i)
      if (!std::isnan(m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))))
        obs.push_back(m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    double mu = 0;
    for (double x : obs) mu += x;
    mu /= static_cast<double>(obs.size());
    double ss = 0;
    for (double x : obs) ss += (x - mu) * (x - mu);
    sd[j] = obs.size() > 1 && ss > 0 ? std::sqrt(ss / static_cast<double>(obs.size() - 1)) : 1.0;
  }
  std::vector<std::pair<double, std::size_t>> cand;
  for (std::size_t b = 0; b < n; ++b) {
    if (b == row || std::isnan(m.values(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(col)))) continue;
    double ss = 0;
    int shared = 0;
    for (std::size_t j = 0; j < d; ++j) {
      double x = m.values(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(j));
      double y = m.values(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(j));
      if (std::isnan(x) || std::isnan(y)) continue;
      ss += ((x - y) / sd[j]) * ((x - y) / sd[j]);
      ++shared;
    }
    cand.push_back({shared ? std::sqrt(ss / shared) : std::numeric_limits<double>::infinity(), b});
  }
  std::sort(cand.begin(), cand.end());
  double s = 0;
  for (std::size_t t = 0; t < k; ++t)
    s += m.values(static_cast<Eigen::Index>(cand[t].second), static_cast<Eigen::Index>(col));
  return s / static_cast<double>(k);
}

}  // namespace

TEST(DropMissingness, StrictThreshold) {
  Matrix v = Matrix::Ones(100, 3);
  for (int i = 0; i < 81; ++i) v(i, 0) = NaN;
  for (int i = 0; i < 80; ++i) v(i, 1) = NaN;
  auto [out, dropped] = drop_high_missingness(FeatureMatrix(v, {"a", "b", "c"}), 0.8);
  EXPECT_EQ(dropped, std::vector<std::string>{"a"});
  EXPECT_EQ(out.names, (std::vector<std::string>{"b", "c"}));
}

TEST(DropMissingness, CompleteIsIdentity) {
  const auto m = mat({{1, 2}, {3, 4}});
  auto [out, dropped] = drop_high_missingness(m);
  EXPECT_TRUE(dropped.empty());
  EXPECT_EQ(out.values, m.values);
  EXPECT_THROW(drop_high_missingness(m, 0.0), Error);
}

TEST(Knn, CompleteIsIdentity) {
  const auto m = mat({{1, 2}, {3, 4}, {5, 7}});
  EXPECT_EQ(knn_impute(m, 2).values, m.values);
}

TEST(Knn, AllDonorsGiveColumnMean) {
  const auto m = mat({{1, 10}, {2, NaN}, {4, 30}, {8, 50}, {3, 20}});
  const auto out = knn_impute(m, 4);
  EXPECT_DOUBLE_EQ(out.values(1, 1), (10 + 30 + 50 + 20) / 4.0);
  EXPECT_TRUE(out.is_complete());
}

TEST(Knn, SixByTwoMatchesHandComputation) {
  // Row 0 shares only c0 with the others; its two nearest rows are 1 and 2.
  const auto m = mat({{1.0, NaN}, {1.5, 4.0}, {0.0, 6.0}, {3.0, 1.0}, {5.0, 9.0}, {9.0, 2.0}});
  const auto out = knn_impute(m, 2);
  EXPECT_DOUBLE_EQ(out.values(0, 1), 5.0);
  EXPECT_DOUBLE_EQ(out.values(0, 1), knn_oracle(m, 0, 1, 2));
}

TEST(Knn, RandomMatricesMatchBruteForce) {
  Rng rng = make_rng(17);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 15 + uniform_index(rng, 10), d = 2 + uniform_index(rng, 4);
    Matrix v(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < v.rows(); ++i)
      for (Eigen::Index j = 0; j < v.cols(); ++j) v(i, j) = uniform01(rng) < 0.2 ? NaN : uniform(rng, -5, 5) * (j + 1);
    for (Eigen::Index i = 0; i < v.rows(); ++i)
      if (v.row(i).array().isNaN().all()) v(i, 0) = 1.0;
    FeatureMatrix m(v, std::vector<std::string>(d, ""));
    for (std::size_t j = 0; j < d; ++j) m.names[j] = "c" + std::to_string(j);
    const auto out = knn_impute(m, 3);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const auto r = static_cast<Eigen::Index>(i), c = static_cast<Eigen::Index>(j);
        if (m.missing(r, c)) EXPECT_NEAR(out.values(r, c), knn_oracle(m, i, j, 3), 1e-12);
        else EXPECT_EQ(out.values(r, c), m.values(r, c));
      }
    EXPECT_TRUE(out.is_complete());
  }
}

TEST(Knn, InsufficientDonors) {
  const auto m = mat({{1, NaN}, {2, NaN}, {3, 5}, {4, 6}});
  try {
    knn_impute(m, 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientDonors);
    EXPECT_EQ(e.names, std::vector<std::string>{"c1"});
  }
}

TEST(ZScore, SampleSdConvention) {
  const auto z = zscore_fit_transform(mat({{1}, {2}, {3}}));
  EXPECT_DOUBLE_EQ(z.values(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(z.values(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(z.values(2, 0), 1.0);
  ASSERT_TRUE(z.norm_stats);
  EXPECT_DOUBLE_EQ((*z.norm_stats)[0].sd, 1.0);
}

TEST(ZScore, FitGivesZeroMeanUnitSd) {
  Rng rng = make_rng(4);
  Matrix v(50, 3);
  for (Eigen::Index i = 0; i < 50; ++i)
    for (Eigen::Index j = 0; j < 3; ++j) v(i, j) = uniform(rng, 0, 100) * (j + 1) + 7;
  const FeatureMatrix m(v, {"a", "b", "c"});
  const auto z = zscore_fit_transform(m);
  for (std::size_t j = 0; j < 3; ++j) {
    const auto s = column_stats(z, j);
    EXPECT_NEAR(s.mean, 0.0, 1e-10);
    EXPECT_NEAR(s.sd, 1.0, 1e-10);
  }
  // apply with fitted stats reproduces the fit output bit for bit
  EXPECT_EQ(zscore_apply(m, zscore_fit(m)).values, z.values);
  // refitting a standardized matrix is a no-op within 1e-10
  EXPECT_TRUE(zscore_fit_transform(z).values.isApprox(z.values, 1e-10));
}

TEST(ZScore, ConstantColumnRejected) {
  try {
    zscore_fit(mat({{1, 2}, {1, 3}, {1, 4}}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConstantColumn);
    EXPECT_EQ(e.names, std::vector<std::string>{"c0"});
  }
}

TEST(ZScore, TestSetUsesTrainStats) {
  const auto train = mat({{0}, {2}, {4}});
  const auto stats = zscore_fit(train);
  const auto test = zscore_apply(mat({{6}}), stats);
  EXPECT_DOUBLE_EQ(test.values(0, 0), 2.0);
}

TEST(Aps, NormalPhysiologyScoresZero) {
  const auto t = default_aps_weights();
  ASSERT_EQ(t.variables.size(), kApsVariables);
  ApsIiiInput in;
  const double normal[] = {80, 90, 18, 450, 7.4, 140, 4.0, 100, 1.0, 10, 8, 45, 37, 2500, 15};
  for (std::size_t i = 0; i < 15; ++i) in.values[i] = normal[i];
  EXPECT_EQ(aps_iii_score(in, t), 0.0);
  EXPECT_EQ(aps_iii_score(ApsIiiInput{}, t), 0.0);
}

TEST(Aps, SingleAbnormalVariable) {
  const auto t = default_aps_weights();
  ApsIiiInput in;
  in.values[4] = 7.1;  // pH in the weight-12 bin
  EXPECT_EQ(aps_iii_score(in, t), 12.0);
}

TEST(Aps, NeverExceedsMaximum) {
  auto t = default_aps_weights();
  for (auto& v : t.variables)
    for (auto& b : v.bins) b.weight *= 10;
  ApsIiiInput worst;
  for (std::size_t i = 0; i < kApsVariables; ++i) worst.values[i] = -1e9;
  EXPECT_EQ(aps_iii_score(worst, t), 252.0);
  Rng rng = make_rng(2);
  const auto d = default_aps_weights();
  for (int r = 0; r < 2000; ++r) {
    ApsIiiInput in;
    for (std::size_t i = 0; i < kApsVariables; ++i)
      if (uniform01(rng) < 0.9) in.values[i] = uniform(rng, -100, 5000);
    const double s = aps_iii_score(in, d);
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 252.0);
  }
}

TEST(Aps, MonotoneInBinWeight) {
  const auto t = default_aps_weights();
  Rng rng = make_rng(8);
  for (int r = 0; r < 500; ++r) {
    ApsIiiInput in;
    for (std::size_t i = 0; i < kApsVariables; ++i) in.values[i] = uniform(rng, -10, 500);
    const std::size_t k = uniform_index(rng, 15);
    const double before = aps_iii_score(in, t);
    const double w_old = aps_bin_weight(t.variables[k], in.values[k]);
    for (const auto& b : t.variables[k].bins) {
      if (b.weight < w_old || !std::isfinite(b.lo)) continue;
      auto moved = in;
      moved.values[k] = b.lo;
      EXPECT_GE(aps_iii_score(moved, t), before);
    }
  }
}

TEST(Aps, ShippedConfigEqualsDefault) {
  const auto shipped = read_json(std::string(ICUNOMO_SOURCE_DIR) + "/config/aps_iii_weights.json");
  EXPECT_EQ(shipped, json(default_aps_weights()));
  EXPECT_EQ(json(shipped.get<ApsWeightTable>()), shipped);
}

TEST(BaseExcess, Examples) {
  for (double hb : {0.0, 10.0, 20.0}) EXPECT_EQ(base_excess(24.4, hb, 7.4), 0.0);
  EXPECT_NEAR(base_excess(20, 10, 7.3), -7.47, 1e-12);
  EXPECT_NEAR(base_excess(24.4, 0, 7.5), 0.77, 1e-12);
}

TEST(BaseExcess, AffineInEachArgument) {
  Rng rng = make_rng(6);
  for (int r = 0; r < 200; ++r) {
    double a = uniform(rng, 5, 40), b = uniform(rng, 0, 20), c = uniform(rng, 6.8, 7.7);
    double a2 = uniform(rng, 5, 40), b2 = uniform(rng, 0, 20), c2 = uniform(rng, 6.8, 7.7);
    auto mid = [](double x, double y) { return 0.5 * (x + y); };
    EXPECT_NEAR(base_excess(mid(a, a2), b, c), mid(base_excess(a, b, c), base_excess(a2, b, c)), 1e-12);
    EXPECT_NEAR(base_excess(a, mid(b, b2), c), mid(base_excess(a, b, c), base_excess(a, b2, c)), 1e-12);
    EXPECT_NEAR(base_excess(a, b, mid(c, c2)), mid(base_excess(a, b, c), base_excess(a, b, c2)), 1e-12);
  }
}

TEST(BaseExcess, OutOfRange) {
  for (auto [a, b, c] : std::vector<std::array<double, 3>>{{0, 10, 7.4}, {24, -1, 7.4}, {24, 10, 6.4}, {24, 10, 8.1}}) {
    try {
      base_excess(a, b, c);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::OutOfPhysiologicRange);
    }
  }
}
