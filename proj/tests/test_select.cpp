#include <gtest/gtest.h>

#include <icunomo/select.hpp>

using namespace icunomo;

namespace {

FeatureMatrix gaussian(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  Matrix v(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < v.rows(); ++i)
    for (Eigen::Index j = 0; j < v.cols(); ++j) v(i, j) = z(rng);
  std::vector<std::string> names;
  for (std::size_t j = 0; j < d; ++j) names.push_back("f" + std::to_string(j));
  return FeatureMatrix(v, names);
}

Labels planted(const FeatureMatrix& X, const std::vector<double>& b, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  Labels y;
  for (Eigen::Index i = 0; i < X.values.rows(); ++i) {
    double eta = 0;
    for (std::size_t j = 0; j < b.size(); ++j) eta += b[j] * X.values(i, static_cast<Eigen::Index>(j));
    y.push_back(uniform01(rng) < 1 / (1 + std::exp(-eta)));
  }
  return y;
}

// ANOVA by explicit sums of squares.
double f_oracle(const std::vector<double>& x, const Labels& y) {
  double m[2] = {0, 0}, c[2] = {0, 0}, all = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    m[y[i]] += x[i];
    c[y[i]] += 1;
    all += x[i];
  }
  m[0] /= c[0];
  m[1] /= c[1];
  all /= static_cast<double>(x.size());
  double ssb = c[0] * (m[0] - all) * (m[0] - all) + c[1] * (m[1] - all) * (m[1] - all);
  double ssw = 0;
  for (std::size_t i = 0; i < x.size(); ++i) ssw += (x[i] - m[y[i]]) * (x[i] - m[y[i]]);
  return ssb / (ssw / (static_cast<double>(x.size()) - 2));
}

// Solves A x = b by Gaussian elimination with partial pivoting.
std::vector<double> gauss_solve(std::vector<std::vector<double>> A, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(A[i][k]) > std::abs(A[p][k])) p = i;
    std::swap(A[k], A[p]);
    std::swap(b[k], b[p]);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = A[i][k] / A[k][k];
      for (std::size_t j = k; j < n; ++j) A[i][j] -= f * A[k][j];
      b[i] -= f * b[k];
    }
  }
  std::vector<double> x(n);
  for (std::size_t k = n; k-- > 0;) {
    double s = b[k];
    for (std::size_t j = k + 1; j < n; ++j) s -= A[k][j] * x[j];
    x[k] = s / A[k][k];
  }
  return x;
}

// VIF via normal equations with an explicit intercept column.
double vif_oracle(const Matrix& X, Eigen::Index j) {
  const auto n = static_cast<std::size_t>(X.rows());
  std::vector<std::vector<double>> design;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row = {1.0};
    for (Eigen::Index c = 0; c < X.cols(); ++c)
      if (c != j) row.push_back(X(static_cast<Eigen::Index>(i), c));
    design.push_back(row);
  }
  const std::size_t p = design[0].size();
  std::vector<std::vector<double>> xtx(p, std::vector<double>(p, 0.0));
  std::vector<double> xty(p, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < p; ++a) {
      xty[a] += design[i][a] * X(static_cast<Eigen::Index>(i), j);
      for (std::size_t b = 0; b < p; ++b) xtx[a][b] += design[i][a] * design[i][b];
    }
  const auto beta = gauss_solve(xtx, xty);
  double mean = 0;
  for (std::size_t i = 0; i < n; ++i) mean += X(static_cast<Eigen::Index>(i), j);
  mean /= static_cast<double>(n);
  double rss = 0, tss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double fit = 0;
    for (std::size_t a = 0; a < p; ++a) fit += design[i][a] * beta[a];
    const double yi = X(static_cast<Eigen::Index>(i), j);
    rss += (yi - fit) * (yi - fit);
    tss += (yi - mean) * (yi - mean);
  }
  return 1.0 / (1.0 - (1.0 - rss / tss));
}

double score_of(const FeatureRanking& r, const std::string& name) {
  for (std::size_t t = 0; t < r.names.size(); ++t)
    if (r.names[t] == name) return r.scores[t];
  return std::nan("");
}

}  // namespace

TEST(FScore, ConstantFeatureIsZero) {
  EXPECT_EQ(f_score(std::vector<double>{3, 3, 3, 3, 3}, Labels{0, 1, 0, 1, 1}), 0.0);
}

TEST(FScore, PerfectSeparationIsInfinite) {
  const Labels y = {0, 1, 0, 1, 1, 0};
  std::vector<double> x(y.begin(), y.end());
  EXPECT_TRUE(std::isinf(f_score(x, y)));
}

TEST(FScore, HandComputedAnova) {
  const std::vector<double> x = {1, 2, 3, 4};
  const Labels y = {0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(f_score(x, y), 8.0);
  EXPECT_DOUBLE_EQ(f_score(x, y), f_oracle(x, y));
}

TEST(FScore, RandomMatchesOracleAndAffineInvariant) {
  Rng rng = make_rng(3);
  for (int r = 0; r < 50; ++r) {
    std::vector<double> x(30);
    Labels y(30);
    for (std::size_t i = 0; i < 30; ++i) {
      y[i] = i % 3 == 0;
      x[i] = uniform(rng, -2, 2) + 0.5 * y[i];
    }
    const double f = f_score(x, y);
    EXPECT_NEAR(f, f_oracle(x, y), 1e-12 * std::max(1.0, f));
    auto t = x;
    const double a = uniform(rng, -50, 50), b = uniform(rng, 0.01, 100) * (r % 2 ? 1 : -1);
    for (auto& v : t) v = a + b * v;
    EXPECT_NEAR(f_score(t, y), f, 1e-9 * std::max(1.0, f));
  }
}

TEST(FScore, Errors) {
  EXPECT_THROW(f_score(std::vector<double>{1, 2, 3}, Labels{0, 1, 0}), Error);
  try {
    f_score(std::vector<double>{1, 2, 3, 4}, Labels{1, 1, 1, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingleClass);
  }
}

TEST(KBest, AllFeaturesSorted) {
  const auto X = gaussian(200, 6, 1);
  const auto y = planted(X, {0, 2, 0, 1, 0, 0}, 2);
  const auto r = select_k_best(X, y, 6);
  ASSERT_EQ(r.names.size(), 6u);
  EXPECT_TRUE(std::is_sorted(r.scores.rbegin(), r.scores.rend()));
  EXPECT_EQ(r.names[0], "f1");
  EXPECT_EQ(r.method, RankingMethod::f_test);
}

TEST(KBest, PerfectSeparatorChosen) {
  auto X = gaussian(40, 4, 3);
  Labels y(40);
  for (int i = 0; i < 40; ++i) {
    y[static_cast<std::size_t>(i)] = i % 2;
    X.values(i, 2) = i % 2;
  }
  const auto r = select_k_best(X, y, 1);
  EXPECT_EQ(r.names, std::vector<std::string>{"f2"});
  EXPECT_TRUE(std::isfinite(r.scores[0]));
}

TEST(KBest, TiesKeepColumnOrder) {
  Matrix v(6, 3);
  v << 1, 5, 1, 2, 5, 2, 3, 5, 3, 4, 5, 4, 5, 5, 5, 6, 5, 6;
  const auto r = select_k_best(FeatureMatrix(v, {"a", "b", "c"}), Labels{0, 0, 0, 1, 1, 1}, 3);
  EXPECT_EQ(r.names, (std::vector<std::string>{"a", "c", "b"}));
}

TEST(KBest, PlantedSignalsOnTop) {
  int hits = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto X = gaussian(500, 10, 100 + s);
    const auto y = planted(X, {1.0, -1.0, 0.8}, 200 + s);
    auto top = select_k_best(X, y, 3).names;
    std::sort(top.begin(), top.end());
    hits += top == std::vector<std::string>{"f0", "f1", "f2"};
  }
  EXPECT_GE(hits, 19);
}

TEST(KBest, KOutOfRange) {
  const auto X = gaussian(20, 3, 1);
  const auto y = planted(X, {1}, 1);
  try {
    select_k_best(X, y, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::KExceedsDimensions);
  }
}

TEST(Rfe, TargetEqualsDimensionIsIdentity) {
  const auto X = gaussian(200, 4, 5);
  const auto r = rfe(X, planted(X, {1, 1, 0, 0}, 6), 4);
  EXPECT_TRUE(r.eliminated_order.empty());
  EXPECT_EQ(r.names.size(), 4u);
}

TEST(Rfe, NoiseEliminatedFirst) {
  int hits = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto X = gaussian(400, 3, 300 + s);
    const auto r = rfe(X, planted(X, {1.0, -0.8, 0.0}, 400 + s), 2);
    hits += r.eliminated_order.at(0) == "f2";
  }
  EXPECT_GE(hits, 18);
}

TEST(Rfe, FiftyToSeven) {
  const auto X = gaussian(2000, 50, 7);
  std::vector<double> b(50, 0.0);
  for (std::size_t j = 0; j < 7; ++j) b[j * 7] = j % 2 ? -0.9 : 0.9;
  const auto r = rfe(X, planted(X, b, 8), 7);
  EXPECT_EQ(r.names.size(), 7u);
  EXPECT_EQ(r.eliminated_order.size(), 43u);
  auto got = r.names;
  std::sort(got.begin(), got.end());
  std::vector<std::string> want;
  for (std::size_t j = 0; j < 7; ++j) want.push_back("f" + std::to_string(j * 7));
  std::sort(want.begin(), want.end());
  EXPECT_EQ(got, want);
  EXPECT_TRUE(std::is_sorted(r.scores.rbegin(), r.scores.rend()));
}

TEST(Rfe, ProtectedFeatureSurvives) {
  const auto X = gaussian(300, 4, 9);
  const auto r = rfe(X, planted(X, {1, 1, 1, 0}, 10), 2, {"f3"});
  EXPECT_NE(std::find(r.names.begin(), r.names.end(), "f3"), r.names.end());
  EXPECT_EQ(std::find(r.eliminated_order.begin(), r.eliminated_order.end(), "f3"), r.eliminated_order.end());
}

TEST(Rfe, NonConvergenceCarriesStep) {
  const auto X = gaussian(100, 3, 11);
  LogisticFitOptions o;
  o.max_iterations = 0;
  try {
    rfe(X, planted(X, {1, 1, 1}, 12), 2, {}, o);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonConvergence);
    EXPECT_EQ(*e.iteration, 0u);
  }
}

TEST(Rfe, ComposesWithKBestAtFullWidth) {
  const auto X = gaussian(600, 12, 13);
  const auto y = planted(X, {1, 0, -0.7, 0, 0.5, 0, 0, 0.3}, 14);
  const auto direct = rfe(X, y, 5);
  const auto kb = select_k_best(X, y, 12);
  const auto composed = rfe(X.select_columns(kb.names), y, 5);
  auto a = direct.names, b = composed.names;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
  EXPECT_EQ(direct.eliminated_order, composed.eliminated_order);
}

TEST(Vif, OrthogonalColumnsGiveOne) {
  Matrix v(8, 3);
  v << 1, 1, 1, 1, 1, -1, 1, -1, 1, 1, -1, -1, -1, 1, 1, -1, 1, -1, -1, -1, 1, -1, -1, -1;
  const auto r = vif(FeatureMatrix(v, {"a", "b", "c"}));
  for (double s : r.scores) EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(Vif, NearDuplicateFlagged) {
  auto X = gaussian(200, 3, 15);
  Rng rng = make_rng(16);
  std::normal_distribution<double> z(0.0, 1e-6);
  for (Eigen::Index i = 0; i < 200; ++i) X.values(i, 2) = X.values(i, 0) + z(rng);
  const auto r = vif(X);
  EXPECT_GT(score_of(r, "f0"), 1e6);
  EXPECT_GT(score_of(r, "f2"), 1e6);
  FeatureMatrix screened = X;
  const auto dropped = vif_screen(screened, 5.0);
  EXPECT_EQ(dropped.size(), 1u);
  for (double s : vif(screened).scores) EXPECT_LT(s, 5.0);
}

TEST(Vif, MatchesNormalEquations) {
  Rng rng = make_rng(17);
  for (int rep = 0; rep < 10; ++rep) {
    auto X = gaussian(60, 4, 500 + static_cast<std::uint64_t>(rep));
    X.values.col(3) += 0.7 * X.values.col(0) - 0.4 * X.values.col(1);
    X.values.col(2) = X.values.col(2) * 3.0 + Vector::Constant(60, uniform(rng, -5, 5));
    const auto r = vif(X);
    for (Eigen::Index j = 0; j < 4; ++j) {
      const double s = score_of(r, X.names[static_cast<std::size_t>(j)]);
      EXPECT_NEAR(s, vif_oracle(X.values, j), 1e-9 * s);
      EXPECT_GE(s, 1.0);
    }
  }
}

TEST(Vif, ColumnPermutationInvariant) {
  auto X = gaussian(50, 4, 18);
  X.values.col(1) += X.values.col(0);
  const auto a = vif(X);
  const auto b = vif(X.select_columns({"f3", "f1", "f0", "f2"}));
  for (const auto& n : X.names) EXPECT_NEAR(score_of(a, n), score_of(b, n), 1e-10 * score_of(a, n));
}

TEST(Vif, ExactCollinearityNamesPair) {
  auto X = gaussian(30, 3, 19);
  X.values.col(2) = (2.0 * X.values.col(0)).array() - 1.0;
  try {
    vif(X);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingularDesign);
    ASSERT_EQ(e.names.size(), 2u);
    std::vector<std::string> pair = e.names;
    std::sort(pair.begin(), pair.end());
    EXPECT_EQ(pair, (std::vector<std::string>{"f0", "f2"}));
  }
}

TEST(Vif, Preconditions) {
  EXPECT_THROW(vif(gaussian(10, 1, 1)), Error);
  EXPECT_THROW(vif(gaussian(3, 3, 1)), Error);
  auto X = gaussian(10, 2, 1);
  X.values.col(1).setConstant(4.0);
  try {
    vif(X);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConstantColumn);
  }
}
