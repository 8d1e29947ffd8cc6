#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "safemon/conformal.hpp"

using namespace safemon;

namespace {

constexpr double inf = std::numeric_limits<double>::infinity();

Output frame(double beta, double ny = 0.0) {
  Output y = Output::Zero();
  y[out::beta] = beta;
  y[out::ny] = ny;
  return y;
}

// k = 0 monitor whose score is 2*beta - 1: Y_u at the origin, Y_s at beta = 1.
CalibratedMonitor linear_score_monitor(std::vector<double> alpha) {
  const auto n = static_cast<Eigen::Index>(alpha.size());
  PointSet yu = PointSet::Zero(6, n);
  PointSet ys = PointSet::Zero(6, 1);
  ys(out::beta, 0) = 1.0;
  return CalibratedMonitor::from_parts({"test", 0.05, 5, 0}, IdentityTransform{}, ScoreKind::nearest_neighbor, yu, ys,
                                       std::move(alpha), {});
}

}  // namespace

TEST(NnScore, HandExamples) {
  Eigen::VectorXd y(1);
  y << 0.0;
  EXPECT_EQ(nn_score(y, make_point_set({0}), make_point_set({1})), -1.0);
  y << 0.5;
  EXPECT_EQ(nn_score(y, make_point_set({0}), make_point_set({1})), 0.0);
  y << 3.0;
  EXPECT_EQ(nn_score(y, make_point_set({0, 2}), make_point_set({10})), -48.0);
  EXPECT_THROW(nn_score(y, PointSet(1, 0), make_point_set({1})), MisuseError);
  EXPECT_THROW(nn_score(y, make_point_set({1}), PointSet(1, 0)), MisuseError);
}

TEST(LooCalibration, HandExamples) {
  EXPECT_EQ(loo_calibration(make_point_set({0, 2}), make_point_set({10})), (std::vector<double>{-96, -60}));
  EXPECT_EQ(loo_calibration(make_point_set({0, 1, 3}), make_point_set({2})), (std::vector<double>{-3, 0, 3}));
  EXPECT_THROW(loo_calibration(make_point_set({0}), make_point_set({2})), DegenerateCalibration);
}

TEST(LooCalibration, MatchesDirectDefinitionInHigherDimension) {
  Rng rng(12);
  std::normal_distribution<double> g;
  PointSet yu(4, 15), ys(4, 40);
  for (auto& e : yu.reshaped()) e = g(rng);
  for (auto& e : ys.reshaped()) e = g(rng) + 1.0;
  std::vector<double> expect;
  for (int i = 0; i < yu.cols(); ++i) {
    double du = inf, ds = inf;
    for (int j = 0; j < yu.cols(); ++j)
      if (j != i) du = std::min(du, (yu.col(i) - yu.col(j)).squaredNorm());
    for (int j = 0; j < ys.cols(); ++j) ds = std::min(ds, (yu.col(i) - ys.col(j)).squaredNorm());
    expect.push_back(du - ds);
  }
  std::sort(expect.begin(), expect.end());
  EXPECT_EQ(loo_calibration(yu, ys), expect);
}

TEST(PlainCalibration, Examples) {
  EXPECT_EQ(plain_calibration({3, 1, 2}), (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(plain_calibration({5}), (std::vector<double>{5}));
  EXPECT_EQ(plain_calibration({1, 1, 2}), (std::vector<double>{1, 1, 2}));
  EXPECT_THROW(plain_calibration({1, std::nan("")}), DataError);
  EXPECT_THROW(plain_calibration({1, inf}), DataError);
}

TEST(Threshold, Examples) {
  EXPECT_EQ(threshold_rank(50, 0.1), 46u);
  std::vector<double> a50(50);
  for (int i = 0; i < 50; ++i) a50[static_cast<std::size_t>(i)] = i;
  EXPECT_EQ(threshold(a50, 0.1), 45.0);  // alpha_(46)
  const std::vector<double> a{-3, 0, 3};
  EXPECT_EQ(threshold(a, 0.5), 0.0);
  EXPECT_EQ(threshold(a, 0.01), inf);
  EXPECT_THROW(threshold(a, 0.0), MisuseError);
  EXPECT_THROW(threshold(a, 1.0), MisuseError);
}

TEST(Threshold, RankAbsorbsRoundingError) {
  // 10 * (1 - 0.7) evaluates to 3.0000000000000004
  EXPECT_EQ(threshold_rank(9, 0.7), 3u);
  for (std::size_t n = 1; n < 60; ++n)
    for (int i = 1; i < 100; ++i) EXPECT_EQ(threshold_rank(n, i / 100.0), oracle::rank(n, i / 100.0)) << n << " " << i;
}

TEST(PValue, Examples) {
  const std::vector<double> a{1, 2, 3};
  EXPECT_EQ(p_value(2.5, a), 0.5);
  EXPECT_EQ(p_value(0, a), 1.0);
  EXPECT_EQ(p_value(10, a), 0.25);
  EXPECT_EQ(p_value(2, a), 0.75);  // tie counts toward alerting
}

TEST(PValue, RangeAndMonotonicity) {
  Rng rng(4);
  std::normal_distribution<double> g;
  std::vector<double> a(50);
  for (auto& x : a) x = g(rng);
  std::sort(a.begin(), a.end());
  double prev = 2.0;
  for (double s = -5; s <= 5; s += 0.01) {
    const double p = p_value(s, a);
    const double scaled = p * 51;
    EXPECT_NEAR(scaled, std::round(scaled), 1e-9);
    EXPECT_GE(p, 1.0 / 51);
    EXPECT_LE(p, 1.0);
    EXPECT_LE(p, prev);
    prev = p;
  }
  EXPECT_EQ(p_value(100, a), 1.0 / 51);
  double prev_t = inf;
  for (int i = 1; i < 100; ++i) {
    const double t = threshold(a, i / 100.0);
    EXPECT_LE(t, prev_t);
    prev_t = t;
  }
}

TEST(PValue, AlertInversionForN50) {
  // p >= 0.1 <=> at least 5 calibration scores at or above s
  std::vector<double> a(50);
  for (int i = 0; i < 50; ++i) a[static_cast<std::size_t>(i)] = i;
  for (double s = -1; s < 51; s += 0.5) {
    const auto at_or_above = std::count_if(a.begin(), a.end(), [&](double x) { return x >= s; });
    EXPECT_EQ(p_value(s, a) >= 0.1, at_or_above >= 5) << s;
  }
}

TEST(Equivalence, BruteForceOffBoundary) {
  const auto r = oracle::brute_force_equivalence(3000, 77);
  EXPECT_EQ(r.discrepancies, 0u);
  EXPECT_GT(r.boundary_skipped, 0u);
}

TEST(Equivalence, BoundaryCasePinned) {
  // (N+1) eps = 2: the p-value rule alerts, the order statistic does not.
  const std::vector<double> a{-3, 0, 3};
  EXPECT_EQ(p_value(1.0, a), 0.5);
  EXPECT_GE(p_value(1.0, a), 0.5);
  EXPECT_GT(1.0, threshold(a, 0.5));
}

TEST(Coverage, MarginalEqualityNoTies) {
  const auto cells = oracle::marginal_coverage(50, 4000, {26, 41, 46, 49}, 5);
  for (const auto& c : cells) EXPECT_TRUE(c.within(4.0)) << c.k << ": " << c.observed << " vs " << c.expected;
}

TEST(Coverage, TwoClusterMissRate) {
  // Fresh calibration and one fresh unsafe draw per repetition; miss = no alert.
  Rng rng(31);
  std::normal_distribution<double> g;
  const int reps = 4000;
  const std::vector<double> eps{0.05, 0.1, 0.2};
  std::vector<int> miss(eps.size(), 0);
  auto draw = [&](PointSet& p, double shift) {
    for (auto& e : p.reshaped()) e = g(rng);
    p.row(0).array() += shift;
  };
  for (int r = 0; r < reps; ++r) {
    PointSet yu(2, 50), ys(2, 200);
    draw(yu, 1.5);
    draw(ys, -1.5);
    const auto alpha = loo_calibration(yu, ys);
    PointSet t(2, 1);
    draw(t, 1.5);
    const double p = p_value(nn_score(t.col(0), yu, ys), alpha);
    for (std::size_t i = 0; i < eps.size(); ++i) miss[i] += p < eps[i] ? 1 : 0;
  }
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const double rate = static_cast<double>(miss[i]) / reps;
    EXPECT_LE(rate, eps[i] + 4 * std::sqrt(eps[i] * (1 - eps[i]) / reps)) << eps[i];
  }
}

TEST(MonitorStep, ComposedExamples) {
  const auto m = linear_score_monitor({-3, 0, 3});
  auto at = [&](double beta, double e) {
    const std::vector<Output> recent{frame(beta)};
    return *monitor_step(m, recent, e);
  };
  // score = 2 beta - 1
  EXPECT_EQ(at(1.0, 0.3).score, 1.0);
  EXPECT_EQ(at(1.0, 0.3).p_value, 0.5);
  EXPECT_TRUE(at(1.0, 0.3).alert);
  EXPECT_FALSE(at(1.0, 0.6).alert);
  EXPECT_EQ(at(-4.5, 0.5).score, -10.0);
  for (double e : {0.01, 0.3, 0.99}) EXPECT_TRUE(at(-4.5, e).alert);
  EXPECT_EQ(at(5.5, 0.2).score, 10.0);
  EXPECT_EQ(at(5.5, 0.2).p_value, 0.25);
  EXPECT_TRUE(at(5.5, 0.2).alert);
  EXPECT_TRUE(at(5.5, 0.25).alert);
  EXPECT_FALSE(at(5.5, 0.3).alert);
}

TEST(MonitorStep, UnderfullBufferGivesNoVerdict) {
  auto m = CalibratedMonitor::negative_ny({"current_ny", 0.05, 5, 2}, CurrentOutputTransform{}, {-0.4, -0.3, -0.2});
  const std::vector<Output> two{frame(0), frame(0)};
  EXPECT_FALSE(monitor_step(m, two, 0.1));
  const std::vector<Output> four{frame(0, 9), frame(0), frame(0), frame(0, 0.35)};
  const auto v = monitor_step(m, four, 0.1);
  ASSERT_TRUE(v);
  EXPECT_EQ(v->score, -0.35);  // newest frame only
  EXPECT_EQ(v->p_value, 0.75);
}

TEST(Monitor, NyScoreAndLinearPrediction) {
  Rng rng(2);
  std::normal_distribution<double> g;
  std::vector<Eigen::VectorXd> xs;
  std::vector<Output> ys;
  for (int i = 0; i < 40; ++i) {
    Eigen::VectorXd x(18);
    for (auto& e : x) e = g(rng);
    xs.push_back(x);
    Output y;
    for (auto& e : y) e = g(rng);
    ys.push_back(y);
  }
  const auto pred = fit_least_squares(xs, ys);
  const auto m = CalibratedMonitor::negative_ny({"pred_ny", 0.05, 5, 2}, LinearTransform{pred}, {-1, -0.5, -0.1});
  const auto v = m.verdict(xs[0], 0.2);
  ASSERT_TRUE(v.predicted_future_output);
  EXPECT_EQ(*v.predicted_future_output, pred.predict(xs[0]));
  EXPECT_EQ(v.score, -std::abs(pred.predict(xs[0])[out::ny]));
  EXPECT_EQ(v.alert, v.p_value >= 0.2);
}

TEST(Monitor, RejectsInconsistentParts) {
  PointSet yu = PointSet::Zero(6, 3), ys = PointSet::Zero(6, 2);
  EXPECT_THROW(CalibratedMonitor::from_parts({"x", 0.05, 5, 0}, IdentityTransform{}, ScoreKind::nearest_neighbor, yu, ys,
                                             {2, 1, 3}, {}),
               DataError);
  EXPECT_THROW(CalibratedMonitor::from_parts({"x", 0.05, 5, 0}, IdentityTransform{}, ScoreKind::nearest_neighbor, yu, ys,
                                             {1, 2}, {}),
               DataError);
  EXPECT_THROW(CalibratedMonitor::from_parts({"x", 0.05, 5, 0}, IdentityTransform{}, ScoreKind::negative_abs_ny, {}, {},
                                             {1, 2}, {}),
               DataError);
}

TEST(Artifact, RoundTripPreservesVerdicts) {
  Rng rng(8);
  std::normal_distribution<double> g;
  PointSet yu(18, 20), ys(18, 60);
  for (auto& e : yu.reshaped()) e = g(rng);
  for (auto& e : ys.reshaped()) e = g(rng) + 0.5;
  const auto m = CalibratedMonitor::nearest_neighbor({"no_pred", 0.05, 5, 2}, IdentityTransform{}, yu, ys);
  const auto text = io::dump(to_json(m));
  const auto back = monitor_from_json(io::parse(text, "artifact"));
  EXPECT_EQ(io::dump(to_json(back)), text);
  for (int i = 0; i < 50; ++i) {
    Eigen::VectorXd o(18);
    for (auto& e : o) e = g(rng);
    const auto a = m.verdict(o, 0.1), b = back.verdict(o, 0.1);
    EXPECT_EQ(a.score, b.score);
    EXPECT_EQ(a.p_value, b.p_value);
    EXPECT_EQ(a.alert, b.alert);
  }
}

TEST(Artifact, LoadFailsLoudly) {
  Rng rng(9);
  std::normal_distribution<double> g;
  PointSet yu(18, 10), ys(18, 30);
  for (auto& e : yu.reshaped()) e = g(rng);
  for (auto& e : ys.reshaped()) e = g(rng);
  const auto j = to_json(CalibratedMonitor::nearest_neighbor({"no_pred", 0.05, 5, 2}, IdentityTransform{}, yu, ys));
  auto alpha = j;
  alpha["alpha_sorted"][0] = alpha["alpha_sorted"][0].get<double>() - 1.0;
  EXPECT_THROW(monitor_from_json(alpha), DataError);
  auto probe = j;
  probe["probe"]["p_value"] = 0.123;
  EXPECT_THROW(monitor_from_json(probe), DataError);
  auto dims = j;
  dims["Y_s"][0].erase(0);
  EXPECT_THROW(monitor_from_json(dims), DataError);
  auto tag = j;
  tag["format"] = "other";
  EXPECT_THROW(monitor_from_json(tag), DataError);
  EXPECT_THROW(load_monitor("/nonexistent/monitor.json"), DataError);
}
