#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "safemon/plant.hpp"
#include "safemon/seeding.hpp"
#include "oracles.hpp"

using namespace safemon;

TEST(Plant, OutputMapInvariants) {
  const auto p = PlantConfig::default_nominal();
  const double vg = p.airspeed / p.gravity;
  EXPECT_TRUE((p.C.topRows<3>().isIdentity()));
  EXPECT_TRUE(p.C.bottomRows<2>().isZero());
  EXPECT_EQ(p.D(out::aileron, 0), 1.0);
  EXPECT_EQ(p.D(out::rudder, 1), 1.0);
  EXPECT_EQ(p.D(out::aileron, 1), 0.0);
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(p.C(out::ny, j), vg * (p.A(0, j) + (j == 2 ? 1.0 : 0.0)), 1e-14 * vg);
  for (int j = 0; j < 2; ++j) EXPECT_NEAR(p.D(out::ny, j), vg * p.B(0, j), 1e-14 * vg);
}

TEST(Plant, DefaultClosedLoopIsHurwitz) {
  PlantConfig cfg;
  EXPECT_TRUE(is_hurwitz(closed_loop(cfg.nominal, cfg.gains)));
  EXPECT_NO_THROW(cfg.validate());
}

TEST(Plant, UnstableNominalRejected) {
  PlantConfig cfg;
  cfg.nominal = AircraftParams::from_dynamics(Eigen::Matrix3d::Identity(), cfg.nominal.B, 100.0, 9.81);
  cfg.gains = {};
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(SampleParams, ZeroPerturbationIsNominal) {
  const auto nominal = PlantConfig::default_nominal();
  for (std::uint64_t seed : {0ULL, 1ULL, 12345ULL}) EXPECT_EQ(sample_params(nominal, 0.0, seed), nominal);
}

TEST(SampleParams, Deterministic) {
  const auto nominal = PlantConfig::default_nominal();
  EXPECT_EQ(sample_params(nominal, 0.3, 99), sample_params(nominal, 0.3, 99));
  EXPECT_NE(sample_params(nominal, 0.3, 99).A, sample_params(nominal, 0.3, 100).A);
}

TEST(SampleParams, FactorsWithinRangeAndOutputMapRebuilt) {
  const auto nominal = PlantConfig::default_nominal();
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto p = sample_params(nominal, 0.3, seed);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        if (nominal.A(i, j) == 0.0) continue;
        const double f = p.A(i, j) / nominal.A(i, j);
        EXPECT_GE(f, 0.7 - 1e-12);
        EXPECT_LE(f, 1.3 + 1e-12);
      }
    auto rebuilt = p;
    rebuilt.refresh_output_map();
    EXPECT_EQ(rebuilt.C, p.C);
    EXPECT_EQ(rebuilt.D, p.D);
  }
}

TEST(SampleParams, MonteCarloMeanMatchesNominal) {
  const auto nominal = PlantConfig::default_nominal();
  Eigen::Matrix3d sa = Eigen::Matrix3d::Zero();
  Eigen::Matrix<double, 3, 2> sb = Eigen::Matrix<double, 3, 2>::Zero();
  const int n = 10000;
  for (int s = 0; s < n; ++s) {
    const auto p = sample_params(nominal, 0.3, derive_seed(7, {static_cast<std::uint64_t>(s)}));
    sa += p.A;
    sb += p.B;
  }
  sa /= n;
  sb /= n;
  // factor sd = 0.3/sqrt(3) ~ 0.173; standard error ~ 0.0017, so 1% is ~6 sigma.
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j)
      if (nominal.A(i, j) != 0.0) {
        EXPECT_NEAR(sa(i, j) / nominal.A(i, j), 1.0, 0.01);
      }
    for (int j = 0; j < 2; ++j)
      if (nominal.B(i, j) != 0.0) {
        EXPECT_NEAR(sb(i, j) / nominal.B(i, j), 1.0, 0.01);
      }
  }
}

TEST(SampleParams, RejectsBadInput) {
  auto nominal = PlantConfig::default_nominal();
  EXPECT_THROW(sample_params(nominal, 1.0, 0), MisuseError);
  EXPECT_THROW(sample_params(nominal, -0.1, 0), MisuseError);
  nominal.A(0, 0) = std::nan("");
  EXPECT_THROW(sample_params(nominal, 0.3, 0), ConfigError);
}

TEST(Doublet, Schedule) {
  const DoubletScript s;
  EXPECT_EQ(doublet_command(s.start + 0.1, s), (PilotCommand{0.0, 1.0}));
  EXPECT_EQ(doublet_command(s.start + 1.5, s), (PilotCommand{0.0, -1.0}));
  EXPECT_EQ(doublet_command(s.start + 2.5, s), (PilotCommand{}));
  EXPECT_EQ(doublet_command(0.0, s), (PilotCommand{}));
  EXPECT_EQ(doublet_command(s.start, s), (PilotCommand{0.0, 1.0}));
  EXPECT_EQ(doublet_command(s.start + 1.0, s), (PilotCommand{0.0, -1.0}));
  EXPECT_EQ(doublet_command(s.start + 2.0, s), (PilotCommand{}));
  // sample times k*dt carry rounding; step 30 is t = 1.5 s
  EXPECT_EQ(doublet_command(30 * 0.05, s), (PilotCommand{0.0, -1.0}));
}

TEST(Step, NullDynamicsHoldsState) {
  const auto p = AircraftParams::from_dynamics(Eigen::Matrix3d::Zero(), Eigen::Matrix<double, 3, 2>::Zero(), 100, 9.81);
  const State x(0.3, -1.2, 4.0);
  EXPECT_EQ(step(p, {}, x, {0.7, -0.2}, 0.05).x, x);
}

TEST(Step, ScalarDecay) {
  Eigen::Matrix3d a = -Eigen::Matrix3d::Identity();
  const auto p = AircraftParams::from_dynamics(a, Eigen::Matrix<double, 3, 2>::Zero(), 100, 9.81);
  const auto r = step(p, {}, State(1.0, 0.0, 0.0), {}, 0.05);
  EXPECT_NEAR(r.x[0], 0.951229, 1e-6);
  EXPECT_NEAR(r.x[0], std::exp(-0.05), 1e-12);
}

TEST(Step, Homogeneity) {
  PlantConfig cfg;
  const State x0(0.01, -0.2, 0.05);
  const auto a = step(cfg.nominal, cfg.gains, x0, {}, cfg.dt).x;
  const auto b = step(cfg.nominal, cfg.gains, State(2.0 * x0), {}, cfg.dt).x;
  EXPECT_LT((b - 2.0 * a).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Step, Superposition) {
  PlantConfig cfg;
  Rng rng(3);
  std::normal_distribution<double> n;
  for (int i = 0; i < 50; ++i) {
    const auto p = sample_params(cfg.nominal, 0.3, rng());
    const State x1(n(rng), n(rng), n(rng)), x2(n(rng), n(rng), n(rng));
    const auto s1 = step(p, cfg.gains, x1, {}, cfg.dt);
    const auto s2 = step(p, cfg.gains, x2, {}, cfg.dt);
    const auto s12 = step(p, cfg.gains, State(x1 + x2), {}, cfg.dt);
    EXPECT_LT((s12.x - s1.x - s2.x).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((s12.y - s1.y - s2.y).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Step, MatchesMatrixExponential) {
  Rng rng(20);
  std::normal_distribution<double> n;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Matrix3d a = oracle::random_stable(rng);
    Eigen::Matrix<double, 3, 2> b;
    b << n(rng), n(rng), n(rng), n(rng), n(rng), n(rng);
    const auto p = AircraftParams::from_dynamics(a, b, 100, 9.81);
    const State x(n(rng), n(rng), n(rng));
    const PilotCommand cmd{n(rng), n(rng)};
    const auto rk = step(p, {}, x, cmd, 0.05).x;
    const auto ex = oracle::exact_step(a, b * cmd.vec(), x, 0.05);
    worst = std::max(worst, (rk - ex).cwiseAbs().maxCoeff());
  }
  EXPECT_LT(worst, 1e-8);
}

TEST(Step, NyIdentityAndControlEcho) {
  PlantConfig cfg;
  const auto p = sample_params(cfg.nominal, 0.3, 5);
  State x = State::Zero();
  for (std::size_t k = 0; k < cfg.steps(); ++k) {
    const auto cmd = doublet_command(static_cast<double>(k) * cfg.dt, cfg.doublet);
    const auto r = step(p, cfg.gains, x, cmd, cfg.dt, cfg.substeps);
    x = r.x;
    const Control u = cmd.vec() - cfg.gains.K * x;
    const State xdot = p.A * x + p.B * u;
    EXPECT_NEAR(r.y[out::ny], p.airspeed / p.gravity * (xdot[0] + x[2]), 1e-9);
    EXPECT_EQ(r.y[out::aileron], u[0]);
    EXPECT_EQ(r.y[out::rudder], u[1]);
    EXPECT_EQ(r.y.head<3>(), x);
  }
}

TEST(Step, DivergenceCarriesStepIndex) {
  const auto p = AircraftParams::from_dynamics(1e3 * Eigen::Matrix3d::Identity(), Eigen::Matrix<double, 3, 2>::Zero(), 100, 9.81);
  State x(1, 1, 1);
  try {
    for (std::size_t k = 1; k < 100; ++k) x = step(p, {}, x, {}, 0.05, 40, k).x;
    FAIL() << "expected divergence";
  } catch (const SimulationDiverged& e) {
    EXPECT_GT(e.step, 0u);
  }
}

TEST(Rollout, CountsAndDeterminism) {
  PlantConfig cfg;
  const auto p = sample_params(cfg.nominal, 0.3, 11);
  const auto a = simulate_rollout(p, cfg);
  const auto b = simulate_rollout(p, cfg);
  ASSERT_EQ(a.outputs.size(), 101u);
  for (std::size_t i = 0; i < a.outputs.size(); ++i) EXPECT_EQ(a.outputs[i], b.outputs[i]);
  EXPECT_EQ(a.failure_index, b.failure_index);
}

TEST(Rollout, ZeroScriptStaysAtEquilibrium) {
  PlantConfig cfg;
  cfg.doublet.amplitude = 0.0;
  const auto t = simulate_rollout(cfg.nominal, cfg);
  for (const auto& y : t.outputs) EXPECT_TRUE(y.isZero(0.0));
  EXPECT_FALSE(t.failure_index);
}

TEST(Rollout, RunsFullHorizonPastFailure) {
  PlantConfig cfg;
  cfg.ny_limit = 0.05;
  const auto t = simulate_rollout(cfg.nominal, cfg);
  ASSERT_TRUE(t.failure_index);
  EXPECT_EQ(t.outputs.size(), 101u);
}

TEST(FailureTime, Examples) {
  auto seq = [](std::initializer_list<double> ny) {
    std::vector<Output> v;
    for (double x : ny) {
      Output y = Output::Zero();
      y[out::ny] = x;
      v.push_back(y);
    }
    return v;
  };
  EXPECT_EQ(failure_time(seq({0.1, 0.3, 0.6}), 0.5), 2u);
  EXPECT_EQ(failure_time(seq({0.1, -0.3, 0.49}), 0.5), std::nullopt);
  EXPECT_EQ(failure_time(seq({0.1, 0.2, 0.3, 0.4, 0.5, 0.7}), 0.5), 4u);
  EXPECT_EQ(failure_time(seq({0.0, -0.55}), 0.5), 1u);
  EXPECT_EQ(failure_time(seq({0.0}), 0.0), 0u);
  EXPECT_EQ(failure_time(seq({1e9}), std::numeric_limits<double>::infinity()), std::nullopt);
}
