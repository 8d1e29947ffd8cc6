#pragma once

// Closed-loop lateral-directional aircraft model:
//   xdot = A x + B u,  u = cmd - K x,  y = C x + D u
// with x = (beta, p, r), u = (aileron, rudder), y = (beta, p, r, Ny, aileron, rudder).

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "safemon/errors.hpp"
#include "safemon/seeding.hpp"

namespace safemon {

using State = Eigen::Vector3d;
using Control = Eigen::Vector2d;
using Output = Eigen::Matrix<double, 6, 1>;

inline constexpr std::size_t state_dim = 3;
inline constexpr std::size_t output_dim = 6;

/// Component indices of an Output.
namespace out {
inline constexpr int beta = 0;
inline constexpr int roll_rate = 1;
inline constexpr int yaw_rate = 2;
inline constexpr int ny = 3;
inline constexpr int aileron = 4;
inline constexpr int rudder = 5;
}  // namespace out

struct AircraftParams {
  Eigen::Matrix3d A = Eigen::Matrix3d::Zero();
  Eigen::Matrix<double, 3, 2> B = Eigen::Matrix<double, 3, 2>::Zero();
  Eigen::Matrix<double, 6, 3> C = Eigen::Matrix<double, 6, 3>::Zero();
  Eigen::Matrix<double, 6, 2> D = Eigen::Matrix<double, 6, 2>::Zero();
  double airspeed = 100.0;  // m/s
  double gravity = 9.81;    // m/s^2

  /// Builds C and D from the dynamics: the first three outputs echo the state,
  /// the last two echo the applied controls, and Ny = (V/g)(beta_dot + r).
  static AircraftParams from_dynamics(const Eigen::Matrix3d& a, const Eigen::Matrix<double, 3, 2>& b,
                                      double airspeed, double gravity) {
    AircraftParams p;
    p.A = a;
    p.B = b;
    p.airspeed = airspeed;
    p.gravity = gravity;
    p.refresh_output_map();
    return p;
  }

  void refresh_output_map() {
    const double vg = airspeed / gravity;
    C.setZero();
    D.setZero();
    C.topRows<3>().setIdentity();
    C.row(out::ny) = vg * A.row(0);
    C(out::ny, out::yaw_rate) += vg;
    D.row(out::ny) = vg * B.row(0);
    D(out::aileron, 0) = 1.0;
    D(out::rudder, 1) = 1.0;
  }

  [[nodiscard]] bool all_finite() const {
    return A.allFinite() && B.allFinite() && C.allFinite() && D.allFinite() && std::isfinite(airspeed) &&
           std::isfinite(gravity);
  }

  bool operator==(const AircraftParams&) const = default;
};

struct ControllerGains {
  Eigen::Matrix<double, 2, 3> K = Eigen::Matrix<double, 2, 3>::Zero();
  bool operator==(const ControllerGains&) const = default;
};

struct PilotCommand {
  double aileron = 0.0;  // rad
  double rudder = 0.0;   // rad

  [[nodiscard]] Control vec() const { return {aileron, rudder}; }
  [[nodiscard]] bool finite() const { return std::isfinite(aileron) && std::isfinite(rudder); }
  [[nodiscard]] PilotCommand clamped(double saturation) const {
    return {std::clamp(aileron, -saturation, saturation), std::clamp(rudder, -saturation, saturation)};
  }
  bool operator==(const PilotCommand&) const = default;
};

/// Rudder doublet: +amplitude for one half period after start, then -amplitude.
struct DoubletScript {
  double start = 0.5;        // s
  double half_period = 1.0;  // s
  double amplitude = 1.0;    // rad

  [[nodiscard]] double duration() const { return start + 2.0 * half_period; }
  bool operator==(const DoubletScript&) const = default;
};

/// Time comparisons tolerate the rounding in k*dt sample times.
inline constexpr double time_slack = 1e-9;

inline PilotCommand doublet_command(double t, const DoubletScript& script) {
  const double tau = t - script.start + time_slack;
  if (tau >= 0.0 && tau < script.half_period) return {0.0, script.amplitude};
  if (tau >= script.half_period && tau < 2.0 * script.half_period) return {0.0, -script.amplitude};
  return {};
}

struct PlantConfig {
  AircraftParams nominal = default_nominal();
  ControllerGains gains = default_gains();
  double perturbation = 0.3;
  double ny_limit = 0.5;  // g
  double dt = 0.05;       // s
  double horizon = 5.0;   // s
  int substeps = 40;
  double saturation = 1.5;  // rad
  DoubletScript doublet{};

  /// Number of integration steps; the trajectory holds steps() + 1 outputs.
  [[nodiscard]] std::size_t steps() const { return static_cast<std::size_t>(std::llround(horizon / dt)); }

  static AircraftParams default_nominal() {
    Eigen::Matrix3d a;
    a << -0.25, 0.06, -0.99,  //
        -16.0, -8.5, 2.2,     //
        4.5, -0.35, -0.76;
    Eigen::Matrix<double, 3, 2> b;
    b << 0.0006, 0.0036,  //
        1.62, 0.12,       //
        0.018, -0.27;
    return AircraftParams::from_dynamics(a, b, 100.0, 9.81);
  }

  static ControllerGains default_gains() {
    ControllerGains g;
    g.K(1, 2) = -0.5;  // rudder += 0.5 * yaw rate
    return g;
  }

  /// Throws ConfigError on invalid settings, including a non-Hurwitz nominal loop.
  void validate() const;

  bool operator==(const PlantConfig&) const = default;
};

inline Eigen::Matrix3d closed_loop(const AircraftParams& params, const ControllerGains& gains) {
  return params.A - params.B * gains.K;
}

inline bool is_hurwitz(const Eigen::Matrix3d& m) {
  Eigen::EigenSolver<Eigen::Matrix3d> es(m, false);
  for (int i = 0; i < 3; ++i) {
    if (!(es.eigenvalues()[i].real() < 0.0)) return false;
  }
  return true;
}

inline void PlantConfig::validate() const {
  if (!nominal.all_finite()) throw ConfigError("nominal aircraft parameters must be finite");
  if (!gains.K.allFinite()) throw ConfigError("controller gains must be finite");
  if (!(perturbation >= 0.0 && perturbation < 1.0)) throw ConfigError("perturbation must lie in [0, 1)");
  if (!(ny_limit >= 0.0)) throw ConfigError("ny_limit must be >= 0");
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("dt must be positive");
  if (!(horizon >= doublet.duration())) throw ConfigError("horizon must cover the doublet");
  if (substeps < 1) throw ConfigError("substeps must be >= 1");
  if (!(saturation > 0.0)) throw ConfigError("saturation must be positive");
  if (std::abs(doublet.amplitude) > saturation) throw ConfigError("doublet amplitude exceeds saturation");
  if (!is_hurwitz(closed_loop(nominal, gains))) throw ConfigError("nominal closed loop A - B K is not Hurwitz");
}

/// Multiplies every entry of A and B by an independent factor uniform in
/// [1 - fraction, 1 + fraction]; C and D are rebuilt from the perturbed dynamics.
inline AircraftParams sample_params(const AircraftParams& nominal, double perturbation_fraction, std::uint64_t seed) {
  if (!nominal.all_finite()) throw ConfigError("nominal aircraft parameters must be finite");
  if (!(perturbation_fraction >= 0.0 && perturbation_fraction < 1.0))
    throw MisuseError("perturbation fraction must lie in [0, 1)");
  Rng rng(seed);
  auto factor = [&] {
    const double u = std::generate_canonical<double, 53>(rng);
    return 1.0 + perturbation_fraction * (2.0 * u - 1.0);
  };
  AircraftParams p = nominal;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) p.A(i, j) *= factor();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) p.B(i, j) *= factor();
  if (perturbation_fraction > 0.0) p.refresh_output_map();
  return p;
}

struct StepResult {
  State x;
  Output y;
};

/// Advances one sample period with the command held, using `substeps` RK4
/// substeps. The output is taken at the end of the period.
inline StepResult step(const AircraftParams& params, const ControllerGains& gains, const State& x,
                       const PilotCommand& cmd, double dt, int substeps = 40, std::size_t step_index = 0) {
  if (!(dt > 0.0)) throw MisuseError("dt must be positive");
  if (substeps < 1) throw MisuseError("substeps must be >= 1");
  const Eigen::Matrix3d acl = closed_loop(params, gains);
  const State forcing = params.B * cmd.vec();
  auto f = [&](const State& s) -> State { return acl * s + forcing; };

  const double h = dt / substeps;
  State s = x;
  for (int i = 0; i < substeps; ++i) {
    const State k1 = f(s);
    const State k2 = f(s + 0.5 * h * k1);
    const State k3 = f(s + 0.5 * h * k2);
    const State k4 = f(s + h * k3);
    s += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  if (!s.allFinite()) throw SimulationDiverged(step_index);

  const Control u = cmd.vec() - gains.K * s;
  Output y = params.C * s + params.D * u;
  return {s, y};
}

/// Output at state x under command cmd with feedback applied.
inline Output output_at(const AircraftParams& params, const ControllerGains& gains, const State& x,
                        const PilotCommand& cmd) {
  const Control u = cmd.vec() - gains.K * x;
  return params.C * x + params.D * u;
}

struct Trajectory {
  double dt = 0.05;
  std::vector<Output> outputs;
  std::optional<std::size_t> failure_index;

  [[nodiscard]] std::size_t last_index() const { return outputs.empty() ? 0 : outputs.size() - 1; }
  [[nodiscard]] bool unsafe() const { return failure_index.has_value(); }
};

/// First index with |Ny| >= limit.
inline std::optional<std::size_t> failure_time(const std::vector<Output>& outputs, double limit) {
  if (!(limit >= 0.0)) throw MisuseError("safety limit must be >= 0");
  for (std::size_t t = 0; t < outputs.size(); ++t) {
    if (std::abs(outputs[t][out::ny]) >= limit) return t;
  }
  return std::nullopt;
}

inline std::optional<std::size_t> failure_time(const Trajectory& traj, double limit) {
  return failure_time(traj.outputs, limit);
}

/// Runs the whole horizon from x = 0 even after a violation; consumers decide
/// where to truncate.
inline Trajectory simulate_rollout(const AircraftParams& params, const ControllerGains& gains,
                                   const DoubletScript& script, double horizon, double dt, int substeps,
                                   double limit) {
  if (!(dt > 0.0)) throw MisuseError("dt must be positive");
  if (!(horizon >= script.duration())) throw MisuseError("horizon shorter than the maneuver");
  const auto n = static_cast<std::size_t>(std::llround(horizon / dt));
  Trajectory traj;
  traj.dt = dt;
  traj.outputs.reserve(n + 1);

  State x = State::Zero();
  traj.outputs.push_back(output_at(params, gains, x, doublet_command(0.0, script)));
  for (std::size_t k = 0; k < n; ++k) {
    const auto cmd = doublet_command(static_cast<double>(k) * dt, script);
    auto r = step(params, gains, x, cmd, dt, substeps, k + 1);
    x = r.x;
    traj.outputs.push_back(r.y);
  }
  traj.failure_index = failure_time(traj, limit);
  return traj;
}

inline Trajectory simulate_rollout(const AircraftParams& params, const PlantConfig& cfg) {
  return simulate_rollout(params, cfg.gains, cfg.doublet, cfg.horizon, cfg.dt, cfg.substeps, cfg.ny_limit);
}

}  // namespace safemon
