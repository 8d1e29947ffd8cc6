#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "safemon/errors.hpp"
#include "safemon/json_io.hpp"
#include "safemon/plant.hpp"
#include "safemon/seeding.hpp"

namespace safemon {

struct DatasetConfig {
  int buffer_k = 2;        // observation holds k + 1 outputs
  int t_early_steps = 5;   // 0.25 s at dt = 0.05
  int safe_per_trajectory = 50;
  int attempt_cap_factor = 100;  // rollouts allowed per requested unsafe trajectory

  [[nodiscard]] std::size_t observation_dim() const { return static_cast<std::size_t>(buffer_k + 1) * output_dim; }

  void validate() const {
    if (buffer_k < 0) throw ConfigError("buffer_k must be >= 0");
    if (t_early_steps < 0) throw ConfigError("t_early_steps must be >= 0");
    if (safe_per_trajectory < 1) throw ConfigError("safe_per_trajectory must be >= 1");
    if (attempt_cap_factor < 1) throw ConfigError("attempt_cap_factor must be >= 1");
  }
  bool operator==(const DatasetConfig&) const = default;
};

struct ObservationOrigin {
  std::size_t trajectory = 0;
  std::size_t step = 0;
  bool operator==(const ObservationOrigin&) const = default;
};

/// Stacked buffer (y_{t-k}, ..., y_t), oldest first.
struct Observation {
  Eigen::VectorXd values;
  ObservationOrigin origin;
};

struct RegressionPair {
  Observation observation;
  Output target;  // y_{t + t_early_steps}
};

/// Stacks the last k + 1 outputs of `window` (oldest first).
inline Eigen::VectorXd stack_outputs(std::span<const Output> window) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(window.size() * output_dim));
  for (std::size_t i = 0; i < window.size(); ++i)
    v.segment<6>(static_cast<Eigen::Index>(i * output_dim)) = window[i];
  return v;
}

inline Observation make_observation(std::span<const Output> outputs, std::size_t t, int k,
                                    std::size_t trajectory_id = 0) {
  if (k < 0) throw MisuseError("buffer length must be >= 0");
  const auto kk = static_cast<std::size_t>(k);
  if (t < kk)
    throw InsufficientHistory("observation at step " + std::to_string(t) + " needs " + std::to_string(k) +
                              " previous outputs");
  if (t >= outputs.size()) throw MisuseError("observation step past trajectory end");
  return {stack_outputs(outputs.subspan(t - kk, kk + 1)), {trajectory_id, t}};
}

inline Observation make_observation(const Trajectory& traj, std::size_t t, int k, std::size_t trajectory_id = 0) {
  return make_observation(std::span<const Output>(traj.outputs), t, k, trajectory_id);
}

/// Observation t_early_steps before the failure.
inline Observation extract_error_observation(const Trajectory& traj, std::size_t t_fail, int t_early_steps, int k,
                                             std::size_t trajectory_id = 0) {
  const auto lead = static_cast<std::ptrdiff_t>(t_fail) - t_early_steps;
  if (lead < k)
    throw TooEarlyFailure("failure at step " + std::to_string(t_fail) + " leaves no full buffer " +
                          std::to_string(t_early_steps) + " steps earlier");
  return make_observation(traj, static_cast<std::size_t>(lead), k, trajectory_id);
}

/// Uniform sample without replacement of t in [k, T - t_early_steps], returned
/// in ascending t; all valid indices when fewer than `count` exist.
inline std::vector<RegressionPair> subsample_safe(const Trajectory& traj, int count, int t_early_steps, int k,
                                                  std::uint64_t seed, std::size_t trajectory_id = 0) {
  if (traj.failure_index) throw MisuseError("subsample_safe called on an unsafe trajectory");
  if (count < 1) throw MisuseError("count must be >= 1");
  const auto last = static_cast<std::ptrdiff_t>(traj.last_index()) - t_early_steps;
  std::vector<std::size_t> valid;
  for (std::ptrdiff_t t = k; t <= last; ++t) valid.push_back(static_cast<std::size_t>(t));

  if (valid.size() > static_cast<std::size_t>(count)) {
    Rng rng(seed);
    const auto n = static_cast<std::size_t>(count);
    for (std::size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, valid.size() - 1);
      std::swap(valid[i], valid[pick(rng)]);
    }
    valid.resize(n);
    std::sort(valid.begin(), valid.end());
  }

  std::vector<RegressionPair> pairs;
  pairs.reserve(valid.size());
  for (auto t : valid) {
    pairs.push_back({make_observation(traj, t, k, trajectory_id), traj.outputs[t + static_cast<std::size_t>(t_early_steps)]});
  }
  return pairs;
}

struct TrajectoryRecord {
  std::size_t id = 0;  // rollout index within the collection stream
  std::uint64_t seed = 0;
  std::optional<std::size_t> failure_index;
  bool used = true;  // false for unsafe rollouts discarded as too-early failures
  Eigen::Matrix3d A;
  Eigen::Matrix<double, 3, 2> B;
};

struct DatasetBundle {
  static constexpr int format_version = 1;

  double dt = 0.05;
  int t_early_steps = 5;
  int buffer_k = 2;
  std::uint64_t master_seed = 0;
  std::size_t rollouts = 0;
  std::size_t too_early_discarded = 0;
  double airspeed = 100.0;
  double gravity = 9.81;

  std::vector<TrajectoryRecord> trajectories;
  std::vector<Observation> error_observations;  // O_u
  std::vector<RegressionPair> safe;             // O_s with regression targets

  [[nodiscard]] std::size_t unsafe_count() const { return error_observations.size(); }
  [[nodiscard]] std::size_t safe_trajectory_count() const {
    return static_cast<std::size_t>(std::count_if(trajectories.begin(), trajectories.end(),
                                                  [](const auto& t) { return !t.failure_index; }));
  }
  [[nodiscard]] std::size_t observation_dim() const { return static_cast<std::size_t>(buffer_k + 1) * output_dim; }

  [[nodiscard]] std::vector<Observation> safe_observations() const {
    std::vector<Observation> v;
    v.reserve(safe.size());
    for (const auto& p : safe) v.push_back(p.observation);
    return v;
  }

  [[nodiscard]] AircraftParams params_of(const TrajectoryRecord& rec) const {
    return AircraftParams::from_dynamics(rec.A, rec.B, airspeed, gravity);
  }

  void validate() const;
};

/// Seed used for rollout `index` of the collection stream under `master_seed`.
inline std::uint64_t collection_seed(std::uint64_t master_seed, std::size_t index) {
  return derive_seed(master_seed, {stream::collect, index});
}

/// Rolls out sampled aircraft until n_unsafe usable failures have been seen.
inline DatasetBundle collect_dataset(const PlantConfig& plant, const DatasetConfig& cfg, std::size_t n_unsafe,
                                     std::uint64_t master_seed) {
  if (n_unsafe < 2) throw MisuseError("need at least 2 unsafe trajectories");
  plant.validate();
  cfg.validate();

  DatasetBundle b;
  b.dt = plant.dt;
  b.t_early_steps = cfg.t_early_steps;
  b.buffer_k = cfg.buffer_k;
  b.master_seed = master_seed;
  b.airspeed = plant.nominal.airspeed;
  b.gravity = plant.nominal.gravity;

  const std::size_t cap = static_cast<std::size_t>(cfg.attempt_cap_factor) * n_unsafe;
  std::size_t i = 0;
  for (; b.error_observations.size() < n_unsafe; ++i) {
    if (i >= cap)
      throw ScenarioInfeasible("collected " + std::to_string(b.error_observations.size()) + " of " +
                               std::to_string(n_unsafe) + " unsafe trajectories in " + std::to_string(cap) +
                               " rollouts; check perturbation and ny_limit");
    const auto seed = collection_seed(master_seed, i);
    const auto params = sample_params(plant.nominal, plant.perturbation, seed);
    const auto traj = simulate_rollout(params, plant);

    TrajectoryRecord rec{i, seed, traj.failure_index, true, params.A, params.B};
    if (traj.failure_index) {
      try {
        b.error_observations.push_back(
            extract_error_observation(traj, *traj.failure_index, cfg.t_early_steps, cfg.buffer_k, i));
      } catch (const TooEarlyFailure&) {
        rec.used = false;
        ++b.too_early_discarded;
      }
    } else {
      auto pairs = subsample_safe(traj, cfg.safe_per_trajectory, cfg.t_early_steps, cfg.buffer_k,
                                  derive_seed(master_seed, {stream::subsample, i}), i);
      for (auto& p : pairs) b.safe.push_back(std::move(p));
    }
    b.trajectories.push_back(std::move(rec));
  }
  b.rollouts = i;
  if (b.safe.empty()) throw ScenarioInfeasible("no safe trajectories were collected");
  return b;
}

inline void DatasetBundle::validate() const {
  const auto dim = static_cast<Eigen::Index>(observation_dim());
  if (buffer_k < 0 || t_early_steps < 0 || !(dt > 0.0)) throw DataError("bundle: invalid timing metadata");
  if (error_observations.size() < 2) throw DataError("bundle: fewer than 2 error observations");
  std::vector<const TrajectoryRecord*> by_id;
  for (const auto& t : trajectories) {
    if (t.id >= by_id.size()) by_id.resize(t.id + 1, nullptr);
    by_id[t.id] = &t;
  }
  auto lookup = [&](std::size_t id) -> const TrajectoryRecord& {
    if (id >= by_id.size() || by_id[id] == nullptr) throw DataError("bundle: unknown trajectory id");
    return *by_id[id];
  };
  for (const auto& o : error_observations) {
    if (o.values.size() != dim) throw DataError("bundle: error observation dimension mismatch");
    const auto& rec = lookup(o.origin.trajectory);
    if (!rec.failure_index || o.origin.step + static_cast<std::size_t>(t_early_steps) != *rec.failure_index)
      throw DataError("bundle: error observation not t_early_steps before failure");
    if (o.origin.step < static_cast<std::size_t>(buffer_k)) throw DataError("bundle: observation buffer underfull");
  }
  for (const auto& p : safe) {
    if (p.observation.values.size() != dim) throw DataError("bundle: safe observation dimension mismatch");
    const auto& rec = lookup(p.observation.origin.trajectory);
    if (rec.failure_index) throw DataError("bundle: safe observation drawn from an unsafe trajectory");
    if (p.observation.origin.step < static_cast<std::size_t>(buffer_k))
      throw DataError("bundle: observation buffer underfull");
  }
}

// ---------------------------------------------------------------------------
// Persistence

inline io::json to_json(const DatasetBundle& b) {
  using io::json;
  json j;
  j["format"] = "safemon.dataset";
  j["version"] = DatasetBundle::format_version;
  j["metadata"] = {{"dt", b.dt},
                   {"t_early_steps", b.t_early_steps},
                   {"buffer_k", b.buffer_k},
                   {"master_seed", b.master_seed},
                   {"rollouts", b.rollouts},
                   {"too_early_discarded", b.too_early_discarded},
                   {"unsafe_count", b.unsafe_count()},
                   {"safe_trajectory_count", b.safe_trajectory_count()},
                   {"airspeed", b.airspeed},
                   {"gravity", b.gravity}};
  json trajs = json::array();
  for (const auto& t : b.trajectories) {
    json jt = {{"id", t.id},
               {"seed", t.seed},
               {"used", t.used},
               {"A", io::matrix_to_json(t.A)},
               {"B", io::matrix_to_json(t.B)}};
    jt["failure_index"] = t.failure_index ? json(*t.failure_index) : json(nullptr);
    trajs.push_back(std::move(jt));
  }
  j["trajectories"] = std::move(trajs);
  json err = json::array();
  for (const auto& o : b.error_observations)
    err.push_back({{"origin", {o.origin.trajectory, o.origin.step}}, {"values", io::vector_to_json(o.values)}});
  j["error_observations"] = std::move(err);
  json safe = json::array();
  for (const auto& p : b.safe)
    safe.push_back({{"origin", {p.observation.origin.trajectory, p.observation.origin.step}},
                    {"values", io::vector_to_json(p.observation.values)},
                    {"target", io::vector_to_json(p.target)}});
  j["safe_observations"] = std::move(safe);
  return j;
}

inline ObservationOrigin origin_from_json(const io::json& j) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_unsigned() || !j[1].is_number_unsigned())
    throw DataError("bundle: malformed observation origin");
  return {j[0].get<std::size_t>(), j[1].get<std::size_t>()};
}

inline DatasetBundle bundle_from_json(const io::json& j) {
  const std::string what = "dataset bundle";
  if (io::require(j, "format", what) != "safemon.dataset") throw DataError(what + ": wrong format tag");
  if (io::require(j, "version", what) != DatasetBundle::format_version) throw DataError(what + ": unsupported version");
  const auto& m = io::require(j, "metadata", what);
  DatasetBundle b;
  try {
    b.dt = io::number(io::require(m, "dt", what), "dt");
    b.t_early_steps = io::require(m, "t_early_steps", what).get<int>();
    b.buffer_k = io::require(m, "buffer_k", what).get<int>();
    b.master_seed = io::require(m, "master_seed", what).get<std::uint64_t>();
    b.rollouts = io::require(m, "rollouts", what).get<std::size_t>();
    b.too_early_discarded = io::require(m, "too_early_discarded", what).get<std::size_t>();
    b.airspeed = io::number(io::require(m, "airspeed", what), "airspeed");
    b.gravity = io::number(io::require(m, "gravity", what), "gravity");
    for (const auto& jt : io::require(j, "trajectories", what)) {
      TrajectoryRecord t;
      t.id = io::require(jt, "id", what).get<std::size_t>();
      t.seed = io::require(jt, "seed", what).get<std::uint64_t>();
      t.used = io::require(jt, "used", what).get<bool>();
      const auto& f = io::require(jt, "failure_index", what);
      if (!f.is_null()) t.failure_index = f.get<std::size_t>();
      t.A = io::matrix_from_json(io::require(jt, "A", what), "A", 3, 3);
      t.B = io::matrix_from_json(io::require(jt, "B", what), "B", 3, 2);
      b.trajectories.push_back(std::move(t));
    }
    const auto dim = static_cast<Eigen::Index>(b.observation_dim());
    for (const auto& jo : io::require(j, "error_observations", what)) {
      b.error_observations.push_back(
          {io::vector_from_json(io::require(jo, "values", what), "values", dim), origin_from_json(io::require(jo, "origin", what))});
    }
    for (const auto& jo : io::require(j, "safe_observations", what)) {
      RegressionPair p;
      p.observation = {io::vector_from_json(io::require(jo, "values", what), "values", dim),
                       origin_from_json(io::require(jo, "origin", what))};
      p.target = io::vector_from_json(io::require(jo, "target", what), "target", 6);
      b.safe.push_back(std::move(p));
    }
  } catch (const io::json::exception& e) {
    throw DataError(what + ": " + e.what());
  }
  b.validate();
  return b;
}

inline void save_bundle(const DatasetBundle& b, const std::filesystem::path& path) {
  io::write_file(path, io::dump(to_json(b)));
}

inline DatasetBundle load_bundle(const std::filesystem::path& path) {
  return bundle_from_json(io::parse(io::read_file(path), path.string()));
}

}  // namespace safemon
