#pragma once

// Single JSON configuration file with three optional sections: "plant",
// "dataset", and "experiment". Missing fields take their defaults; unknown
// fields are rejected.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "safemon/baselines.hpp"
#include "safemon/datasets.hpp"
#include "safemon/errors.hpp"
#include "safemon/json_io.hpp"
#include "safemon/plant.hpp"

namespace safemon {

struct ExperimentConfig {
  std::size_t n_unsafe = 50;
  std::size_t fits = 10;
  std::size_t test_trajectories = 500;
  std::vector<double> epsilon_grid{0.02, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5};
  std::vector<MethodSpec> methods{{Method::full}, {Method::no_pred}, {Method::pca}, {Method::current_ny}, {Method::pred_ny}};
  std::uint64_t master_seed = 1;

  void validate() const {
    if (n_unsafe < 2) throw ConfigError("N must be >= 2");
    if (fits < 1) throw ConfigError("fits must be >= 1");
    if (test_trajectories < 1) throw ConfigError("test_trajectories must be >= 1");
    if (epsilon_grid.empty()) throw ConfigError("epsilon_grid must not be empty");
    for (double e : epsilon_grid)
      if (!(e > 0.0 && e < 1.0)) throw ConfigError("epsilon_grid values must lie in (0, 1)");
    if (!std::is_sorted(epsilon_grid.begin(), epsilon_grid.end()) ||
        std::adjacent_find(epsilon_grid.begin(), epsilon_grid.end()) != epsilon_grid.end())
      throw ConfigError("epsilon_grid must be strictly increasing");
    if (methods.empty()) throw ConfigError("methods must not be empty");
    for (const auto& m : methods) m.validate();
  }
};

struct Config {
  PlantConfig plant;
  DatasetConfig dataset;
  ExperimentConfig experiment;

  void validate() const {
    plant.validate();
    dataset.validate();
    experiment.validate();
    for (const auto& m : experiment.methods) m.validate(dataset.observation_dim());
  }
};

namespace detail {

inline void reject_unknown(const io::json& j, std::initializer_list<const char*> known, const std::string& section) {
  if (!j.is_object()) throw ConfigError(section + " must be an object");
  std::set<std::string> ok(known.begin(), known.end());
  for (const auto& [key, value] : j.items())
    if (!ok.count(key)) throw ConfigError("unknown field '" + section + "." + key + "'");
}

template <typename T>
void read_opt(const io::json& j, const char* key, T& dst, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const io::json::exception& e) {
    throw ConfigError(section + "." + key + ": " + e.what());
  }
}

inline void read_extended(const io::json& j, const char* key, double& dst, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    dst = io::extended_from_json(j.at(key), section + "." + key);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
}

template <int R, int C>
void read_matrix(const io::json& j, const char* key, Eigen::Matrix<double, R, C>& dst, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    dst = io::matrix_from_json(j.at(key), section + "." + key, R, C);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace detail

inline Config config_from_json(const io::json& root) {
  Config cfg;
  if (root.is_null()) return cfg;
  detail::reject_unknown(root, {"plant", "dataset", "experiment"}, "config");

  if (root.contains("plant")) {
    const auto& p = root.at("plant");
    const std::string sec = "plant";
    detail::reject_unknown(p,
                           {"A", "B", "K", "airspeed", "gravity", "perturbation", "ny_limit", "dt", "horizon",
                            "substeps", "saturation", "doublet"},
                           sec);
    Eigen::Matrix3d a = cfg.plant.nominal.A;
    Eigen::Matrix<double, 3, 2> b = cfg.plant.nominal.B;
    double v = cfg.plant.nominal.airspeed, g = cfg.plant.nominal.gravity;
    detail::read_matrix(p, "A", a, sec);
    detail::read_matrix(p, "B", b, sec);
    detail::read_opt(p, "airspeed", v, sec);
    detail::read_opt(p, "gravity", g, sec);
    cfg.plant.nominal = AircraftParams::from_dynamics(a, b, v, g);
    detail::read_matrix(p, "K", cfg.plant.gains.K, sec);
    detail::read_opt(p, "perturbation", cfg.plant.perturbation, sec);
    detail::read_extended(p, "ny_limit", cfg.plant.ny_limit, sec);
    detail::read_opt(p, "dt", cfg.plant.dt, sec);
    detail::read_opt(p, "horizon", cfg.plant.horizon, sec);
    detail::read_opt(p, "substeps", cfg.plant.substeps, sec);
    detail::read_opt(p, "saturation", cfg.plant.saturation, sec);
    if (p.contains("doublet")) {
      const auto& d = p.at("doublet");
      detail::reject_unknown(d, {"start", "half_period", "amplitude"}, "plant.doublet");
      detail::read_opt(d, "start", cfg.plant.doublet.start, "plant.doublet");
      detail::read_opt(d, "half_period", cfg.plant.doublet.half_period, "plant.doublet");
      detail::read_opt(d, "amplitude", cfg.plant.doublet.amplitude, "plant.doublet");
    }
  }

  if (root.contains("dataset")) {
    const auto& d = root.at("dataset");
    const std::string sec = "dataset";
    detail::reject_unknown(d, {"buffer_k", "t_early_steps", "safe_per_trajectory", "attempt_cap_factor"}, sec);
    detail::read_opt(d, "buffer_k", cfg.dataset.buffer_k, sec);
    detail::read_opt(d, "t_early_steps", cfg.dataset.t_early_steps, sec);
    detail::read_opt(d, "safe_per_trajectory", cfg.dataset.safe_per_trajectory, sec);
    detail::read_opt(d, "attempt_cap_factor", cfg.dataset.attempt_cap_factor, sec);
  }

  if (root.contains("experiment")) {
    const auto& e = root.at("experiment");
    const std::string sec = "experiment";
    detail::reject_unknown(
        e, {"N", "fits", "test_trajectories", "epsilon_grid", "methods", "pca_dims", "scale_features", "master_seed"}, sec);
    detail::read_opt(e, "N", cfg.experiment.n_unsafe, sec);
    detail::read_opt(e, "fits", cfg.experiment.fits, sec);
    detail::read_opt(e, "test_trajectories", cfg.experiment.test_trajectories, sec);
    detail::read_opt(e, "epsilon_grid", cfg.experiment.epsilon_grid, sec);
    detail::read_opt(e, "master_seed", cfg.experiment.master_seed, sec);
    int pca_dims = 6;
    bool scale = false;
    detail::read_opt(e, "pca_dims", pca_dims, sec);
    detail::read_opt(e, "scale_features", scale, sec);
    std::vector<std::string> names;
    for (const auto& m : cfg.experiment.methods) names.emplace_back(method_name(m.method));
    detail::read_opt(e, "methods", names, sec);
    cfg.experiment.methods.clear();
    for (const auto& n : names) cfg.experiment.methods.push_back({parse_method(n), pca_dims, scale});
  }

  cfg.validate();
  return cfg;
}

inline io::json to_json(const Config& cfg) {
  const auto& p = cfg.plant;
  io::json methods = io::json::array();
  for (const auto& m : cfg.experiment.methods) methods.push_back(std::string(method_name(m.method)));
  const int pca_dims = cfg.experiment.methods.empty() ? 6 : cfg.experiment.methods.front().pca_dims;
  const bool scale = !cfg.experiment.methods.empty() && cfg.experiment.methods.front().scale_features;
  return {
      {"plant",
       {{"A", io::matrix_to_json(p.nominal.A)},
        {"B", io::matrix_to_json(p.nominal.B)},
        {"K", io::matrix_to_json(p.gains.K)},
        {"airspeed", p.nominal.airspeed},
        {"gravity", p.nominal.gravity},
        {"perturbation", p.perturbation},
        {"ny_limit", io::extended_to_json(p.ny_limit)},
        {"dt", p.dt},
        {"horizon", p.horizon},
        {"substeps", p.substeps},
        {"saturation", p.saturation},
        {"doublet", {{"start", p.doublet.start}, {"half_period", p.doublet.half_period}, {"amplitude", p.doublet.amplitude}}}}},
      {"dataset",
       {{"buffer_k", cfg.dataset.buffer_k},
        {"t_early_steps", cfg.dataset.t_early_steps},
        {"safe_per_trajectory", cfg.dataset.safe_per_trajectory},
        {"attempt_cap_factor", cfg.dataset.attempt_cap_factor}}},
      {"experiment",
       {{"N", cfg.experiment.n_unsafe},
        {"fits", cfg.experiment.fits},
        {"test_trajectories", cfg.experiment.test_trajectories},
        {"epsilon_grid", cfg.experiment.epsilon_grid},
        {"methods", methods},
        {"pca_dims", pca_dims},
        {"scale_features", scale},
        {"master_seed", cfg.experiment.master_seed}}}};
}

inline Config load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  io::json j;
  try {
    j = io::json::parse(text);
  } catch (const io::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace safemon
