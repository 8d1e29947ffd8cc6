#pragma once

// Experiment driver: test pools, miss rate / classification power over an
// epsilon grid, multi-fit sweeps, and scenario health checks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>

#include "safemon/baselines.hpp"
#include "safemon/config.hpp"
#include "safemon/conformal.hpp"
#include "safemon/datasets.hpp"
#include "safemon/json_io.hpp"
#include "safemon/plant.hpp"
#include "safemon/predictor.hpp"
#include "safemon/seeding.hpp"

namespace safemon {

/// Runs body(i) for i in [0, n) on up to hardware_concurrency threads. Each
/// index is handled exactly once, so writing results by index is deterministic.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  const std::size_t workers = std::min<std::size_t>(n, std::max(1u, std::thread::hardware_concurrency()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct TestTrajectory {
  std::uint64_t seed = 0;
  Trajectory trajectory;
};

inline std::uint64_t test_seed(std::uint64_t master_seed, std::size_t index) {
  return derive_seed(master_seed, {stream::test, index});
}

/// Fresh rollouts drawn from a stream disjoint from every collection stream.
inline std::vector<TestTrajectory> make_test_pool(const PlantConfig& plant, std::size_t count, std::uint64_t master_seed) {
  std::vector<TestTrajectory> pool(count);
  parallel_for(count, [&](std::size_t i) {
    const auto seed = test_seed(master_seed, i);
    pool[i] = {seed, simulate_rollout(sample_params(plant.nominal, plant.perturbation, seed), plant)};
  });
  return pool;
}

/// Inclusive range of steps at which an alert still counts for this trajectory:
/// [k, t_fail - t_early] for unsafe runs, [k, T] for safe runs. Empty when the
/// failure comes too early to warn about.
inline std::optional<std::pair<std::size_t, std::size_t>> monitored_window(const Trajectory& traj, int buffer_k,
                                                                           int t_early_steps) {
  const auto first = static_cast<std::ptrdiff_t>(buffer_k);
  const auto last = traj.failure_index ? static_cast<std::ptrdiff_t>(*traj.failure_index) - t_early_steps
                                       : static_cast<std::ptrdiff_t>(traj.last_index());
  if (last < first) return std::nullopt;
  return std::pair{static_cast<std::size_t>(first), static_cast<std::size_t>(last)};
}

/// p-values at steps first..last (inclusive).
inline std::vector<double> p_value_sequence(const CalibratedMonitor& monitor, const Trajectory& traj, std::size_t first,
                                            std::size_t last) {
  std::vector<double> ps;
  ps.reserve(last + 1 - first);
  const int k = monitor.meta().buffer_k;
  for (std::size_t t = first; t <= last; ++t)
    ps.push_back(monitor.p_value_of(monitor.score_observation(make_observation(traj, t, k).values)));
  return ps;
}

struct ResultRow {
  std::string method;
  std::optional<std::size_t> fit;  // nullopt for the mean-over-fits summary
  double epsilon = 0.0;
  double miss_rate = 0.0;
  double power = 0.0;
  std::size_t unsafe_count = 0;
  std::size_t safe_count = 0;
  std::size_t excluded = 0;  // unsafe test runs failing before any monitored step
};

/// One pass per trajectory: the maximum p-value over its monitored window
/// decides the alert for every epsilon at once (alert at some step <=> max p >= eps).
inline std::vector<ResultRow> evaluate_monitor(const CalibratedMonitor& monitor, const std::vector<TestTrajectory>& pool,
                                               const std::vector<double>& epsilon_grid, std::optional<std::size_t> fit = 0) {
  for (double e : epsilon_grid)
    if (!(e > 0.0 && e < 1.0)) throw MisuseError("epsilon must lie in (0, 1)");
  const int k = monitor.meta().buffer_k;
  const int te = monitor.meta().t_early_steps;

  std::vector<std::optional<double>> max_p(pool.size());
  parallel_for(pool.size(), [&](std::size_t i) {
    const auto& traj = pool[i].trajectory;
    const auto win = monitored_window(traj, k, te);
    if (!win) return;
    const auto ps = p_value_sequence(monitor, traj, win->first, win->second);
    max_p[i] = *std::max_element(ps.begin(), ps.end());
  });

  std::size_t unsafe = 0, safe = 0, excluded = 0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (!max_p[i]) ++excluded;
    else if (pool[i].trajectory.unsafe()) ++unsafe;
    else ++safe;
  }

  std::vector<ResultRow> rows;
  for (double eps : epsilon_grid) {
    std::size_t misses = 0, quiet = 0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (!max_p[i]) continue;
      const bool alerted = *max_p[i] >= eps;
      if (pool[i].trajectory.unsafe()) misses += alerted ? 0 : 1;
      else quiet += alerted ? 0 : 1;
    }
    ResultRow r;
    r.method = monitor.meta().method;
    r.fit = fit;
    r.epsilon = eps;
    r.miss_rate = unsafe ? static_cast<double>(misses) / static_cast<double>(unsafe) : 0.0;
    r.power = safe ? static_cast<double>(quiet) / static_cast<double>(safe) : 0.0;
    r.unsafe_count = unsafe;
    r.safe_count = safe;
    r.excluded = excluded;
    rows.push_back(std::move(r));
  }
  return rows;
}

struct FitReport {
  std::size_t fit = 0;
  std::size_t rollouts = 0;
  std::size_t safe_trajectories = 0;
  std::size_t safe_observations = 0;
  std::size_t too_early_discarded = 0;
  TrainingSummary predictor;
};

struct ExperimentResult {
  std::vector<ResultRow> detail;
  std::vector<ResultRow> summary;
  std::vector<FitReport> fits;
};

inline std::size_t method_rank(const std::string& name) {
  for (std::size_t i = 0; i < all_methods.size(); ++i)
    if (method_name(all_methods[i]) == name) return i;
  return all_methods.size();
}

inline std::uint64_t fit_seed(std::uint64_t master_seed, std::size_t fit) {
  return derive_seed(master_seed, {stream::collect, 0xF17ULL, fit});
}

/// Trains every requested monitor on `fits` independent datasets and scores them on one shared test pool.
inline ExperimentResult run_experiment(const Config& cfg, const std::function<void(const std::string&)>& log = {}) {
  cfg.validate();
  const auto& ex = cfg.experiment;
  const auto pool = make_test_pool(cfg.plant, ex.test_trajectories, ex.master_seed);
  if (log) log(fmt::format("test pool: {} trajectories", pool.size()));

  ExperimentResult res;
  for (std::size_t f = 0; f < ex.fits; ++f) {
    const auto bundle = collect_dataset(cfg.plant, cfg.dataset, ex.n_unsafe, fit_seed(ex.master_seed, f));
    const auto predictor = fit_least_squares(bundle.safe);
    res.fits.push_back({f, bundle.rollouts, bundle.safe_trajectory_count(), bundle.safe.size(), bundle.too_early_discarded,
                        predictor.summary});
    for (const auto& spec : ex.methods) {
      const auto monitor = build_monitor(spec, bundle, &predictor);
      auto rows = evaluate_monitor(monitor, pool, ex.epsilon_grid, f);
      res.detail.insert(res.detail.end(), rows.begin(), rows.end());
    }
    if (log) log(fmt::format("fit {}: {} rollouts, {} safe observations", f, bundle.rollouts, bundle.safe.size()));
  }

  std::stable_sort(res.detail.begin(), res.detail.end(), [](const ResultRow& a, const ResultRow& b) {
    if (method_rank(a.method) != method_rank(b.method)) return method_rank(a.method) < method_rank(b.method);
    if (a.fit != b.fit) return a.fit < b.fit;
    return a.epsilon < b.epsilon;
  });

  for (const auto& spec : ex.methods) {
    const std::string name(method_name(spec.method));
    for (double eps : ex.epsilon_grid) {
      ResultRow s;
      s.method = name;
      s.epsilon = eps;
      std::size_t n = 0;
      for (const auto& r : res.detail) {
        if (r.method != name || r.epsilon != eps) continue;
        s.miss_rate += r.miss_rate;
        s.power += r.power;
        s.unsafe_count = r.unsafe_count;
        s.safe_count = r.safe_count;
        s.excluded = r.excluded;
        ++n;
      }
      s.miss_rate /= static_cast<double>(n);
      s.power /= static_cast<double>(n);
      res.summary.push_back(std::move(s));
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Result files

inline constexpr const char* results_header = "method,fit,epsilon,miss_rate,power,unsafe_count,safe_count,excluded";

inline std::string format_row(const ResultRow& r) {
  return fmt::format("{},{},{},{:.6f},{:.6f},{},{},{}", r.method, r.fit ? std::to_string(*r.fit) : std::string("mean"),
                     r.epsilon, r.miss_rate, r.power, r.unsafe_count, r.safe_count, r.excluded);
}

/// Detail rows followed by the mean-over-fits rows (fit column "mean").
inline std::string results_csv(const std::vector<ResultRow>& detail, const std::vector<ResultRow>& summary) {
  std::string s = std::string(results_header) + "\n";
  for (const auto& r : detail) s += format_row(r) + "\n";
  for (const auto& r : summary) s += format_row(r) + "\n";
  return s;
}

inline std::vector<ResultRow> parse_results_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != results_header) throw DataError("results table: unexpected header");
  std::vector<ResultRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 8) throw DataError("results table: malformed row '" + line + "'");
    try {
      ResultRow r;
      r.method = f[0];
      if (f[1] != "mean") r.fit = std::stoul(f[1]);
      r.epsilon = std::stod(f[2]);
      r.miss_rate = std::stod(f[3]);
      r.power = std::stod(f[4]);
      r.unsafe_count = std::stoul(f[5]);
      r.safe_count = std::stoul(f[6]);
      r.excluded = std::stoul(f[7]);
      rows.push_back(std::move(r));
    } catch (const std::exception&) {
      throw DataError("results table: malformed row '" + line + "'");
    }
  }
  return rows;
}

inline io::json summary_json(const ExperimentResult& res, const Config& cfg) {
  io::json fits = io::json::array();
  for (const auto& f : res.fits)
    fits.push_back({{"fit", f.fit},
                    {"rollouts", f.rollouts},
                    {"safe_trajectories", f.safe_trajectories},
                    {"safe_observations", f.safe_observations},
                    {"too_early_discarded", f.too_early_discarded},
                    {"predictor_ridge_applied", f.predictor.ridge_applied},
                    {"predictor_rms_residual", io::vector_to_json(f.predictor.rms_residual)}});
  io::json methods = io::json::object();
  for (const auto& r : res.summary) {
    methods[r.method]["epsilon"].push_back(r.epsilon);
    methods[r.method]["mean_miss_rate"].push_back(r.miss_rate);
    methods[r.method]["mean_power"].push_back(r.power);
    methods[r.method]["unsafe_count"] = r.unsafe_count;
    methods[r.method]["safe_count"] = r.safe_count;
    methods[r.method]["excluded"] = r.excluded;
  }
  return {{"format", "safemon.results-summary"}, {"version", 1}, {"config", to_json(cfg)}, {"fits", fits}, {"methods", methods}};
}

// ---------------------------------------------------------------------------
// Scenario health

struct HealthReport {
  std::size_t sample_size = 0;
  std::size_t unsafe = 0;
  double unsafe_fraction = 0.0;
  std::optional<double> mean_failure_time;  // seconds, over unsafe rollouts
  double too_early_fraction = 0.0;          // of unsafe rollouts
  std::vector<std::string> warnings;
};

inline HealthReport scenario_health(const PlantConfig& plant, const DatasetConfig& dataset, std::size_t sample_size,
                                    std::uint64_t seed) {
  if (sample_size < 100) throw MisuseError("scenario health needs at least 100 rollouts");
  std::vector<std::optional<std::size_t>> failures(sample_size);
  parallel_for(sample_size, [&](std::size_t i) {
    const auto s = derive_seed(seed, {stream::health, i});
    failures[i] = simulate_rollout(sample_params(plant.nominal, plant.perturbation, s), plant).failure_index;
  });

  HealthReport r;
  r.sample_size = sample_size;
  double time_sum = 0.0;
  std::size_t too_early = 0;
  for (const auto& f : failures) {
    if (!f) continue;
    ++r.unsafe;
    time_sum += static_cast<double>(*f) * plant.dt;
    if (static_cast<std::ptrdiff_t>(*f) - dataset.t_early_steps < dataset.buffer_k) ++too_early;
  }
  r.unsafe_fraction = static_cast<double>(r.unsafe) / static_cast<double>(sample_size);
  if (r.unsafe > 0) {
    r.mean_failure_time = time_sum / static_cast<double>(r.unsafe);
    r.too_early_fraction = static_cast<double>(too_early) / static_cast<double>(r.unsafe);
  }
  if (r.unsafe_fraction < 0.1 || r.unsafe_fraction > 0.4)
    r.warnings.push_back(fmt::format("unsafe fraction {:.3f} outside [0.1, 0.4]; retune perturbation or ny_limit",
                                     r.unsafe_fraction));
  if (r.too_early_fraction > 0.5)
    r.warnings.push_back(fmt::format("{:.0f}% of failures occur before a warning is possible", 100.0 * r.too_early_fraction));
  return r;
}

inline io::json to_json(const HealthReport& r) {
  return {{"sample_size", r.sample_size},
          {"unsafe", r.unsafe},
          {"unsafe_fraction", r.unsafe_fraction},
          {"mean_failure_time", r.mean_failure_time ? io::json(*r.mean_failure_time) : io::json(nullptr)},
          {"too_early_fraction", r.too_early_fraction},
          {"warnings", r.warnings}};
}

// ---------------------------------------------------------------------------
// p-value profile around failures

struct ProfileReport {
  std::size_t unsafe_evaluated = 0;
  std::size_t unsafe_peaking = 0;  // max p near failure exceeds the run's median p
  std::size_t safe_evaluated = 0;
  std::size_t safe_at_floor = 0;   // median p <= 3 / (N + 1)

  [[nodiscard]] double peaking_fraction() const {
    return unsafe_evaluated ? static_cast<double>(unsafe_peaking) / static_cast<double>(unsafe_evaluated) : 0.0;
  }
  [[nodiscard]] double floor_fraction() const {
    return safe_evaluated ? static_cast<double>(safe_at_floor) / static_cast<double>(safe_evaluated) : 0.0;
  }
};

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// For unsafe runs (cut at failure): does max p over [t_fail - 2 t_early, t_fail]
/// exceed the median p over [k, t_fail]? For safe runs: is the median p at most 3/(N+1)?
inline ProfileReport p_value_profile(const CalibratedMonitor& monitor, const std::vector<TestTrajectory>& pool) {
  const auto k = static_cast<std::size_t>(monitor.meta().buffer_k);
  const auto te = static_cast<std::size_t>(monitor.meta().t_early_steps);
  const double floor_band = 3.0 / static_cast<double>(monitor.calibration_size() + 1);
  std::vector<int> verdict(pool.size(), -1);  // -1 skipped, 0 no, 1 yes
  parallel_for(pool.size(), [&](std::size_t i) {
    const auto& traj = pool[i].trajectory;
    if (traj.failure_index) {
      const auto tf = *traj.failure_index;
      if (tf < k + 2 * te) return;
      const auto ps = p_value_sequence(monitor, traj, k, tf);
      const double med = median(ps);
      const double peak = *std::max_element(ps.begin() + static_cast<std::ptrdiff_t>(tf - 2 * te - k), ps.end());
      verdict[i] = peak > med ? 1 : 0;
    } else {
      const auto ps = p_value_sequence(monitor, traj, k, traj.last_index());
      verdict[i] = median(ps) <= floor_band ? 1 : 0;
    }
  });
  ProfileReport r;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (verdict[i] < 0) continue;
    if (pool[i].trajectory.unsafe()) {
      ++r.unsafe_evaluated;
      r.unsafe_peaking += static_cast<std::size_t>(verdict[i]);
    } else {
      ++r.safe_evaluated;
      r.safe_at_floor += static_cast<std::size_t>(verdict[i]);
    }
  }
  return r;
}

}  // namespace safemon
