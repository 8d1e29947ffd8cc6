#pragma once

// Live monitoring sessions: a hidden aircraft advanced one sample period per
// step message, with the calibrated verdict attached to each telemetry record.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "safemon/conformal.hpp"
#include "safemon/datasets.hpp"
#include "safemon/errors.hpp"
#include "safemon/json_io.hpp"
#include "safemon/plant.hpp"

namespace safemon {

inline constexpr int protocol_version = 1;

enum class SessionStatus { running, aborted, completed, violated };
enum class ControlMode { scripted, free_stick };
enum class Pacing { lockstep, realtime };

inline std::string to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::running: return "running";
    case SessionStatus::aborted: return "aborted";
    case SessionStatus::completed: return "completed";
    case SessionStatus::violated: return "violated";
  }
  return "?";
}
inline std::string to_string(ControlMode m) { return m == ControlMode::scripted ? "scripted" : "free_stick"; }
inline std::string to_string(Pacing p) { return p == Pacing::lockstep ? "lockstep" : "realtime"; }

struct Telemetry {
  std::size_t step = 0;
  double t = 0.0;
  Output outputs = Output::Zero();
  std::optional<double> p_value;  // absent while the buffer fills
  bool alert = false;
  SessionStatus status = SessionStatus::running;
};

inline io::json to_json(const Telemetry& tm, const std::string& session_id) {
  const auto& y = tm.outputs;
  return {{"v", protocol_version},
          {"type", "telemetry"},
          {"session", session_id},
          {"step", tm.step},
          {"t", tm.t},
          {"outputs",
           {{"beta", y[out::beta]},
            {"p", y[out::roll_rate]},
            {"r", y[out::yaw_rate]},
            {"ny", y[out::ny]},
            {"aileron", y[out::aileron]},
            {"rudder", y[out::rudder]}}},
          {"p_value", tm.p_value ? io::json(*tm.p_value) : io::json(nullptr)},
          {"alert", tm.alert},
          {"status", to_string(tm.status)}};
}

struct SessionOptions {
  double epsilon = 0.1;
  std::optional<std::uint64_t> seed;
  ControlMode mode = ControlMode::scripted;
  Pacing pacing = Pacing::lockstep;
};

struct Counterfactual {
  std::size_t from_step = 0;
  std::vector<Output> outputs;  // outputs[i] is step from_step + i
  std::optional<std::size_t> violation_step;
  double dt = 0.05;
};

/// Immutable once the session is terminal.
struct Debrief {
  std::string session_id;
  SessionStatus status = SessionStatus::running;
  double epsilon = 0.0;
  ControlMode mode = ControlMode::scripted;
  std::uint64_t seed = 0;
  AircraftParams hidden;
  std::vector<Telemetry> log;
  std::optional<Counterfactual> counterfactual;  // absent when the violation already happened
};

inline io::json to_json(const Debrief& d) {
  io::json log = io::json::array();
  for (const auto& tm : d.log) log.push_back(to_json(tm, d.session_id));
  io::json cf = nullptr;
  if (d.counterfactual) {
    const auto& c = *d.counterfactual;
    io::json outs = io::json::array();
    for (const auto& y : c.outputs) outs.push_back(io::vector_to_json(y));
    cf = {{"from_step", c.from_step},
          {"outputs", outs},
          {"would_violate", c.violation_step.has_value()},
          {"violation_step", c.violation_step ? io::json(*c.violation_step) : io::json(nullptr)},
          {"violation_time", c.violation_step ? io::json(static_cast<double>(*c.violation_step) * c.dt) : io::json(nullptr)}};
  }
  return {{"v", protocol_version},
          {"type", "debrief"},
          {"session", d.session_id},
          {"status", to_string(d.status)},
          {"epsilon", d.epsilon},
          {"mode", to_string(d.mode)},
          {"seed", d.seed},
          {"hidden_params",
           {{"A", io::matrix_to_json(d.hidden.A)},
            {"B", io::matrix_to_json(d.hidden.B)},
            {"C", io::matrix_to_json(d.hidden.C)},
            {"D", io::matrix_to_json(d.hidden.D)},
            {"airspeed", d.hidden.airspeed},
            {"gravity", d.hidden.gravity}}},
          {"log", log},
          {"counterfactual", cf}};
}

/// Throws Incompatible when the artifact was trained for different timing.
inline void check_compatible(const CalibratedMonitor& monitor, const PlantConfig& plant, const DatasetConfig& dataset) {
  const auto& m = monitor.meta();
  std::string diff;
  if (std::abs(m.dt - plant.dt) > 1e-12) diff += fmt::format(" dt: artifact {} vs plant {};", m.dt, plant.dt);
  if (m.buffer_k != dataset.buffer_k) diff += fmt::format(" buffer_k: artifact {} vs config {};", m.buffer_k, dataset.buffer_k);
  if (m.t_early_steps != dataset.t_early_steps)
    diff += fmt::format(" t_early_steps: artifact {} vs config {};", m.t_early_steps, dataset.t_early_steps);
  if (!diff.empty()) throw Incompatible("monitor artifact incompatible with plant configuration:" + diff);
}

class Session {
public:
  Session(std::string id, std::shared_ptr<const CalibratedMonitor> monitor, PlantConfig plant, SessionOptions opts)
      : id_(std::move(id)), monitor_(std::move(monitor)), plant_(std::move(plant)), opts_(opts) {
    if (!(opts_.epsilon > 0.0 && opts_.epsilon < 1.0)) throw MisuseError("epsilon must lie in (0, 1)");
    seed_ = opts_.seed ? *opts_.seed : std::random_device{}() * 0x100000001ULL + std::random_device{}();
    hidden_ = sample_params(plant_.nominal, plant_.perturbation, derive_seed(seed_, {stream::session}));
    x_ = State::Zero();
    record(output_at(hidden_, plant_.gains, x_, command_for({})));
  }

  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  [[nodiscard]] const std::string& id() const { return id_; }
  [[nodiscard]] const SessionOptions& options() const { return opts_; }

  [[nodiscard]] SessionStatus status() const {
    std::lock_guard lock(mu_);
    return status_;
  }

  [[nodiscard]] Telemetry latest() const {
    std::lock_guard lock(mu_);
    return log_.back();
  }

  /// Advances one sample period. In scripted mode the doublet script supplies
  /// the command and `cmd` is ignored.
  Telemetry step(const PilotCommand& cmd) {
    std::lock_guard lock(mu_);
    if (status_ != SessionStatus::running) throw StateError("session " + id_ + " is " + to_string(status_));
    if (!cmd.finite()) throw MisuseError("command must be finite");
    const auto applied = command_for(cmd);
    const auto r = safemon::step(hidden_, plant_.gains, x_, applied, plant_.dt, plant_.substeps, clock_ + 1);
    x_ = r.x;
    ++clock_;
    return record(r.y);
  }

  SessionStatus abort() {
    std::lock_guard lock(mu_);
    if (status_ == SessionStatus::running) {
      status_ = SessionStatus::aborted;
      log_.back().status = status_;
    }
    return status_;
  }

  [[nodiscard]] Debrief debrief() const {
    std::lock_guard lock(mu_);
    if (status_ == SessionStatus::running) throw NotFinished("session " + id_ + " is still running");
    if (!debrief_) debrief_ = build_debrief();
    return *debrief_;
  }

  [[nodiscard]] std::vector<Telemetry> log() const {
    std::lock_guard lock(mu_);
    return log_;
  }

private:
  PilotCommand command_for(const PilotCommand& pilot) const {
    if (opts_.mode == ControlMode::scripted) return doublet_command(static_cast<double>(clock_) * plant_.dt, plant_.doublet);
    return pilot.clamped(plant_.saturation);
  }

  Telemetry record(const Output& y) {
    buffer_.push_back(y);
    const auto need = static_cast<std::size_t>(monitor_->meta().buffer_k) + 1;
    while (buffer_.size() > need) buffer_.pop_front();

    Telemetry tm;
    tm.step = clock_;
    tm.t = static_cast<double>(clock_) * plant_.dt;
    tm.outputs = y;
    if (buffer_.size() == need) {
      const std::vector<Output> window(buffer_.begin(), buffer_.end());
      const auto v = monitor_step(*monitor_, window, opts_.epsilon);
      tm.p_value = v->p_value;
      tm.alert = v->alert;
    }
    if (std::abs(y[out::ny]) >= plant_.ny_limit) status_ = SessionStatus::violated;
    else if (clock_ >= plant_.steps()) status_ = SessionStatus::completed;
    tm.status = status_;
    log_.push_back(tm);
    return tm;
  }

  Debrief build_debrief() const {
    Debrief d;
    d.session_id = id_;
    d.status = status_;
    d.epsilon = opts_.epsilon;
    d.mode = opts_.mode;
    d.seed = seed_;
    d.hidden = hidden_;
    d.log = log_;
    if (status_ != SessionStatus::violated) {
      Counterfactual cf;
      cf.from_step = clock_;
      cf.dt = plant_.dt;
      State x = x_;
      cf.outputs.push_back(
          output_at(hidden_, plant_.gains, x, doublet_command(static_cast<double>(clock_) * plant_.dt, plant_.doublet)));
      for (std::size_t k = clock_; k < plant_.steps(); ++k) {
        const auto r = safemon::step(hidden_, plant_.gains, x, doublet_command(static_cast<double>(k) * plant_.dt, plant_.doublet),
                                     plant_.dt, plant_.substeps, k + 1);
        x = r.x;
        cf.outputs.push_back(r.y);
      }
      if (const auto f = failure_time(cf.outputs, plant_.ny_limit)) cf.violation_step = clock_ + *f;
      d.counterfactual = std::move(cf);
    }
    return d;
  }

  const std::string id_;
  const std::shared_ptr<const CalibratedMonitor> monitor_;
  const PlantConfig plant_;
  const SessionOptions opts_;
  std::uint64_t seed_ = 0;
  AircraftParams hidden_;

  mutable std::mutex mu_;
  State x_;
  std::size_t clock_ = 0;
  std::deque<Output> buffer_;
  std::vector<Telemetry> log_;
  SessionStatus status_ = SessionStatus::running;
  mutable std::optional<Debrief> debrief_;
};

/// Shares one immutable monitor across sessions.
class SessionRegistry {
public:
  SessionRegistry(std::shared_ptr<const CalibratedMonitor> monitor, PlantConfig plant, DatasetConfig dataset)
      : monitor_(std::move(monitor)), plant_(std::move(plant)), dataset_(dataset) {
    plant_.validate();
    check_compatible(*monitor_, plant_, dataset_);
  }

  std::shared_ptr<Session> create(const SessionOptions& opts) {
    auto id = next_id();
    auto s = std::make_shared<Session>(id, monitor_, plant_, opts);
    std::unique_lock lock(mu_);
    sessions_.emplace(id, s);
    return s;
  }

  [[nodiscard]] std::shared_ptr<Session> find(const std::string& id) const {
    std::shared_lock lock(mu_);
    const auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
  }

  [[nodiscard]] const CalibratedMonitor& monitor() const { return *monitor_; }
  [[nodiscard]] const PlantConfig& plant() const { return plant_; }

private:
  std::string next_id() {
    static thread_local std::mt19937_64 rng{std::random_device{}()};
    return fmt::format("{:016x}{:08x}", rng(), counter_.fetch_add(1));
  }

  std::shared_ptr<const CalibratedMonitor> monitor_;
  PlantConfig plant_;
  DatasetConfig dataset_;
  mutable std::shared_mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::atomic<std::uint32_t> counter_{0};
};

}  // namespace safemon
