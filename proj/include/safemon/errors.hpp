#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace safemon {

/// Coarse error class; the CLI maps each class to a distinct exit code.
enum class ErrorClass { configuration, data, infeasible, misuse, state };

class Error : public std::runtime_error {
public:
  Error(ErrorClass cls, const std::string& what) : std::runtime_error(what), cls_(cls) {}
  [[nodiscard]] ErrorClass error_class() const noexcept { return cls_; }

private:
  ErrorClass cls_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorClass::configuration, w) {}
};

struct DataError : Error {
  explicit DataError(const std::string& w) : Error(ErrorClass::data, w) {}
};

struct MisuseError : Error {
  explicit MisuseError(const std::string& w) : Error(ErrorClass::misuse, w) {}
};

struct StateError : Error {
  explicit StateError(const std::string& w) : Error(ErrorClass::state, w) {}
};

/// Collection could not gather the requested unsafe rollouts within the attempt cap.
struct ScenarioInfeasible : Error {
  explicit ScenarioInfeasible(const std::string& w) : Error(ErrorClass::infeasible, w) {}
};

struct SimulationDiverged : DataError {
  SimulationDiverged(std::size_t step_index)
      : DataError("simulation diverged at step " + std::to_string(step_index)), step(step_index) {}
  std::size_t step;
};

struct InsufficientHistory : MisuseError {
  using MisuseError::MisuseError;
};

/// Failure happened before a full observation buffer existed t_early ahead of it.
struct TooEarlyFailure : DataError {
  using DataError::DataError;
};

struct DegenerateCalibration : DataError {
  using DataError::DataError;
};

struct RankDeficiency : DataError {
  RankDeficiency(std::size_t achieved, std::size_t requested)
      : DataError("rank deficiency: achieved rank " + std::to_string(achieved) + " < requested " +
                  std::to_string(requested)),
        rank(achieved) {}
  std::size_t rank;
};

struct Underdetermined : DataError {
  using DataError::DataError;
};

struct Incompatible : ConfigError {
  using ConfigError::ConfigError;
};

struct NotFinished : StateError {
  using StateError::StateError;
};

inline int exit_code(ErrorClass cls) {
  switch (cls) {
    case ErrorClass::configuration: return 2;
    case ErrorClass::data: return 3;
    case ErrorClass::infeasible: return 4;
    case ErrorClass::misuse: return 5;
    case ErrorClass::state: return 6;
  }
  return 1;
}

}  // namespace safemon
