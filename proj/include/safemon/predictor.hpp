#pragma once

// Affine least-squares forecaster y_{t+t_early} ~ M o_t + mu, fit on centered
// normal equations.

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "safemon/datasets.hpp"
#include "safemon/errors.hpp"
#include "safemon/json_io.hpp"
#include "safemon/plant.hpp"

namespace safemon {

struct TrainingSummary {
  std::size_t pair_count = 0;
  Output rms_residual = Output::Zero();
  double condition_number = 0.0;
  bool ridge_applied = false;
  double ridge_lambda = 0.0;
};

struct LinearPredictor {
  Eigen::Matrix<double, 6, Eigen::Dynamic> M;
  Output mu = Output::Zero();
  TrainingSummary summary;

  [[nodiscard]] Eigen::Index input_dim() const { return M.cols(); }

  [[nodiscard]] Output predict(const Eigen::VectorXd& o) const {
    if (o.size() != M.cols())
      throw MisuseError("predictor expects dimension " + std::to_string(M.cols()) + ", got " +
                        std::to_string(o.size()));
    return M * o + mu;
  }
};

/// Above this feature-covariance condition number a small ridge term is added.
inline constexpr double ridge_condition_limit = 1e10;

inline LinearPredictor fit_least_squares(std::span<const Eigen::VectorXd> features, std::span<const Output> targets) {
  if (features.size() != targets.size()) throw MisuseError("feature/target count mismatch");
  if (features.empty()) throw Underdetermined("no regression pairs");
  const auto d = features.front().size();
  const auto n = static_cast<Eigen::Index>(features.size());
  if (n < d + 1)
    throw Underdetermined(std::to_string(n) + " pairs cannot determine an affine map from dimension " +
                          std::to_string(d));

  Eigen::MatrixXd X(n, d);
  Eigen::Matrix<double, Eigen::Dynamic, 6> Y(n, 6);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& f = features[static_cast<std::size_t>(i)];
    if (f.size() != d) throw MisuseError("inconsistent feature dimensions");
    X.row(i) = f.transpose();
    Y.row(i) = targets[static_cast<std::size_t>(i)].transpose();
  }
  if (!X.allFinite() || !Y.allFinite()) throw DataError("non-finite regression data");

  const Eigen::RowVectorXd x_mean = X.colwise().mean();
  const Eigen::Matrix<double, 1, 6> y_mean = Y.colwise().mean();
  const Eigen::MatrixXd Xc = X.rowwise() - x_mean;
  const Eigen::Matrix<double, Eigen::Dynamic, 6> Yc = Y.rowwise() - y_mean;

  Eigen::MatrixXd cov = Xc.transpose() * Xc;
  const double trace = cov.trace();
  if (!(trace > 0.0)) throw Underdetermined("features have no variance");

  TrainingSummary summary;
  summary.pair_count = static_cast<std::size_t>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  summary.condition_number = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
  if (summary.condition_number > ridge_condition_limit) {
    summary.ridge_applied = true;
    summary.ridge_lambda = 1e-8 * trace / static_cast<double>(d);
    cov.diagonal().array() += summary.ridge_lambda;
  }

  const Eigen::MatrixXd rhs = Xc.transpose() * Yc;
  const Eigen::MatrixXd W = cov.ldlt().solve(rhs);  // d x 6

  LinearPredictor p;
  p.M = W.transpose();
  p.mu = (y_mean - x_mean * W).transpose();
  if (!p.M.allFinite() || !p.mu.allFinite()) throw DataError("least-squares solve produced non-finite parameters");

  const Eigen::Matrix<double, Eigen::Dynamic, 6> resid = Y - ((X * W).rowwise() + p.mu.transpose());
  summary.rms_residual = (resid.colwise().squaredNorm() / static_cast<double>(n)).cwiseSqrt().transpose();
  p.summary = summary;
  return p;
}

inline LinearPredictor fit_least_squares(std::span<const RegressionPair> pairs) {
  std::vector<Eigen::VectorXd> xs;
  std::vector<Output> ys;
  xs.reserve(pairs.size());
  ys.reserve(pairs.size());
  for (const auto& p : pairs) {
    xs.push_back(p.observation.values);
    ys.push_back(p.target);
  }
  return fit_least_squares(xs, ys);
}

inline Output predict(const LinearPredictor& model, const Eigen::VectorXd& o) { return model.predict(o); }

inline std::vector<Output> transform_set(const LinearPredictor& model, std::span<const Eigen::VectorXd> observations) {
  std::vector<Output> out;
  out.reserve(observations.size());
  for (const auto& o : observations) out.push_back(model.predict(o));
  return out;
}

inline io::json to_json(const LinearPredictor& p) {
  io::json s = {{"pair_count", p.summary.pair_count},
                {"rms_residual", io::vector_to_json(p.summary.rms_residual)},
                {"ridge_applied", p.summary.ridge_applied},
                {"ridge_lambda", p.summary.ridge_lambda},
                {"condition_number", io::extended_to_json(p.summary.condition_number)}};
  return {{"M", io::matrix_to_json(p.M)}, {"mu", io::vector_to_json(p.mu)}, {"summary", s}};
}

inline LinearPredictor predictor_from_json(const io::json& j) {
  const std::string what = "linear predictor";
  LinearPredictor p;
  p.M = io::matrix_from_json(io::require(j, "M", what), "M", 6, -1);
  p.mu = io::vector_from_json(io::require(j, "mu", what), "mu", 6);
  const auto& s = io::require(j, "summary", what);
  try {
    p.summary.pair_count = io::require(s, "pair_count", what).get<std::size_t>();
    p.summary.rms_residual = io::vector_from_json(io::require(s, "rms_residual", what), "rms_residual", 6);
    p.summary.ridge_applied = io::require(s, "ridge_applied", what).get<bool>();
    p.summary.ridge_lambda = io::number(io::require(s, "ridge_lambda", what), "ridge_lambda");
    p.summary.condition_number = io::extended_from_json(io::require(s, "condition_number", what), "condition_number");
  } catch (const io::json::exception& e) {
    throw DataError(what + ": " + e.what());
  }
  return p;
}

}  // namespace safemon
