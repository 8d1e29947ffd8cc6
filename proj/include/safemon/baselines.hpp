#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "safemon/conformal.hpp"
#include "safemon/datasets.hpp"
#include "safemon/errors.hpp"
#include "safemon/predictor.hpp"

namespace safemon {

enum class Method { full, no_pred, pca, current_ny, pred_ny };

inline constexpr std::array<Method, 5> all_methods{Method::full, Method::no_pred, Method::pca, Method::current_ny,
                                                   Method::pred_ny};

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::full: return "full";
    case Method::no_pred: return "no_pred";
    case Method::pca: return "pca";
    case Method::current_ny: return "current_ny";
    case Method::pred_ny: return "pred_ny";
  }
  return "?";
}

inline Method parse_method(std::string_view name) {
  for (auto m : all_methods)
    if (method_name(m) == name) return m;
  throw ConfigError("unknown method '" + std::string(name) + "'");
}

struct MethodSpec {
  Method method = Method::full;
  int pca_dims = 6;
  bool scale_features = false;  // standardize transformed coordinates by the safe set's spread

  [[nodiscard]] bool needs_predictor() const { return method == Method::full || method == Method::pred_ny; }

  void validate(std::size_t observation_dim = 18) const {
    if (pca_dims < 1 || static_cast<std::size_t>(pca_dims) > observation_dim)
      throw ConfigError("pca_dims must lie in [1, " + std::to_string(observation_dim) + "]");
  }
  bool operator==(const MethodSpec&) const = default;
};

/// Top principal directions of the centered data, one per row, with the sign
/// fixed so each row's largest-magnitude entry is positive.
inline PcaTransform fit_pca(std::span<const Eigen::VectorXd> observations, int dims) {
  if (dims < 1) throw MisuseError("PCA needs dims >= 1");
  if (observations.size() < static_cast<std::size_t>(dims) + 1) throw MisuseError("PCA needs at least dims + 1 observations");
  const PointSet X = make_point_set(observations);  // d x n
  const Eigen::Index d = X.rows();
  if (dims > d) throw MisuseError("PCA dims exceed data dimension");

  const Eigen::VectorXd mean = X.rowwise().mean();
  const Eigen::MatrixXd Xc = X.colwise() - mean;
  const Eigen::MatrixXd cov = (Xc * Xc.transpose()) / static_cast<double>(X.cols() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw DataError("PCA eigen-decomposition failed");

  const auto& values = eig.eigenvalues();  // ascending
  const double top = values(d - 1);
  const double tol = std::max(top, 0.0) * 1e-12;
  std::size_t rank = 0;
  for (Eigen::Index i = 0; i < d; ++i)
    if (values(i) > tol && values(i) > 0.0) ++rank;
  if (rank < static_cast<std::size_t>(dims)) throw RankDeficiency(rank, static_cast<std::size_t>(dims));

  PcaTransform p;
  p.mean = mean;
  p.basis.resize(dims, d);
  for (int r = 0; r < dims; ++r) {
    Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - r);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    p.basis.row(r) = v.transpose();
  }
  return p;
}

namespace detail {

inline PointSet embed_all(const Transform& t, std::span<const Eigen::VectorXd> obs) {
  std::vector<Eigen::VectorXd> pts;
  pts.reserve(obs.size());
  for (const auto& o : obs) pts.push_back(apply_transform(t, o));
  return make_point_set(pts);
}

inline Eigen::VectorXd inverse_spread(const PointSet& safe) {
  const Eigen::VectorXd mean = safe.rowwise().mean();
  Eigen::VectorXd s(safe.rows());
  for (Eigen::Index i = 0; i < safe.rows(); ++i) {
    const double var = (safe.row(i).array() - mean(i)).square().sum() / static_cast<double>(std::max<Eigen::Index>(1, safe.cols() - 1));
    s(i) = var > 0.0 ? 1.0 / std::sqrt(var) : 1.0;
  }
  return s;
}

}  // namespace detail

/// Wires one of the five monitors from a dataset bundle (and a fitted predictor
/// for the methods that forecast).
inline CalibratedMonitor build_monitor(const MethodSpec& spec, const DatasetBundle& bundle,
                                       const LinearPredictor* predictor) {
  spec.validate(bundle.observation_dim());
  if (spec.needs_predictor() && predictor == nullptr)
    throw MisuseError("method '" + std::string(method_name(spec.method)) + "' needs a fitted predictor");

  MonitorMeta meta{std::string(method_name(spec.method)), bundle.dt, bundle.t_early_steps, bundle.buffer_k};

  std::vector<Eigen::VectorXd> unsafe_obs;
  unsafe_obs.reserve(bundle.error_observations.size());
  for (const auto& o : bundle.error_observations) unsafe_obs.push_back(o.values);
  std::vector<Eigen::VectorXd> safe_obs;
  safe_obs.reserve(bundle.safe.size());
  for (const auto& p : bundle.safe) safe_obs.push_back(p.observation.values);

  auto nn = [&](Transform t) {
    PointSet yu = detail::embed_all(t, unsafe_obs);
    PointSet ys = detail::embed_all(t, safe_obs);
    Eigen::VectorXd scale;
    if (spec.scale_features) scale = detail::inverse_spread(ys);
    return CalibratedMonitor::nearest_neighbor(meta, std::move(t), std::move(yu), std::move(ys), std::move(scale));
  };
  auto ny = [&](Transform t) {
    std::vector<double> scores;
    scores.reserve(unsafe_obs.size());
    for (const auto& o : unsafe_obs) scores.push_back(ny_score(apply_transform(t, o).head<6>()));
    return CalibratedMonitor::negative_ny(meta, std::move(t), std::move(scores));
  };

  switch (spec.method) {
    case Method::full: return nn(LinearTransform{*predictor});
    case Method::no_pred: return nn(IdentityTransform{});
    case Method::pca: return nn(fit_pca(safe_obs, spec.pca_dims));
    case Method::current_ny: return ny(CurrentOutputTransform{});
    case Method::pred_ny: return ny(LinearTransform{*predictor});
  }
  throw MisuseError("unknown method");
}

}  // namespace safemon
