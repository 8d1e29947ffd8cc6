#pragma once

// Nearest-neighbor conformal scoring, leave-one-out calibration, thresholds,
// p-values, and the runtime monitor built from them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "safemon/datasets.hpp"
#include "safemon/errors.hpp"
#include "safemon/json_io.hpp"
#include "safemon/plant.hpp"
#include "safemon/predictor.hpp"

namespace safemon {

/// Points stored column-wise: dim x count.
using PointSet = Eigen::MatrixXd;

inline PointSet make_point_set(std::span<const Eigen::VectorXd> points) {
  if (points.empty()) return PointSet(0, 0);
  PointSet m(points.front().size(), static_cast<Eigen::Index>(points.size()));
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].size() != m.rows()) throw MisuseError("point set has mixed dimensions");
    m.col(static_cast<Eigen::Index>(i)) = points[i];
  }
  return m;
}

inline PointSet make_point_set(std::initializer_list<double> scalars) {
  PointSet m(1, static_cast<Eigen::Index>(scalars.size()));
  Eigen::Index i = 0;
  for (double v : scalars) m(0, i++) = v;
  return m;
}

// ---------------------------------------------------------------------------
// Scores and calibration

/// Exhaustive min squared Euclidean distance from y to the columns of set,
/// optionally skipping one column.
inline double min_sq_distance(const Eigen::VectorXd& y, const PointSet& set,
                              std::optional<Eigen::Index> skip = std::nullopt) {
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < set.cols(); ++j) {
    if (skip && *skip == j) continue;
    const double d = (set.col(j) - y).squaredNorm();
    if (d < best) best = d;
  }
  return best;
}

/// Distance to the nearest unsafe point minus distance to the nearest safe
/// point; unsafe-looking inputs score low.
inline double nn_score(const Eigen::VectorXd& y, const PointSet& unsafe, const PointSet& safe) {
  if (unsafe.cols() == 0 || safe.cols() == 0) throw MisuseError("nn_score needs nonempty unsafe and safe sets");
  if (unsafe.rows() != y.size() || safe.rows() != y.size()) throw MisuseError("nn_score dimension mismatch");
  return min_sq_distance(y, unsafe) - min_sq_distance(y, safe);
}

/// Leave-one-out scores of the unsafe points, sorted ascending.
inline std::vector<double> loo_calibration(const PointSet& unsafe, const PointSet& safe) {
  if (unsafe.cols() < 2) throw DegenerateCalibration("leave-one-out calibration needs at least 2 unsafe points");
  if (safe.cols() == 0) throw MisuseError("leave-one-out calibration needs a nonempty safe set");
  if (unsafe.rows() != safe.rows()) throw MisuseError("unsafe/safe dimension mismatch");
  std::vector<double> alpha;
  alpha.reserve(static_cast<std::size_t>(unsafe.cols()));
  for (Eigen::Index i = 0; i < unsafe.cols(); ++i) {
    const Eigen::VectorXd y = unsafe.col(i);
    alpha.push_back(min_sq_distance(y, unsafe, i) - min_sq_distance(y, safe));
  }
  std::sort(alpha.begin(), alpha.end());
  return alpha;
}

inline std::vector<double> plain_calibration(std::vector<double> scores) {
  if (scores.empty()) throw DegenerateCalibration("calibration needs at least one score");
  for (double s : scores)
    if (!std::isfinite(s)) throw DataError("non-finite calibration score");
  std::sort(scores.begin(), scores.end());
  return scores;
}

/// Order-statistic index k = ceil((N+1)(1-eps)), 1-based; N+1 means "always alert".
inline std::size_t threshold_rank(std::size_t n, double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw MisuseError("epsilon must lie in (0, 1)");
  const double v = static_cast<double>(n + 1) * (1.0 - epsilon);
  const auto k = static_cast<std::size_t>(std::max(1.0, std::ceil(v - 1e-9)));
  return std::min(k, n + 1);
}

/// Score threshold s*: alert when s <= s*. +inf when the rank exceeds N.
inline double threshold(std::span<const double> alpha_sorted, double epsilon) {
  const auto k = threshold_rank(alpha_sorted.size(), epsilon);
  if (k > alpha_sorted.size()) return std::numeric_limits<double>::infinity();
  return alpha_sorted[k - 1];
}

/// (1 + #{alpha_i >= s}) / (N + 1). Ties count toward alerting.
inline double p_value(double s, std::span<const double> alpha_sorted) {
  if (std::isnan(s)) throw DataError("p_value of NaN score");
  const auto first_ge = std::lower_bound(alpha_sorted.begin(), alpha_sorted.end(), s);
  const auto at_or_above = static_cast<double>(std::distance(first_ge, alpha_sorted.end()));
  return (1.0 + at_or_above) / static_cast<double>(alpha_sorted.size() + 1);
}

inline double ny_score(const Output& y) { return -std::abs(y[out::ny]); }

// ---------------------------------------------------------------------------
// Transforms

struct IdentityTransform {};

struct LinearTransform {
  LinearPredictor predictor;
};

/// Projection basis * (o - mean); basis rows are orthonormal principal directions.
struct PcaTransform {
  Eigen::VectorXd mean;
  Eigen::MatrixXd basis;  // dims x input_dim

  [[nodiscard]] Eigen::VectorXd project(const Eigen::VectorXd& o) const {
    if (o.size() != mean.size()) throw MisuseError("PCA projection dimension mismatch");
    return basis * (o - mean);
  }
};

/// Newest frame y_t of the observation buffer.
struct CurrentOutputTransform {};

using Transform = std::variant<IdentityTransform, LinearTransform, PcaTransform, CurrentOutputTransform>;

inline std::string transform_tag(const Transform& t) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, IdentityTransform>) return "identity";
        else if constexpr (std::is_same_v<T, LinearTransform>) return "linear-predictor";
        else if constexpr (std::is_same_v<T, PcaTransform>) return "pca-map";
        else return "current-output";
      },
      t);
}

inline Eigen::VectorXd apply_transform(const Transform& t, const Eigen::VectorXd& o) {
  return std::visit(
      [&](const auto& v) -> Eigen::VectorXd {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, IdentityTransform>) return o;
        else if constexpr (std::is_same_v<T, LinearTransform>) return v.predictor.predict(o);
        else if constexpr (std::is_same_v<T, PcaTransform>) return v.project(o);
        else {
          if (o.size() < static_cast<Eigen::Index>(output_dim)) throw MisuseError("observation shorter than one frame");
          return o.tail<6>();
        }
      },
      t);
}

// ---------------------------------------------------------------------------
// Monitor

enum class ScoreKind { nearest_neighbor, negative_abs_ny };

inline std::string score_tag(ScoreKind k) {
  return k == ScoreKind::nearest_neighbor ? "nearest-neighbor" : "negative-abs-ny";
}

struct MonitorMeta {
  std::string method;
  double dt = 0.05;
  int t_early_steps = 5;
  int buffer_k = 2;

  [[nodiscard]] std::size_t observation_dim() const { return static_cast<std::size_t>(buffer_k + 1) * output_dim; }
};

struct Verdict {
  double score = 0.0;
  double p_value = 1.0;
  bool alert = true;
  std::optional<Output> predicted_future_output;
};

/// Immutable after construction; safe to share across threads.
class CalibratedMonitor {
public:
  /// Nearest-neighbor monitor with leave-one-out calibration on `unsafe`.
  /// `scale`, when nonempty, multiplies each transformed coordinate before distances.
  static CalibratedMonitor nearest_neighbor(MonitorMeta meta, Transform transform, PointSet unsafe, PointSet safe,
                                            Eigen::VectorXd scale = {}) {
    CalibratedMonitor m;
    m.meta_ = std::move(meta);
    m.transform_ = std::move(transform);
    m.score_ = ScoreKind::nearest_neighbor;
    m.scale_ = std::move(scale);
    if (m.scale_.size() > 0) {
      if (m.scale_.size() != unsafe.rows()) throw MisuseError("feature scale dimension mismatch");
      unsafe = m.scale_.asDiagonal() * unsafe;
      safe = m.scale_.asDiagonal() * safe;
    }
    m.alpha_ = loo_calibration(unsafe, safe);
    m.unsafe_ = std::move(unsafe);
    m.safe_ = std::move(safe);
    m.validate();
    return m;
  }

  /// -|Ny| monitor calibrated on the unsafe observations' own scores.
  static CalibratedMonitor negative_ny(MonitorMeta meta, Transform transform, std::vector<double> unsafe_scores) {
    CalibratedMonitor m;
    m.meta_ = std::move(meta);
    m.transform_ = std::move(transform);
    m.score_ = ScoreKind::negative_abs_ny;
    m.alpha_ = plain_calibration(std::move(unsafe_scores));
    m.validate();
    return m;
  }

  /// Reassembles a monitor from stored parts without recalibrating; validate() checks consistency.
  static CalibratedMonitor from_parts(MonitorMeta meta, Transform transform, ScoreKind score, PointSet unsafe,
                                      PointSet safe, std::vector<double> alpha_sorted, Eigen::VectorXd scale) {
    CalibratedMonitor m;
    m.meta_ = std::move(meta);
    m.transform_ = std::move(transform);
    m.score_ = score;
    m.unsafe_ = std::move(unsafe);
    m.safe_ = std::move(safe);
    m.alpha_ = std::move(alpha_sorted);
    m.scale_ = std::move(scale);
    m.validate();
    return m;
  }

  [[nodiscard]] const MonitorMeta& meta() const { return meta_; }
  [[nodiscard]] const Transform& transform() const { return transform_; }
  [[nodiscard]] ScoreKind score_kind() const { return score_; }
  [[nodiscard]] const PointSet& unsafe_points() const { return unsafe_; }
  [[nodiscard]] const PointSet& safe_points() const { return safe_; }
  [[nodiscard]] const std::vector<double>& alpha_sorted() const { return alpha_; }
  [[nodiscard]] const Eigen::VectorXd& feature_scale() const { return scale_; }
  [[nodiscard]] std::size_t calibration_size() const { return alpha_.size(); }

  /// Point in the space where scores are computed.
  [[nodiscard]] Eigen::VectorXd embed(const Eigen::VectorXd& observation) const {
    Eigen::VectorXd z = apply_transform(transform_, observation);
    if (scale_.size() > 0) z = z.cwiseProduct(scale_);
    return z;
  }

  [[nodiscard]] double score_observation(const Eigen::VectorXd& observation) const {
    if (observation.size() != static_cast<Eigen::Index>(meta_.observation_dim()))
      throw MisuseError("observation dimension " + std::to_string(observation.size()) + " does not match monitor (" +
                        std::to_string(meta_.observation_dim()) + ")");
    if (score_ == ScoreKind::nearest_neighbor) return nn_score(embed(observation), unsafe_, safe_);
    return ny_score(apply_transform(transform_, observation).head<6>());
  }

  [[nodiscard]] double p_value_of(double score) const { return safemon::p_value(score, alpha_); }

  [[nodiscard]] Verdict verdict(const Eigen::VectorXd& observation, double epsilon) const {
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw MisuseError("epsilon must lie in (0, 1)");
    Verdict v;
    v.score = score_observation(observation);
    v.p_value = p_value_of(v.score);
    v.alert = v.p_value >= epsilon;
    if (const auto* lin = std::get_if<LinearTransform>(&transform_)) v.predicted_future_output = lin->predictor.predict(observation);
    return v;
  }

  void validate() const;

private:
  CalibratedMonitor() = default;

  MonitorMeta meta_;
  Transform transform_;
  ScoreKind score_ = ScoreKind::nearest_neighbor;
  PointSet unsafe_;
  PointSet safe_;
  std::vector<double> alpha_;
  Eigen::VectorXd scale_;
};

inline Eigen::Index transform_output_dim(const Transform& t, std::size_t observation_dim) {
  return std::visit(
      [&](const auto& v) -> Eigen::Index {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, IdentityTransform>) return static_cast<Eigen::Index>(observation_dim);
        else if constexpr (std::is_same_v<T, LinearTransform>) return 6;
        else if constexpr (std::is_same_v<T, PcaTransform>) return v.basis.rows();
        else return 6;
      },
      t);
}

inline void CalibratedMonitor::validate() const {
  if (meta_.buffer_k < 0 || meta_.t_early_steps < 0 || !(meta_.dt > 0.0)) throw DataError("monitor: invalid timing metadata");
  if (alpha_.empty()) throw DataError("monitor: empty calibration set");
  for (double a : alpha_)
    if (std::isnan(a)) throw DataError("monitor: NaN calibration score");
  if (!std::is_sorted(alpha_.begin(), alpha_.end())) throw DataError("monitor: calibration scores not sorted");

  const auto obs_dim = meta_.observation_dim();
  if (const auto* lin = std::get_if<LinearTransform>(&transform_)) {
    if (lin->predictor.input_dim() != static_cast<Eigen::Index>(obs_dim)) throw DataError("monitor: predictor input dimension mismatch");
    if (!lin->predictor.M.allFinite() || !lin->predictor.mu.allFinite()) throw DataError("monitor: non-finite predictor");
  }
  if (const auto* pca = std::get_if<PcaTransform>(&transform_)) {
    if (pca->mean.size() != static_cast<Eigen::Index>(obs_dim) || pca->basis.cols() != pca->mean.size() || pca->basis.rows() < 1)
      throw DataError("monitor: PCA map dimension mismatch");
  }

  if (score_ == ScoreKind::nearest_neighbor) {
    const auto dim = transform_output_dim(transform_, obs_dim);
    if (alpha_.size() < 2) throw DataError("monitor: nearest-neighbor calibration needs N >= 2");
    if (static_cast<std::size_t>(unsafe_.cols()) != alpha_.size()) throw DataError("monitor: |Y_u| != |alpha|");
    if (safe_.cols() == 0) throw DataError("monitor: empty safe point set");
    if (unsafe_.rows() != dim || safe_.rows() != dim) throw DataError("monitor: point set dimension mismatch");
    if (scale_.size() != 0 && scale_.size() != dim) throw DataError("monitor: feature scale dimension mismatch");
    if (!unsafe_.allFinite() || !safe_.allFinite()) throw DataError("monitor: non-finite points");
  } else {
    if (std::holds_alternative<IdentityTransform>(transform_) || std::holds_alternative<PcaTransform>(transform_))
      throw DataError("monitor: -|Ny| score needs an output-space transform");
    for (double a : alpha_)
      if (!std::isfinite(a)) throw DataError("monitor: non-finite calibration score");
  }
}

/// Runtime loop for one time step. `recent` holds the latest outputs, newest
/// last. Returns nullopt until k + 1 outputs are available.
inline std::optional<Verdict> monitor_step(const CalibratedMonitor& monitor, std::span<const Output> recent,
                                           double epsilon) {
  const auto need = static_cast<std::size_t>(monitor.meta().buffer_k) + 1;
  if (recent.size() < need) return std::nullopt;
  return monitor.verdict(stack_outputs(recent.last(need)), epsilon);
}

// ---------------------------------------------------------------------------
// Artifact persistence

inline constexpr int monitor_format_version = 1;

inline io::json transform_to_json(const Transform& t) {
  io::json j = {{"kind", transform_tag(t)}};
  if (const auto* lin = std::get_if<LinearTransform>(&t)) j["predictor"] = to_json(lin->predictor);
  if (const auto* pca = std::get_if<PcaTransform>(&t)) {
    j["mean"] = io::vector_to_json(pca->mean);
    j["basis"] = io::matrix_to_json(pca->basis);
  }
  return j;
}

inline Transform transform_from_json(const io::json& j) {
  const std::string what = "monitor transform";
  const auto kind = io::require(j, "kind", what).get<std::string>();
  if (kind == "identity") return IdentityTransform{};
  if (kind == "current-output") return CurrentOutputTransform{};
  if (kind == "linear-predictor") return LinearTransform{predictor_from_json(io::require(j, "predictor", what))};
  if (kind == "pca-map") {
    PcaTransform p;
    p.mean = io::vector_from_json(io::require(j, "mean", what), "mean");
    p.basis = io::matrix_from_json(io::require(j, "basis", what), "basis", -1, p.mean.size());
    return p;
  }
  throw DataError(what + ": unknown kind '" + kind + "'");
}

inline io::json points_to_json(const PointSet& p) { return io::matrix_to_json(p.transpose()); }

inline PointSet points_from_json(const io::json& j, const std::string& what) {
  return io::matrix_from_json(j, what).transpose();
}

/// Probe observation stored with every artifact: the all-zero buffer (trimmed
/// flight at rest). Its score and p-value are re-derived on load.
inline Eigen::VectorXd probe_observation(const MonitorMeta& meta) {
  return Eigen::VectorXd::Zero(static_cast<Eigen::Index>(meta.observation_dim()));
}

inline io::json to_json(const CalibratedMonitor& m) {
  using io::json;
  json j;
  j["format"] = "safemon.monitor";
  j["version"] = monitor_format_version;
  j["metadata"] = {{"method", m.meta().method},
                   {"N", m.calibration_size()},
                   {"dt", m.meta().dt},
                   {"t_early_steps", m.meta().t_early_steps},
                   {"buffer_k", m.meta().buffer_k}};
  j["transform"] = transform_to_json(m.transform());
  j["score"] = score_tag(m.score_kind());
  json alpha = json::array();
  for (double a : m.alpha_sorted()) alpha.push_back(io::extended_to_json(a));
  j["alpha_sorted"] = std::move(alpha);
  if (m.score_kind() == ScoreKind::nearest_neighbor) {
    j["Y_u"] = points_to_json(m.unsafe_points());
    j["Y_s"] = points_to_json(m.safe_points());
    if (m.feature_scale().size() > 0) j["feature_scale"] = io::vector_to_json(m.feature_scale());
  }
  const auto probe = probe_observation(m.meta());
  const double s = m.score_observation(probe);
  j["probe"] = {{"score", io::extended_to_json(s)}, {"p_value", m.p_value_of(s)}};
  return j;
}

inline CalibratedMonitor monitor_from_json(const io::json& j) {
  const std::string what = "monitor artifact";
  if (io::require(j, "format", what) != "safemon.monitor") throw DataError(what + ": wrong format tag");
  if (io::require(j, "version", what) != monitor_format_version) throw DataError(what + ": unsupported version");
  try {
    const auto& md = io::require(j, "metadata", what);
    MonitorMeta meta;
    meta.method = io::require(md, "method", what).get<std::string>();
    meta.dt = io::number(io::require(md, "dt", what), "dt");
    meta.t_early_steps = io::require(md, "t_early_steps", what).get<int>();
    meta.buffer_k = io::require(md, "buffer_k", what).get<int>();
    const auto n = io::require(md, "N", what).get<std::size_t>();

    const auto transform = transform_from_json(io::require(j, "transform", what));
    const auto score_name = io::require(j, "score", what).get<std::string>();
    ScoreKind kind;
    if (score_name == "nearest-neighbor") kind = ScoreKind::nearest_neighbor;
    else if (score_name == "negative-abs-ny") kind = ScoreKind::negative_abs_ny;
    else throw DataError(what + ": unknown score '" + score_name + "'");

    std::vector<double> alpha;
    for (const auto& a : io::require(j, "alpha_sorted", what)) alpha.push_back(io::extended_from_json(a, "alpha_sorted"));
    if (alpha.size() != n) throw DataError(what + ": N does not match alpha_sorted");

    PointSet yu, ys;
    Eigen::VectorXd scale;
    if (kind == ScoreKind::nearest_neighbor) {
      yu = points_from_json(io::require(j, "Y_u", what), "Y_u");
      ys = points_from_json(io::require(j, "Y_s", what), "Y_s");
      if (j.contains("feature_scale")) scale = io::vector_from_json(j.at("feature_scale"), "feature_scale");
    }
    auto m = CalibratedMonitor::from_parts(meta, transform, kind, std::move(yu), std::move(ys), std::move(alpha),
                                           std::move(scale));
    if (kind == ScoreKind::nearest_neighbor && loo_calibration(m.unsafe_points(), m.safe_points()) != m.alpha_sorted())
      throw DataError(what + ": alpha_sorted does not match leave-one-out calibration of Y_u, Y_s");

    const auto& probe = io::require(j, "probe", what);
    const double s = m.score_observation(probe_observation(meta));
    if (io::extended_from_json(io::require(probe, "score", what), "probe score") != s ||
        io::number(io::require(probe, "p_value", what), "probe p_value") != m.p_value_of(s))
      throw DataError(what + ": probe verdict does not reproduce");
    return m;
  } catch (const io::json::exception& e) {
    throw DataError(what + ": " + e.what());
  }
}

inline void save_monitor(const CalibratedMonitor& m, const std::filesystem::path& path) {
  io::write_file(path, io::dump(to_json(m)));
}

inline CalibratedMonitor load_monitor(const std::filesystem::path& path) {
  return monitor_from_json(io::parse(io::read_file(path), path.string()));
}

}  // namespace safemon
