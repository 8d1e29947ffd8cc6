#pragma once

// Reference computations written without the library's helpers, shared by the
// unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <vector>

#include "safemon/conformal.hpp"
#include "safemon/plant.hpp"
#include "safemon/seeding.hpp"

namespace oracle {

/// Counts calibration scores at or above s by a plain scan.
inline double p_value(double s, const std::vector<double>& alpha) {
  std::size_t c = 0;
  for (double a : alpha) c += a >= s ? 1 : 0;
  return static_cast<double>(1 + c) / static_cast<double>(alpha.size() + 1);
}

/// Smallest integer k with k >= (N+1)(1-eps), found by search in long double.
inline std::size_t rank(std::size_t n, double eps) {
  const long double target = static_cast<long double>(n + 1) * (1.0L - static_cast<long double>(eps));
  std::size_t k = 1;
  while (static_cast<long double>(k) < target - 1e-12L) ++k;
  return k;
}

inline double threshold(std::vector<double> alpha, double eps) {
  std::sort(alpha.begin(), alpha.end());
  const auto k = rank(alpha.size(), eps);
  return k > alpha.size() ? std::numeric_limits<double>::infinity() : alpha[k - 1];
}

/// True when (N+1) * eps sits on an integer, where the p-value rule and the
/// order-statistic threshold disagree by construction.
inline bool on_boundary(std::size_t n, double eps) {
  const double x = static_cast<double>(n + 1) * eps;
  return std::abs(x - std::round(x)) < 1e-6;
}

struct EquivalenceReport {
  std::size_t instances = 0;
  std::size_t comparisons = 0;
  std::size_t discrepancies = 0;  // library vs oracle, or alert rule vs threshold rule
  std::size_t boundary_skipped = 0;
};

/// Random tied multisets (values on a small integer grid) scored against a dense
/// epsilon grid; every comparison checks both the library against the oracle and
/// (p >= eps) <=> (s <= s*).
inline EquivalenceReport brute_force_equivalence(std::size_t instances, std::uint64_t seed) {
  safemon::Rng rng(seed);
  std::uniform_int_distribution<int> size(1, 20), val(-4, 4);
  EquivalenceReport r;
  std::vector<double> grid;
  for (int i = 1; i < 200; ++i) grid.push_back(i / 200.0);
  for (std::size_t inst = 0; inst < instances; ++inst) {
    std::vector<double> alpha(static_cast<std::size_t>(size(rng)));
    for (auto& a : alpha) a = val(rng);
    const double s = val(rng) + (rng() % 3 == 0 ? 0.5 : 0.0);
    auto sorted = safemon::plain_calibration(alpha);
    ++r.instances;
    for (double eps : grid) {
      if (on_boundary(alpha.size(), eps)) {
        ++r.boundary_skipped;
        continue;
      }
      ++r.comparisons;
      const double p = safemon::p_value(s, sorted);
      const double thr = safemon::threshold(sorted, eps);
      const bool ok = p == oracle::p_value(s, alpha) && thr == oracle::threshold(alpha, eps) &&
                      ((p >= eps) == (s <= thr));
      if (!ok) ++r.discrepancies;
    }
  }
  return r;
}

struct CoverageCell {
  std::size_t k = 0;
  double expected = 0.0;
  double observed = 0.0;
  double sigma = 0.0;
  [[nodiscard]] bool within(double n_sigma) const { return std::abs(observed - expected) <= n_sigma * sigma; }
};

/// P(s_{N+1} <= alpha_(k)) for iid continuous scores; should equal k / (N+1).
inline std::vector<CoverageCell> marginal_coverage(std::size_t n, std::size_t trials, const std::vector<std::size_t>& ks,
                                                   std::uint64_t seed) {
  safemon::Rng rng(seed);
  std::normal_distribution<double> g;
  std::vector<std::size_t> hits(ks.size(), 0);
  std::vector<double> alpha(n);
  for (std::size_t t = 0; t < trials; ++t) {
    for (auto& a : alpha) a = g(rng);
    const double s = g(rng);
    std::sort(alpha.begin(), alpha.end());
    for (std::size_t i = 0; i < ks.size(); ++i) hits[i] += s <= alpha[ks[i] - 1] ? 1 : 0;
  }
  std::vector<CoverageCell> out;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    CoverageCell c;
    c.k = ks[i];
    c.expected = static_cast<double>(ks[i]) / static_cast<double>(n + 1);
    c.observed = static_cast<double>(hits[i]) / static_cast<double>(trials);
    c.sigma = std::sqrt(c.expected * (1 - c.expected) / static_cast<double>(trials));
    out.push_back(c);
  }
  return out;
}

using Mat4 = Eigen::Matrix<long double, 4, 4>;

// exp(M) by scaling and squaring around a Taylor series summed to convergence.
inline Mat4 taylor_expm(const Mat4& m) {
  int squarings = 0;
  long double norm = m.cwiseAbs().rowwise().sum().maxCoeff();
  while (norm > 0.25L) {
    norm /= 2;
    ++squarings;
  }
  const Mat4 a = m / std::pow(2.0L, squarings);
  Mat4 sum = Mat4::Identity(), term = Mat4::Identity();
  for (int n = 1; n < 60; ++n) {
    term = term * a / static_cast<long double>(n);
    sum += term;
    if (term.cwiseAbs().maxCoeff() < 1e-30L) break;
  }
  for (int i = 0; i < squarings; ++i) sum = sum * sum;
  return sum;
}

// Exact one-period solution of x' = A x + b (b constant) via the augmented exponential.
inline safemon::State exact_step(const Eigen::Matrix3d& a, const safemon::State& b, const safemon::State& x, double dt) {
  Mat4 m = Mat4::Zero();
  m.topLeftCorner<3, 3>() = a.cast<long double>() * dt;
  m.topRightCorner<3, 1>() = b.cast<long double>() * dt;
  Eigen::Matrix<long double, 4, 1> z;
  z << x.cast<long double>(), 1.0L;
  return (taylor_expm(m) * z).head<3>().cast<double>();
}

inline Eigen::Matrix3d random_stable(safemon::Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> mag(0.1, 20.0);
  Eigen::Matrix3d lambda = Eigen::Matrix3d::Zero();
  if (u(rng) > 0) {
    const double r = mag(rng), th = 0.5 * M_PI * (0.05 + 0.9 * std::abs(u(rng)));
    lambda(0, 0) = lambda(1, 1) = -r * std::cos(th);
    lambda(0, 1) = r * std::sin(th);
    lambda(1, 0) = -r * std::sin(th);
  } else {
    lambda(0, 0) = -mag(rng);
    lambda(1, 1) = -mag(rng);
  }
  lambda(2, 2) = -mag(rng);
  Eigen::Matrix3d v = Eigen::Matrix3d::Identity();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) v(i, j) += 0.4 * u(rng);
  return v * lambda * v.inverse();
}

}  // namespace oracle
