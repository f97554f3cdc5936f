#pragma once

// Low-rank thin-plate penalized spline bases: a linear term plus radial
// |z - knot|^3 columns, all centered so the smooth is orthogonal to the
// health intercept.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

#include "h2m/dataset.hpp"
#include "h2m/error.hpp"

namespace h2m {

/// K interior knots at quantile levels (k+1)/(K+1), k = 0..K-1.
inline std::vector<double> make_knots(const std::vector<double>& z, int count) {
  if (count < 1) throw Error(ErrorCode::InvalidParameter, "knot count must be >= 1");
  std::vector<double> sorted = z;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> distinct = sorted;
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < static_cast<std::size_t>(count) + 2)
    throw Error(ErrorCode::TooFewDistinctValues,
                "need at least " + std::to_string(count + 2) + " distinct values for " + std::to_string(count) +
                    " knots");
  auto place = [&](const std::vector<double>& source) {
    std::vector<double> knots;
    for (int k = 0; k < count; ++k) knots.push_back(quantile_sorted(source, (k + 1.0) / (count + 1.0)));
    return knots;
  };
  auto knots = place(sorted);
  // Heavy ties can collapse quantiles; fall back to quantiles of the
  // distinct support, which are always strictly increasing here.
  if (std::adjacent_find(knots.begin(), knots.end(), std::greater_equal<>()) != knots.end()) knots = place(distinct);
  return knots;
}

struct SplineBasis {
  std::vector<double> knots;
  Eigen::VectorXd linear;  // centered covariate
  Eigen::MatrixXd radial;  // centered |z - knot|^3, one column per knot
  double linear_center = 0.0;
  Eigen::VectorXd radial_center;

  Eigen::Index rows() const { return linear.size(); }
  Eigen::Index num_knots() const { return radial.cols(); }
  /// Columns contributed to a design matrix: linear + radial.
  Eigen::Index width() const { return 1 + radial.cols(); }
};

inline SplineBasis basis(const std::vector<double>& z, const std::vector<double>& knots) {
  if (knots.empty() || std::adjacent_find(knots.begin(), knots.end(), std::greater_equal<>()) != knots.end())
    throw Error(ErrorCode::InvalidParameter, "knots must be non-empty and strictly increasing");
  const auto t = static_cast<Eigen::Index>(z.size());
  const auto k = static_cast<Eigen::Index>(knots.size());
  SplineBasis b;
  b.knots = knots;
  b.linear = Eigen::Map<const Eigen::VectorXd>(z.data(), t);
  b.radial.resize(t, k);
  for (Eigen::Index i = 0; i < t; ++i)
    for (Eigen::Index j = 0; j < k; ++j) {
      const double d = std::fabs(z[static_cast<std::size_t>(i)] - knots[static_cast<std::size_t>(j)]);
      b.radial(i, j) = d * d * d;
    }
  b.linear_center = t > 0 ? b.linear.mean() : 0.0;
  b.linear.array() -= b.linear_center;
  b.radial_center = t > 0 ? Eigen::VectorXd(b.radial.colwise().mean().transpose()) : Eigen::VectorXd::Zero(k);
  b.radial.rowwise() -= b.radial_center.transpose();
  return b;
}

struct SmoothCoefficients {
  double linear = 0.0;       // alpha
  Eigen::VectorXd radial;    // b_1..b_K
  double variance = 1.0;     // sigma^2_b, inverse of the smoothing precision
};

inline Eigen::VectorXd smooth_eval(const SplineBasis& b, const SmoothCoefficients& c) {
  if (c.radial.size() != b.num_knots())
    throw Error(ErrorCode::DimensionMismatch, "smooth coefficients do not match the number of knots");
  return c.linear * b.linear + b.radial * c.radial;
}

/// Day index 1..T mapped to [0, 1].
inline std::vector<double> time_covariate(std::size_t days) {
  std::vector<double> z(days);
  for (std::size_t t = 0; t < days; ++t) z[t] = days > 1 ? static_cast<double>(t) / static_cast<double>(days - 1) : 0.0;
  return z;
}

}  // namespace h2m
