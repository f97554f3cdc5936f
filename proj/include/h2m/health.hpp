#pragma once

// Poisson time-series health model: log relative risk is linear in the
// lagged latent exposures (original units), penalized smooths of calendar
// time and meteorology, a holiday contrast, and a daily overdispersion
// effect.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "h2m/error.hpp"
#include "h2m/pollutant.hpp"
#include "h2m/splines.hpp"

namespace h2m {

struct HealthParams {
  double beta0 = 0.0;
  Eigen::VectorXd beta;                     // per original unit of each pollutant
  std::vector<SmoothCoefficients> smooths;  // time, temperature, humidity
  double delta = 0.0;                       // holiday contrast; workday = 0
  Eigen::VectorXd eps;                      // overdispersion, length T
  double sigma_eps = 0.1;
};

struct HealthPriors {
  double coef_sd = std::sqrt(1e3);  // beta_0, delta, alpha
  double beta_sd = 0.1;             // per standardized unit of exposure
  /// When set, the prior sd on an original-unit coefficient is beta_sd / sd_p.
  bool beta_sd_per_standard_unit = true;
  VariancePrior variance_prior = VariancePrior::UniformSd;
  double sd_upper = 100.0;
  double ig_shape = 1.0;
  double ig_scale = 0.001;
  double smooth_shape = 1.0;   // Gamma(a, b) on the smoothing precision
  double smooth_rate = 0.001;
};

struct ExpectedCount {
  double value = 1.0;
};

inline ExpectedCount expected_count(const std::vector<std::int64_t>& counts) {
  if (counts.empty()) throw Error(ErrorCode::InvalidParameter, "expected_count needs at least one day");
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0,
                                       [](double acc, std::int64_t c) { return acc + static_cast<double>(c); });
  const double e = total / static_cast<double>(counts.size());
  if (!(e > 0.0)) throw Error(ErrorCode::NonPositiveRate, "average outcome must be positive");
  return {e};
}

/// Smooth confounder bases in the order time, temperature, humidity.
struct HealthBases {
  std::vector<SplineBasis> smooths;
};

/// log lambda_t = beta_0 + sum_p beta_p mu_{p,t-lag} + sum_i s_i(Z_ti) + delta I_t + eps_t.
/// `exposure` holds original-unit concentrations for every day.
inline double linear_predictor(const HealthParams& params, const Eigen::MatrixXd& exposure, const HealthBases& bases,
                               const std::vector<std::uint8_t>& holiday, Eigen::Index t, int lag = 1) {
  if (t < lag || t >= exposure.rows())
    throw Error(ErrorCode::LagUnavailable, "no lagged exposure for day " + std::to_string(t));
  if (params.beta.size() != exposure.cols())
    throw Error(ErrorCode::DimensionMismatch, "beta length does not match exposure columns");
  double eta = params.beta0 + exposure.row(t - lag).dot(params.beta);
  if (params.smooths.size() != bases.smooths.size())
    throw Error(ErrorCode::DimensionMismatch, "smooth coefficients do not match bases");
  for (std::size_t i = 0; i < bases.smooths.size(); ++i) {
    const auto& b = bases.smooths[i];
    const auto& c = params.smooths[i];
    if (c.radial.size() != b.num_knots()) throw Error(ErrorCode::DimensionMismatch, "smooth width mismatch");
    eta += c.linear * b.linear(t) + b.radial.row(t).dot(c.radial);
  }
  if (!holiday.empty() && holiday[static_cast<std::size_t>(t)]) eta += params.delta;
  if (params.eps.size() > 0) eta += params.eps(t);
  return eta;
}

/// Poisson log-likelihood sum_t [O_t log(lambda_t E) - lambda_t E - log O_t!]
/// over the supplied days.
inline double health_loglik(const std::vector<std::int64_t>& counts, const Eigen::VectorXd& lambda, double expected,
                            const std::vector<Eigen::Index>& days) {
  if (!(expected > 0.0)) throw Error(ErrorCode::NonPositiveRate, "expected count must be > 0");
  double ll = 0.0;
  for (Eigen::Index t : days) {
    const double rate = lambda(t) * expected;
    if (!(rate > 0.0) || !std::isfinite(rate)) throw Error(ErrorCode::NonPositiveRate, "rate must be finite and > 0");
    const double o = static_cast<double>(counts[static_cast<std::size_t>(t)]);
    ll += o * std::log(rate) - rate - std::lgamma(o + 1.0);
  }
  return ll;
}

inline double health_loglik(const std::vector<std::int64_t>& counts, const Eigen::VectorXd& lambda, double expected) {
  std::vector<Eigen::Index> days(counts.size());
  std::iota(days.begin(), days.end(), Eigen::Index{0});
  return health_loglik(counts, lambda, expected, days);
}

/// (exp(beta * IQR) - 1) * 100
inline double percent_increase(double beta, double iqr) { return std::expm1(beta * iqr) * 100.0; }

}  // namespace h2m
