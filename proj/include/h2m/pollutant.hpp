#pragma once

// Exposure component: noisy measurements of a latent concentration whose
// mean is a quadratic meteorology regression plus a multivariate random-walk
// residual process shared across pollutants.

#include <Eigen/Dense>

#include <cmath>
#include <numbers>

#include "h2m/dataset.hpp"
#include "h2m/error.hpp"
#include "h2m/rng.hpp"

namespace h2m {

struct PollutantParams {
  /// Rows: intercept, temp, temp^2, rhum, rhum^2 (or just the intercept when
  /// meteorology is left out of the exposure model). One column per pollutant.
  Eigen::MatrixXd gamma;
  Eigen::MatrixXd theta;  // T x P latent residual process
  Eigen::VectorXd sigma;  // measurement-error sd per pollutant
  Eigen::MatrixXd Sigma;  // innovation covariance

  Eigen::Index num_pollutants() const { return sigma.size(); }
};

enum class VariancePrior { UniformSd, InverseGamma };

struct PollutantPriors {
  double coef_sd = std::sqrt(1e3);
  VariancePrior variance_prior = VariancePrior::UniformSd;
  double sd_upper = 100.0;       // Uniform(0, upper) on sigma_p
  double ig_shape = 1.0;         // InverseGamma(shape, scale) on sigma_p^2
  double ig_scale = 0.001;
  double iw_dof = 0.0;           // d; set to P when the model is prepared
  Eigen::MatrixXd iw_scale;      // D = d * prior correlation estimate

  static PollutantPriors with_correlation(const Eigen::MatrixXd& correlation) {
    PollutantPriors pr;
    pr.iw_dof = static_cast<double>(correlation.rows());
    pr.iw_scale = pr.iw_dof * correlation;
    return pr;
  }
};

/// Design row of the exposure mean for standardized meteorology.
inline Eigen::VectorXd exposure_covariate_row(double temp, double rhum, Eigen::Index width) {
  Eigen::VectorXd x(width);
  x(0) = 1.0;
  if (width == 5) x << 1.0, temp, temp * temp, rhum, rhum * rhum;
  return x;
}

/// mu_pt = gamma_0p + gamma_1p temp + gamma_2p temp^2 + gamma_3p rhum + gamma_4p rhum^2 + theta_pt
inline double pollutant_mean(const PollutantParams& params, double temp, double rhum, Eigen::Index t,
                             Eigen::Index p) {
  const Eigen::VectorXd x = exposure_covariate_row(temp, rhum, params.gamma.rows());
  return x.dot(params.gamma.col(p)) + params.theta(t, p);
}

/// Gaussian measurement log-likelihood summed over observed cells.
inline double measurement_loglik(const Eigen::MatrixXd& y, const MaskMatrix& observed, const Eigen::MatrixXd& mu,
                                 const Eigen::VectorXd& sigma) {
  if (y.rows() != mu.rows() || y.cols() != mu.cols() || observed.rows() != y.rows() ||
      observed.cols() != y.cols() || sigma.size() != y.cols())
    throw Error(ErrorCode::DimensionMismatch, "measurement_loglik: shapes disagree");
  if (!(sigma.array() > 0.0).all()) throw Error(ErrorCode::NonPositiveScale, "measurement sd must be > 0");
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  double ll = 0.0;
  for (Eigen::Index p = 0; p < y.cols(); ++p) {
    const double log_sd = std::log(sigma(p));
    const double inv_var = 1.0 / (sigma(p) * sigma(p));
    for (Eigen::Index t = 0; t < y.rows(); ++t) {
      if (!observed(t, p)) continue;
      const double r = y(t, p) - mu(t, p);
      ll += -half_log_2pi - log_sd - 0.5 * r * r * inv_var;
    }
  }
  return ll;
}

/// MVN log-density of theta_t given theta_{t-lag} (or given the zero vector
/// for the initial days).
inline double latent_transition_logdensity(const Eigen::VectorXd& current, const Eigen::VectorXd& previous,
                                           const Eigen::MatrixXd& Sigma, double rho = 1.0) {
  Eigen::LLT<Eigen::MatrixXd> llt(Sigma);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularCovariance, "innovation covariance not PD");
  const Eigen::VectorXd diff = current - rho * previous;
  const Eigen::VectorXd z = llt.matrixL().solve(diff);
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const double k = static_cast<double>(diff.size());
  return -0.5 * k * std::log(2.0 * std::numbers::pi) - 0.5 * logdet - 0.5 * z.squaredNorm();
}

/// Standardized exposure back on the original measurement scale.
inline double back_transform(double mu_std, const ScalingParams& scaling, Eigen::Index p) {
  return scaling.to_original(mu_std, p);
}

inline Eigen::MatrixXd back_transform(const Eigen::MatrixXd& mu_std, const ScalingParams& scaling) {
  Eigen::MatrixXd out(mu_std.rows(), mu_std.cols());
  for (Eigen::Index p = 0; p < mu_std.cols(); ++p)
    out.col(p) = (mu_std.col(p).array() * scaling.sd(p) + scaling.mean(p)).matrix();
  return out;
}

/// Posterior-predictive draw for an unobserved measurement.
inline double impute_missing(double mu, double sigma, Stream& rng) { return mu + sigma * rng.normal(); }

/// Log density of the whole exposure component for a given state:
/// measurements, latent transitions (initial lag days centered at zero),
/// and all exposure priors. Standardized scale throughout.
inline double exposure_log_density(const Eigen::MatrixXd& y_std, const MaskMatrix& observed,
                                   const Eigen::MatrixXd& design, const PollutantParams& params,
                                   const PollutantPriors& priors, int lag, double rho = 1.0) {
  const Eigen::Index t_len = y_std.rows();
  const Eigen::Index p_len = y_std.cols();
  if (!(params.sigma.array() > 0.0).all()) return -std::numeric_limits<double>::infinity();
  const Eigen::MatrixXd mu = design * params.gamma + params.theta;
  double lp = measurement_loglik(y_std, observed, mu, params.sigma);

  Eigen::LLT<Eigen::MatrixXd> llt(params.Sigma);
  if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const double norm = -0.5 * static_cast<double>(p_len) * std::log(2.0 * std::numbers::pi) - 0.5 * logdet;
  for (Eigen::Index t = 0; t < t_len; ++t) {
    Eigen::VectorXd diff = params.theta.row(t).transpose();
    if (t >= lag) diff -= rho * params.theta.row(t - lag).transpose();
    lp += norm - 0.5 * llt.matrixL().solve(diff).squaredNorm();
  }

  const double coef_var = priors.coef_sd * priors.coef_sd;
  lp += -0.5 * params.gamma.squaredNorm() / coef_var -
        0.5 * static_cast<double>(params.gamma.size()) * std::log(2.0 * std::numbers::pi * coef_var);
  for (Eigen::Index p = 0; p < p_len; ++p) {
    const double s = params.sigma(p);
    if (priors.variance_prior == VariancePrior::UniformSd) {
      if (s >= priors.sd_upper) return -std::numeric_limits<double>::infinity();
      lp -= std::log(priors.sd_upper);
    } else {
      lp += inverse_gamma_logpdf(s * s, priors.ig_shape, priors.ig_scale);
    }
  }
  lp += inverse_wishart_logpdf(params.Sigma, priors.iw_scale, priors.iw_dof);
  return lp;
}

}  // namespace h2m
