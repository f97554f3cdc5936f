#pragma once

// Generic transition kernels shared by the samplers: random-walk
// Metropolis, Robbins-Monro scale adaptation, conjugate Gaussian regression
// blocks, and the conjugate inverse-Wishart / inverse-gamma variance draws.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <utility>

#include "h2m/error.hpp"
#include "h2m/rng.hpp"

namespace h2m {

struct MhResult {
  Eigen::VectorXd point;
  bool accepted = false;
  double log_target = 0.0;
};

/// Gaussian random-walk Metropolis step with isotropic proposal scale.
/// Proposals whose target is not finite are rejected.
inline MhResult mh_step(const std::function<double(const Eigen::VectorXd&)>& log_target,
                        const Eigen::VectorXd& current, double scale, Stream& rng,
                        std::optional<double> current_log_target = std::nullopt) {
  const double lp_current = current_log_target ? *current_log_target : log_target(current);
  if (!std::isfinite(lp_current))
    throw Error(ErrorCode::NonFiniteCurrentTarget, "log target is not finite at the current point");
  Eigen::VectorXd proposal = current;
  for (Eigen::Index i = 0; i < proposal.size(); ++i) proposal(i) += scale * rng.normal();
  const double lp_proposal = log_target(proposal);
  const double log_u = std::log(rng.uniform());
  if (std::isfinite(lp_proposal) && log_u < lp_proposal - lp_current) return {std::move(proposal), true, lp_proposal};
  return {current, false, lp_current};
}

constexpr double kScalarTargetAcceptance = 0.44;
constexpr double kBlockTargetAcceptance = 0.234;

/// Robbins-Monro update on the log scale: scale * exp(gain * (rate - target)).
inline double adapt_scale(double acceptance_rate, double scale, double target, double gain = 1.0) {
  const double next = scale * std::exp(gain * (acceptance_rate - target));
  return std::clamp(next, 1e-8, 1e8);
}

struct GaussianPosterior {
  Eigen::VectorXd mean;
  Eigen::LLT<Eigen::MatrixXd> precision_llt;
};

/// Moments of N((X'X/s2 + P0)^{-1} X'y/s2, (X'X/s2 + P0)^{-1}) from
/// precomputed cross-products.
inline GaussianPosterior gaussian_block_posterior(const Eigen::MatrixXd& xtx, const Eigen::VectorXd& xty,
                                                  double noise_variance, const Eigen::MatrixXd& prior_precision) {
  if (!(noise_variance > 0.0)) throw Error(ErrorCode::NonPositiveScale, "noise variance must be > 0");
  Eigen::MatrixXd precision = xtx / noise_variance + prior_precision;
  GaussianPosterior post{Eigen::VectorXd(), Eigen::LLT<Eigen::MatrixXd>(precision)};
  // LLT only reports negative pivots; an exactly singular matrix can slip
  // through with a pivot at rounding level (condition number above ~1e14)
  const Eigen::VectorXd pivots = post.precision_llt.matrixLLT().diagonal();
  if (post.precision_llt.info() != Eigen::Success || !(pivots.minCoeff() > 1e-7 * pivots.maxCoeff()))
    throw Error(ErrorCode::RankDeficient, "posterior precision is not positive definite");
  post.mean = post.precision_llt.solve(xty / noise_variance);
  return post;
}

inline Eigen::VectorXd draw_gaussian_posterior(const GaussianPosterior& post, Stream& rng) {
  Eigen::VectorXd z(post.mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
  // precision = L L'  =>  cov = L^{-T} L^{-1}
  return post.mean + post.precision_llt.matrixU().solve(z);
}

/// Exact draw of a conjugate Gaussian regression block.
inline Eigen::VectorXd update_gaussian_block(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                                             double noise_variance, const Eigen::MatrixXd& prior_precision,
                                             Stream& rng) {
  if (design.rows() != response.size() || prior_precision.rows() != design.cols())
    throw Error(ErrorCode::DimensionMismatch, "update_gaussian_block: shapes disagree");
  const auto post = gaussian_block_posterior(design.transpose() * design, design.transpose() * response,
                                             noise_variance, prior_precision);
  return draw_gaussian_posterior(post, rng);
}

/// Exact draw from InverseWishart(D + S, d + n), the full conditional of an
/// innovation covariance given n Gaussian increments with outer-product sum S.
inline Eigen::MatrixXd update_covariance(const Eigen::MatrixXd& outer_sum, double transitions,
                                         const Eigen::MatrixXd& prior_scale, double prior_dof, Stream& rng) {
  const Eigen::MatrixXd scale = prior_scale + outer_sum;
  Eigen::LLT<Eigen::MatrixXd> llt(scale);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularScale, "D + S is not positive definite");
  return sample_inverse_wishart(rng, scale, prior_dof + transitions);
}

/// Variance draw for n Gaussian residuals with sum of squares `ss`.
/// With `uniform_sd_upper` set, the prior is Uniform(0, upper) on the sd
/// (posterior IG((n-1)/2, ss/2) truncated to sd < upper); otherwise the prior
/// is InverseGamma(shape, scale) on the variance.
inline double update_variance(double ss, double n, Stream& rng, std::optional<double> uniform_sd_upper,
                              double ig_shape = 1.0, double ig_scale = 0.001) {
  double shape;
  double rate;
  if (uniform_sd_upper) {
    shape = 0.5 * (n - 1.0);
    rate = 0.5 * ss;
  } else {
    shape = ig_shape + 0.5 * n;
    rate = ig_scale + 0.5 * ss;
  }
  if (!(shape > 0.0) || !(rate > 0.0))
    throw Error(ErrorCode::NumericalFailure, "variance full conditional is improper");
  for (int attempt = 0; attempt < 10000; ++attempt) {
    const double variance = rate / rng.gamma(shape, 1.0);
    if (!uniform_sd_upper || variance < *uniform_sd_upper * *uniform_sd_upper) return variance;
  }
  throw Error(ErrorCode::NumericalFailure, "variance draw kept exceeding the uniform prior bound");
}

}  // namespace h2m
