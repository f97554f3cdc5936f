#pragma once

// Splittable, platform-independent random streams and the distribution
// samplers used by every stochastic operation in the library. Nothing here
// touches std::*_distribution, whose output is implementation-defined.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string_view>
#include <vector>

#include "h2m/error.hpp"

namespace h2m {

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace detail

/// xoshiro256** engine. Satisfies UniformRandomBitGenerator so it can be
/// handed to std algorithms, but the samplers below are what the library
/// uses for reproducibility across platforms.
class Stream {
 public:
  using result_type = std::uint64_t;

  explicit Stream(std::uint64_t seed = 0) {
    std::uint64_t x = seed;
    for (auto& word : s_) {
      x = detail::splitmix64(x);
      word = x;
    }
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    const std::uint64_t result = detail::rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = detail::rotl(s_[3], 45);
    return result;
  }

  /// Uniform on the open interval (0, 1).
  double uniform() { return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53; }

  double uniform(double lo, double hi) {
    if (!(lo < hi)) throw Error(ErrorCode::InvalidParameter, "uniform requires lo < hi");
    return lo + (hi - lo) * uniform();
  }

  /// Marsaglia polar method; the spare deviate is discarded so the stream
  /// state is exactly the engine state.
  double normal() {
    for (;;) {
      const double u = 2.0 * uniform() - 1.0;
      const double v = 2.0 * uniform() - 1.0;
      const double s = u * u + v * v;
      if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
    }
  }

  double normal(double mean, double sd) {
    if (!(sd >= 0.0)) throw Error(ErrorCode::InvalidParameter, "normal sd must be >= 0");
    return mean + sd * normal();
  }

  /// Gamma(shape, rate) via Marsaglia-Tsang, boosted for shape < 1.
  double gamma(double shape, double rate = 1.0) {
    if (!(shape > 0.0) || !(rate > 0.0) || !std::isfinite(shape) || !std::isfinite(rate))
      throw Error(ErrorCode::InvalidParameter, "gamma requires shape > 0 and rate > 0");
    if (shape < 1.0) {
      const double g = gamma(shape + 1.0, 1.0);
      return g * std::pow(uniform(), 1.0 / shape) / rate;
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x;
      double v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v / rate;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v / rate;
    }
  }

  double chi_squared(double dof) { return gamma(0.5 * dof, 0.5); }

  /// Largest Poisson mean the sampler accepts.
  static constexpr double kPoissonCap = 1e9;

  /// Poisson(rate): multiplication method below 10, Hormann's PTRS above.
  std::int64_t poisson(double rate) {
    if (!(rate >= 0.0) || !std::isfinite(rate))
      throw Error(ErrorCode::InvalidParameter, "poisson rate must be finite and >= 0");
    if (rate > kPoissonCap) throw Error(ErrorCode::InvalidParameter, "poisson rate above 1e9 cap");
    if (rate == 0.0) return 0;
    if (rate < 10.0) {
      const double limit = std::exp(-rate);
      std::int64_t k = 0;
      double prod = uniform();
      while (prod > limit) {
        ++k;
        prod *= uniform();
      }
      return k;
    }
    const double slam = std::sqrt(rate);
    const double loglam = std::log(rate);
    const double b = 0.931 + 2.53 * slam;
    const double a = -0.059 + 0.02483 * b;
    const double invalpha = 1.1239 + 1.1328 / (b - 3.4);
    const double vr = 0.9277 - 3.6224 / (b - 2.0);
    for (;;) {
      const double u = uniform() - 0.5;
      const double v = uniform();
      const double us = 0.5 - std::fabs(u);
      const double k = std::floor((2.0 * a / us + b) * u + rate + 0.43);
      if (us >= 0.07 && v <= vr) return static_cast<std::int64_t>(k);
      if (k < 0.0 || (us < 0.013 && v > us)) continue;
      if (std::log(v) + std::log(invalpha) - std::log(a / (us * us) + b) <=
          -rate + k * loglam - std::lgamma(k + 1.0))
        return static_cast<std::int64_t>(k);
    }
  }

  /// Draw from N(mean, L L') given the lower Cholesky factor L.
  Eigen::VectorXd mvn_from_cholesky(const Eigen::VectorXd& mean, const Eigen::MatrixXd& lower) {
    Eigen::VectorXd z(mean.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal();
    return mean + lower.triangularView<Eigen::Lower>() * z;
  }

 private:
  std::array<std::uint64_t, 4> s_{};
};

/// A node in a tree of seeds. Streams at distinct paths are independent;
/// the same path always yields the same stream, whatever order the tree is
/// walked in.
class SeedTree {
 public:
  explicit SeedTree(std::uint64_t master) : master_(master), key_(detail::splitmix64(master)) {}

  SeedTree child(std::string_view label) const { return SeedTree(master_, mix(detail::fnv1a(label))); }
  SeedTree child(std::string_view label, std::uint64_t index) const {
    return child(label).child_index(index);
  }
  SeedTree child_index(std::uint64_t index) const {
    return SeedTree(master_, mix(detail::splitmix64(index ^ 0x5851f42d4c957f2dULL)));
  }

  Stream stream() const { return Stream(key_); }
  std::uint64_t master() const { return master_; }
  std::uint64_t key() const { return key_; }

 private:
  SeedTree(std::uint64_t master, std::uint64_t key) : master_(master), key_(key) {}
  std::uint64_t mix(std::uint64_t label) const { return detail::splitmix64(key_ ^ detail::splitmix64(label)); }

  std::uint64_t master_;
  std::uint64_t key_;
};

inline Eigen::VectorXd sample_mvn(Stream& rng, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
  if (cov.rows() != mean.size() || cov.cols() != mean.size())
    throw Error(ErrorCode::DimensionMismatch, "sample_mvn: covariance shape does not match mean");
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success || !(llt.matrixL().toDenseMatrix().diagonal().array() > 0.0).all())
    throw Error(ErrorCode::NotPositiveDefinite, "sample_mvn: covariance is not positive definite");
  return rng.mvn_from_cholesky(mean, llt.matrixL());
}

/// Inverse-Wishart in the scale parameterization: mean = scale / (dof - P - 1).
/// Uses the Bartlett decomposition of the matching Wishart(scale^{-1}, dof).
inline Eigen::MatrixXd sample_inverse_wishart(Stream& rng, const Eigen::MatrixXd& scale, double dof) {
  const Eigen::Index p = scale.rows();
  if (scale.cols() != p) throw Error(ErrorCode::DimensionMismatch, "inverse-Wishart scale must be square");
  if (!(dof > static_cast<double>(p) - 1.0))
    throw Error(ErrorCode::InvalidDof, "inverse-Wishart requires dof > P - 1");
  Eigen::LLT<Eigen::MatrixXd> llt(scale);
  if (llt.info() != Eigen::Success)
    throw Error(ErrorCode::NotPositiveDefinite, "inverse-Wishart scale is not positive definite");
  const Eigen::MatrixXd lower = llt.matrixL();

  Eigen::MatrixXd bartlett = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    bartlett(i, i) = std::sqrt(rng.chi_squared(dof - static_cast<double>(i)));
    for (Eigen::Index j = 0; j < i; ++j) bartlett(i, j) = rng.normal();
  }
  // Sigma = (L A^{-T}) (L A^{-T})'
  const Eigen::MatrixXd a_inv_t =
      bartlett.triangularView<Eigen::Lower>().transpose().solve(Eigen::MatrixXd::Identity(p, p));
  const Eigen::MatrixXd m = lower * a_inv_t;
  Eigen::MatrixXd sigma = m * m.transpose();
  return 0.5 * (sigma + sigma.transpose());
}

/// Log density of the inverse-Wishart(scale, dof) at a positive definite x.
inline double inverse_wishart_logpdf(const Eigen::MatrixXd& x, const Eigen::MatrixXd& scale, double dof) {
  const double p = static_cast<double>(x.rows());
  Eigen::LLT<Eigen::MatrixXd> lx(x);
  Eigen::LLT<Eigen::MatrixXd> ls(scale);
  if (lx.info() != Eigen::Success || ls.info() != Eigen::Success)
    throw Error(ErrorCode::NotPositiveDefinite, "inverse_wishart_logpdf: argument not positive definite");
  const double logdet_x = 2.0 * lx.matrixLLT().diagonal().array().log().sum();
  const double logdet_s = 2.0 * ls.matrixLLT().diagonal().array().log().sum();
  const double trace = (scale * lx.solve(Eigen::MatrixXd::Identity(x.rows(), x.rows()))).trace();
  double log_mv_gamma = 0.25 * p * (p - 1.0) * std::log(std::numbers::pi);
  for (int j = 0; j < static_cast<int>(p); ++j) log_mv_gamma += std::lgamma(0.5 * (dof - j));
  return 0.5 * dof * logdet_s - 0.5 * dof * p * std::numbers::ln2 - log_mv_gamma -
         0.5 * (dof + p + 1.0) * logdet_x - 0.5 * trace;
}

/// Inverse-gamma(shape, scale) log density; scale plays the role of a rate
/// on the precision.
inline double inverse_gamma_logpdf(double x, double shape, double scale) {
  return shape * std::log(scale) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - scale / x;
}

}  // namespace h2m
