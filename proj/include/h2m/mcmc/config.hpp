#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "h2m/error.hpp"

namespace h2m {

/// ME plugs observed concentrations into the health model; H2M fits the
/// exposure component alone and feeds its draws forward; H2Mjoint fits both
/// components jointly so the outcome informs the latent exposures.
enum class Variant { ME, H2M, H2Mjoint };

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::ME: return "ME";
    case Variant::H2M: return "H2M";
    case Variant::H2Mjoint: return "H2Mjoint";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "ME") return Variant::ME;
  if (s == "H2M") return Variant::H2M;
  if (s == "H2Mjoint") return Variant::H2Mjoint;
  throw Error(ErrorCode::InvalidConfig, "unknown variant '" + std::string(s) + "'");
}

enum class PriorSet { Default, Sensitivity };

struct KnotCounts {
  int time = 6;
  int temperature = 3;
  int humidity = 3;
};

/// Which optional terms enter the model.
struct ModelTerms {
  bool exposure_covariates = true;  // meteorology in the exposure mean
  bool smooths = true;              // spline confounders in the health model
  bool holiday = true;
  bool overdispersion = true;
  bool health_likelihood = true;    // false gives a prior-only health side
};

/// Exposure parameters held at known values instead of being sampled.
struct FixedExposure {
  std::optional<Eigen::MatrixXd> gamma;
  std::optional<Eigen::VectorXd> sigma;
  std::optional<Eigen::MatrixXd> Sigma;
};

struct ModelConfig {
  Variant variant = Variant::H2Mjoint;
  int lag = 1;
  KnotCounts knots;
  PriorSet prior_set = PriorSet::Default;
  double beta_prior_sd = 0.1;
  bool beta_prior_per_standard_unit = true;

  long burn_in = 50000;
  long retained = 10000;
  int thin = 1;
  int chains = 2;
  std::uint64_t seed = 1;
  int adapt_window = 50;

  int theta_block = 10;
  double rho = 1.0;  // multiplies theta_{t-lag}; 1 is the plain random walk
  ModelTerms terms;
  FixedExposure fixed;
  /// Keep every k-th retained latent exposure matrix (0 keeps none).
  int store_exposure_every = 0;

  long draws_per_chain() const { return retained / thin; }

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidConfig, m); };
    if (lag < 1) fail("lag must be >= 1");
    if (burn_in < 0) fail("burn_in must be >= 0");
    if (retained < 1) fail("retained must be >= 1");
    if (thin < 1 || thin > retained) fail("thin must be in [1, retained]");
    if (chains < 1) fail("chains must be >= 1");
    if (adapt_window < 1) fail("adapt_window must be >= 1");
    if (theta_block < 1) fail("theta_block must be >= 1");
    if (!(rho > 0.0 && rho <= 1.0)) fail("rho must lie in (0, 1]");
    if (knots.time < 1 || knots.temperature < 1 || knots.humidity < 1) fail("knot counts must be >= 1");
    if (!(beta_prior_sd > 0.0)) fail("beta_prior_sd must be > 0");
    if (store_exposure_every < 0) fail("store_exposure_every must be >= 0");
  }
};

}  // namespace h2m
