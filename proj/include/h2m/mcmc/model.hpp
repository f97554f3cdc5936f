#pragma once

// Everything a chain needs that does not change during sampling: the
// standardized exposure panel, design matrices, health bookkeeping and the
// resolved priors.

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "h2m/dataset.hpp"
#include "h2m/health.hpp"
#include "h2m/mcmc/config.hpp"
#include "h2m/pollutant.hpp"
#include "h2m/splines.hpp"

namespace h2m {

struct SmoothLayout {
  std::string name;
  Eigen::Index linear_index = 0;  // position of alpha in the coefficient vector
  Eigen::Index radial_offset = 0;
  Eigen::Index radial_count = 0;
};

struct ModelData {
  Eigen::Index T = 0;
  Eigen::Index P = 0;
  int lag = 1;
  double rho = 1.0;
  std::vector<std::string> pollutant_names;

  // exposure side, standardized scale
  Eigen::MatrixXd y_std;
  MaskMatrix observed;
  ScalingParams scaling;
  Eigen::MatrixXd y_orig;
  Eigen::MatrixXd exposure_design;             // T x q_e
  std::vector<Eigen::MatrixXd> exposure_xtx;   // per pollutant, observed rows
  std::vector<std::vector<Eigen::Index>> observed_days;
  std::vector<std::vector<Eigen::Index>> missing_days;
  Eigen::MatrixXd correlation;
  PollutantPriors pollutant_priors;
  std::pair<double, double> temperature_scaling{0.0, 1.0};
  std::pair<double, double> humidity_scaling{0.0, 1.0};

  // health side
  std::vector<std::int64_t> counts;
  Eigen::VectorXd counts_d;
  Eigen::VectorXd log_factorial;
  double expected = 1.0;
  double log_expected = 0.0;
  std::vector<Eigen::Index> health_days;
  std::vector<char> is_health_day;
  Eigen::MatrixXd fixed_design;  // T x q_f: smooth columns then holiday
  HealthBases bases;
  std::vector<SmoothLayout> smooth_layout;
  Eigen::Index holiday_index = -1;
  Eigen::Index num_coef = 0;          // 1 + P + q_f
  Eigen::VectorXd base_prior_precision;
  HealthPriors health_priors;
  std::vector<std::string> coef_names;

  Eigen::Index exposure_width() const { return exposure_design.cols(); }
  Eigen::Index num_fixed() const { return fixed_design.cols(); }
  Eigen::Index num_smooths() const { return static_cast<Eigen::Index>(smooth_layout.size()); }

  /// Prior precision of the health coefficients for smoothing precisions tau.
  Eigen::VectorXd prior_precision(const Eigen::VectorXd& tau) const {
    Eigen::VectorXd prec = base_prior_precision;
    for (std::size_t i = 0; i < smooth_layout.size(); ++i)
      prec.segment(smooth_layout[i].radial_offset, smooth_layout[i].radial_count).setConstant(tau(static_cast<Eigen::Index>(i)));
    return prec;
  }
};

inline void apply_prior_set(PriorSet set, PollutantPriors& pp, HealthPriors& hp) {
  if (set == PriorSet::Sensitivity) {
    pp.coef_sd = 1e3;
    pp.variance_prior = VariancePrior::InverseGamma;
    pp.ig_shape = 1.0;
    pp.ig_scale = 0.001;
    hp.coef_sd = 1e3;
    hp.variance_prior = VariancePrior::InverseGamma;
    hp.ig_shape = 1.0;
    hp.ig_scale = 0.001;
    hp.smooth_shape = 0.001;
    hp.smooth_rate = 0.001;
  }
}

inline ModelData prepare_model(const TimeSeriesDataset& data, const ModelConfig& config) {
  config.validate();
  ModelData m;
  m.T = static_cast<Eigen::Index>(data.days());
  m.P = static_cast<Eigen::Index>(data.num_pollutants());
  m.lag = config.lag;
  m.rho = config.rho;
  m.pollutant_names = data.pollutant_names();
  if (m.T <= config.lag) throw Error(ErrorCode::LagUnavailable, "series is not longer than the lag");

  // exposure side
  const auto standardized = standardize(data);
  m.y_std = standardized.values;
  m.scaling = standardized.scaling;
  m.observed = data.observed();
  m.y_orig = data.pollutants();
  m.correlation = empirical_correlation(m.y_std, m.observed);

  const auto& cfg_terms = config.terms;
  Eigen::VectorXd temp_std = Eigen::VectorXd::Zero(m.T);
  Eigen::VectorXd rhum_std = Eigen::VectorXd::Zero(m.T);
  if (cfg_terms.exposure_covariates || cfg_terms.smooths) {
    auto [ts, tsc] = standardize_series(data.temperature());
    auto [rs, rsc] = standardize_series(data.humidity());
    temp_std = ts;
    rhum_std = rs;
    m.temperature_scaling = tsc;
    m.humidity_scaling = rsc;
  }
  const Eigen::Index qe = cfg_terms.exposure_covariates ? 5 : 1;
  m.exposure_design.resize(m.T, qe);
  for (Eigen::Index t = 0; t < m.T; ++t)
    m.exposure_design.row(t) = exposure_covariate_row(temp_std(t), rhum_std(t), qe).transpose();
  m.exposure_xtx.resize(static_cast<std::size_t>(m.P));
  m.observed_days.resize(static_cast<std::size_t>(m.P));
  m.missing_days.resize(static_cast<std::size_t>(m.P));
  for (Eigen::Index p = 0; p < m.P; ++p) {
    Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(qe, qe);
    for (Eigen::Index t = 0; t < m.T; ++t) {
      if (m.observed(t, p)) {
        xtx.noalias() += m.exposure_design.row(t).transpose() * m.exposure_design.row(t);
        m.observed_days[static_cast<std::size_t>(p)].push_back(t);
      } else {
        m.missing_days[static_cast<std::size_t>(p)].push_back(t);
      }
    }
    m.exposure_xtx[static_cast<std::size_t>(p)] = xtx;
  }
  m.pollutant_priors = PollutantPriors::with_correlation(m.correlation);
  apply_prior_set(config.prior_set, m.pollutant_priors, m.health_priors);
  m.health_priors.beta_sd = config.beta_prior_sd;
  m.health_priors.beta_sd_per_standard_unit = config.beta_prior_per_standard_unit;

  // health side
  m.counts = data.outcome();
  m.counts_d.resize(m.T);
  m.log_factorial.resize(m.T);
  for (Eigen::Index t = 0; t < m.T; ++t) {
    m.counts_d(t) = static_cast<double>(m.counts[static_cast<std::size_t>(t)]);
    m.log_factorial(t) = std::lgamma(m.counts_d(t) + 1.0);
  }
  m.expected = expected_count(m.counts).value;
  m.log_expected = std::log(m.expected);
  m.is_health_day.assign(static_cast<std::size_t>(m.T), 0);
  if (cfg_terms.health_likelihood) {
    for (Eigen::Index s = config.lag; s < m.T; ++s) {
      if (config.variant == Variant::ME && !m.observed.row(s - config.lag).all()) continue;
      m.health_days.push_back(s);
      m.is_health_day[static_cast<std::size_t>(s)] = 1;
    }
  }

  std::vector<Eigen::VectorXd> fixed_cols;
  std::vector<std::string> fixed_names;
  m.num_coef = 1 + m.P;
  if (cfg_terms.smooths) {
    const std::vector<std::pair<std::string, std::vector<double>>> covariates = {
        {"time", time_covariate(data.days())},
        {"temp", std::vector<double>(temp_std.data(), temp_std.data() + m.T)},
        {"rhum", std::vector<double>(rhum_std.data(), rhum_std.data() + m.T)}};
    const int counts_by_smooth[] = {config.knots.time, config.knots.temperature, config.knots.humidity};
    for (std::size_t i = 0; i < covariates.size(); ++i) {
      const auto& [name, z] = covariates[i];
      SplineBasis b = basis(z, make_knots(z, counts_by_smooth[i]));
      SmoothLayout layout;
      layout.name = name;
      layout.linear_index = m.num_coef + static_cast<Eigen::Index>(fixed_cols.size());
      fixed_cols.push_back(b.linear);
      fixed_names.push_back("alpha_" + name);
      layout.radial_offset = m.num_coef + static_cast<Eigen::Index>(fixed_cols.size());
      layout.radial_count = b.num_knots();
      for (Eigen::Index k = 0; k < b.num_knots(); ++k) {
        fixed_cols.push_back(b.radial.col(k));
        fixed_names.push_back("b_" + name + "_" + std::to_string(k + 1));
      }
      m.smooth_layout.push_back(layout);
      m.bases.smooths.push_back(std::move(b));
    }
  }
  if (cfg_terms.holiday) {
    m.holiday_index = m.num_coef + static_cast<Eigen::Index>(fixed_cols.size());
    Eigen::VectorXd h(m.T);
    for (Eigen::Index t = 0; t < m.T; ++t) h(t) = data.holiday()[static_cast<std::size_t>(t)];
    fixed_cols.push_back(h);
    fixed_names.push_back("delta");
  }
  m.fixed_design.resize(m.T, static_cast<Eigen::Index>(fixed_cols.size()));
  for (std::size_t j = 0; j < fixed_cols.size(); ++j) m.fixed_design.col(static_cast<Eigen::Index>(j)) = fixed_cols[j];
  m.num_coef += m.fixed_design.cols();

  const double coef_prec = 1.0 / (m.health_priors.coef_sd * m.health_priors.coef_sd);
  m.base_prior_precision = Eigen::VectorXd::Constant(m.num_coef, coef_prec);
  for (Eigen::Index p = 0; p < m.P; ++p) {
    double sd = m.health_priors.beta_sd;
    if (m.health_priors.beta_sd_per_standard_unit) sd /= m.scaling.sd(p);
    m.base_prior_precision(1 + p) = 1.0 / (sd * sd);
  }
  m.coef_names.push_back("beta0");
  for (const auto& name : m.pollutant_names) m.coef_names.push_back("beta_" + name);
  for (const auto& name : fixed_names) m.coef_names.push_back(name);
  return m;
}

}  // namespace h2m
