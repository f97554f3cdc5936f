#pragma once

// Convergence checks (Gelman-Rubin, batch-means MC error), DIC on the
// Poisson health deviance, and posterior summaries in the layout of the
// percent-increase and measurement-variance tables.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "h2m/dataset.hpp"
#include "h2m/error.hpp"
#include "h2m/health.hpp"
#include "h2m/mcmc/draws.hpp"
#include "h2m/mcmc/model.hpp"
#include "h2m/mcmc/sampler.hpp"

namespace h2m {

namespace detail {

/// Sum in sorted order so the result does not depend on input order.
inline double ordered_sum(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return std::accumulate(v.begin(), v.end(), 0.0);
}

inline double mean_of(const std::vector<double>& v) { return ordered_sum(v) / static_cast<double>(v.size()); }

inline double sample_variance(const std::vector<double>& v) {
  const double m = mean_of(v);
  std::vector<double> sq(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) sq[i] = (v[i] - m) * (v[i] - m);
  return ordered_sum(std::move(sq)) / static_cast<double>(v.size() - 1);
}

}  // namespace detail

constexpr double kRhatThreshold = 1.05;
constexpr double kMcErrorFraction = 0.05;

/// Potential scale reduction sqrt(V/W), V = (n-1)/n W + B/n. Chains of
/// unequal length are truncated to the shortest.
inline double gelman_rubin(const std::vector<std::vector<double>>& chains) {
  if (chains.size() < 2) throw Error(ErrorCode::TooFewChains, "Gelman-Rubin needs at least 2 chains");
  std::size_t n = std::numeric_limits<std::size_t>::max();
  for (const auto& c : chains) n = std::min(n, c.size());
  if (n < 10) throw Error(ErrorCode::TooFewChains, "Gelman-Rubin needs at least 10 draws per chain");
  std::vector<double> means;
  std::vector<double> vars;
  for (const auto& c : chains) {
    const std::vector<double> head(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(n));
    means.push_back(detail::mean_of(head));
    vars.push_back(detail::sample_variance(head));
  }
  const double dn = static_cast<double>(n);
  const double w = detail::mean_of(vars);
  const double b_over_n = detail::sample_variance(means);
  if (!(w > 0.0)) return b_over_n > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  const double v = (dn - 1.0) / dn * w + b_over_n;
  return std::sqrt(v / w);
}

/// Standard error of the mean by batch means with floor(sqrt(n)) batches.
inline double mc_error(const std::vector<double>& draws) {
  const std::size_t n = draws.size();
  if (n < 100) throw Error(ErrorCode::TooFewDraws, "MC error needs at least 100 draws");
  const auto batches = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n))));
  const std::size_t size = n / batches;
  const std::size_t skip = n - batches * size;  // drop the earliest remainder
  std::vector<double> means(batches);
  for (std::size_t k = 0; k < batches; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < size; ++i) s += draws[skip + k * size + i];
    means[k] = s / static_cast<double>(size);
  }
  const double v = detail::sample_variance(means);
  return std::sqrt(std::max(0.0, v) / static_cast<double>(batches));
}

struct DicReport {
  double mean_deviance = 0.0;
  double plugin_deviance = 0.0;
  double pd = 0.0;
  double dic = 0.0;
};

inline DicReport dic(const std::vector<double>& deviances, double plugin_deviance) {
  if (deviances.empty()) throw Error(ErrorCode::NonFiniteDeviance, "no deviance draws");
  for (double d : deviances)
    if (!std::isfinite(d)) throw Error(ErrorCode::NonFiniteDeviance, "deviance draw is not finite");
  if (!std::isfinite(plugin_deviance)) throw Error(ErrorCode::NonFiniteDeviance, "plug-in deviance is not finite");
  DicReport r;
  r.mean_deviance = detail::mean_of(deviances);
  r.plugin_deviance = plugin_deviance;
  r.pd = r.mean_deviance - r.plugin_deviance;
  r.dic = r.mean_deviance + r.pd;
  return r;
}

/// DIC of a fit: mean of the per-draw health deviance, plug-in deviance at
/// the posterior mean of the log relative risk pooled over chains.
inline DicReport dic(const ModelData& data, const std::vector<ChainDraws>& chains) {
  std::vector<double> dev;
  Eigen::VectorXd eta = Eigen::VectorXd::Zero(data.T);
  double weight = 0.0;
  for (const auto& c : chains) {
    const auto& col = c.block("deviance").columns.at(0);
    dev.insert(dev.end(), col.begin(), col.end());
    eta += static_cast<double>(col.size()) * c.eta_mean;
    weight += static_cast<double>(col.size());
  }
  return dic(dev, health_deviance(data, eta / weight));
}

struct ParameterSummary {
  std::string block;
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q50 = 0.0;
  double q975 = 0.0;
  double mc_error = std::nan("");
  double rhat = std::nan("");
};

struct EffectSummary {
  std::string pollutant;
  double iqr = 0.0;
  double mean = 0.0;   // percent increase per IQR
  double lower = 0.0;
  double upper = 0.0;
};

struct VarianceSummary {
  std::string pollutant;
  double mean = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

struct PosteriorSummary {
  std::vector<ParameterSummary> parameters;
  std::vector<EffectSummary> effects;
  std::vector<VarianceSummary> variances;
  std::vector<std::string> warnings;
  std::optional<DicReport> dic;

  const ParameterSummary& parameter(const std::string& name) const {
    for (const auto& p : parameters)
      if (p.name == name) return p;
    throw Error(ErrorCode::InvalidParameter, "no parameter '" + name + "' in summary");
  }
};

/// Mean and 95% interval of a sample; quantiles by linear interpolation.
struct IntervalSummary {
  double mean;
  double lower;
  double upper;
};

inline IntervalSummary interval_summary(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return {std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()), quantile_sorted(v, 0.025),
          quantile_sorted(v, 0.975)};
}

inline ParameterSummary summarize_parameter(const std::string& block, const std::string& name,
                                            const std::vector<const std::vector<double>*>& chains) {
  ParameterSummary s;
  s.block = block;
  s.name = name;
  std::vector<double> pooled;
  for (const auto* c : chains) pooled.insert(pooled.end(), c->begin(), c->end());
  std::sort(pooled.begin(), pooled.end());
  s.mean = std::accumulate(pooled.begin(), pooled.end(), 0.0) / static_cast<double>(pooled.size());
  double ss = 0.0;
  for (double v : pooled) ss += (v - s.mean) * (v - s.mean);
  s.sd = pooled.size() > 1 ? std::sqrt(ss / static_cast<double>(pooled.size() - 1)) : 0.0;
  s.q025 = quantile_sorted(pooled, 0.025);
  s.q50 = quantile_sorted(pooled, 0.5);
  s.q975 = quantile_sorted(pooled, 0.975);
  if (chains.front()->size() >= 100) {
    // error of the pooled mean from per-chain batch means
    std::vector<double> sq;
    for (const auto* c : chains) sq.push_back(std::pow(mc_error(*c), 2));
    s.mc_error = std::sqrt(detail::ordered_sum(sq)) / static_cast<double>(chains.size());
  }
  if (chains.size() >= 2 && chains.front()->size() >= 10) {
    std::vector<std::vector<double>> copies;
    for (const auto* c : chains) copies.push_back(*c);
    s.rhat = gelman_rubin(copies);
  }
  return s;
}

inline bool passes_convergence(const ParameterSummary& s) {
  const bool rhat_ok = std::isnan(s.rhat) || s.rhat <= kRhatThreshold;
  const bool mc_ok = std::isnan(s.mc_error) || s.mc_error <= kMcErrorFraction * s.sd || s.sd == 0.0;
  return rhat_ok && mc_ok;
}

/// Summary over all parameter blocks except the log posterior.
inline PosteriorSummary summarize(const std::vector<ChainDraws>& chains, const Descriptives& desc) {
  if (chains.empty()) throw Error(ErrorCode::TooFewChains, "no chains to summarize");
  PosteriorSummary out;
  const auto& first = chains.front();
  for (const auto& [block_name, block] : first.blocks) {
    if (block_name == "log_posterior") continue;
    for (std::size_t j = 0; j < block.cols(); ++j) {
      std::vector<const std::vector<double>*> cols;
      for (const auto& c : chains) cols.push_back(&c.block(block_name).columns.at(j));
      ParameterSummary s = summarize_parameter(block_name, block.names[j], cols);
      if (!std::isnan(s.rhat) && s.rhat > kRhatThreshold)
        out.warnings.push_back(s.name + ": R-hat " + std::to_string(s.rhat) + " above " + std::to_string(kRhatThreshold));
      if (!std::isnan(s.mc_error) && s.sd > 0.0 && s.mc_error > kMcErrorFraction * s.sd)
        out.warnings.push_back(s.name + ": MC error above 5% of the posterior sd");
      out.parameters.push_back(std::move(s));
    }
  }

  const auto& beta = first.block("beta");
  const Eigen::VectorXd iqr = desc.pollutant_iqr();
  for (std::size_t p = 0; p + 1 < beta.cols(); ++p) {
    std::vector<double> pct;
    for (const auto& c : chains)
      for (double b : c.block("beta").columns.at(p + 1)) pct.push_back(percent_increase(b, iqr(static_cast<Eigen::Index>(p))));
    const auto iv = interval_summary(std::move(pct));
    out.effects.push_back({desc.pollutants.at(p).name, iqr(static_cast<Eigen::Index>(p)), iv.mean, iv.lower, iv.upper});
  }
  if (first.has_block("sigma2")) {
    const auto& s2 = first.block("sigma2");
    for (std::size_t p = 0; p < s2.cols(); ++p) {
      std::vector<double> pooled;
      for (const auto& c : chains) {
        const auto& col = c.block("sigma2").columns.at(p);
        pooled.insert(pooled.end(), col.begin(), col.end());
      }
      const auto iv = interval_summary(std::move(pooled));
      out.variances.push_back({desc.pollutants.at(p).name, iv.mean, iv.lower, iv.upper});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Writers

inline void write_effects_csv(std::ostream& out, const PosteriorSummary& s) {
  out << "pollutant,iqr,percent_increase,lower,upper\n";
  char buf[256];
  for (const auto& e : s.effects) {
    std::snprintf(buf, sizeof buf, "%s,%.6g,%.4f,%.4f,%.4f\n", e.pollutant.c_str(), e.iqr, e.mean, e.lower, e.upper);
    out << buf;
  }
}

inline void write_variance_csv(std::ostream& out, const PosteriorSummary& s) {
  out << "pollutant,posterior_mean,lower,upper\n";
  char buf[256];
  for (const auto& v : s.variances) {
    std::snprintf(buf, sizeof buf, "%s,%.6g,%.6g,%.6g\n", v.pollutant.c_str(), v.mean, v.lower, v.upper);
    out << buf;
  }
}

inline void write_parameters_csv(std::ostream& out, const PosteriorSummary& s) {
  out << "block,parameter,mean,sd,q2.5,q50,q97.5,mc_error,rhat\n";
  char buf[512];
  for (const auto& p : s.parameters) {
    std::snprintf(buf, sizeof buf, "%s,%s,%.8g,%.8g,%.8g,%.8g,%.8g,%.6g,%.6g\n", p.block.c_str(), p.name.c_str(), p.mean,
                  p.sd, p.q025, p.q50, p.q975, p.mc_error, p.rhat);
    out << buf;
  }
}

inline nlohmann::json to_json(const DicReport& d) {
  return {{"mean_deviance", d.mean_deviance}, {"plugin_deviance", d.plugin_deviance}, {"pD", d.pd}, {"DIC", d.dic}};
}

inline nlohmann::json to_json(const PosteriorSummary& s) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json j;
  j["effects"] = nlohmann::json::array();
  for (const auto& e : s.effects)
    j["effects"].push_back({{"pollutant", e.pollutant}, {"iqr", e.iqr}, {"percent_increase", e.mean},
                            {"lower", e.lower}, {"upper", e.upper}});
  j["measurement_variance"] = nlohmann::json::array();
  for (const auto& v : s.variances)
    j["measurement_variance"].push_back({{"pollutant", v.pollutant}, {"posterior_mean", v.mean}, {"lower", v.lower},
                                         {"upper", v.upper}});
  j["parameters"] = nlohmann::json::array();
  for (const auto& p : s.parameters)
    j["parameters"].push_back({{"block", p.block}, {"name", p.name}, {"mean", p.mean}, {"sd", p.sd},
                               {"q2.5", p.q025}, {"q50", p.q50}, {"q97.5", p.q975}, {"mc_error", num(p.mc_error)},
                               {"rhat", num(p.rhat)}});
  j["warnings"] = s.warnings;
  if (s.dic) j["dic"] = to_json(*s.dic);
  return j;
}

// ---------------------------------------------------------------------------
// Convergence report over stored draws

struct ConvergenceReport {
  std::vector<ParameterSummary> parameters;
  std::vector<std::string> failures;
  bool passed() const { return failures.empty(); }
};

inline ConvergenceReport check_convergence(const std::vector<ChainDraws>& chains) {
  if (chains.size() < 2) throw Error(ErrorCode::TooFewChains, "convergence check needs at least 2 chains");
  ConvergenceReport r;
  for (const auto& [block_name, block] : chains.front().blocks) {
    if (block_name == "log_posterior" || block_name == "deviance") continue;
    for (std::size_t j = 0; j < block.cols(); ++j) {
      std::vector<const std::vector<double>*> cols;
      for (const auto& c : chains) cols.push_back(&c.block(block_name).columns.at(j));
      if (cols.front()->size() < 10) throw Error(ErrorCode::TooFewChains, "chains are shorter than 10 draws");
      auto s = summarize_parameter(block_name, block.names[j], cols);
      if (!passes_convergence(s)) r.failures.push_back(s.name);
      r.parameters.push_back(std::move(s));
    }
  }
  return r;
}

}  // namespace h2m
