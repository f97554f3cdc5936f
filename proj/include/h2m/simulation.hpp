#pragma once

// Synthetic panels and the replicated estimator comparison.
//
// simulate_dataset follows the text: a multivariate Gaussian random walk
// for the true exposure, noisy measurements around it and Poisson counts
// driven by the same-day exposure. simulate_real_like builds a two-year
// panel shaped like the London data (seasonal confounding, meteorology,
// holidays, missing cells) for checks that need a realistic fit.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "h2m/dataset.hpp"
#include "h2m/error.hpp"
#include "h2m/mcmc/sampler.hpp"
#include "h2m/rng.hpp"
#include "h2m/splines.hpp"

namespace h2m {

/// Innovation correlation of the six simulated pollutants.
inline Eigen::MatrixXd simulation_correlation() {
  Eigen::MatrixXd r(6, 6);
  r << 1.000, 0.737, -0.535, 0.442, 0.515, 0.630,  //
      0.737, 1.000, -0.606, 0.510, 0.730, 0.659,   //
      -0.535, -0.606, 1.000, -0.260, -0.394, -0.396,  //
      0.442, 0.510, -0.260, 1.000, 0.390, 0.490,   //
      0.515, 0.730, -0.394, 0.390, 1.000, 0.420,   //
      0.630, 0.659, -0.396, 0.490, 0.420, 1.000;
  return r;
}

struct SimulationConfig {
  int T = 2000;
  Eigen::MatrixXd correlation = simulation_correlation();
  double error_variance = 0.1;
  Eigen::VectorXd beta = (Eigen::VectorXd(6) << 0.2, 0.2, -0.2, 0.0, 0.0, 0.0).finished();
  double intercept = 1.0;
  int replicates = 100;
  std::uint64_t seed = 1;
  /// Column-standardize the latent walk before measurements and counts.
  bool stabilize = false;
  double rate_cap = Stream::kPoissonCap;

  Eigen::Index P() const { return correlation.rows(); }

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidConfig, m); };
    if (T < 2) fail("simulation T must be >= 2");
    if (correlation.rows() != correlation.cols() || correlation.rows() < 1) fail("correlation must be square");
    if (beta.size() != correlation.rows()) fail("beta length must equal the number of pollutants");
    if (!correlation.isApprox(correlation.transpose(), 1e-12)) fail("correlation must be symmetric");
    if ((correlation.diagonal().array() - 1.0).abs().maxCoeff() > 1e-12) fail("correlation needs a unit diagonal");
    Eigen::LLT<Eigen::MatrixXd> llt(correlation);
    if (llt.info() != Eigen::Success) fail("correlation must be positive definite");
    if (error_variance < 0.0) fail("error variance must be >= 0");
    if (replicates < 1) fail("replicates must be >= 1");
  }
};

struct SimulatedData {
  Eigen::MatrixXd mu;  // true exposure
  Eigen::MatrixXd y;   // measured exposure
  std::vector<std::int64_t> counts;
  SimulationConfig config;

  /// Panel for fitting. Meteorology is constant zero and no day is a
  /// holiday, so fits must switch off covariates, smooths and the holiday.
  TimeSeriesDataset to_dataset() const {
    const auto T = static_cast<std::size_t>(y.rows());
    std::vector<std::int64_t> dates(T);
    const std::int64_t start = calendar::days_from_civil(2000, 1, 1);
    for (std::size_t t = 0; t < T; ++t) dates[t] = start + static_cast<std::int64_t>(t);
    std::vector<std::string> names;
    for (Eigen::Index p = 0; p < y.cols(); ++p) names.push_back("Y" + std::to_string(p + 1));
    return {dates,
            counts,
            std::vector<double>(T, 0.0),
            std::vector<double>(T, 0.0),
            std::vector<std::uint8_t>(T, 0),
            names,
            y,
            MaskMatrix::Constant(y.rows(), y.cols(), true)};
  }
};

inline void standardize_columns(Eigen::MatrixXd& m) {
  for (Eigen::Index p = 0; p < m.cols(); ++p) {
    const double mean = m.col(p).mean();
    const double sd = std::sqrt((m.col(p).array() - mean).square().sum() / static_cast<double>(m.rows() - 1));
    if (!(sd > 0.0)) throw Error(ErrorCode::ZeroVariance, "simulated latent column is constant");
    m.col(p) = (m.col(p).array() - mean) / sd;
  }
}

inline SimulatedData simulate_dataset(const SimulationConfig& cfg, const SeedTree& seeds) {
  cfg.validate();
  const Eigen::Index T = cfg.T;
  const Eigen::Index P = cfg.P();
  SimulatedData out;
  out.config = cfg;

  Stream latent = seeds.child("latent").stream();
  const Eigen::MatrixXd L = cfg.correlation.llt().matrixL();
  out.mu.resize(T, P);
  Eigen::VectorXd state = Eigen::VectorXd::Zero(P);
  for (Eigen::Index t = 0; t < T; ++t) {
    state = latent.mvn_from_cholesky(state, L);
    out.mu.row(t) = state.transpose();
  }
  if (cfg.stabilize) standardize_columns(out.mu);

  Stream measurement = seeds.child("measurement").stream();
  const double noise_sd = std::sqrt(cfg.error_variance);
  out.y.resize(T, P);
  for (Eigen::Index t = 0; t < T; ++t)
    for (Eigen::Index p = 0; p < P; ++p) out.y(t, p) = out.mu(t, p) + noise_sd * measurement.normal();

  Stream outcome = seeds.child("outcome").stream();
  out.counts.resize(static_cast<std::size_t>(T));
  for (Eigen::Index t = 0; t < T; ++t) {
    const double rate = std::exp(cfg.intercept + out.mu.row(t).dot(cfg.beta));
    if (!(rate <= cfg.rate_cap))
      throw Error(ErrorCode::OverflowRate, "Poisson mean " + std::to_string(rate) + " on day " + std::to_string(t) +
                                               " exceeds the cap");
    out.counts[static_cast<std::size_t>(t)] = outcome.poisson(rate);
  }
  return out;
}

inline SimulatedData simulate_dataset(const SimulationConfig& cfg, std::uint64_t seed) {
  return simulate_dataset(cfg, SeedTree(seed));
}

// ---------------------------------------------------------------------------
// Two-year panel shaped like the application data.

struct RealLikeConfig {
  int T = 731;
  std::int64_t start = calendar::days_from_civil(2011, 1, 1);
  std::vector<std::string> names = {"CO", "NO2", "O3", "SO2", "PM25", "PCNT"};
  Eigen::VectorXd mean = (Eigen::VectorXd(6) << 0.25, 35.0, 38.0, 1.9, 11.0, 12.4).finished();
  Eigen::VectorXd sd = (Eigen::VectorXd(6) << 0.08, 17.0, 19.5, 1.6, 6.0, 3.8).finished();
  Eigen::MatrixXd correlation = simulation_correlation();
  double persistence = 0.9;     // lag-one autocorrelation of the latent exposure
  double error_variance = 0.1;  // on the standardized scale
  double missing_rate = 0.03;
  double baseline = 37.0;
  /// Percent increase per IQR of the measured concentration; zero for no effect.
  Eigen::VectorXd percent_per_iqr = (Eigen::VectorXd(6) << 0.0, 9.4, 6.0, 0.0, 0.0, 0.0).finished();
  double holiday_effect = -0.03;
  double overdispersion_sd = 0.05;
  KnotCounts knots;  // bases the confounding smooths are built from
  int lag = 1;
};

struct RealLikeData {
  TimeSeriesDataset data;
  Eigen::VectorXd beta;  // per original unit
  Eigen::MatrixXd mu;    // latent exposure, original units
};

namespace detail {

/// Least-squares fit of `target` on an intercept plus a thin-plate basis.
inline Eigen::VectorXd project_on_basis(const std::vector<double>& z, int knots, const Eigen::VectorXd& target) {
  const SplineBasis b = basis(z, make_knots(z, knots));
  Eigen::MatrixXd x(b.rows(), 2 + b.num_knots());
  x.col(0).setOnes();
  x.col(1) = b.linear;
  x.rightCols(b.num_knots()) = b.radial;
  const Eigen::VectorXd coef = x.colPivHouseholderQr().solve(target);
  return x.rightCols(1 + b.num_knots()) * coef.tail(1 + b.num_knots());
}

}  // namespace detail

inline RealLikeData simulate_real_like(const RealLikeConfig& cfg, const SeedTree& seeds) {
  const Eigen::Index T = cfg.T;
  const Eigen::Index P = cfg.correlation.rows();
  if (T < 30 || cfg.mean.size() != P || cfg.sd.size() != P || cfg.percent_per_iqr.size() != P ||
      static_cast<Eigen::Index>(cfg.names.size()) != P)
    throw Error(ErrorCode::InvalidConfig, "real-like configuration has inconsistent sizes");

  std::vector<std::int64_t> dates(static_cast<std::size_t>(T));
  std::vector<double> temp(static_cast<std::size_t>(T));
  std::vector<double> rhum(static_cast<std::size_t>(T));
  std::vector<std::uint8_t> holiday(static_cast<std::size_t>(T));
  Stream met = seeds.child("meteorology").stream();
  double temp_anom = 0.0;
  double rhum_anom = 0.0;
  for (Eigen::Index t = 0; t < T; ++t) {
    const auto i = static_cast<std::size_t>(t);
    dates[i] = cfg.start + t;
    const double phase = 2.0 * std::numbers::pi * static_cast<double>(t - 200) / 365.25;
    temp_anom = 0.7 * temp_anom + 2.0 * met.normal();
    rhum_anom = 0.6 * rhum_anom + 6.0 * met.normal();
    temp[i] = 11.7 + 6.0 * std::cos(phase) + temp_anom;
    rhum[i] = std::clamp(77.0 - 7.0 * std::cos(phase) + rhum_anom, 30.0, 100.0);
    holiday[i] = calendar::weekday(dates[i]) >= 5 ? 1 : 0;
  }

  // stationary latent exposure with innovation correlation `correlation`
  Stream latent = seeds.child("latent").stream();
  const Eigen::MatrixXd L = cfg.correlation.llt().matrixL();
  const double innov = std::sqrt(1.0 - cfg.persistence * cfg.persistence);
  Eigen::MatrixXd x(T, P);
  Eigen::VectorXd state = latent.mvn_from_cholesky(Eigen::VectorXd::Zero(P), L);
  for (Eigen::Index t = 0; t < T; ++t) {
    if (t > 0) state = cfg.persistence * state + innov * latent.mvn_from_cholesky(Eigen::VectorXd::Zero(P), L);
    x.row(t) = state.transpose();
  }
  RealLikeData out;
  out.mu.resize(T, P);
  for (Eigen::Index p = 0; p < P; ++p) out.mu.col(p) = (cfg.mean(p) + cfg.sd(p) * x.col(p).array()).matrix();

  Stream meas = seeds.child("measurement").stream();
  const double noise_sd = std::sqrt(cfg.error_variance);
  Eigen::MatrixXd y(T, P);
  MaskMatrix observed = MaskMatrix::Constant(T, P, true);
  for (Eigen::Index t = 0; t < T; ++t)
    for (Eigen::Index p = 0; p < P; ++p) {
      y(t, p) = cfg.mean(p) + cfg.sd(p) * (x(t, p) + noise_sd * meas.normal());
      if (meas.uniform() < cfg.missing_rate) {
        observed(t, p) = false;
        y(t, p) = std::nan("");
      }
    }

  // confounding smooths live in the span of the generating bases
  Eigen::VectorXd season(T);
  for (Eigen::Index t = 0; t < T; ++t)
    season(t) = 0.12 * std::cos(2.0 * std::numbers::pi * static_cast<double>(t - 15) / 365.25) +
                0.03 * static_cast<double>(t) / static_cast<double>(T);
  const auto [temp_std, temp_sc] = standardize_series(temp);
  const auto [rhum_std, rhum_sc] = standardize_series(rhum);
  const Eigen::VectorXd heat = 0.04 * temp_std.array().square() - 0.03 * temp_std.array();
  const Eigen::VectorXd damp = 0.02 * rhum_std.array();
  const Eigen::VectorXd smooth =
      detail::project_on_basis(time_covariate(static_cast<std::size_t>(T)), cfg.knots.time, season) +
      detail::project_on_basis(std::vector<double>(temp_std.data(), temp_std.data() + T), cfg.knots.temperature, heat) +
      detail::project_on_basis(std::vector<double>(rhum_std.data(), rhum_std.data() + T), cfg.knots.humidity, damp);

  out.beta.resize(P);
  for (Eigen::Index p = 0; p < P; ++p) {
    const double iqr = 1.349 * cfg.sd(p) * std::sqrt(1.0 + cfg.error_variance);
    out.beta(p) = std::log1p(cfg.percent_per_iqr(p) / 100.0) / iqr;
  }

  Stream health = seeds.child("outcome").stream();
  std::vector<std::int64_t> counts(static_cast<std::size_t>(T));
  for (Eigen::Index t = 0; t < T; ++t) {
    double eta = smooth(t) + cfg.holiday_effect * holiday[static_cast<std::size_t>(t)] +
                 cfg.overdispersion_sd * health.normal();
    const Eigen::Index s = std::max<Eigen::Index>(0, t - cfg.lag);
    eta += (out.mu.row(s) - cfg.mean.transpose()).dot(out.beta);
    counts[static_cast<std::size_t>(t)] = health.poisson(cfg.baseline * std::exp(eta));
  }
  out.data = TimeSeriesDataset(dates, counts, temp, rhum, holiday, cfg.names, y, observed);
  return out;
}

// ---------------------------------------------------------------------------
// Replicated study

struct CoefficientMetrics {
  double bias = 0.0;
  double rmse = 0.0;
  double width = 0.0;
  double coverage = 0.0;
};

/// Bias, RMSE, mean CI width and CI coverage of one coefficient.
inline CoefficientMetrics coefficient_metrics(const std::vector<double>& estimates, const std::vector<double>& lower,
                                              const std::vector<double>& upper, double truth) {
  const std::size_t n = estimates.size();
  if (n == 0 || lower.size() != n || upper.size() != n)
    throw Error(ErrorCode::InvalidParameter, "coefficient_metrics needs matching, non-empty inputs");
  CoefficientMetrics m;
  double sq = 0.0;
  double covered = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    m.bias += estimates[r] - truth;
    sq += (estimates[r] - truth) * (estimates[r] - truth);
    m.width += upper[r] - lower[r];
    if (lower[r] <= truth && truth <= upper[r]) covered += 1.0;
  }
  const auto dn = static_cast<double>(n);
  m.bias /= dn;
  m.rmse = std::sqrt(sq / dn);
  m.width /= dn;
  m.coverage = covered / dn;
  return m;
}

struct VariantEstimate {
  Eigen::VectorXd mean;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

struct ReplicateResult {
  int replicate = 0;
  bool ok = false;
  std::string error_code;
  std::string error_message;
  std::map<std::string, VariantEstimate> estimates;  // by variant name
};

struct StudyConfig {
  SimulationConfig simulation;
  ModelConfig model;  // variant field ignored
  std::vector<Variant> variants = {Variant::ME, Variant::H2M, Variant::H2Mjoint};
  int jobs = 1;

  /// Model settings used for simulated panels: no meteorology, no holiday.
  static ModelConfig simulation_model_defaults() {
    ModelConfig m;
    m.terms.exposure_covariates = false;
    m.terms.smooths = false;
    m.terms.holiday = false;
    m.terms.overdispersion = false;
    m.burn_in = 5000;
    m.retained = 2000;
    return m;
  }

  /// Desk-scale acceptance settings.
  static StudyConfig desk() {
    StudyConfig c;
    c.simulation.T = 500;
    c.simulation.replicates = 20;
    c.simulation.stabilize = true;
    c.model = simulation_model_defaults();
    return c;
  }
};

struct StudyMetrics {
  std::vector<std::string> coefficients;
  std::map<std::string, std::vector<CoefficientMetrics>> by_variant;
  int completed = 0;
  int failed = 0;
  std::map<std::string, int> failures_by_code;
};

/// Marginal 95% interval from pooled chains.
inline VariantEstimate beta_estimate(const std::vector<ChainDraws>& chains, Eigen::Index P) {
  VariantEstimate e{Eigen::VectorXd(P), Eigen::VectorXd(P), Eigen::VectorXd(P)};
  for (Eigen::Index p = 0; p < P; ++p) {
    std::vector<double> pooled;
    for (const auto& c : chains) {
      const auto& col = c.block("beta").columns[static_cast<std::size_t>(1 + p)];
      pooled.insert(pooled.end(), col.begin(), col.end());
    }
    double sum = 0.0;
    for (double v : pooled) sum += v;
    e.mean(p) = sum / static_cast<double>(pooled.size());
    std::sort(pooled.begin(), pooled.end());
    e.lower(p) = quantile_sorted(pooled, 0.025);
    e.upper(p) = quantile_sorted(pooled, 0.975);
  }
  return e;
}

inline SeedTree replicate_seeds(std::uint64_t master, int replicate) {
  return SeedTree(master).child("replicate", static_cast<std::uint64_t>(replicate));
}

/// Simulates replicate r and fits every requested variant. Failures are
/// recorded in the result rather than thrown.
inline ReplicateResult run_replicate(const StudyConfig& cfg, int replicate) {
  ReplicateResult r;
  r.replicate = replicate;
  const SeedTree seeds = replicate_seeds(cfg.simulation.seed, replicate);
  try {
    const SimulatedData sim = simulate_dataset(cfg.simulation, seeds.child("data"));
    const TimeSeriesDataset data = sim.to_dataset();
    for (Variant v : cfg.variants) {
      ModelConfig mc = cfg.model;
      mc.variant = v;
      mc.seed = seeds.child("fit").key();
      const ModelData md = prepare_model(data, mc);
      r.estimates[std::string(to_string(v))] = beta_estimate(run_model(md, mc, 1), md.P);
    }
    r.ok = true;
  } catch (const Error& e) {
    r.ok = false;
    r.error_code = std::string(to_string(e.code()));
    r.error_message = e.what();
    r.estimates.clear();
  }
  return r;
}

inline nlohmann::json to_json(const ReplicateResult& r) {
  nlohmann::json j;
  j["replicate"] = r.replicate;
  j["ok"] = r.ok;
  if (!r.ok) {
    j["error"] = {{"code", r.error_code}, {"message", r.error_message}};
    return j;
  }
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  for (const auto& [name, e] : r.estimates)
    j["estimates"][name] = {{"mean", vec(e.mean)}, {"lower", vec(e.lower)}, {"upper", vec(e.upper)}};
  return j;
}

inline ReplicateResult replicate_from_json(const nlohmann::json& j) {
  ReplicateResult r;
  r.replicate = j.at("replicate").get<int>();
  r.ok = j.at("ok").get<bool>();
  if (!r.ok) {
    r.error_code = j.at("error").at("code").get<std::string>();
    r.error_message = j.at("error").at("message").get<std::string>();
    return r;
  }
  auto vec = [](const nlohmann::json& a) {
    const auto v = a.get<std::vector<double>>();
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  for (const auto& [name, e] : j.at("estimates").items())
    r.estimates[name] = {vec(e.at("mean")), vec(e.at("lower")), vec(e.at("upper"))};
  return r;
}

inline StudyMetrics aggregate_study(const StudyConfig& cfg, const std::vector<ReplicateResult>& results) {
  StudyMetrics m;
  const Eigen::Index P = cfg.simulation.P();
  for (Eigen::Index p = 0; p < P; ++p) m.coefficients.push_back("beta" + std::to_string(p + 1));
  std::vector<const ReplicateResult*> ok;
  for (const auto& r : results) {
    if (r.ok) {
      ok.push_back(&r);
    } else {
      ++m.failed;
      ++m.failures_by_code[r.error_code];
    }
  }
  m.completed = static_cast<int>(ok.size());
  if (ok.empty()) return m;
  for (Variant v : cfg.variants) {
    const std::string name(to_string(v));
    auto& out = m.by_variant[name];
    for (Eigen::Index p = 0; p < P; ++p) {
      std::vector<double> est, lo, hi;
      for (const auto* r : ok) {
        const auto& e = r->estimates.at(name);
        est.push_back(e.mean(p));
        lo.push_back(e.lower(p));
        hi.push_back(e.upper(p));
      }
      out.push_back(coefficient_metrics(est, lo, hi, cfg.simulation.beta(p)));
    }
  }
  return m;
}

/// Runs every replicate, reusing results already stored under `store`
/// (one JSON file per replicate) and writing new ones as they finish.
inline StudyMetrics run_study(const StudyConfig& cfg, const std::optional<std::filesystem::path>& store = std::nullopt,
                              std::vector<ReplicateResult>* results_out = nullptr) {
  cfg.simulation.validate();
  cfg.model.validate();
  const auto n = static_cast<std::size_t>(cfg.simulation.replicates);
  if (store) std::filesystem::create_directories(*store);
  auto path_for = [&](std::size_t r) {
    char name[32];
    std::snprintf(name, sizeof name, "replicate_%05zu.json", r);
    return *store / name;
  };
  std::mutex write_mutex;
  auto results = parallel_map<ReplicateResult>(n, cfg.jobs, [&](std::size_t r) {
    if (store && std::filesystem::exists(path_for(r))) {
      std::ifstream in(path_for(r));
      return replicate_from_json(nlohmann::json::parse(in));
    }
    ReplicateResult res = run_replicate(cfg, static_cast<int>(r));
    if (store) {
      std::lock_guard lock(write_mutex);
      const auto tmp = path_for(r).string() + ".tmp";
      {
        std::ofstream out(tmp);
        out << to_json(res).dump(1) << "\n";
      }
      std::filesystem::rename(tmp, path_for(r));
    }
    return res;
  });
  StudyMetrics m = aggregate_study(cfg, results);
  if (results_out) *results_out = std::move(results);
  return m;
}

/// Table-2 layout: one row per metric and coefficient, one column per variant.
inline void write_study_csv(std::ostream& out, const StudyConfig& cfg, const StudyMetrics& m) {
  out << "metric,coefficient";
  for (Variant v : cfg.variants) out << "," << to_string(v);
  out << "\n";
  const char* metrics[] = {"bias", "rmse", "ci_width", "ci_coverage"};
  for (int k = 0; k < 4; ++k) {
    for (std::size_t p = 0; p < m.coefficients.size(); ++p) {
      out << metrics[k] << "," << m.coefficients[p];
      for (Variant v : cfg.variants) {
        const auto it = m.by_variant.find(std::string(to_string(v)));
        if (it == m.by_variant.end()) {
          out << ",NA";
          continue;
        }
        const auto& c = it->second[p];
        const double value = k == 0 ? c.bias : k == 1 ? c.rmse : k == 2 ? c.width : c.coverage;
        char buf[32];
        std::snprintf(buf, sizeof buf, ",%.6f", value);
        out << buf;
      }
      out << "\n";
    }
  }
}

}  // namespace h2m
