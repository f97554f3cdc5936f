// Acceptance run: one PASS/FAIL line per headline criterion. Tolerances are
// pinned here. Exit status is nonzero when any criterion fails.
//
//   h2m_acceptance [--jobs N] [--work DIR] [--only K]...

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "h2m/cli.hpp"
#include "h2m/diagnostics.hpp"
#include "h2m/io.hpp"
#include "h2m/mcmc/kernels.hpp"
#include "h2m/simulation.hpp"
#include "oracles/glm_oracle.hpp"
#include "oracles/kalman_oracle.hpp"
#include "oracles/stats_oracle.hpp"

using namespace h2m;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

int run_cli(const std::vector<std::string>& args, std::string* out_text = nullptr) {
  std::vector<const char*> argv = {"h2m"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str();
  if (code != 0) std::cerr << err.str();
  return code;
}

// ---------------------------------------------------------------------------
// 1. Table 2 ordering at desk scale

/// Parses metrics.csv into metric -> coefficient -> variant -> value.
std::map<std::string, std::map<std::string, std::map<std::string, double>>> read_metrics(const std::string& text) {
  std::map<std::string, std::map<std::string, std::map<std::string, double>>> m;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  const auto header = csv::split_line(line);
  while (std::getline(in, line)) {
    const auto cells = csv::split_line(line);
    for (std::size_t k = 2; k < cells.size(); ++k) m[cells[0]][cells[1]][header[k]] = std::stod(cells[k]);
  }
  return m;
}

Outcome criterion_table2(const fs::path& work, int jobs) {
  const fs::path dir = work / "table2";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_file(dir / "config.json", config_to_json(default_config("desk")).dump(2));
  std::string csv_text;
  if (run_cli({"study", "--config", (dir / "config.json").string(), "--out", (dir / "run").string(), "--jobs",
               std::to_string(jobs)},
              &csv_text) != 0)
    return {false, "study command failed"};
  std::cout << csv_text;
  auto m = read_metrics(csv_text);
  const std::vector<std::string> effects = {"beta1", "beta2", "beta3"};
  const std::vector<std::string> all = {"beta1", "beta2", "beta3", "beta4", "beta5", "beta6"};
  const double slack = 0.005;

  bool a = true;
  for (const auto& b : effects)
    a = a && std::fabs(m["bias"][b]["H2Mjoint"]) < std::fabs(m["bias"][b]["ME"]) + slack;

  bool b_joint = true;
  int me_low = 0;
  for (const auto& b : all) {
    b_joint = b_joint && m["ci_coverage"][b]["H2Mjoint"] >= 0.85 && m["ci_coverage"][b]["H2M"] >= 0.85;
    if (m["ci_coverage"][b]["ME"] <= 0.80) ++me_low;
  }
  const bool b_ok = b_joint && me_low >= 4;

  bool c = true;
  for (const auto& b : all)
    c = c && m["ci_width"][b]["H2Mjoint"] >= m["ci_width"][b]["ME"] && m["ci_width"][b]["H2M"] >= m["ci_width"][b]["ME"];

  double joint_bias = 0.0, cut_bias = 0.0;
  for (const auto& b : effects) {
    joint_bias += std::fabs(m["bias"][b]["H2Mjoint"]) / 3.0;
    cut_bias += std::fabs(m["bias"][b]["H2M"]) / 3.0;
  }
  const bool d = joint_bias <= cut_bias + slack;

  std::ostringstream detail;
  detail << "(a) bias " << (a ? "ok" : "FAIL") << "; (b) coverage " << (b_ok ? "ok" : "FAIL") << " [ME<=80% on "
         << me_low << "/6]; (c) width " << (c ? "ok" : "FAIL") << "; (d) mean |bias| H2Mjoint " << num("%.4f", joint_bias)
         << " vs H2M " << num("%.4f", cut_bias) << (d ? " ok" : " FAIL");
  return {a && b_ok && c && d, detail.str()};
}

// ---------------------------------------------------------------------------
// 2. Sampler correctness

Outcome criterion_sampler() {
  std::ostringstream detail;
  bool ok = true;

  // inverse-Wishart full conditional at P=1 against inverse-gamma
  double worst = 0.0;
  const double D = 1.7, S = 4.2, d = 3.0, n = 25.0;
  for (double x : {0.05, 0.2, 0.6, 1.5, 7.0}) {
    const double iw = inverse_wishart_logpdf(Eigen::MatrixXd::Constant(1, 1, x), Eigen::MatrixXd::Constant(1, 1, D + S), d + n);
    const double a = 0.5 * (d + n), b = 0.5 * (D + S);
    const double ig = a * std::log(b) - std::lgamma(a) - (a + 1.0) * std::log(x) - b / x;
    worst = std::max(worst, std::fabs(iw - ig));
  }
  const bool iw_ok = worst <= 1e-10;
  detail << "IW/IG max diff " << num("%.2e", worst) << (iw_ok ? "" : " FAIL");
  ok = ok && iw_ok;

  // random-walk MH on a two-state target
  {
    auto target = [](const Eigen::VectorXd& x) {
      if (std::fabs(std::fabs(x(0)) - 1.0) > 0.5) return -std::numeric_limits<double>::infinity();
      return x(0) > 0 ? std::log(2.0) : 0.0;
    };
    Stream rng(SeedTree(1).child("balance").key());
    Eigen::VectorXd x = Eigen::VectorXd::Constant(1, -1.0);
    long positive = 0;
    const long draws = 400000;
    for (long i = 0; i < draws; ++i) {
      x = mh_step(target, x, 1.2, rng).point;
      positive += x(0) > 0;
    }
    const double err = std::fabs(static_cast<double>(positive) / draws - 2.0 / 3.0);
    detail << "; two-point error " << num("%.4f", err);
    ok = ok && err <= 0.01;
  }

  SimulationConfig sc;
  sc.T = 300;
  sc.stabilize = true;
  const auto data = simulate_dataset(sc, SeedTree(2).child("sampler")).to_dataset();

  // prior recovery
  {
    ModelConfig cfg = StudyConfig::simulation_model_defaults();
    cfg.variant = Variant::ME;
    cfg.burn_in = 100;
    cfg.retained = 40000;
    cfg.terms.health_likelihood = false;
    cfg.beta_prior_sd = 0.1;
    cfg.beta_prior_per_standard_unit = false;
    const auto chain = run_chain(prepare_model(data, cfg), cfg, chain_seeds(3, 0));
    double q_err = 0.0;
    for (std::size_t p = 1; p <= 6; ++p) {
      auto v = chain.block("beta").columns[p];
      std::sort(v.begin(), v.end());
      for (double q : {0.025, 0.25, 0.5, 0.75, 0.975})
        q_err = std::max(q_err, std::fabs(quantile_sorted(v, q) - 0.1 * oracle::normal_quantile(q)));
    }
    detail << "; prior quantile error " << num("%.4f", q_err);
    ok = ok && q_err <= 0.01;
  }

  // ME fit against the GLM oracle
  {
    ModelConfig cfg = StudyConfig::simulation_model_defaults();
    cfg.variant = Variant::ME;
    cfg.burn_in = 500;
    cfg.retained = 10000;
    const auto md = prepare_model(data, cfg);
    const auto chain = run_chain(md, cfg, chain_seeds(4, 0));
    const auto rows = static_cast<Eigen::Index>(md.health_days.size());
    Eigen::MatrixXd x(rows, md.num_coef);
    Eigen::VectorXd y(rows);
    for (Eigen::Index k = 0; k < rows; ++k) {
      const Eigen::Index t = md.health_days[static_cast<std::size_t>(k)];
      x(k, 0) = 1.0;
      x.row(k).tail(md.P) = data.pollutants().row(t - 1);
      y(k) = md.counts_d(t);
    }
    const auto fit = oracle::poisson_glm(x, y, Eigen::VectorXd::Constant(rows, md.log_expected), md.base_prior_precision,
                                         400000);
    double worst_z = 0.0;
    for (std::size_t j = 0; j <= 6; ++j) {
      const auto& col = chain.block("beta").columns[j];
      const double z = std::fabs(mean_of(col) - fit.posterior_mean(static_cast<Eigen::Index>(j))) / oracle::batch_se(col, 50);
      worst_z = std::max(worst_z, z);
    }
    detail << "; GLM oracle max |z| " << num("%.2f", worst_z);
    ok = ok && worst_z <= 3.0;
  }
  return {ok, detail.str()};
}

// ---------------------------------------------------------------------------
// 3. Local-level model against the Kalman smoother

Outcome criterion_local_level() {
  SimulationConfig sc;
  sc.T = 40;
  sc.correlation = Eigen::MatrixXd::Identity(1, 1);
  sc.beta = Eigen::VectorXd::Zero(1);
  sc.error_variance = 0.5;
  auto data = simulate_dataset(sc, SeedTree(5).child("local_level")).to_dataset();
  Eigen::MatrixXd y = data.pollutants();
  MaskMatrix obs = data.observed();
  for (int t : {12, 13, 14, 27}) {
    obs(t, 0) = false;
    y(t, 0) = std::nan("");
  }
  data = TimeSeriesDataset(data.dates(), data.outcome(), data.temperature(), data.humidity(), data.holiday(),
                           data.pollutant_names(), y, obs);
  ModelConfig cfg = StudyConfig::simulation_model_defaults();
  cfg.variant = Variant::H2M;
  cfg.burn_in = 500;
  cfg.retained = 50000;
  cfg.store_exposure_every = 1;
  const double q = 0.3, r = 0.2;
  cfg.fixed.gamma = Eigen::MatrixXd::Zero(1, 1);
  cfg.fixed.sigma = Eigen::VectorXd::Constant(1, std::sqrt(r));
  cfg.fixed.Sigma = Eigen::MatrixXd::Constant(1, 1, q);
  const auto md = prepare_model(data, cfg);
  const auto stage = run_exposure_stage(md, cfg, chain_seeds(6, 0));
  std::vector<double> ystd(static_cast<std::size_t>(md.T));
  for (Eigen::Index t = 0; t < md.T; ++t) ystd[static_cast<std::size_t>(t)] = obs(t, 0) ? md.y_std(t, 0) : std::nan("");
  const auto kf = oracle::local_level_smoother(ystd, q, r);
  double worst = 0.0;
  int outside = 0;
  for (Eigen::Index t = 0; t < md.T; ++t) {
    std::vector<double> path;
    path.reserve(stage.draws.exposure_draws.size());
    for (const auto& e : stage.draws.exposure_draws) path.push_back(md.scaling.to_standard(e(t, 0), 0));
    const double z = std::fabs(mean_of(path) - kf.mean[static_cast<std::size_t>(t)]) / oracle::batch_se(path, 100);
    worst = std::max(worst, z);
    outside += z > 3.0;
  }
  return {outside == 0, "days beyond 3 MC standard errors: " + std::to_string(outside) + " of " + std::to_string(md.T) +
                            " (max |z| " + num("%.2f", worst) + ")"};
}

// ---------------------------------------------------------------------------
// 4. Formula fidelity

Outcome criterion_formulas() {
  const double no2 = percent_increase(std::log(1.0940) / 23.65, 23.65);
  const double o3 = percent_increase(std::log(1.0346) / 26.85, 26.85);
  const bool pct_ok = num("%.2f", no2) == "9.40" && num("%.2f", o3) == "3.46";
  SimulationConfig sc;
  sc.beta = Eigen::VectorXd::Zero(6);
  const auto sim = simulate_dataset(sc, SeedTree(7).child("formulas"));
  const Eigen::MatrixXd diff = sim.mu.bottomRows(sc.T - 1) - sim.mu.topRows(sc.T - 1);
  const auto r = empirical_correlation(diff, MaskMatrix::Constant(sc.T - 1, 6, true));
  const double worst = (r - sc.correlation).cwiseAbs().maxCoeff();
  return {pct_ok && worst <= 0.08, "percent increase " + num("%.2f", no2) + " / " + num("%.2f", o3) +
                                       "; max innovation correlation error " + num("%.3f", worst)};
}

// ---------------------------------------------------------------------------
// 5. Synthetic two-year panel

Outcome criterion_real_like(int jobs) {
  const int replicates = 10;
  struct Rep {
    int hits[2] = {0, 0};
    bool prefers_generating = false;
  };
  RealLikeConfig rc;
  std::vector<Eigen::Index> nonzero;
  for (Eigen::Index p = 0; p < rc.percent_per_iqr.size(); ++p)
    if (rc.percent_per_iqr(p) != 0.0) nonzero.push_back(p);
  const auto reps = parallel_map<Rep>(replicates, jobs, [&](std::size_t r) {
    const SeedTree seeds = SeedTree(8).child("real_like", r);
    const auto sim = simulate_real_like(rc, seeds.child("data"));
    ModelConfig cfg;
    cfg.variant = Variant::H2Mjoint;
    // the over-knotted fit loses by about one DIC unit; shorter runs leave
    // the overdispersion terms' Monte Carlo noise in pD larger than that
    cfg.burn_in = 10000;
    cfg.retained = 10000;
    cfg.seed = seeds.child("fit").key();
    const auto md = prepare_model(sim.data, cfg);
    const auto chains = run_model(md, cfg, 1);
    const auto est = beta_estimate(chains, md.P);
    Rep out;
    for (std::size_t k = 0; k < nonzero.size(); ++k) {
      const Eigen::Index p = nonzero[k];
      const double truth = sim.beta(p);
      out.hits[k] = est.lower(p) <= truth && truth <= est.upper(p) && (est.lower(p) > 0.0 || est.upper(p) < 0.0);
    }
    ModelConfig over = cfg;
    over.knots = {14, 9, 9};
    const auto md_over = prepare_model(sim.data, over);
    const auto chains_over = run_model(md_over, over, 1);
    out.prefers_generating = dic(md, chains).dic < dic(md_over, chains_over).dic;
    return out;
  });
  int covered[2] = {0, 0};
  int prefers = 0;
  for (const auto& r : reps) {
    covered[0] += r.hits[0];
    covered[1] += r.hits[1];
    prefers += r.prefers_generating;
  }
  const bool ok = covered[0] >= 7 && covered[1] >= 7 && prefers >= 8;
  std::ostringstream detail;
  detail << "CI covers truth and excludes 0: " << rc.names[static_cast<std::size_t>(nonzero[0])] << " " << covered[0]
         << "/10, " << rc.names[static_cast<std::size_t>(nonzero[1])] << " " << covered[1]
         << "/10; DIC prefers (6,3,3) over (14,9,9) in " << prefers << "/10";
  return {ok, detail.str()};
}

// ---------------------------------------------------------------------------
// 6. Determinism of the study command

Outcome criterion_determinism(const fs::path& work, int jobs) {
  const fs::path first = work / "table2" / "run";
  if (!fs::exists(first / "manifest.json")) {
    // criterion 1 was skipped; produce a first run here
    fs::create_directories(work / "table2");
    write_file(work / "table2" / "config.json", config_to_json(default_config("desk")).dump(2));
    if (run_cli({"study", "--config", (work / "table2" / "config.json").string(), "--out", first.string(), "--jobs",
                 std::to_string(jobs)}) != 0)
      return {false, "first study run failed"};
  }
  const fs::path second = work / "determinism";
  fs::remove_all(second);
  // rerun from the manifest alone, with a different thread count
  if (run_cli({"study", "--config", (first / "manifest.json").string(), "--out", second.string(), "--jobs",
               std::to_string(jobs == 1 ? 2 : 1)}) != 0)
    return {false, "second study run failed"};
  const bool same = read_file(first / "metrics.csv") == read_file(second / "metrics.csv");
  return {same, same ? "metrics.csv byte-identical across runs" : "metrics.csv differs"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  int jobs = 1;
  std::string work = "acceptance_work";
  std::vector<int> only;
  app.add_option("--jobs", jobs)->check(CLI::PositiveNumber);
  app.add_option("--work", work);
  app.add_option("--only", only);
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);
  const std::set<int> selected(only.begin(), only.end());

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"Table 2 ordering at desk scale", [&] { return criterion_table2(work, jobs); }},
      {"sampler correctness suite", [&] { return criterion_sampler(); }},
      {"local-level Kalman oracle", [&] { return criterion_local_level(); }},
      {"formula fidelity", [&] { return criterion_formulas(); }},
      {"synthetic 731-day panel", [&] { return criterion_real_like(jobs); }},
      {"study determinism", [&] { return criterion_determinism(work, jobs); }},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " " << criteria[i].first << ": " << o.detail
              << " [" << num("%.0f", secs) << " s]" << std::endl;
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
