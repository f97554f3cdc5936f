#pragma once

// Command-line front end: fit, simulate, study, diagnose, describe,
// config-template. Exit status 0 success, 2 input or configuration error,
// 3 failed convergence check, 4 numerical failure. Errors are also printed
// to stderr as {"error": {"code": ..., "message": ...}}.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "h2m/dataset.hpp"
#include "h2m/diagnostics.hpp"
#include "h2m/error.hpp"
#include "h2m/io.hpp"
#include "h2m/mcmc/sampler.hpp"
#include "h2m/simulation.hpp"

namespace h2m::cli {

namespace fs = std::filesystem;

enum ExitCode { kOk = 0, kInputError = 2, kDiagnosticFailure = 3, kNumericalFailure = 4 };

inline int exit_code_for(ErrorCode code) { return is_input_error(code) ? kInputError : kNumericalFailure; }

inline void setup_logging() {
  static bool done = false;
  if (done) return;
  done = true;
  auto logger = spdlog::stderr_color_mt("h2m");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S] [%l] %v");
  const char* env = std::getenv("H2M_LOG");
  spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::warn);
}

struct Options {
  std::string config;
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  std::string variant;
  std::string format = "csv";
  std::string draws;
  std::string preset = "paper";
  bool real_like = false;
};

class Timer {
 public:
  void lap(const std::string& phase) {
    const auto now = std::chrono::steady_clock::now();
    timings_[phase] = std::chrono::duration<double>(now - last_).count();
    last_ = now;
  }
  Json json() const { return timings_; }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
  std::map<std::string, double> timings_;
};

inline RunConfig resolve_config(const Options& o) {
  RunConfig c = o.config.empty() ? default_config("paper") : load_config(o.config);
  if (!o.data.empty()) c.data_path = o.data;
  if (o.seed) {
    c.model.seed = *o.seed;
    c.study.simulation.seed = *o.seed;
  }
  c.study.jobs = o.jobs;
  return c;
}

inline Json manifest_base(const std::string& command, const RunConfig& c) {
  return {{"artifact", "h2m"}, {"version", kVersion}, {"command", command}, {"config", config_to_json(c)}};
}

inline void write_json(const fs::path& path, const Json& j) { write_file(path, j.dump(2) + "\n"); }

inline Json chain_seed_json(const ModelConfig& m) {
  Json a = Json::array();
  for (int c = 0; c < m.chains; ++c)
    a.push_back({{"chain", c}, {"path", "chain/" + std::to_string(c)}, {"key", chain_seeds(m.seed, c).key()}});
  return a;
}

inline TimeSeriesDataset load_from_config(const RunConfig& c) {
  if (c.data_path.empty()) throw Error(ErrorCode::Io, "no dataset given (use --data or data.path)");
  return load_dataset(c.data_path, c.schema);
}

/// Fits one model, writes draws and summaries below `dir`, returns the summary.
inline PosteriorSummary fit_and_write(const TimeSeriesDataset& data, const ModelConfig& mc, const fs::path& dir,
                                      DrawFormat format, int jobs, Timer& timer) {
  spdlog::info("fitting {} with {} pollutant(s), {} chain(s)", to_string(mc.variant), data.num_pollutants(), mc.chains);
  const ModelData md = prepare_model(data, mc);
  const auto chains = run_model(md, mc, jobs);
  timer.lap("sampling_" + dir.filename().string());
  write_draws(dir / "draws", chains, format);
  const Descriptives desc = descriptives(data);
  PosteriorSummary s = summarize(chains, desc);
  if (!md.health_days.empty()) s.dic = dic(md, chains);
  for (const auto& w : s.warnings) spdlog::warn("{}", w);
  std::ostringstream eff, var, par;
  write_effects_csv(eff, s);
  write_variance_csv(var, s);
  write_parameters_csv(par, s);
  write_file(dir / "effects.csv", eff.str());
  write_file(dir / "variance.csv", var.str());
  write_file(dir / "parameters.csv", par.str());
  write_json(dir / "summary.json", to_json(s));
  if (s.dic) write_json(dir / "dic.json", to_json(*s.dic));
  Json acc;
  for (const auto& c : chains) acc[std::to_string(c.chain)] = c.acceptance;
  write_json(dir / "acceptance.json", acc);
  timer.lap("summary_" + dir.filename().string());
  return s;
}

inline int cmd_fit(const Options& o, std::ostream& out) {
  Timer timer;
  RunConfig c = resolve_config(o);
  const bool single = o.variant == "single";
  if (!o.variant.empty() && !single) c.model.variant = parse_variant(o.variant);
  if (single) c.model.variant = Variant::H2Mjoint;
  if (o.out.empty()) throw Error(ErrorCode::Io, "--out is required");
  const fs::path dir = o.out;
  const std::string bytes = read_file(c.data_path.empty() ? throw Error(ErrorCode::Io, "no dataset given") : c.data_path);
  const TimeSeriesDataset data = load_from_config(c);
  timer.lap("load");
  const DrawFormat format = parse_format(o.format);
  fs::create_directories(dir);
  std::ostringstream desc_csv;
  write_descriptives_csv(desc_csv, descriptives(data));
  write_file(dir / "descriptives.csv", desc_csv.str());

  Json manifest = manifest_base("fit", c);
  manifest["fit_mode"] = single ? "single" : "multi";
  manifest["seed"] = c.model.seed;
  manifest["chain_seeds"] = chain_seed_json(c.model);
  manifest["dataset"] = {{"path", c.data_path}, {"sha1", git_blob_sha1(bytes)}, {"days", data.days()},
                         {"pollutants", data.pollutant_names()}};
  Json results;
  if (single) {
    // one single-pollutant joint model per column
    std::ostringstream combined;
    combined << "pollutant,iqr,percent_increase,lower,upper\n";
    for (std::size_t p = 0; p < data.num_pollutants(); ++p) {
      const auto sub = data.select_pollutants({p});
      const auto& name = data.pollutant_names()[p];
      const auto s = fit_and_write(sub, c.model, dir / "single" / name, format, o.jobs, timer);
      std::ostringstream e;
      write_effects_csv(e, s);
      const std::string text = e.str();
      combined << text.substr(text.find('\n') + 1);
      if (s.dic) results[name]["dic"] = to_json(*s.dic);
      results[name]["warnings"] = s.warnings;
    }
    write_file(dir / "effects_single.csv", combined.str());
  } else {
    const auto s = fit_and_write(data, c.model, dir, format, o.jobs, timer);
    if (s.dic) results["dic"] = to_json(*s.dic);
    results["warnings"] = s.warnings;
    std::ostringstream e;
    write_effects_csv(e, s);
    out << e.str();
  }
  manifest["results"] = results;
  manifest["timings"] = timer.json();
  manifest["status"] = "ok";
  write_json(dir / "manifest.json", manifest);
  return kOk;
}

inline void write_truth_csv(std::ostream& out, const TimeSeriesDataset& d, const Eigen::MatrixXd& mu) {
  out << "date";
  for (const auto& n : d.pollutant_names()) out << ",mu_" << n;
  out << "\n";
  char buf[32];
  for (Eigen::Index t = 0; t < mu.rows(); ++t) {
    out << calendar::format_iso_date(d.dates()[static_cast<std::size_t>(t)]);
    for (Eigen::Index p = 0; p < mu.cols(); ++p) {
      std::snprintf(buf, sizeof buf, ",%.17g", mu(t, p));
      out << buf;
    }
    out << "\n";
  }
}

inline int cmd_simulate(const Options& o, std::ostream&) {
  Timer timer;
  const RunConfig c = resolve_config(o);
  if (o.out.empty()) throw Error(ErrorCode::Io, "--out is required");
  const fs::path dir = o.out;
  fs::create_directories(dir);
  const fs::path data_path = dir / "data.csv";
  const fs::path truth_path = dir / "truth.csv";
  Json manifest = manifest_base("simulate", c);
  manifest["seed"] = c.study.simulation.seed;
  manifest["kind"] = o.real_like ? "real_like" : "random_walk";
  try {
    TimeSeriesDataset data;
    Eigen::MatrixXd mu;
    Json truth;
    if (o.real_like) {
      const auto r = simulate_real_like(c.real_like, SeedTree(c.study.simulation.seed).child("real_like"));
      data = r.data;
      mu = r.mu;
      truth["beta"] = detail::vector_to_json(r.beta);
      truth["percent_per_iqr"] = detail::vector_to_json(c.real_like.percent_per_iqr);
    } else {
      const auto sim = simulate_dataset(c.study.simulation, SeedTree(c.study.simulation.seed).child("simulate"));
      data = sim.to_dataset();
      mu = sim.mu;
      truth["beta"] = detail::vector_to_json(c.study.simulation.beta);
      truth["intercept"] = c.study.simulation.intercept;
    }
    std::ostringstream d, t;
    DatasetSchema schema;
    schema.pollutants = data.pollutant_names();
    write_dataset_csv(d, data, schema);
    write_truth_csv(t, data, mu);
    write_file(data_path, d.str());
    write_file(truth_path, t.str());
    manifest["truth"] = truth;
    manifest["dataset"] = {{"path", data_path.string()}, {"sha1", git_blob_sha1(d.str())}};
    manifest["status"] = "ok";
  } catch (const Error& e) {
    std::error_code ignore;
    fs::remove(data_path, ignore);
    fs::remove(truth_path, ignore);
    manifest["status"] = "failed";
    manifest["error"] = {{"code", std::string(to_string(e.code()))}, {"message", e.what()}};
    timer.lap("simulate");
    manifest["timings"] = timer.json();
    write_json(dir / "manifest.json", manifest);
    throw;
  }
  timer.lap("simulate");
  manifest["timings"] = timer.json();
  write_json(dir / "manifest.json", manifest);
  return kOk;
}

inline std::vector<Variant> parse_variant_list(const std::string& s) {
  std::vector<Variant> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(parse_variant(item));
  if (out.empty()) throw Error(ErrorCode::InvalidConfig, "empty variant list");
  return out;
}

inline int cmd_study(const Options& o, std::ostream& out) {
  Timer timer;
  RunConfig c = resolve_config(o);
  if (!o.variant.empty()) c.study.variants = parse_variant_list(o.variant);
  if (o.out.empty()) throw Error(ErrorCode::Io, "--out is required");
  const fs::path dir = o.out;
  fs::create_directories(dir);
  const fs::path manifest_path = dir / "manifest.json";
  if (fs::exists(manifest_path)) {
    // resuming: the stored configuration must match
    const Json old = Json::parse(read_file(manifest_path));
    // the thread count never changes results, so it may differ on resume
    auto comparable = [](Json j) {
      if (j.contains("study")) j["study"].erase("jobs");
      return j;
    };
    if (old.contains("config") && comparable(old.at("config")) != comparable(config_to_json(c)))
      throw Error(ErrorCode::InvalidConfig, "output directory holds a study with a different configuration");
  }
  Json manifest = manifest_base("study", c);
  manifest["seed"] = c.study.simulation.seed;
  manifest["status"] = "running";
  write_json(manifest_path, manifest);

  std::vector<ReplicateResult> results;
  const StudyMetrics m = run_study(c.study, dir / "replicates", &results);
  timer.lap("replicates");
  std::ostringstream csv;
  write_study_csv(csv, c.study, m);
  write_file(dir / "metrics.csv", csv.str());
  out << csv.str();

  Json reps = Json::array();
  for (const auto& r : results) {
    Json e = {{"replicate", r.replicate},
              {"seed_key", replicate_seeds(c.study.simulation.seed, r.replicate).key()},
              {"ok", r.ok}};
    if (!r.ok) e["error"] = r.error_code;
    reps.push_back(e);
  }
  manifest["replicates"] = reps;
  manifest["completed"] = m.completed;
  manifest["failed"] = m.failed;
  manifest["failures_by_code"] = m.failures_by_code;
  manifest["timings"] = timer.json();
  manifest["status"] = "ok";
  write_json(manifest_path, manifest);
  if (m.failed > 0) spdlog::warn("{} of {} replicates failed", m.failed, results.size());
  return kOk;
}

inline int cmd_diagnose(const Options& o, std::ostream& out) {
  fs::path dir = o.draws.empty() ? fs::path(o.out) : fs::path(o.draws);
  if (dir.empty()) throw Error(ErrorCode::Io, "no draws directory given");
  if (fs::is_directory(dir / "draws")) dir /= "draws";
  const auto chains = read_draws(dir);
  const auto report = check_convergence(chains);
  Json j;
  j["passed"] = report.passed();
  j["rhat_threshold"] = kRhatThreshold;
  j["mc_error_fraction"] = kMcErrorFraction;
  j["chains"] = chains.size();
  j["flagged"] = report.failures;
  Json params = Json::array();
  for (const auto& p : report.parameters) {
    auto num = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
    params.push_back({{"block", p.block}, {"name", p.name}, {"mean", p.mean}, {"sd", p.sd},
                      {"mc_error", num(p.mc_error)}, {"rhat", num(p.rhat)}, {"passed", passes_convergence(p)}});
  }
  j["parameters"] = params;
  out << j.dump(2) << "\n";
  return report.passed() ? kOk : kDiagnosticFailure;
}

inline int cmd_describe(const Options& o, std::ostream& out) {
  const RunConfig c = resolve_config(o);
  write_descriptives_csv(out, descriptives(load_from_config(c)));
  return kOk;
}

inline int cmd_config_template(const Options& o, std::ostream& out) {
  out << config_to_json(default_config(o.preset)).dump(2) << "\n";
  return kOk;
}

inline void print_error(std::ostream& err, const std::string& code, const std::string& message) {
  err << Json{{"error", {{"code", code}, {"message", message}}}}.dump() << "\n";
}

/// Entry point shared by the executable and the tests.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  setup_logging();
  CLI::App app{"Two-component Bayesian model for multi-pollutant health effects"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON configuration or run manifest");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--seed", o.seed, "master seed (overrides the configuration)");
    sub->add_option("--jobs", o.jobs, "parallel chains or replicates")->check(CLI::PositiveNumber);
  };
  auto* fit = app.add_subcommand("fit", "fit a model to a daily panel");
  common(fit);
  fit->add_option("--data", o.data, "dataset CSV");
  fit->add_option("--variant", o.variant, "ME, H2M, H2Mjoint or single");
  fit->add_option("--format", o.format, "draw file format")->check(CLI::IsMember({"csv", "columnar"}));
  auto* sim = app.add_subcommand("simulate", "write a simulated panel");
  common(sim);
  sim->add_flag("--real-like", o.real_like, "two-year panel with seasonal confounding instead of the random walk");
  auto* study = app.add_subcommand("study", "replicated estimator comparison");
  common(study);
  study->add_option("--variant", o.variant, "comma-separated subset of ME,H2M,H2Mjoint");
  auto* diag = app.add_subcommand("diagnose", "convergence report for stored draws");
  diag->add_option("draws", o.draws, "draws directory (or a fit output directory)");
  diag->add_option("--out", o.out, "fit output directory");
  auto* describe = app.add_subcommand("describe", "descriptive statistics of a panel");
  describe->add_option("--config", o.config, "JSON configuration");
  describe->add_option("--data", o.data, "dataset CSV");
  auto* tmpl = app.add_subcommand("config-template", "print a configuration with every default filled in");
  tmpl->add_option("--preset", o.preset, "paper or desk")->check(CLI::IsMember({"paper", "desk"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kOk;
    }
    print_error(err, "InvalidConfig", e.what());
    return kInputError;
  }
  try {
    if (fit->parsed()) return cmd_fit(o, out);
    if (sim->parsed()) return cmd_simulate(o, out);
    if (study->parsed()) return cmd_study(o, out);
    if (diag->parsed()) return cmd_diagnose(o, out);
    if (describe->parsed()) return cmd_describe(o, out);
    if (tmpl->parsed()) return cmd_config_template(o, out);
  } catch (const Error& e) {
    print_error(err, std::string(to_string(e.code())), e.what());
    return exit_code_for(e.code());
  } catch (const Json::exception& e) {
    print_error(err, "InvalidConfig", e.what());
    return kInputError;
  } catch (const fs::filesystem_error& e) {
    print_error(err, "IO", e.what());
    return kInputError;
  } catch (const std::exception& e) {
    print_error(err, "NumericalFailure", e.what());
    return kNumericalFailure;
  }
  return kInputError;
}

}  // namespace h2m::cli
