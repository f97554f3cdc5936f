#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "h2m/cli.hpp"
#include "h2m/io.hpp"

using namespace h2m;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("h2m_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "h2m");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

/// Small configuration for CLI fits and studies.
fs::path write_small_config(const fs::path& dir, const std::string& extra = "") {
  const std::string text = R"({
  "mcmc": {"burn_in": 100, "retained": 150, "chains": 2, "seed": 3},
  "simulation": {"T": 120, "replicates": 2, "stabilize": true, "seed": 5},
  "study": {"mcmc": {"burn_in": 60, "retained": 60}},
  "real_like": {"T": 150})" + extra + R"(
})";
  const fs::path p = dir / "config.json";
  write_file(p, text);
  return p;
}

std::string slurp(const fs::path& p) { return read_file(p); }

ChainDraws chain_with(std::uint64_t seed, double shift, int chain, std::size_t n = 400) {
  Stream rng(seed);
  ChainDraws c;
  c.chain = chain;
  c.blocks["beta"] = DrawBlock({"beta0", "beta_x"});
  c.blocks["sigma2"] = DrawBlock({"sigma2_x"});
  for (std::size_t i = 0; i < n; ++i) {
    c.blocks["beta"].push((Eigen::VectorXd(2) << rng.normal(), shift + rng.normal()).finished());
    c.blocks["sigma2"].push(Eigen::VectorXd::Constant(1, 1.0 + 0.1 * rng.uniform()));
  }
  return c;
}

}  // namespace

TEST(Config, DefaultsRoundTrip) {
  for (const char* preset : {"paper", "desk"}) {
    const auto c = default_config(preset);
    const auto j = config_to_json(c);
    const auto back = parse_config(j);
    EXPECT_EQ(config_to_json(back), j) << preset;
  }
  const auto paper = default_config("paper");
  EXPECT_EQ(paper.model.burn_in, 50000);
  EXPECT_EQ(paper.model.retained, 10000);
  EXPECT_EQ(paper.model.chains, 2);
  EXPECT_EQ(paper.model.lag, 1);
  EXPECT_EQ(paper.model.knots.time, 6);
  EXPECT_EQ(paper.study.simulation.T, 2000);
  EXPECT_EQ(paper.study.simulation.replicates, 100);
  const auto desk = default_config("desk");
  EXPECT_EQ(desk.study.simulation.T, 500);
  EXPECT_EQ(desk.study.simulation.replicates, 20);
  EXPECT_EQ(desk.study.model.burn_in, 5000);
  EXPECT_EQ(desk.study.model.retained, 2000);
}

TEST(Config, UnknownKeyRejected) {
  try {
    parse_config(nlohmann::json::parse(R"({"mcmc": {"burnin": 10}})"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidConfig);
  }
}

TEST(Config, InvalidValuesRejected) {
  EXPECT_THROW(parse_config(nlohmann::json::parse(R"({"model": {"lag": 0}})")), Error);
  EXPECT_THROW(parse_config(nlohmann::json::parse(R"({"model": {"variant": "XYZ"}})")), Error);
  EXPECT_THROW(parse_config(nlohmann::json::parse(R"({"mcmc": {"retained": "many"}})")), Error);
}

TEST(Config, ManifestIsAcceptedAsConfig) {
  auto c = default_config("desk");
  c.model.seed = 99;
  c.model.knots.time = 14;
  const auto manifest = cli::manifest_base("fit", c);
  const auto back = parse_config(manifest);
  EXPECT_EQ(back.model.seed, 99u);
  EXPECT_EQ(back.model.knots.time, 14);
}

TEST(Draws, CsvAndColumnarRoundTrip) {
  const auto dir = scratch("draws_roundtrip");
  std::vector<ChainDraws> chains = {chain_with(1, 0.0, 0), chain_with(2, 0.0, 1)};
  chains[0].eta_mean = Eigen::VectorXd::LinSpaced(5, 0.0, 1.0);
  for (auto format : {DrawFormat::Csv, DrawFormat::Columnar}) {
    const auto sub = dir / (format == DrawFormat::Csv ? "csv" : "bin");
    write_draws(sub, chains, format);
    const auto back = read_draws(sub);
    ASSERT_EQ(back.size(), 2u);
    for (std::size_t c = 0; c < 2; ++c)
      for (const auto& [name, block] : chains[c].blocks) {
        EXPECT_EQ(back[c].block(name).names, block.names);
        EXPECT_EQ(back[c].block(name).columns, block.columns) << name;
      }
  }
  EXPECT_TRUE(fs::exists(dir / "bin" / "chain_0" / "beta.bin"));
  EXPECT_TRUE(fs::exists(dir / "csv" / "chain_1" / "sigma2.csv"));
}

TEST(Sha1, GitBlobConvention) {
  // `printf 'hello\n' | git hash-object --stdin`
  EXPECT_EQ(git_blob_sha1("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST(Cli, MissingDatasetIsIoError) {
  const auto dir = scratch("fit_missing");
  const auto r = run_cli({"fit", "--data", (dir / "absent.csv").string(), "--out", (dir / "out").string()});
  EXPECT_EQ(r.code, 2);
  const auto j = nlohmann::json::parse(r.err);
  EXPECT_EQ(j.at("error").at("code"), "IO");
}

TEST(Cli, BadFlagIsInputError) { EXPECT_EQ(run_cli({"fit", "--bogus"}).code, 2); }

TEST(Cli, ConfigTemplateParses) {
  const auto r = run_cli({"config-template", "--preset", "desk"});
  ASSERT_EQ(r.code, 0);
  EXPECT_NO_THROW(parse_config(nlohmann::json::parse(r.out)));
}

TEST(Cli, SimulateShapeAndRepeatability) {
  const auto dir = scratch("simulate");
  const auto cfg = write_small_config(dir);
  ASSERT_EQ(run_cli({"simulate", "--config", cfg.string(), "--out", (dir / "a").string()}).code, 0);
  ASSERT_EQ(run_cli({"simulate", "--config", cfg.string(), "--out", (dir / "b").string()}).code, 0);
  const std::string a = slurp(dir / "a" / "data.csv");
  EXPECT_EQ(a, slurp(dir / "b" / "data.csv"));
  EXPECT_EQ(slurp(dir / "a" / "truth.csv"), slurp(dir / "b" / "truth.csv"));
  std::istringstream in(a);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "date,outcome,temp,rhum,holiday,Y1,Y2,Y3,Y4,Y5,Y6");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 120);
  const auto m = nlohmann::json::parse(slurp(dir / "a" / "manifest.json"));
  EXPECT_EQ(m.at("status"), "ok");
  ASSERT_EQ(run_cli({"simulate", "--config", cfg.string(), "--seed", "6", "--out", (dir / "c").string()}).code, 0);
  EXPECT_NE(a, slurp(dir / "c" / "data.csv"));
}

TEST(Cli, OverflowRemovesPartialOutputs) {
  const auto dir = scratch("overflow");
  write_file(dir / "config.json", R"({"simulation": {"T": 2000, "stabilize": false, "seed": 1, "rate_cap": 1000}})");
  const auto r = run_cli({"simulate", "--config", (dir / "config.json").string(), "--out", (dir / "o").string()});
  EXPECT_EQ(r.code, 4);
  EXPECT_FALSE(fs::exists(dir / "o" / "data.csv"));
  EXPECT_FALSE(fs::exists(dir / "o" / "truth.csv"));
  const auto m = nlohmann::json::parse(slurp(dir / "o" / "manifest.json"));
  EXPECT_EQ(m.at("status"), "failed");
  EXPECT_EQ(m.at("error").at("code"), "OverflowRate");
}

TEST(Cli, FitWritesReportsAndDiagnoses) {
  const auto dir = scratch("fit");
  const auto cfg = write_small_config(dir);
  ASSERT_EQ(run_cli({"simulate", "--config", cfg.string(), "--real-like", "--out", (dir / "sim").string()}).code, 0);
  const auto data = (dir / "sim" / "data.csv").string();
  const std::string extra = R"(, "data": {"pollutants": ["CO", "NO2", "O3", "SO2", "PM25", "PCNT"]})";
  const auto cfg2 = write_small_config(dir, extra);
  const auto r = run_cli({"fit", "--config", cfg2.string(), "--data", data, "--out", (dir / "fit").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"descriptives.csv", "effects.csv", "variance.csv", "parameters.csv", "summary.json", "dic.json",
                        "acceptance.json", "manifest.json"})
    EXPECT_TRUE(fs::exists(dir / "fit" / f)) << f;
  EXPECT_TRUE(fs::exists(dir / "fit" / "draws" / "chain_1" / "beta.csv"));
  std::istringstream effects(slurp(dir / "fit" / "effects.csv"));
  std::string line;
  std::getline(effects, line);
  EXPECT_EQ(line, "pollutant,iqr,percent_increase,lower,upper");
  int rows = 0;
  while (std::getline(effects, line)) ++rows;
  EXPECT_EQ(rows, 6);
  const auto m = nlohmann::json::parse(slurp(dir / "fit" / "manifest.json"));
  EXPECT_EQ(m.at("dataset").at("sha1"), git_blob_sha1(slurp(data)));
  EXPECT_EQ(m.at("chain_seeds").size(), 2u);

  // rerun from the manifest alone reproduces the draws
  const auto r2 = run_cli({"fit", "--config", (dir / "fit" / "manifest.json").string(), "--out", (dir / "fit2").string()});
  ASSERT_EQ(r2.code, 0) << r2.err;
  EXPECT_EQ(slurp(dir / "fit" / "draws" / "chain_0" / "beta.csv"), slurp(dir / "fit2" / "draws" / "chain_0" / "beta.csv"));

  const auto d = run_cli({"diagnose", (dir / "fit").string()});
  EXPECT_TRUE(d.code == 0 || d.code == 3);
  EXPECT_NO_THROW(nlohmann::json::parse(d.out));
}

TEST(Cli, DiagnoseExitCodes) {
  const auto dir = scratch("diagnose");
  write_draws(dir / "single", {chain_with(1, 0.0, 0)}, DrawFormat::Csv);
  const auto one = run_cli({"diagnose", (dir / "single").string()});
  EXPECT_EQ(one.code, 2);
  EXPECT_EQ(nlohmann::json::parse(one.err).at("error").at("code"), "TooFewChains");

  write_draws(dir / "separated", {chain_with(1, 0.0, 0), chain_with(2, 10.0, 1)}, DrawFormat::Csv);
  const auto sep = run_cli({"diagnose", (dir / "separated").string()});
  EXPECT_EQ(sep.code, 3);
  const auto j = nlohmann::json::parse(sep.out);
  EXPECT_EQ(j.at("flagged"), nlohmann::json::array({"beta_x"}));

  write_draws(dir / "ok", {chain_with(3, 0.0, 0, 4000), chain_with(4, 0.0, 1, 4000)}, DrawFormat::Columnar);
  EXPECT_EQ(run_cli({"diagnose", (dir / "ok").string()}).code, 0);
}

TEST(Cli, StudySubsetAndResume) {
  const auto dir = scratch("study");
  const auto cfg = write_small_config(dir);
  const auto out = (dir / "s").string();
  const auto r = run_cli({"study", "--config", cfg.string(), "--variant", "ME", "--out", out});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(slurp(dir / "s" / "metrics.csv"));
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "metric,coefficient,ME");
  EXPECT_TRUE(fs::exists(dir / "s" / "replicates" / "replicate_00001.json"));

  // interrupted run: drop one replicate and resume
  const std::string before = slurp(dir / "s" / "metrics.csv");
  fs::remove(dir / "s" / "replicates" / "replicate_00001.json");
  ASSERT_EQ(run_cli({"study", "--config", cfg.string(), "--variant", "ME", "--out", out, "--jobs", "2"}).code, 0);
  EXPECT_EQ(slurp(dir / "s" / "metrics.csv"), before);

  // a different configuration refuses to reuse the directory
  EXPECT_EQ(run_cli({"study", "--config", cfg.string(), "--variant", "ME", "--seed", "8", "--out", out}).code, 2);
}
