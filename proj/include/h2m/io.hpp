#pragma once

// Configuration files, stored draws and run manifests.
//
// Configuration is one JSON document with sections data / model / priors /
// mcmc / simulation / study. Unknown keys are rejected. Draws are written
// one file per chain and parameter block, either CSV (header of parameter
// names, one row per retained draw) or a little-endian columnar binary.

#include <Eigen/Dense>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "h2m/dataset.hpp"
#include "h2m/error.hpp"
#include "h2m/mcmc/config.hpp"
#include "h2m/mcmc/draws.hpp"
#include "h2m/simulation.hpp"

namespace h2m {

inline constexpr const char* kVersion = "0.1.0";

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Content hash

/// Git blob id: SHA-1 of "blob <size>\0" followed by the bytes.
inline std::string git_blob_sha1(const std::string& bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + std::string(1, '\0');
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 || EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error(ErrorCode::Io, "SHA-1 computation failed");
  }
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << text;
}

// ---------------------------------------------------------------------------
// Configuration

struct RunConfig {
  std::string data_path;
  DatasetSchema schema;
  ModelConfig model;
  StudyConfig study = StudyConfig::desk();
  RealLikeConfig real_like;
};

namespace detail {

inline void check_keys(const Json& j, const std::string& section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "section '" + section + "' must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) throw Error(ErrorCode::InvalidConfig, "unknown key '" + k + "' in section '" + section + "'");
}

template <typename T>
void read_opt(const Json& j, const char* key, T& target) {
  if (j.contains(key)) target = j.at(key).get<T>();
}

inline Eigen::MatrixXd matrix_from_json(const Json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  if (rows.empty()) throw Error(ErrorCode::InvalidConfig, "empty matrix");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.front().size()) throw Error(ErrorCode::InvalidConfig, "ragged matrix");
    for (std::size_t k = 0; k < rows[i].size(); ++k)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
  }
  return m;
}

inline Json matrix_to_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> r(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index k = 0; k < m.cols(); ++k) r[static_cast<std::size_t>(k)] = m(i, k);
    rows.push_back(r);
  }
  return rows;
}

inline Eigen::VectorXd vector_from_json(const Json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline Json vector_to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline void read_terms(const Json& j, ModelTerms& t) {
  check_keys(j, "terms", {"exposure_covariates", "smooths", "holiday", "overdispersion", "health_likelihood"});
  read_opt(j, "exposure_covariates", t.exposure_covariates);
  read_opt(j, "smooths", t.smooths);
  read_opt(j, "holiday", t.holiday);
  read_opt(j, "overdispersion", t.overdispersion);
  read_opt(j, "health_likelihood", t.health_likelihood);
}

inline Json terms_to_json(const ModelTerms& t) {
  return {{"exposure_covariates", t.exposure_covariates}, {"smooths", t.smooths}, {"holiday", t.holiday},
          {"overdispersion", t.overdispersion}, {"health_likelihood", t.health_likelihood}};
}

inline void read_mcmc(const Json& j, ModelConfig& m) {
  check_keys(j, "mcmc", {"burn_in", "retained", "thin", "chains", "seed", "adapt_window", "theta_block",
                         "store_exposure_every"});
  read_opt(j, "burn_in", m.burn_in);
  read_opt(j, "retained", m.retained);
  read_opt(j, "thin", m.thin);
  read_opt(j, "chains", m.chains);
  read_opt(j, "seed", m.seed);
  read_opt(j, "adapt_window", m.adapt_window);
  read_opt(j, "theta_block", m.theta_block);
  read_opt(j, "store_exposure_every", m.store_exposure_every);
}

inline Json mcmc_to_json(const ModelConfig& m) {
  return {{"burn_in", m.burn_in},   {"retained", m.retained},         {"thin", m.thin},
          {"chains", m.chains},     {"seed", m.seed},                 {"adapt_window", m.adapt_window},
          {"theta_block", m.theta_block}, {"store_exposure_every", m.store_exposure_every}};
}

inline void read_priors(const Json& j, ModelConfig& m) {
  check_keys(j, "priors", {"set", "beta_sd", "beta_sd_per_standard_unit"});
  if (j.contains("set")) {
    const auto s = j.at("set").get<std::string>();
    if (s == "default")
      m.prior_set = PriorSet::Default;
    else if (s == "sensitivity")
      m.prior_set = PriorSet::Sensitivity;
    else
      throw Error(ErrorCode::InvalidConfig, "prior set must be 'default' or 'sensitivity'");
  }
  read_opt(j, "beta_sd", m.beta_prior_sd);
  read_opt(j, "beta_sd_per_standard_unit", m.beta_prior_per_standard_unit);
}

inline Json priors_to_json(const ModelConfig& m) {
  return {{"set", m.prior_set == PriorSet::Default ? "default" : "sensitivity"},
          {"beta_sd", m.beta_prior_sd},
          {"beta_sd_per_standard_unit", m.beta_prior_per_standard_unit}};
}

inline std::vector<Variant> variants_from_json(const Json& j) {
  std::vector<Variant> out;
  for (const auto& s : j.get<std::vector<std::string>>()) out.push_back(parse_variant(s));
  if (out.empty()) throw Error(ErrorCode::InvalidConfig, "variant list is empty");
  return out;
}

inline Json variants_to_json(const std::vector<Variant>& vs) {
  Json a = Json::array();
  for (Variant v : vs) a.push_back(std::string(to_string(v)));
  return a;
}

}  // namespace detail

/// Parses a configuration document; a run manifest (which embeds the
/// resolved configuration under "config") is accepted as well.
inline RunConfig parse_config(const Json& root_in) {
  using namespace detail;
  const Json& root = root_in.contains("config") && root_in.contains("artifact") ? root_in.at("config") : root_in;
  RunConfig c;
  try {
    check_keys(root, "root", {"data", "model", "priors", "mcmc", "simulation", "study", "real_like"});
    if (root.contains("data")) {
      const auto& d = root.at("data");
      check_keys(d, "data", {"path", "date", "outcome", "temperature", "humidity", "holiday", "pollutants"});
      read_opt(d, "path", c.data_path);
      read_opt(d, "date", c.schema.date);
      read_opt(d, "outcome", c.schema.outcome);
      read_opt(d, "temperature", c.schema.temperature);
      read_opt(d, "humidity", c.schema.humidity);
      read_opt(d, "holiday", c.schema.holiday);
      read_opt(d, "pollutants", c.schema.pollutants);
    }
    if (root.contains("model")) {
      const auto& m = root.at("model");
      check_keys(m, "model", {"variant", "lag", "knots", "terms", "rho", "fixed"});
      if (m.contains("variant")) c.model.variant = parse_variant(m.at("variant").get<std::string>());
      read_opt(m, "lag", c.model.lag);
      read_opt(m, "rho", c.model.rho);
      if (m.contains("knots")) {
        const auto& k = m.at("knots");
        check_keys(k, "knots", {"time", "temperature", "humidity"});
        read_opt(k, "time", c.model.knots.time);
        read_opt(k, "temperature", c.model.knots.temperature);
        read_opt(k, "humidity", c.model.knots.humidity);
      }
      if (m.contains("terms")) read_terms(m.at("terms"), c.model.terms);
      if (m.contains("fixed")) {
        const auto& f = m.at("fixed");
        check_keys(f, "fixed", {"gamma", "sigma", "Sigma"});
        if (f.contains("gamma")) c.model.fixed.gamma = matrix_from_json(f.at("gamma"));
        if (f.contains("sigma")) c.model.fixed.sigma = vector_from_json(f.at("sigma"));
        if (f.contains("Sigma")) c.model.fixed.Sigma = matrix_from_json(f.at("Sigma"));
      }
    }
    if (root.contains("priors")) read_priors(root.at("priors"), c.model);
    if (root.contains("mcmc")) read_mcmc(root.at("mcmc"), c.model);

    auto& sim = c.study.simulation;
    if (root.contains("simulation")) {
      const auto& s = root.at("simulation");
      check_keys(s, "simulation",
                 {"T", "correlation", "error_variance", "beta", "intercept", "replicates", "seed", "stabilize", "rate_cap"});
      read_opt(s, "T", sim.T);
      if (s.contains("correlation")) sim.correlation = matrix_from_json(s.at("correlation"));
      read_opt(s, "error_variance", sim.error_variance);
      if (s.contains("beta")) sim.beta = vector_from_json(s.at("beta"));
      read_opt(s, "intercept", sim.intercept);
      read_opt(s, "replicates", sim.replicates);
      read_opt(s, "seed", sim.seed);
      read_opt(s, "stabilize", sim.stabilize);
      read_opt(s, "rate_cap", sim.rate_cap);
    }
    if (root.contains("study")) {
      const auto& st = root.at("study");
      check_keys(st, "study", {"variants", "lag", "terms", "priors", "mcmc", "jobs"});
      if (st.contains("priors")) read_priors(st.at("priors"), c.study.model);
      if (st.contains("variants")) c.study.variants = variants_from_json(st.at("variants"));
      read_opt(st, "lag", c.study.model.lag);
      if (st.contains("terms")) read_terms(st.at("terms"), c.study.model.terms);
      if (st.contains("mcmc")) read_mcmc(st.at("mcmc"), c.study.model);
      read_opt(st, "jobs", c.study.jobs);
    }
    if (root.contains("real_like")) {
      const auto& r = root.at("real_like");
      check_keys(r, "real_like", {"T", "percent_per_iqr", "missing_rate", "baseline", "persistence"});
      read_opt(r, "T", c.real_like.T);
      if (r.contains("percent_per_iqr")) c.real_like.percent_per_iqr = vector_from_json(r.at("percent_per_iqr"));
      read_opt(r, "missing_rate", c.real_like.missing_rate);
      read_opt(r, "baseline", c.real_like.baseline);
      read_opt(r, "persistence", c.real_like.persistence);
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("configuration: ") + e.what());
  }
  c.model.validate();
  c.study.model.validate();
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
  return parse_config(j);
}

inline Json config_to_json(const RunConfig& c) {
  using namespace detail;
  Json model = {{"variant", std::string(to_string(c.model.variant))},
                {"lag", c.model.lag},
                {"rho", c.model.rho},
                {"knots", {{"time", c.model.knots.time}, {"temperature", c.model.knots.temperature},
                           {"humidity", c.model.knots.humidity}}},
                {"terms", terms_to_json(c.model.terms)}};
  if (c.model.fixed.gamma) model["fixed"]["gamma"] = matrix_to_json(*c.model.fixed.gamma);
  if (c.model.fixed.sigma) model["fixed"]["sigma"] = vector_to_json(*c.model.fixed.sigma);
  if (c.model.fixed.Sigma) model["fixed"]["Sigma"] = matrix_to_json(*c.model.fixed.Sigma);
  const auto& sim = c.study.simulation;
  return {
      {"data",
       {{"path", c.data_path},
        {"date", c.schema.date},
        {"outcome", c.schema.outcome},
        {"temperature", c.schema.temperature},
        {"humidity", c.schema.humidity},
        {"holiday", c.schema.holiday},
        {"pollutants", c.schema.pollutants}}},
      {"model", model},
      {"priors", priors_to_json(c.model)},
      {"mcmc", mcmc_to_json(c.model)},
      {"simulation",
       {{"T", sim.T},
        {"correlation", matrix_to_json(sim.correlation)},
        {"error_variance", sim.error_variance},
        {"beta", vector_to_json(sim.beta)},
        {"intercept", sim.intercept},
        {"replicates", sim.replicates},
        {"seed", sim.seed},
        {"stabilize", sim.stabilize},
        {"rate_cap", sim.rate_cap}}},
      {"study",
       {{"variants", variants_to_json(c.study.variants)},
        {"lag", c.study.model.lag},
        {"terms", terms_to_json(c.study.model.terms)},
        {"priors", priors_to_json(c.study.model)},
        {"mcmc", mcmc_to_json(c.study.model)},
        {"jobs", c.study.jobs}}},
      {"real_like",
       {{"T", c.real_like.T},
        {"percent_per_iqr", vector_to_json(c.real_like.percent_per_iqr)},
        {"missing_rate", c.real_like.missing_rate},
        {"baseline", c.real_like.baseline},
        {"persistence", c.real_like.persistence}}},
  };
}

/// Paper-scale defaults ("paper") or the desk-scale simulation settings ("desk").
inline RunConfig default_config(const std::string& preset = "paper") {
  RunConfig c;
  if (preset == "paper") {
    c.study.simulation = SimulationConfig{};
    c.study.model = StudyConfig::simulation_model_defaults();
    c.study.model.burn_in = 50000;
    c.study.model.retained = 10000;
  } else if (preset != "desk") {
    throw Error(ErrorCode::InvalidConfig, "unknown preset '" + preset + "'");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Draw files

enum class DrawFormat { Csv, Columnar };

inline DrawFormat parse_format(const std::string& s) {
  if (s == "csv") return DrawFormat::Csv;
  if (s == "columnar") return DrawFormat::Columnar;
  throw Error(ErrorCode::InvalidConfig, "format must be csv or columnar");
}

inline constexpr char kColumnarMagic[8] = {'H', '2', 'M', 'C', 'O', 'L', '1', '\0'};

inline void write_block_csv(std::ostream& out, const DrawBlock& b) {
  for (std::size_t j = 0; j < b.cols(); ++j) out << (j ? "," : "") << b.names[j];
  out << "\n";
  char buf[32];
  for (std::size_t i = 0; i < b.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%s%.17g", j ? "," : "", b.columns[j][i]);
      out << buf;
    }
    out << "\n";
  }
}

/// Layout: magic[8], u64 rows, u64 cols, per column (u32 name length, name
/// bytes), then column-major f64 values.
inline void write_block_columnar(std::ostream& out, const DrawBlock& b) {
  auto put = [&](const void* p, std::size_t n) { out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); };
  const std::uint64_t rows = b.rows();
  const std::uint64_t cols = b.cols();
  put(kColumnarMagic, 8);
  put(&rows, 8);
  put(&cols, 8);
  for (const auto& name : b.names) {
    const auto len = static_cast<std::uint32_t>(name.size());
    put(&len, 4);
    put(name.data(), name.size());
  }
  for (const auto& col : b.columns) put(col.data(), col.size() * sizeof(double));
}

inline DrawBlock read_block_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::Io, "empty draw file");
  DrawBlock b(csv::split_line(line));
  while (std::getline(in, line)) {
    if (csv::trim(line).empty()) continue;
    const auto cells = csv::split_line(line);
    if (cells.size() != b.cols()) throw Error(ErrorCode::Io, "draw row has the wrong number of fields");
    Eigen::VectorXd row(static_cast<Eigen::Index>(cells.size()));
    for (std::size_t j = 0; j < cells.size(); ++j) {
      try {
        row(static_cast<Eigen::Index>(j)) = std::stod(cells[j]);
      } catch (const std::exception&) {
        throw Error(ErrorCode::Io, "non-numeric draw value '" + cells[j] + "'");
      }
    }
    b.push(row);
  }
  return b;
}

inline DrawBlock read_block_columnar(std::istream& in) {
  auto get = [&](void* p, std::size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in) throw Error(ErrorCode::Io, "truncated columnar draw file");
  };
  char magic[8];
  get(magic, 8);
  if (std::memcmp(magic, kColumnarMagic, 8) != 0) throw Error(ErrorCode::Io, "not a columnar draw file");
  std::uint64_t rows = 0;
  std::uint64_t cols = 0;
  get(&rows, 8);
  get(&cols, 8);
  std::vector<std::string> names;
  for (std::uint64_t j = 0; j < cols; ++j) {
    std::uint32_t len = 0;
    get(&len, 4);
    std::string name(len, '\0');
    get(name.data(), len);
    names.push_back(std::move(name));
  }
  DrawBlock b(std::move(names));
  for (auto& col : b.columns) {
    col.resize(rows);
    get(col.data(), rows * sizeof(double));
  }
  return b;
}

/// <dir>/chain_<c>/<block>.{csv,bin}
inline void write_draws(const std::filesystem::path& dir, const std::vector<ChainDraws>& chains, DrawFormat format) {
  for (const auto& c : chains) {
    const auto chain_dir = dir / ("chain_" + std::to_string(c.chain));
    std::filesystem::create_directories(chain_dir);
    for (const auto& [name, block] : c.blocks) {
      if (format == DrawFormat::Csv) {
        std::ofstream out(chain_dir / (name + ".csv"));
        if (!out) throw Error(ErrorCode::Io, "cannot write draws to " + chain_dir.string());
        write_block_csv(out, block);
      } else {
        std::ofstream out(chain_dir / (name + ".bin"), std::ios::binary);
        if (!out) throw Error(ErrorCode::Io, "cannot write draws to " + chain_dir.string());
        write_block_columnar(out, block);
      }
    }
    if (c.eta_mean.size() > 0) {
      DrawBlock eta({"eta_mean"});
      for (Eigen::Index t = 0; t < c.eta_mean.size(); ++t) eta.push(Eigen::VectorXd::Constant(1, c.eta_mean(t)));
      std::ofstream out(chain_dir / "eta_mean.csv");
      write_block_csv(out, eta);
    }
  }
}

/// Reads every chain_<c> directory below `dir`. A directory holding block
/// files directly is read as a single chain.
inline std::vector<ChainDraws> read_draws(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw Error(ErrorCode::Io, "draws directory not found: " + dir.string());
  std::vector<std::pair<int, fs::path>> chain_dirs;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (e.is_directory() && name.rfind("chain_", 0) == 0) {
      try {
        chain_dirs.emplace_back(std::stoi(name.substr(6)), e.path());
      } catch (const std::exception&) {
        continue;
      }
    }
  }
  if (chain_dirs.empty()) chain_dirs.emplace_back(0, dir);
  std::sort(chain_dirs.begin(), chain_dirs.end());
  std::vector<ChainDraws> out;
  for (const auto& [index, path] : chain_dirs) {
    ChainDraws c;
    c.chain = index;
    for (const auto& e : fs::directory_iterator(path)) {
      const auto ext = e.path().extension().string();
      const auto stem = e.path().stem().string();
      if (stem == "eta_mean") continue;
      if (ext == ".csv") {
        std::ifstream in(e.path());
        c.blocks[stem] = read_block_csv(in);
      } else if (ext == ".bin") {
        std::ifstream in(e.path(), std::ios::binary);
        c.blocks[stem] = read_block_columnar(in);
      }
    }
    if (c.blocks.empty()) throw Error(ErrorCode::Io, "no draw files in " + path.string());
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace h2m
