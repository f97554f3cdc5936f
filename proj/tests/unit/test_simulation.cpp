#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "h2m/simulation.hpp"
#include "oracles/stats_oracle.hpp"

using namespace h2m;

TEST(SimulationConfig, CorrelationMatrixIsValid) {
  const auto r = simulation_correlation();
  EXPECT_EQ(r.rows(), 6);
  EXPECT_DOUBLE_EQ(r(0, 1), 0.737);
  EXPECT_TRUE(r.isApprox(r.transpose(), 0.0));
  EXPECT_EQ(Eigen::LLT<Eigen::MatrixXd>(r).info(), Eigen::Success);
  EXPECT_NO_THROW(SimulationConfig{}.validate());
}

TEST(Simulate, NullEffectGivesConstantRate) {
  SimulationConfig c;
  c.beta = Eigen::VectorXd::Zero(6);
  const auto d = simulate_dataset(c, 1);
  double mean = 0.0;
  for (auto o : d.counts) mean += static_cast<double>(o);
  mean /= 2000.0;
  EXPECT_LT(std::fabs(mean - std::numbers::e), 3.0 * std::sqrt(std::numbers::e / 2000.0));
}

TEST(Simulate, InnovationCorrelationMatchesTarget) {
  SimulationConfig c;
  c.beta = Eigen::VectorXd::Zero(6);
  const auto d = simulate_dataset(c, 2);
  const Eigen::MatrixXd diff = d.mu.bottomRows(1999) - d.mu.topRows(1999);
  const auto r = empirical_correlation(diff, MaskMatrix::Constant(1999, 6, true));
  EXPECT_LT((r - c.correlation).cwiseAbs().maxCoeff(), 0.08);
}

TEST(Simulate, MeasurementErrorVariance) {
  SimulationConfig c;
  c.stabilize = true;
  const auto d = simulate_dataset(c, 3);
  const Eigen::MatrixXd e = d.y - d.mu;
  const double var = e.array().square().mean() - std::pow(e.mean(), 2);
  EXPECT_NEAR(var, 0.1, 0.01);
}

TEST(Simulate, ShapesAndCounts) {
  SimulationConfig c;
  c.T = 300;
  c.stabilize = true;
  const auto d = simulate_dataset(c, 4);
  EXPECT_EQ(d.mu.rows(), 300);
  EXPECT_EQ(d.y.rows(), 300);
  EXPECT_EQ(d.y.cols(), 6);
  EXPECT_EQ(d.counts.size(), 300u);
  for (auto o : d.counts) EXPECT_GE(o, 0);
  const auto panel = d.to_dataset();
  EXPECT_EQ(panel.days(), 300u);
  EXPECT_EQ(panel.pollutant_names().front(), "Y1");
}

TEST(Simulate, StabilizedColumnsAreStandard) {
  SimulationConfig c;
  c.T = 500;
  c.stabilize = true;
  const auto d = simulate_dataset(c, 5);
  for (int p = 0; p < 6; ++p) {
    EXPECT_NEAR(d.mu.col(p).mean(), 0.0, 1e-12);
    EXPECT_NEAR((d.mu.col(p).array() - d.mu.col(p).mean()).square().sum() / 499.0, 1.0, 1e-12);
  }
}

TEST(Simulate, Deterministic) {
  SimulationConfig c;
  c.T = 400;
  c.stabilize = true;
  const auto a = simulate_dataset(c, 77);
  const auto b = simulate_dataset(c, 77);
  EXPECT_EQ(a.mu, b.mu);
  EXPECT_EQ(a.y, b.y);
  EXPECT_EQ(a.counts, b.counts);
  const auto other = simulate_dataset(c, 78);
  EXPECT_NE(a.y, other.y);
}

TEST(Simulate, OverflowDetected) {
  SimulationConfig c;
  c.beta = Eigen::VectorXd::Constant(6, 5.0);
  c.rate_cap = 1e3;
  try {
    simulate_dataset(c, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OverflowRate);
  }
}

TEST(Simulate, InvalidConfig) {
  SimulationConfig c;
  c.beta = Eigen::VectorXd::Zero(3);
  EXPECT_THROW(simulate_dataset(c, 1), Error);
  c = SimulationConfig{};
  c.correlation(0, 1) = 0.5;
  EXPECT_THROW(simulate_dataset(c, 1), Error);
}

TEST(RealLike, PanelShape) {
  const auto r = simulate_real_like(RealLikeConfig{}, SeedTree(1));
  EXPECT_EQ(r.data.days(), 731u);
  EXPECT_EQ(r.data.num_pollutants(), 6u);
  EXPECT_GT(r.data.partially_missing_days(), 0u);
  EXPECT_GT(r.beta(1), 0.0);
  EXPECT_EQ(r.beta(0), 0.0);
  const auto d = descriptives(r.data);
  EXPECT_GT(d.outcome.p50, 25.0);
  EXPECT_LT(d.outcome.p50, 50.0);
}

TEST(CoefficientMetrics, ExactEstimates) {
  const auto m = coefficient_metrics({0.2, 0.2, 0.2}, {0.1, 0.1, 0.15}, {0.3, 0.3, 0.25}, 0.2);
  EXPECT_EQ(m.bias, 0.0);
  EXPECT_EQ(m.rmse, 0.0);
  EXPECT_EQ(m.coverage, 1.0);
}

TEST(CoefficientMetrics, SymmetricErrors) {
  const auto m = coefficient_metrics({1.5, -0.5}, {0.0, -1.0}, {2.0, 0.0}, 0.5);
  EXPECT_DOUBLE_EQ(m.bias, 0.0);
  EXPECT_DOUBLE_EQ(m.rmse, 1.0);
  EXPECT_DOUBLE_EQ(m.width, 1.5);
  EXPECT_DOUBLE_EQ(m.coverage, 0.5);
}

TEST(CoefficientMetrics, HandComputedFiveReplicates) {
  // truth 0.2; errors -0.02, 0.01, 0.03, -0.04, 0.00
  const std::vector<double> est = {0.18, 0.21, 0.23, 0.16, 0.20};
  const std::vector<double> lo = {0.10, 0.15, 0.21, 0.05, 0.12};
  const std::vector<double> hi = {0.25, 0.27, 0.30, 0.19, 0.29};
  const auto m = coefficient_metrics(est, lo, hi, 0.2);
  EXPECT_NEAR(m.bias, -0.004, 1e-12);
  EXPECT_NEAR(m.rmse, std::sqrt(0.0030 / 5.0), 1e-12);
  EXPECT_NEAR(m.width, (0.15 + 0.12 + 0.09 + 0.14 + 0.17) / 5.0, 1e-12);
  EXPECT_NEAR(m.coverage, 0.6, 1e-12);
}

TEST(CoefficientMetrics, RmseDominatesBias) {
  Stream rng(3);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> est, lo, hi;
    for (int i = 0; i < 7; ++i) {
      est.push_back(rng.normal() * 0.1 + 0.05);
      lo.push_back(est.back() - 0.1);
      hi.push_back(est.back() + 0.1);
    }
    const auto m = coefficient_metrics(est, lo, hi, 0.0);
    EXPECT_GE(m.rmse * m.rmse, m.bias * m.bias - 1e-15);
    EXPECT_GE(m.coverage, 0.0);
    EXPECT_LE(m.coverage, 1.0);
  }
}

namespace {
StudyConfig tiny_study() {
  StudyConfig s = StudyConfig::desk();
  s.simulation.T = 150;
  s.simulation.replicates = 1;
  s.model.burn_in = 100;
  s.model.retained = 100;
  return s;
}
}  // namespace

TEST(Study, SingleReplicateDegenerates) {
  const auto cfg = tiny_study();
  std::vector<ReplicateResult> results;
  const auto m = run_study(cfg, std::nullopt, &results);
  ASSERT_EQ(m.completed, 1);
  ASSERT_EQ(results.size(), 1u);
  for (const auto& [name, metrics] : m.by_variant) {
    const auto& e = results[0].estimates.at(name);
    for (int p = 0; p < 6; ++p) {
      const auto& c = metrics[static_cast<std::size_t>(p)];
      EXPECT_TRUE(c.coverage == 0.0 || c.coverage == 1.0);
      EXPECT_DOUBLE_EQ(c.width, e.upper(p) - e.lower(p));
      EXPECT_DOUBLE_EQ(std::fabs(c.bias), c.rmse);
    }
  }
}

TEST(Study, ReplicatesAreOrderIndependent) {
  auto cfg = tiny_study();
  cfg.simulation.replicates = 3;
  cfg.variants = {Variant::ME};
  cfg.jobs = 1;
  std::vector<ReplicateResult> serial, threaded;
  run_study(cfg, std::nullopt, &serial);
  cfg.jobs = 3;
  run_study(cfg, std::nullopt, &threaded);
  ASSERT_EQ(serial.size(), 3u);
  for (std::size_t r = 0; r < 3; ++r) EXPECT_EQ(serial[r].estimates.at("ME").mean, threaded[r].estimates.at("ME").mean);
  // replicate 2 alone matches replicate 2 within the batch
  EXPECT_EQ(run_replicate(cfg, 2).estimates.at("ME").mean, serial[2].estimates.at("ME").mean);
}

TEST(Study, FailuresAreCountedNotHidden) {
  auto cfg = tiny_study();
  cfg.simulation.replicates = 2;
  cfg.simulation.stabilize = false;
  cfg.simulation.beta = Eigen::VectorXd::Constant(6, 3.0);
  cfg.simulation.rate_cap = 10.0;
  cfg.variants = {Variant::ME};
  const auto m = run_study(cfg);
  EXPECT_EQ(m.completed, 0);
  EXPECT_EQ(m.failed, 2);
  EXPECT_EQ(m.failures_by_code.at("OverflowRate"), 2);
}

TEST(Study, NoMeasurementErrorMakesMeAndJointAgree) {
  auto cfg = tiny_study();
  cfg.simulation.T = 300;
  cfg.simulation.error_variance = 0.0;
  cfg.model.burn_in = 1000;
  cfg.model.retained = 4000;
  const auto data = simulate_dataset(cfg.simulation, 31).to_dataset();
  ModelConfig me = cfg.model;
  me.variant = Variant::ME;
  ModelConfig joint = cfg.model;
  joint.variant = Variant::H2Mjoint;
  // measurement sd pinned near zero: no error to correct
  joint.fixed.sigma = Eigen::VectorXd::Constant(6, 1e-4);
  const auto c_me = run_chain(prepare_model(data, me), me, chain_seeds(5, 0));
  const auto c_joint = run_chain(prepare_model(data, joint), joint, chain_seeds(6, 0));
  for (std::size_t p = 1; p <= 6; ++p) {
    const auto& a = c_me.block("beta").columns[p];
    const auto& b = c_joint.block("beta").columns[p];
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(b.size());
    const double se = std::hypot(oracle::batch_se(a, 40), oracle::batch_se(b, 40));
    EXPECT_LT(std::fabs(ma - mb), 3.0 * se) << p;
  }
}

TEST(Study, CsvLayout) {
  auto cfg = tiny_study();
  cfg.variants = {Variant::ME};
  const auto m = run_study(cfg);
  std::ostringstream out;
  write_study_csv(out, cfg, m);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "metric,coefficient,ME");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 24);
}
