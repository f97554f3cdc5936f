#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "h2m/error.hpp"
#include "h2m/mcmc/config.hpp"

namespace h2m {

/// Retained draws of one parameter block, stored column by column.
struct DrawBlock {
  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;

  DrawBlock() = default;
  explicit DrawBlock(std::vector<std::string> column_names)
      : names(std::move(column_names)), columns(names.size()) {}

  std::size_t rows() const { return columns.empty() ? 0 : columns.front().size(); }
  std::size_t cols() const { return columns.size(); }

  void push(const Eigen::VectorXd& row) {
    if (static_cast<std::size_t>(row.size()) != columns.size())
      throw Error(ErrorCode::DimensionMismatch, "draw row width does not match block");
    for (std::size_t j = 0; j < columns.size(); ++j) columns[j].push_back(row(static_cast<Eigen::Index>(j)));
  }

  const std::vector<double>& column(const std::string& name) const {
    for (std::size_t j = 0; j < names.size(); ++j)
      if (names[j] == name) return columns[j];
    throw Error(ErrorCode::InvalidParameter, "no column '" + name + "' in draw block");
  }
};

/// Welford accumulator over equally shaped matrices.
class RunningMoments {
 public:
  void reset(Eigen::Index rows, Eigen::Index cols) {
    n_ = 0;
    mean_ = Eigen::MatrixXd::Zero(rows, cols);
    m2_ = Eigen::MatrixXd::Zero(rows, cols);
  }
  void push(const Eigen::MatrixXd& x) {
    ++n_;
    const Eigen::MatrixXd delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_.array() += delta.array() * (x - mean_).array();
  }
  long count() const { return n_; }
  const Eigen::MatrixXd& mean() const { return mean_; }
  Eigen::MatrixXd variance() const {
    return n_ > 1 ? Eigen::MatrixXd(m2_ / static_cast<double>(n_ - 1)) : Eigen::MatrixXd::Zero(mean_.rows(), mean_.cols());
  }

 private:
  long n_ = 0;
  Eigen::MatrixXd mean_;
  Eigen::MatrixXd m2_;
};

/// Everything one chain keeps after burn-in.
struct ChainDraws {
  int chain = 0;
  std::uint64_t seed_key = 0;
  Variant variant = Variant::H2Mjoint;
  std::map<std::string, DrawBlock> blocks;

  Eigen::MatrixXd exposure_mean;  // latent exposure, original units
  Eigen::MatrixXd exposure_var;
  Eigen::VectorXd eta_mean;       // log relative risk per day
  Eigen::MatrixXd imputed_mean;   // predictive mean of unobserved cells, NaN elsewhere
  std::map<std::string, double> acceptance;
  std::vector<Eigen::MatrixXd> exposure_draws;

  const DrawBlock& block(const std::string& name) const {
    const auto it = blocks.find(name);
    if (it == blocks.end()) throw Error(ErrorCode::InvalidParameter, "no draw block '" + name + "'");
    return it->second;
  }
  bool has_block(const std::string& name) const { return blocks.count(name) > 0; }
};

}  // namespace h2m
