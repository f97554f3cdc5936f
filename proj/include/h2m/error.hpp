#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace h2m {

enum class ErrorCode {
  Io,
  InvalidConfig,
  // dataset
  MissingColumn,
  NonContiguousDates,
  MissingOutcome,
  EmptyPollutantColumn,
  ZeroVariance,
  InsufficientOverlap,
  // splines
  TooFewDistinctValues,
  DimensionMismatch,
  // model components
  NonPositiveScale,
  SingularCovariance,
  LagUnavailable,
  NonPositiveRate,
  // sampler
  SingularScale,
  RankDeficient,
  NonFiniteCurrentTarget,
  NumericalFailure,
  // diagnostics
  TooFewChains,
  TooFewDraws,
  NonFiniteDeviance,
  // simulation / rng
  OverflowRate,
  NotPositiveDefinite,
  InvalidDof,
  InvalidParameter,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::Io: return "IO";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::NonContiguousDates: return "NonContiguousDates";
    case ErrorCode::MissingOutcome: return "MissingOutcome";
    case ErrorCode::EmptyPollutantColumn: return "EmptyPollutantColumn";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::InsufficientOverlap: return "InsufficientOverlap";
    case ErrorCode::TooFewDistinctValues: return "TooFewDistinctValues";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonPositiveScale: return "NonPositiveScale";
    case ErrorCode::SingularCovariance: return "SingularCovariance";
    case ErrorCode::LagUnavailable: return "LagUnavailable";
    case ErrorCode::NonPositiveRate: return "NonPositiveRate";
    case ErrorCode::SingularScale: return "SingularScale";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::NonFiniteCurrentTarget: return "NonFiniteCurrentTarget";
    case ErrorCode::NumericalFailure: return "NumericalFailure";
    case ErrorCode::TooFewChains: return "TooFewChains";
    case ErrorCode::TooFewDraws: return "TooFewDraws";
    case ErrorCode::NonFiniteDeviance: return "NonFiniteDeviance";
    case ErrorCode::OverflowRate: return "OverflowRate";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::InvalidDof: return "InvalidDof";
    case ErrorCode::InvalidParameter: return "InvalidParameter";
  }
  return "Unknown";
}

/// Input and configuration problems map to exit status 2, numerical
/// breakdowns to 4.
constexpr bool is_input_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::Io:
    case ErrorCode::InvalidConfig:
    case ErrorCode::MissingColumn:
    case ErrorCode::NonContiguousDates:
    case ErrorCode::MissingOutcome:
    case ErrorCode::EmptyPollutantColumn:
    case ErrorCode::ZeroVariance:
    case ErrorCode::InsufficientOverlap:
    case ErrorCode::TooFewDistinctValues:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::LagUnavailable:
    case ErrorCode::TooFewChains:
    case ErrorCode::TooFewDraws:
    case ErrorCode::InvalidDof:
    case ErrorCode::InvalidParameter:
      return true;
    default:
      return false;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace h2m
