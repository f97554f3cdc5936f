#pragma once

// Daily time-series panels: CSV ingestion, validation, standardization,
// pairwise-complete correlation and Table-1 style descriptives.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "h2m/error.hpp"

namespace h2m {

using MaskMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

// ---------------------------------------------------------------------------
// Calendar days. libstdc++ 11 ships no year_month_day, so ISO dates are
// converted with the proleptic Gregorian civil-day formula.

namespace calendar {

constexpr std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

struct CivilDate {
  std::int64_t year;
  unsigned month;
  unsigned day;
};

constexpr CivilDate civil_from_days(std::int64_t z) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp < 10 ? mp + 3 : mp - 9;
  return {y + (m <= 2), m, d};
}

/// Parses YYYY-MM-DD; returns nullopt on anything else.
inline std::optional<std::int64_t> parse_iso_date(const std::string& text) {
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
  for (std::size_t i : {0, 1, 2, 3, 5, 6, 8, 9})
    if (text[i] < '0' || text[i] > '9') return std::nullopt;
  const int y = std::stoi(text.substr(0, 4));
  const unsigned m = static_cast<unsigned>(std::stoi(text.substr(5, 2)));
  const unsigned d = static_cast<unsigned>(std::stoi(text.substr(8, 2)));
  if (m < 1 || m > 12 || d < 1 || d > 31) return std::nullopt;
  const std::int64_t days = days_from_civil(y, m, d);
  const CivilDate back = civil_from_days(days);
  if (back.month != m || back.day != d) return std::nullopt;
  return days;
}

inline std::string format_iso_date(std::int64_t days) {
  const CivilDate c = civil_from_days(days);
  char buf[48];
  std::snprintf(buf, sizeof buf, "%04lld-%02u-%02u", static_cast<long long>(c.year), c.month, c.day);
  return buf;
}

/// 0 = Thursday 1970-01-01; returns 0..6 with 0 = Monday.
constexpr int weekday(std::int64_t days) {
  const std::int64_t w = (days + 3) % 7;
  return static_cast<int>(w < 0 ? w + 7 : w);
}

}  // namespace calendar

// ---------------------------------------------------------------------------

/// Column names of the input CSV.
struct DatasetSchema {
  std::string date = "date";
  std::string outcome = "outcome";
  std::string temperature = "temp";
  std::string humidity = "rhum";
  std::string holiday = "holiday";
  std::vector<std::string> pollutants;
};

/// Daily panel. Pollutant cells that were not observed hold NaN and are
/// flagged false in `observed`.
class TimeSeriesDataset {
 public:
  TimeSeriesDataset() = default;

  TimeSeriesDataset(std::vector<std::int64_t> dates, std::vector<std::int64_t> outcome,
                    std::vector<double> temperature, std::vector<double> humidity,
                    std::vector<std::uint8_t> holiday, std::vector<std::string> pollutant_names,
                    Eigen::MatrixXd pollutants, MaskMatrix observed)
      : dates_(std::move(dates)),
        outcome_(std::move(outcome)),
        temperature_(std::move(temperature)),
        humidity_(std::move(humidity)),
        holiday_(std::move(holiday)),
        pollutant_names_(std::move(pollutant_names)),
        pollutants_(std::move(pollutants)),
        observed_(std::move(observed)) {
    validate();
  }

  std::size_t days() const { return dates_.size(); }
  std::size_t num_pollutants() const { return pollutant_names_.size(); }

  const std::vector<std::int64_t>& dates() const { return dates_; }
  const std::vector<std::int64_t>& outcome() const { return outcome_; }
  const std::vector<double>& temperature() const { return temperature_; }
  const std::vector<double>& humidity() const { return humidity_; }
  const std::vector<std::uint8_t>& holiday() const { return holiday_; }
  const std::vector<std::string>& pollutant_names() const { return pollutant_names_; }
  const Eigen::MatrixXd& pollutants() const { return pollutants_; }
  const MaskMatrix& observed() const { return observed_; }

  /// Rows with at least one unobserved pollutant.
  std::size_t partially_missing_days() const {
    std::size_t n = 0;
    for (Eigen::Index t = 0; t < observed_.rows(); ++t)
      if (!observed_.row(t).all()) ++n;
    return n;
  }

  /// Restriction to a subset of pollutant columns (single-pollutant fits).
  TimeSeriesDataset select_pollutants(const std::vector<std::size_t>& columns) const {
    Eigen::MatrixXd y(pollutants_.rows(), static_cast<Eigen::Index>(columns.size()));
    MaskMatrix m(observed_.rows(), static_cast<Eigen::Index>(columns.size()));
    std::vector<std::string> names;
    for (std::size_t j = 0; j < columns.size(); ++j) {
      const auto c = static_cast<Eigen::Index>(columns[j]);
      y.col(static_cast<Eigen::Index>(j)) = pollutants_.col(c);
      m.col(static_cast<Eigen::Index>(j)) = observed_.col(c);
      names.push_back(pollutant_names_.at(columns[j]));
    }
    return {dates_, outcome_, temperature_, humidity_, holiday_, std::move(names), std::move(y), std::move(m)};
  }

 private:
  void validate() const {
    const std::size_t t = dates_.size();
    if (outcome_.size() != t || temperature_.size() != t || humidity_.size() != t || holiday_.size() != t ||
        static_cast<std::size_t>(pollutants_.rows()) != t || static_cast<std::size_t>(observed_.rows()) != t)
      throw Error(ErrorCode::DimensionMismatch, "dataset columns have different lengths");
    if (pollutant_names_.empty()) throw Error(ErrorCode::MissingColumn, "dataset needs at least one pollutant");
    if (static_cast<std::size_t>(pollutants_.cols()) != pollutant_names_.size() ||
        observed_.cols() != pollutants_.cols())
      throw Error(ErrorCode::DimensionMismatch, "pollutant matrix does not match pollutant names");
    for (std::size_t i = 1; i < t; ++i)
      if (dates_[i] != dates_[i - 1] + 1)
        throw Error(ErrorCode::NonContiguousDates,
                    "dates must be consecutive days; break after " + calendar::format_iso_date(dates_[i - 1]));
    for (std::size_t i = 0; i < t; ++i) {
      if (outcome_[i] < 0) throw Error(ErrorCode::MissingOutcome, "negative outcome count");
      if (!std::isfinite(temperature_[i]) || !std::isfinite(humidity_[i]))
        throw Error(ErrorCode::MissingOutcome, "meteorology must be fully observed");
      if (holiday_[i] > 1) throw Error(ErrorCode::MissingOutcome, "holiday must be 0 or 1");
    }
    for (Eigen::Index p = 0; p < pollutants_.cols(); ++p)
      if (observed_.col(p).count() < 2)
        throw Error(ErrorCode::EmptyPollutantColumn,
                    "pollutant '" + pollutant_names_[static_cast<std::size_t>(p)] + "' has fewer than 2 observations");
  }

  std::vector<std::int64_t> dates_;
  std::vector<std::int64_t> outcome_;
  std::vector<double> temperature_;
  std::vector<double> humidity_;
  std::vector<std::uint8_t> holiday_;
  std::vector<std::string> pollutant_names_;
  Eigen::MatrixXd pollutants_;
  MaskMatrix observed_;
};

// ---------------------------------------------------------------------------
// CSV ingestion

namespace csv {

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cell));
      cell.clear();
    } else if (c != '\r') {
      cell += c;
    }
  }
  out.push_back(std::move(cell));
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

/// Empty cells and the literal NA are missing; so is anything non-numeric.
inline std::optional<double> parse_number(const std::string& raw) {
  const std::string s = trim(raw);
  if (s.empty() || s == "NA" || s == "na" || s == "NaN") return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

}  // namespace csv

inline TimeSeriesDataset parse_dataset(std::istream& in, const DatasetSchema& schema) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::Io, "dataset is empty");
  const auto header = csv::split_line(line);
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < header.size(); ++i) index[csv::trim(header[i])] = i;
  auto column = [&](const std::string& name) {
    const auto it = index.find(name);
    if (it == index.end()) throw Error(ErrorCode::MissingColumn, "column '" + name + "' not found");
    return it->second;
  };
  const std::size_t c_date = column(schema.date);
  const std::size_t c_out = column(schema.outcome);
  const std::size_t c_temp = column(schema.temperature);
  const std::size_t c_rhum = column(schema.humidity);
  const std::size_t c_hol = column(schema.holiday);
  if (schema.pollutants.empty()) throw Error(ErrorCode::MissingColumn, "schema lists no pollutant columns");
  std::vector<std::size_t> c_pol;
  for (const auto& name : schema.pollutants) c_pol.push_back(column(name));

  std::vector<std::int64_t> dates, outcome;
  std::vector<double> temp, rhum;
  std::vector<std::uint8_t> holiday;
  std::vector<std::vector<double>> pol_rows;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (csv::trim(line).empty()) continue;
    auto cells = csv::split_line(line);
    cells.resize(std::max(cells.size(), header.size()));
    const auto date = calendar::parse_iso_date(csv::trim(cells[c_date]));
    if (!date) throw Error(ErrorCode::NonContiguousDates, "unparseable date on line " + std::to_string(row));
    const auto o = csv::parse_number(cells[c_out]);
    if (!o || *o < 0 || std::floor(*o) != *o)
      throw Error(ErrorCode::MissingOutcome, "missing or invalid outcome on line " + std::to_string(row));
    const auto tp = csv::parse_number(cells[c_temp]);
    const auto rh = csv::parse_number(cells[c_rhum]);
    if (!tp || !rh) throw Error(ErrorCode::MissingOutcome, "missing meteorology on line " + std::to_string(row));
    const auto hol = csv::parse_number(cells[c_hol]);
    if (!hol || (*hol != 0.0 && *hol != 1.0))
      throw Error(ErrorCode::MissingOutcome, "holiday must be 0/1 on line " + std::to_string(row));
    dates.push_back(*date);
    outcome.push_back(static_cast<std::int64_t>(*o));
    temp.push_back(*tp);
    rhum.push_back(*rh);
    holiday.push_back(static_cast<std::uint8_t>(*hol));
    std::vector<double> pr;
    for (std::size_t c : c_pol) pr.push_back(csv::parse_number(cells[c]).value_or(std::nan("")));
    pol_rows.push_back(std::move(pr));
  }
  const auto t = static_cast<Eigen::Index>(dates.size());
  const auto p = static_cast<Eigen::Index>(c_pol.size());
  Eigen::MatrixXd y(t, p);
  MaskMatrix observed(t, p);
  for (Eigen::Index i = 0; i < t; ++i)
    for (Eigen::Index j = 0; j < p; ++j) {
      const double v = pol_rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      y(i, j) = v;
      observed(i, j) = std::isfinite(v);
    }
  return {std::move(dates), std::move(outcome), std::move(temp), std::move(rhum), std::move(holiday),
          schema.pollutants, std::move(y), std::move(observed)};
}

inline TimeSeriesDataset load_dataset(const std::string& path, const DatasetSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open dataset '" + path + "'");
  return parse_dataset(in, schema);
}

inline void write_dataset_csv(std::ostream& out, const TimeSeriesDataset& data, const DatasetSchema& schema) {
  out << schema.date << ',' << schema.outcome << ',' << schema.temperature << ',' << schema.humidity << ','
      << schema.holiday;
  for (const auto& name : data.pollutant_names()) out << ',' << name;
  out << '\n';
  char buf[64];
  for (std::size_t t = 0; t < data.days(); ++t) {
    out << calendar::format_iso_date(data.dates()[t]) << ',' << data.outcome()[t];
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%d", data.temperature()[t], data.humidity()[t],
                  static_cast<int>(data.holiday()[t]));
    out << buf;
    for (Eigen::Index p = 0; p < data.pollutants().cols(); ++p) {
      const auto ti = static_cast<Eigen::Index>(t);
      if (data.observed()(ti, p)) {
        std::snprintf(buf, sizeof buf, ",%.17g", data.pollutants()(ti, p));
        out << buf;
      } else {
        out << ",NA";
      }
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Standardization

struct ScalingParams {
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;

  double to_original(double standardized, Eigen::Index p) const { return standardized * sd(p) + mean(p); }
  double to_standard(double original, Eigen::Index p) const { return (original - mean(p)) / sd(p); }
};

struct Standardized {
  Eigen::MatrixXd values;  // NaN where unobserved
  ScalingParams scaling;
};

/// Column-wise (x - mean) / sd over observed cells; sd uses the n-1 divisor.
inline Standardized standardize(const Eigen::MatrixXd& values, const MaskMatrix& observed) {
  const Eigen::Index t = values.rows();
  const Eigen::Index p = values.cols();
  Standardized out{Eigen::MatrixXd::Constant(t, p, std::nan("")), {Eigen::VectorXd(p), Eigen::VectorXd(p)}};
  for (Eigen::Index j = 0; j < p; ++j) {
    double sum = 0.0;
    Eigen::Index n = 0;
    for (Eigen::Index i = 0; i < t; ++i)
      if (observed(i, j)) {
        sum += values(i, j);
        ++n;
      }
    if (n < 2) throw Error(ErrorCode::EmptyPollutantColumn, "column has fewer than 2 observations");
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (Eigen::Index i = 0; i < t; ++i)
      if (observed(i, j)) ss += (values(i, j) - mean) * (values(i, j) - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    if (!(sd > 0.0)) throw Error(ErrorCode::ZeroVariance, "column " + std::to_string(j) + " is constant");
    out.scaling.mean(j) = mean;
    out.scaling.sd(j) = sd;
    for (Eigen::Index i = 0; i < t; ++i)
      if (observed(i, j)) out.values(i, j) = (values(i, j) - mean) / sd;
  }
  return out;
}

inline Standardized standardize(const TimeSeriesDataset& data) {
  return standardize(data.pollutants(), data.observed());
}

/// Fully observed single series, e.g. meteorology.
inline std::pair<Eigen::VectorXd, std::pair<double, double>> standardize_series(const std::vector<double>& x) {
  Eigen::MatrixXd m = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  const auto s = standardize(m, MaskMatrix::Constant(m.rows(), 1, true));
  return {s.values.col(0), {s.scaling.mean(0), s.scaling.sd(0)}};
}

// ---------------------------------------------------------------------------
// Correlation

/// Eigenvalue clipping at `floor` followed by rescaling to unit diagonal.
inline Eigen::MatrixXd nearest_correlation(const Eigen::MatrixXd& r, double floor = 1e-8) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(r);
  if (eig.eigenvalues().minCoeff() >= floor) return r;
  const Eigen::VectorXd clipped = eig.eigenvalues().cwiseMax(floor);
  Eigen::MatrixXd fixed = eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
  const Eigen::VectorXd inv_sd = fixed.diagonal().cwiseSqrt().cwiseInverse();
  fixed = inv_sd.asDiagonal() * fixed * inv_sd.asDiagonal();
  fixed = (0.5 * (fixed + fixed.transpose())).eval();
  fixed.diagonal().setOnes();
  return fixed;
}

/// Pairwise-complete Pearson correlation, projected to positive definite.
inline Eigen::MatrixXd empirical_correlation(const Eigen::MatrixXd& values, const MaskMatrix& observed) {
  const Eigen::Index p = values.cols();
  Eigen::MatrixXd r = Eigen::MatrixXd::Identity(p, p);
  for (Eigen::Index a = 0; a < p; ++a)
    for (Eigen::Index b = a + 1; b < p; ++b) {
      double sa = 0, sb = 0;
      Eigen::Index n = 0;
      for (Eigen::Index t = 0; t < values.rows(); ++t)
        if (observed(t, a) && observed(t, b)) {
          sa += values(t, a);
          sb += values(t, b);
          ++n;
        }
      if (n < 2)
        throw Error(ErrorCode::InsufficientOverlap,
                    "pollutants " + std::to_string(a) + " and " + std::to_string(b) + " share < 2 observed days");
      const double ma = sa / static_cast<double>(n);
      const double mb = sb / static_cast<double>(n);
      double sab = 0, saa = 0, sbb = 0;
      for (Eigen::Index t = 0; t < values.rows(); ++t)
        if (observed(t, a) && observed(t, b)) {
          const double da = values(t, a) - ma;
          const double db = values(t, b) - mb;
          sab += da * db;
          saa += da * da;
          sbb += db * db;
        }
      const double c = (saa > 0 && sbb > 0) ? std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0) : 0.0;
      r(a, b) = r(b, a) = c;
    }
  return nearest_correlation(r);
}

// ---------------------------------------------------------------------------
// Descriptives

/// Linear interpolation between order statistics (the "type 7" rule).
/// `sorted` must be ascending and non-empty.
inline double quantile_sorted(const std::vector<double>& sorted, double prob) {
  if (sorted.empty()) throw Error(ErrorCode::InvalidParameter, "quantile of empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

inline double quantile(std::vector<double> values, double prob) {
  std::sort(values.begin(), values.end());
  return quantile_sorted(values, prob);
}

struct VariableSummary {
  std::string name;
  std::size_t observed = 0;
  double p10 = 0, p25 = 0, p50 = 0, p75 = 0, p90 = 0;
  double iqr() const { return p75 - p25; }
};

inline VariableSummary summarize_variable(std::string name, std::vector<double> values) {
  std::erase_if(values, [](double v) { return !std::isfinite(v); });
  std::sort(values.begin(), values.end());
  VariableSummary s;
  s.name = std::move(name);
  s.observed = values.size();
  s.p10 = quantile_sorted(values, 0.10);
  s.p25 = quantile_sorted(values, 0.25);
  s.p50 = quantile_sorted(values, 0.50);
  s.p75 = quantile_sorted(values, 0.75);
  s.p90 = quantile_sorted(values, 0.90);
  return s;
}

struct Descriptives {
  VariableSummary outcome;
  VariableSummary temperature;
  VariableSummary humidity;
  std::vector<VariableSummary> pollutants;

  Eigen::VectorXd pollutant_iqr() const {
    Eigen::VectorXd v(static_cast<Eigen::Index>(pollutants.size()));
    for (std::size_t i = 0; i < pollutants.size(); ++i) v(static_cast<Eigen::Index>(i)) = pollutants[i].iqr();
    return v;
  }
};

inline Descriptives descriptives(const TimeSeriesDataset& data) {
  Descriptives d;
  std::vector<double> o(data.outcome().begin(), data.outcome().end());
  d.outcome = summarize_variable("outcome", o);
  d.temperature = summarize_variable("temperature", data.temperature());
  d.humidity = summarize_variable("humidity", data.humidity());
  for (std::size_t p = 0; p < data.num_pollutants(); ++p) {
    std::vector<double> col;
    for (std::size_t t = 0; t < data.days(); ++t) {
      const auto ti = static_cast<Eigen::Index>(t);
      const auto pi = static_cast<Eigen::Index>(p);
      if (data.observed()(ti, pi)) col.push_back(data.pollutants()(ti, pi));
    }
    d.pollutants.push_back(summarize_variable(data.pollutant_names()[p], std::move(col)));
  }
  return d;
}

/// Table-1 layout: variable, number of days, five percentiles, IQR.
inline void write_descriptives_csv(std::ostream& out, const Descriptives& d) {
  out << "variable,days,p10,p25,p50,p75,p90,iqr\n";
  auto row = [&](const VariableSummary& s) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%zu,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g\n", s.name.c_str(), s.observed, s.p10,
                  s.p25, s.p50, s.p75, s.p90, s.iqr());
    out << buf;
  };
  row(d.outcome);
  row(d.temperature);
  row(d.humidity);
  for (const auto& s : d.pollutants) row(s);
}

}  // namespace h2m
