#pragma once

// Small reference statistics used only by the tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

/// Kolmogorov-Smirnov statistic against a continuous CDF.
inline double ks_statistic(std::vector<double> x, const std::function<double(double)>& cdf) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

/// Asymptotic p-value of the KS statistic, Q(sqrt(n) D) with the usual
/// small-sample correction.
inline double ks_pvalue(double d, std::size_t n) {
  const double sn = std::sqrt(static_cast<double>(n));
  const double lambda = (sn + 0.12 + 0.11 / sn) * d;
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) sum += 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
  return std::clamp(sum, 0.0, 1.0);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Standard normal quantile by bisection on the CDF.
inline double normal_quantile(double p) {
  double lo = -10.0, hi = 10.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (normal_cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Quantile with linear interpolation between order statistics, computed
/// by counting rather than sorting.
inline double brute_quantile(const std::vector<double>& x, double p) {
  const double h = (static_cast<double>(x.size()) - 1.0) * p;
  const auto lo_rank = static_cast<std::size_t>(std::floor(h));
  auto order_stat = [&](std::size_t k) {
    for (double v : x) {
      std::size_t below = 0, equal = 0;
      for (double w : x) {
        below += w < v;
        equal += w == v;
      }
      if (below <= k && k < below + equal) return v;
    }
    return x.front();
  };
  const double a = order_stat(lo_rank);
  const double b = order_stat(std::min(lo_rank + 1, x.size() - 1));
  return a + (h - static_cast<double>(lo_rank)) * (b - a);
}

/// Plain batch-means standard error of a sample mean.
inline double batch_se(const std::vector<double>& x, std::size_t batches) {
  const std::size_t size = x.size() / batches;
  std::vector<double> means;
  for (std::size_t b = 0; b < batches; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < size; ++i) s += x[x.size() - batches * size + b * size + i];
    means.push_back(s / static_cast<double>(size));
  }
  double m = 0.0;
  for (double v : means) m += v;
  m /= static_cast<double>(batches);
  double ss = 0.0;
  for (double v : means) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(batches - 1) / static_cast<double>(batches));
}

}  // namespace oracle
