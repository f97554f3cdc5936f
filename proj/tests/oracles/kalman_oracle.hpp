#pragma once

// Scalar local-level model x_1 ~ N(0, q), x_t = x_{t-1} + N(0, q),
// y_t = x_t + N(0, r) with missing observations allowed (NaN). Forward
// Kalman filter plus Rauch-Tung-Striebel smoother.

#include <cmath>
#include <vector>

namespace oracle {

struct Smoothed {
  std::vector<double> mean;
  std::vector<double> variance;
};

inline Smoothed local_level_smoother(const std::vector<double>& y, double q, double r) {
  const std::size_t n = y.size();
  std::vector<double> mf(n), pf(n), mp(n), pp(n);
  double m = 0.0;
  double p = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    mp[t] = m;
    pp[t] = p + q;
    m = mp[t];
    p = pp[t];
    if (!std::isnan(y[t])) {
      const double k = p / (p + r);
      m += k * (y[t] - m);
      p *= 1.0 - k;
    }
    mf[t] = m;
    pf[t] = p;
  }
  Smoothed s{std::vector<double>(n), std::vector<double>(n)};
  s.mean[n - 1] = mf[n - 1];
  s.variance[n - 1] = pf[n - 1];
  for (std::size_t i = n - 1; i-- > 0;) {
    const double j = pf[i] / pp[i + 1];
    s.mean[i] = mf[i] + j * (s.mean[i + 1] - mp[i + 1]);
    s.variance[i] = pf[i] + j * j * (s.variance[i + 1] - pp[i + 1]);
  }
  return s;
}

}  // namespace oracle
