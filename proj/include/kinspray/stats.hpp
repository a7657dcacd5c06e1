#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "kinspray/errors.hpp"

namespace kinspray {

/// Neumaier compensated sum; the order-independence of ensemble merges
/// hinges on summing per-run values with compensation.
inline double compensated_sum(const std::vector<double>& xs) {
  double sum = 0.0, c = 0.0;
  for (double x : xs) {
    double t = sum + x;
    if (std::abs(sum) >= std::abs(x))
      c += (sum - t) + x;
    else
      c += (x - t) + sum;
    sum = t;
  }
  return sum + c;
}

struct SampleStats {
  std::size_t n = 0;
  double mean = 0.0;
  double variance = 0.0;  // unbiased

  double std_error() const {
    return n > 1 ? std::sqrt(variance / static_cast<double>(n)) : 0.0;
  }
  /// Normal-theory standard error of the sample variance.
  double variance_std_error() const {
    return n > 1 ? variance * std::sqrt(2.0 / static_cast<double>(n - 1))
                 : 0.0;
  }
};

inline SampleStats sample_stats(const std::vector<double>& xs) {
  SampleStats s;
  s.n = xs.size();
  if (s.n == 0) return s;
  s.mean = compensated_sum(xs) / static_cast<double>(s.n);
  if (s.n > 1) {
    std::vector<double> sq(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double d = xs[i] - s.mean;
      sq[i] = d * d;
    }
    s.variance = compensated_sum(sq) / static_cast<double>(s.n - 1);
  }
  return s;
}

inline double pooled_std_error(double se_a, double se_b) {
  return std::sqrt(se_a * se_a + se_b * se_b);
}

/// Trapezoid rule over possibly non-uniform nodes.
inline double trapezoid(const std::vector<double>& t,
                        const std::vector<double>& y) {
  if (t.size() != y.size()) throw GridMismatch("trapezoid sizes");
  double s = 0.0;
  for (std::size_t i = 1; i < t.size(); ++i)
    s += 0.5 * (y[i] + y[i - 1]) * (t[i] - t[i - 1]);
  return s;
}

/// Least-squares slope of y against x.
inline double ls_slope(const std::vector<double>& x,
                       const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  const double den = n * sxx - sx * sx;
  return den != 0.0 ? (n * sxy - sx * sy) / den : 0.0;
}

}  // namespace kinspray
