#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "kinspray/errors.hpp"

namespace kinspray {

using Field1D = std::vector<double>;

/// Uniform periodic grid on the unit torus: x_i = i / n, i = 0..n-1.
struct Grid1D {
  std::size_t n = 0;

  double dx() const { return 1.0 / static_cast<double>(n); }
  double x(std::size_t i) const {
    return static_cast<double>(i) / static_cast<double>(n);
  }
};

inline double inner(const Field1D& f, const Field1D& g) {
  if (f.size() != g.size()) throw GridMismatch("inner product sizes");
  double s = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) s += f[i] * g[i];
  return s / static_cast<double>(f.size());
}

inline double integral(const Field1D& f) {
  double s = 0.0;
  for (double v : f) s += v;
  return s / static_cast<double>(f.size());
}

inline double max_abs(const Field1D& f) {
  double m = 0.0;
  for (double v : f) m = std::max(m, std::abs(v));
  return m;
}

/// x in T = [0,1) times v in [-v_max, v_max]. Velocity nodes are cell
/// centers, v_j = -v_max + (j + 1/2) dv, so fields vanishing at the v-range
/// ends integrate spectrally accurately with the midpoint rule.
struct PhaseGrid {
  std::size_t nx = 0;
  std::size_t nv = 0;
  double v_max = 0.0;

  double dx() const { return 1.0 / static_cast<double>(nx); }
  double dv() const { return 2.0 * v_max / static_cast<double>(nv); }
  double x(std::size_t i) const {
    return static_cast<double>(i) / static_cast<double>(nx);
  }
  double v(std::size_t j) const {
    return -v_max + (static_cast<double>(j) + 0.5) * dv();
  }
  /// Lower edge of velocity cell j, j = 0..nv (edge nv is +v_max).
  double v_edge(std::size_t j) const {
    return -v_max + static_cast<double>(j) * dv();
  }

  void validate() const {
    if (nx < 8 || nv < 8) throw ConfigError("phase grid needs nx, nv >= 8");
    if (!(v_max > 0.0)) throw ConfigError("phase grid needs v_max > 0");
  }
};

/// Phase-space field stored v-major: row j holds f(., v_j) contiguously.
struct Field2D {
  std::size_t nx = 0;
  std::size_t nv = 0;
  std::vector<double> data;

  Field2D() = default;
  Field2D(std::size_t nx_, std::size_t nv_)
      : nx(nx_), nv(nv_), data(nx_ * nv_, 0.0) {}

  double& operator()(std::size_t ix, std::size_t iv) {
    return data[iv * nx + ix];
  }
  double operator()(std::size_t ix, std::size_t iv) const {
    return data[iv * nx + ix];
  }
  double* row(std::size_t iv) { return data.data() + iv * nx; }
  const double* row(std::size_t iv) const { return data.data() + iv * nx; }
};

inline double total_mass(const Field2D& f, const PhaseGrid& g) {
  double s = 0.0;
  for (double v : f.data) s += v;
  return s * g.dx() * g.dv();
}

}  // namespace kinspray
