#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <vector>

#include "kinspray/errors.hpp"

namespace kinspray {

using cdouble = std::complex<double>;

inline constexpr double two_pi = 2.0 * std::numbers::pi;

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// In-place iterative radix-2 transform. sign = -1: forward, sign = +1:
/// inverse (the inverse applies the 1/n normalization).
inline void fft_radix2(std::vector<cdouble>& a, int sign) {
  const std::size_t n = a.size();
  if (!is_pow2(n)) throw GridMismatch("fft length must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = sign * two_pi / static_cast<double>(len);
    const cdouble wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      cdouble w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        cdouble u = a[i + k];
        cdouble v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (sign > 0) {
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& z : a) z *= inv;
  }
}

inline std::vector<cdouble> fft_forward(const std::vector<double>& f) {
  std::vector<cdouble> a(f.begin(), f.end());
  fft_radix2(a, -1);
  return a;
}

inline std::vector<double> fft_inverse_real(std::vector<cdouble> a) {
  fft_radix2(a, +1);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i].real();
  return out;
}

/// Signed integer mode number of spectral bin j on an n-point grid.
inline int mode_number(std::size_t j, std::size_t n) {
  return j < n / 2 ? static_cast<int>(j)
                   : static_cast<int>(j) - static_cast<int>(n);
}

/// Spectral derivative of order `order` of a periodic field sampled on the
/// uniform grid of [0, L). Exact for band-limited data; the Nyquist mode is
/// zeroed for odd orders.
inline std::vector<double> spectral_derivative(const std::vector<double>& f,
                                               int order = 1, double L = 1.0) {
  const std::size_t n = f.size();
  auto a = fft_forward(f);
  for (std::size_t j = 0; j < n; ++j) {
    const int k = mode_number(j, n);
    if (order % 2 != 0 && n % 2 == 0 && j == n / 2) {
      a[j] = 0.0;
      continue;
    }
    cdouble ik(0.0, two_pi * k / L);
    cdouble m(1.0, 0.0);
    for (int p = 0; p < order; ++p) m *= ik;
    a[j] *= m;
  }
  return fft_inverse_real(std::move(a));
}

/// Periodic translation f(x) -> f(x - s) by spectral phase shift (exact for
/// band-limited data). The Nyquist mode keeps only the real part of its
/// shift factor so the result stays real.
inline void phase_shift_inplace(std::vector<cdouble>& spec, double s,
                                double L = 1.0) {
  const std::size_t n = spec.size();
  for (std::size_t j = 0; j < n; ++j) {
    const int k = mode_number(j, n);
    const double th = -two_pi * k * s / L;
    if (n % 2 == 0 && j == n / 2) {
      spec[j] *= std::cos(th);
    } else {
      spec[j] *= cdouble(std::cos(th), std::sin(th));
    }
  }
}

inline std::vector<double> phase_shift(const std::vector<double>& f, double s,
                                       double L = 1.0) {
  auto a = fft_forward(f);
  phase_shift_inplace(a, s, L);
  return fft_inverse_real(std::move(a));
}

/// Exact heat propagator on the unit torus: multiplies mode k by
/// exp(-(2 pi k)^2 t).
inline std::vector<double> heat_propagate_field(const std::vector<double>& u,
                                                double t) {
  if (!(t >= 0.0)) throw NonFiniteTime("heat propagation needs t >= 0");
  if (t == 0.0) return u;
  auto a = fft_forward(u);
  const std::size_t n = a.size();
  for (std::size_t j = 0; j < n; ++j) {
    const double k = two_pi * mode_number(j, n);
    a[j] *= std::exp(-k * k * t);
  }
  return fft_inverse_real(std::move(a));
}

/// Mild heat update u <- S(dt) u + integral_0^dt S(dt - s) g ds with the
/// source g frozen, i.e. mode-wise u_k <- e^{-l dt} u_k + (1-e^{-l dt})/l g_k
/// with l = (2 pi k)^2.
inline std::vector<double> heat_mild_update(const std::vector<double>& u,
                                            const std::vector<double>& g,
                                            double dt) {
  if (u.size() != g.size()) throw GridMismatch("heat_mild_update sizes");
  auto au = fft_forward(u);
  auto ag = fft_forward(g);
  const std::size_t n = au.size();
  for (std::size_t j = 0; j < n; ++j) {
    const double k = two_pi * mode_number(j, n);
    const double l = k * k;
    double decay, duh;
    if (l * dt < 1e-12) {
      decay = 1.0 - l * dt;
      duh = dt * (1.0 - 0.5 * l * dt);
    } else {
      decay = std::exp(-l * dt);
      duh = (1.0 - decay) / l;
    }
    au[j] = decay * au[j] + duh * ag[j];
  }
  return fft_inverse_real(std::move(au));
}

/// Truncated real Fourier series on the unit torus; the preset format for
/// driver states, initial densities and velocity fields.
struct FourierSeries {
  double a0 = 0.0;
  std::vector<double> cos_coeff;  // modes 1..K
  std::vector<double> sin_coeff;

  double eval(double x) const {
    double s = a0;
    for (std::size_t k = 0; k < cos_coeff.size(); ++k)
      s += cos_coeff[k] * std::cos(two_pi * (k + 1) * x);
    for (std::size_t k = 0; k < sin_coeff.size(); ++k)
      s += sin_coeff[k] * std::sin(two_pi * (k + 1) * x);
    return s;
  }

  double eval_derivative(double x) const {
    double s = 0.0;
    for (std::size_t k = 0; k < cos_coeff.size(); ++k)
      s -= cos_coeff[k] * two_pi * (k + 1) * std::sin(two_pi * (k + 1) * x);
    for (std::size_t k = 0; k < sin_coeff.size(); ++k)
      s += sin_coeff[k] * two_pi * (k + 1) * std::cos(two_pi * (k + 1) * x);
    return s;
  }

  std::vector<double> sample(std::size_t n) const {
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i)
      out[i] = eval(static_cast<double>(i) / static_cast<double>(n));
    return out;
  }

  std::vector<double> sample_derivative(std::size_t n) const {
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i)
      out[i] = eval_derivative(static_cast<double>(i) / static_cast<double>(n));
    return out;
  }
};

}  // namespace kinspray
