#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <vector>

#include "kinspray/fourier.hpp"
#include "kinspray/rng.hpp"

using namespace kinspray;

namespace {

// Brute-force DFT oracle.
std::vector<cdouble> naive_dft(const std::vector<double>& f) {
  const std::size_t n = f.size();
  std::vector<cdouble> out(n, 0.0);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t j = 0; j < n; ++j) {
      const double th = -two_pi * static_cast<double>(k * j) / n;
      out[k] += f[j] * cdouble(std::cos(th), std::sin(th));
    }
  return out;
}

}  // namespace

TEST_CASE("fft matches the brute-force DFT") {
  RngStream rng(42, 0);
  for (std::size_t n : {8u, 64u, 128u}) {
    std::vector<double> f(n);
    for (auto& v : f) v = rng.normal();
    auto fast = fft_forward(f);
    auto slow = naive_dft(f);
    for (std::size_t k = 0; k < n; ++k) {
      CHECK(std::abs(fast[k] - slow[k]) < 1e-10 * static_cast<double>(n));
    }
    auto back = fft_inverse_real(fast);
    for (std::size_t i = 0; i < n; ++i)
      CHECK(back[i] == Catch::Approx(f[i]).margin(1e-12));
  }
}

TEST_CASE("spectral derivative is exact for band-limited fields") {
  const std::size_t n = 64;
  FourierSeries s;
  s.a0 = 0.3;
  s.cos_coeff = {0.5, -0.2, 0.0, 0.1};
  s.sin_coeff = {1.0, 0.0, 0.7};
  auto f = s.sample(n);
  auto df = spectral_derivative(f);
  auto exact = s.sample_derivative(n);
  for (std::size_t i = 0; i < n; ++i)
    CHECK(df[i] == Catch::Approx(exact[i]).margin(1e-10));

  // Second derivative against two first derivatives.
  auto d2 = spectral_derivative(f, 2);
  auto d1d1 = spectral_derivative(df);
  for (std::size_t i = 0; i < n; ++i)
    CHECK(d2[i] == Catch::Approx(d1d1[i]).margin(1e-8));
}

TEST_CASE("phase shift translates band-limited fields exactly") {
  const std::size_t n = 64;
  FourierSeries s;
  s.cos_coeff = {0.4, 0.1};
  s.sin_coeff = {0.9};
  auto f = s.sample(n);
  const double shift = 0.1234;
  auto g = phase_shift(f, shift);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(i) / n;
    CHECK(g[i] == Catch::Approx(s.eval(x - shift)).margin(1e-12));
  }
  // Mean (mass) is untouched by any shift.
  double m0 = 0.0, m1 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    m0 += f[i];
    m1 += g[i];
  }
  CHECK(m1 == Catch::Approx(m0).margin(1e-12));
}

TEST_CASE("heat propagator applies the exact Fourier multiplier") {
  const std::size_t n = 64;
  std::vector<double> u(n);
  for (std::size_t i = 0; i < n; ++i)
    u[i] = std::cos(two_pi * static_cast<double>(i) / n);
  const double dt = 0.01;
  auto v = heat_propagate_field(u, dt);
  const double factor = std::exp(-4.0 * std::numbers::pi * std::numbers::pi * dt);
  for (std::size_t i = 0; i < n; ++i)
    CHECK(v[i] == Catch::Approx(factor * u[i]).margin(1e-14));

  // Constants are fixed points; dt = 0 is the identity.
  std::vector<double> c(n, 2.5);
  auto c2 = heat_propagate_field(c, 0.37);
  for (double x : c2) CHECK(x == Catch::Approx(2.5).margin(1e-13));
  auto u0 = heat_propagate_field(u, 0.0);
  for (std::size_t i = 0; i < n; ++i) CHECK(u0[i] == u[i]);
}

TEST_CASE("mild heat update integrates a frozen source exactly per mode") {
  const std::size_t n = 64;
  std::vector<double> u(n, 0.0), g(n);
  for (std::size_t i = 0; i < n; ++i)
    g[i] = std::sin(two_pi * 2.0 * static_cast<double>(i) / n);
  const double dt = 0.05;
  auto v = heat_mild_update(u, g, dt);
  const double l = std::pow(two_pi * 2.0, 2);
  const double expect = (1.0 - std::exp(-l * dt)) / l;
  for (std::size_t i = 0; i < n; ++i)
    CHECK(v[i] == Catch::Approx(expect * g[i]).margin(1e-13));

  // Mode zero reduces to plain integration.
  std::vector<double> gc(n, 1.0);
  auto w = heat_mild_update(u, gc, dt);
  for (double x : w) CHECK(x == Catch::Approx(dt).margin(1e-13));
}
