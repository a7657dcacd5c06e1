#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "kinspray/coefficients.hpp"
#include "kinspray/errors.hpp"
#include "kinspray/fourier.hpp"
#include "kinspray/grid.hpp"
#include "kinspray/rng.hpp"

namespace kinspray {

struct SPDEState {
  Field1D rho;
  Field1D u;
  double t = 0.0;
};

inline Field1D heat_propagate(const Field1D& u, double dt) {
  return heat_propagate_field(u, dt);
}

/// Parabolic-type step bound dt <= 0.25 dx^2 / max_x k(x,x), driven by the
/// second-order Ito term; k(x,x) is reconstructed от the retained modes.
inline double spde_stability_bound(const NoiseBasis& basis, std::size_t nx) {
  double kmax = 0.0;
  for (std::size_t i = 0; i < nx; ++i) {
    double kd = 0.0;
    for (const auto& m : basis.modes) kd += m[i] * m[i];
    kmax = std::max(kmax, kd);
  }
  const double dx = 1.0 / static_cast<double>(nx);
  if (kmax == 0.0) return std::numeric_limits<double>::infinity();
  return 0.25 * dx * dx / kmax;
}

namespace detail {

inline void check_finite(const Field1D& f) {
  for (double v : f)
    if (!std::isfinite(v)) throw NonFiniteState("rho became non-finite");
}

}  // namespace detail

/// Euler-Maruyama step of the Ito-form conservation law
///   d rho = [ dx(b rho) + 1/2 sum_k dx(phi_k dx(phi_k rho)) ] dt
///           + sum_k dx(phi_k rho) sqrt(dt) xi_k,            b = a - u,
/// all derivatives spectral; u advances by the exact heat propagator. The
/// martingale increment <noise, .> of the step is exposed through
/// `noise_out` for quadratic-variation diagnostics.
inline SPDEState spde_step(const SPDEState& state, const Field1D& a,
                           const NoiseBasis& basis, double dt,
                           RngStream& stream, Field1D* noise_out = nullptr) {
  const std::size_t n = state.rho.size();
  if (a.size() != n || state.u.size() != n)
    throw GridMismatch("spde_step field sizes");
  const double bound = spde_stability_bound(basis, n);
  if (dt > bound)
    throw StabilityViolation("dt exceeds 0.25 dx^2 / max k(x,x)");

  Field1D flux(n);
  for (std::size_t i = 0; i < n; ++i)
    flux[i] = (a[i] - state.u[i]) * state.rho[i];
  Field1D drift = spectral_derivative(flux);

  Field1D noise(n, 0.0);
  Field1D tmp(n);
  for (const auto& phi : basis.modes) {
    for (std::size_t i = 0; i < n; ++i) tmp[i] = phi[i] * state.rho[i];
    const Field1D w = spectral_derivative(tmp);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = phi[i] * w[i];
    const Field1D d2 = spectral_derivative(tmp);
    const double xi = stream.normal();
    const double sq = std::sqrt(dt);
    for (std::size_t i = 0; i < n; ++i) {
      drift[i] += 0.5 * d2[i];
      noise[i] += sq * xi * w[i];
    }
  }

  SPDEState out;
  out.rho.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    out.rho[i] = state.rho[i] + dt * drift[i] + noise[i];
  detail::check_finite(out.rho);
  out.u = heat_propagate(state.u, dt);
  out.t = state.t + dt;
  if (noise_out != nullptr) *noise_out = std::move(noise);
  return out;
}

/// Stratonovich consistency oracle: Heun (midpoint) integration of
///   d rho = dx[(a - u) rho] dt + dx[rho sum_k phi_k o d beta^k],
/// predictor and corrector sharing the same Brownian increments. Converges
/// to the Stratonovich solution, so its ensemble statistics must match the
/// Ito scheme's.
inline SPDEState spde_step_strat(const SPDEState& state, const Field1D& a,
                                 const NoiseBasis& basis, double dt,
                                 RngStream& stream) {
  const std::size_t n = state.rho.size();
  std::vector<double> dw(basis.modes.size());
  for (auto& w : dw) w = std::sqrt(dt) * stream.normal();

  auto strat_rhs = [&](const Field1D& rho, Field1D& drift, Field1D& noise) {
    Field1D flux(n), tmp(n);
    for (std::size_t i = 0; i < n; ++i)
      flux[i] = (a[i] - state.u[i]) * rho[i];
    drift = spectral_derivative(flux);
    noise.assign(n, 0.0);
    for (std::size_t k = 0; k < basis.modes.size(); ++k) {
      for (std::size_t i = 0; i < n; ++i)
        tmp[i] = basis.modes[k][i] * rho[i];
      const Field1D w = spectral_derivative(tmp);
      for (std::size_t i = 0; i < n; ++i) noise[i] += dw[k] * w[i];
    }
  };

  Field1D drift0, noise0, drift1, noise1;
  strat_rhs(state.rho, drift0, noise0);
  Field1D pred(n);
  for (std::size_t i = 0; i < n; ++i)
    pred[i] = state.rho[i] + dt * drift0[i] + noise0[i];
  strat_rhs(pred, drift1, noise1);

  SPDEState out;
  out.rho.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    out.rho[i] = state.rho[i] + 0.5 * dt * (drift0[i] + drift1[i]) +
                 0.5 * (noise0[i] + noise1[i]);
  detail::check_finite(out.rho);
  out.u = heat_propagate(state.u, dt);
  out.t = state.t + dt;
  return out;
}

struct SpdeConfig {
  std::size_t nx = 64;
  double dt = 1e-4;
  double horizon = 0.5;
  std::vector<double> output_times;
  FourierSeries rho0;
  FourierSeries u0;

  std::vector<double> resolved_output_times() const {
    if (!output_times.empty()) return output_times;
    std::vector<double> ts;
    for (int i = 0; i <= 25; ++i) ts.push_back(horizon * i / 25.0);
    return ts;
  }
};

struct SpdeResult {
  std::vector<double> times;
  std::vector<Field1D> rho;
  std::vector<Field1D> u;
  double max_mass_deviation = 0.0;  // |mass(t) - mass(0)|
  double min_rho = 0.0;             // negative density is reported, not fixed
  std::size_t steps = 0;
};

inline SpdeResult simulate_spde(const SpdeConfig& cfg, const Field1D& a,
                                const NoiseBasis& basis,
                                std::uint64_t master_seed,
                                std::uint64_t run_index,
                                bool stratonovich = false) {
  RngStream stream(master_seed, run_index, /*tag=*/2);
  SPDEState s;
  s.rho = cfg.rho0.sample(cfg.nx);
  s.u = cfg.u0.sample(cfg.nx);

  std::vector<double> outputs = cfg.resolved_output_times();
  std::sort(outputs.begin(), outputs.end());

  SpdeResult res;
  const double mass0 = integral(s.rho);
  res.min_rho = *std::min_element(s.rho.begin(), s.rho.end());
  auto record = [&]() {
    res.times.push_back(s.t);
    res.rho.push_back(s.rho);
    res.u.push_back(s.u);
  };
  std::size_t out_idx = 0;
  while (out_idx < outputs.size() && outputs[out_idx] <= 0.0) {
    record();
    ++out_idx;
  }
  for (; out_idx < outputs.size(); ++out_idx) {
    const double target = std::min(outputs[out_idx], cfg.horizon);
    while (s.t < target - 1e-12) {
      const int nsub = std::max(
          1, static_cast<int>(std::ceil((target - s.t) / cfg.dt - 1e-9)));
      const double dt = (target - s.t) / nsub;
      for (int k = 0; k < nsub; ++k) {
        s = stratonovich ? spde_step_strat(s, a, basis, dt, stream)
                         : spde_step(s, a, basis, dt, stream);
        ++res.steps;
        res.min_rho = std::min(
            res.min_rho, *std::min_element(s.rho.begin(), s.rho.end()));
      }
      res.max_mass_deviation = std::max(res.max_mass_deviation,
                                        std::abs(integral(s.rho) - mass0));
    }
    record();
  }
  return res;
}

}  // namespace kinspray
