#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "kinspray/coefficients.hpp"
#include "kinspray/errors.hpp"
#include "kinspray/fourier.hpp"
#include "kinspray/grid.hpp"
#include "kinspray/kinetic.hpp"
#include "kinspray/markov_driver.hpp"
#include "kinspray/stats.hpp"

namespace kinspray {

// ---------------------------------------------------------------------------
// Auxiliary relaxation flow and the stationary weight
// ---------------------------------------------------------------------------

/// Closed-form auxiliary flow g_t(x, v) = e^t f(x, e^t [v - w(x)]), applied
/// as the conservative velocity remap. Returns the (tiny) mass read outside
/// the v-range through `lost` when requested.
inline Field2D aux_flow(const Field2D& f, const PhaseGrid& g,
                        const Field1D& w, double t, double* lost = nullptr) {
  if (!(t >= 0.0)) throw NonFiniteTime("aux_flow needs t >= 0");
  if (w.size() != g.nx) throw GridMismatch("aux_flow weight size");
  Field2D out = f;
  const double lambda = std::exp(std::min(t, 700.0));
  const double dv = g.dv();
  double total_lost = 0.0;
  std::vector<double> col(g.nv), prim, scratch;
  for (std::size_t ix = 0; ix < g.nx; ++ix) {
    for (std::size_t jv = 0; jv < g.nv; ++jv) col[jv] = out(ix, jv);
    const double a = -lambda * w[ix];
    total_lost += std::abs(
        detail::remap_affine_column(col, -g.v_max, dv, a, lambda, prim,
                                    scratch));
    for (std::size_t jv = 0; jv < g.nv; ++jv) out(ix, jv) = col[jv];
  }
  if (lost != nullptr) *lost = total_lost * g.dx() * dv;
  return out;
}

/// w_t = int_0^t e^{-(t-s)} m_s ds, integrated exactly over the constant
/// segments of the trajectory.
inline Field1D weight_w(const JumpTrajectory& traj, const DriverSpec& driver,
                        double t) {
  if (t > traj.horizon + 1e-12)
    throw NonFiniteTime("weight time beyond the trajectory horizon");
  std::vector<double> coeff(driver.num_states(), 0.0);
  double seg_start = 0.0;
  for (std::size_t i = 0; i <= traj.jump_times.size(); ++i) {
    const double seg_end =
        i < traj.jump_times.size() ? std::min(traj.jump_times[i], t) : t;
    if (seg_end > seg_start) {
      // int_a^b e^{-(t-s)} ds = e^{-(t-b)} - e^{-(t-a)}
      coeff[traj.state_indices[i]] +=
          std::exp(-(t - seg_end)) - std::exp(-(t - seg_start));
    }
    if (seg_end >= t) break;
    seg_start = seg_end;
  }
  Field1D w(driver.grid.n, 0.0);
  for (std::size_t j = 0; j < driver.num_states(); ++j) {
    if (coeff[j] == 0.0) continue;
    for (std::size_t i = 0; i < w.size(); ++i)
      w[i] += coeff[j] * driver.states[j].values[i];
  }
  return w;
}

/// Finite-horizon surrogate for the stationary weight w~: run the driver
/// from a nu-draw to burn_in and return (w_{burn_in}, current state). The
/// bias is bounded by C* e^{-burn_in}.
inline std::pair<Field1D, std::size_t> sample_wtilde(const DriverSpec& driver,
                                                     double burn_in,
                                                     RngStream& stream) {
  const std::size_t start = draw_from_law(driver.stationary, stream.uniform());
  const JumpTrajectory traj =
      sample_path(driver, start, burn_in + 1e-9, stream);
  return {weight_w(traj, driver, burn_in), traj.state_at(burn_in)};
}

// ---------------------------------------------------------------------------
// Test functions and the limiting generator
// ---------------------------------------------------------------------------

/// phi(f, u) = Phi(<rho, xi>; <u, zeta>) with evaluable first and second
/// partials of the outer function.
struct TestFunction {
  Field1D xi;
  Field1D zeta;
  std::function<double(double, double)> phi;
  std::function<double(double, double)> d1;    // d/dr
  std::function<double(double, double)> d2;    // d/ds
  std::function<double(double, double)> d11;   // d2/dr2

  double observable_rho(const Field1D& rho) const { return inner(rho, xi); }
  double observable_u(const Field1D& u) const {
    return zeta.empty() ? 0.0 : inner(u, zeta);
  }
  double value(const Field1D& rho, const Field1D& u) const {
    return phi(observable_rho(rho), observable_u(u));
  }
};

inline TestFunction linear_test_function(Field1D xi, Field1D zeta = {}) {
  TestFunction t;
  t.xi = std::move(xi);
  t.zeta = std::move(zeta);
  t.phi = [](double r, double s) { return r + s; };
  t.d1 = [](double, double) { return 1.0; };
  t.d2 = [](double, double) { return 1.0; };
  t.d11 = [](double, double) { return 0.0; };
  return t;
}

inline TestFunction quadratic_test_function(Field1D xi) {
  TestFunction t;
  t.xi = std::move(xi);
  t.phi = [](double r, double) { return r * r; };
  t.d1 = [](double r, double) { return 2.0 * r; };
  t.d2 = [](double, double) { return 0.0; };
  t.d11 = [](double, double) { return 2.0; };
  return t;
}

inline TestFunction constant_test_function(std::size_t nx) {
  TestFunction t;
  t.xi.assign(nx, 0.0);
  t.phi = [](double, double) { return 1.0; };
  t.d1 = [](double, double) { return 0.0; };
  t.d2 = [](double, double) { return 0.0; };
  t.d11 = [](double, double) { return 0.0; };
  return t;
}

/// First corrector phi_1 = <J(f) - Psi rho, dx xi> d1Phi evaluated at the
/// current driver state's Poisson field Psi.
inline double corrector_phi1(const Moments& m, const Field1D& psi_state,
                             const TestFunction& tf, const Field1D& u) {
  if (psi_state.size() != m.rho.size())
    throw GridMismatch("corrector psi field size");
  const Field1D dxi = spectral_derivative(tf.xi);
  Field1D arg(m.rho.size());
  for (std::size_t i = 0; i < arg.size(); ++i)
    arg[i] = m.j[i] - psi_state[i] * m.rho[i];
  return inner(arg, dxi) *
         tf.d1(tf.observable_rho(m.rho), tf.observable_u(u));
}

/// Coefficient bundle consumed by the limiting generator.
struct LimitCoefficients {
  Field1D a;
  Kernel2D kernel;
  NoiseBasis basis;
  CrossKernels cross;
};

/// L phi = <A^I rho, xi> d1Phi + <dxx u, zeta> d2Phi
///         + 1/2 d11Phi int int k(x,y) rho dxi rho dxi.
inline double limiting_generator(const Field1D& rho, const Field1D& u,
                                 const TestFunction& tf,
                                 const LimitCoefficients& coeffs) {
  if (rho.size() != coeffs.a.size())
    throw GridMismatch("limiting generator field sizes");
  const double r = tf.observable_rho(rho);
  const double s = tf.observable_u(u);
  const Field1D ai = apply_ito_drift(rho, u, coeffs.a, coeffs.kernel);
  double out = inner(ai, tf.xi) * tf.d1(r, s);
  if (!tf.zeta.empty()) {
    const Field1D uxx = spectral_derivative(u, 2);
    out += inner(uxx, tf.zeta) * tf.d2(r, s);
  }
  const double d11 = tf.d11(r, s);
  if (d11 != 0.0) {
    const std::size_t n = rho.size();
    const Field1D dxi = spectral_derivative(tf.xi);
    Field1D w(n);
    for (std::size_t i = 0; i < n; ++i) w[i] = rho[i] * dxi[i];
    double quad = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < n; ++j)
        row += coeffs.kernel(i, j) * w[j];
      quad += w[i] * row;
    }
    quad /= static_cast<double>(n * n);
    out += 0.5 * d11 * quad;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Martingale-defect diagnostic
// ---------------------------------------------------------------------------

struct DefectEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t runs = 0;
};

/// Per-run trajectory snapshots consumed by the defect estimator.
struct RecordedRun {
  std::vector<double> times;
  std::vector<Field1D> rho;
  std::vector<Field1D> u;
};

/// D = E[ phi(rho_t, u_t) - phi(rho_s, u_s) - int_s^t L phi d sigma ],
/// the time integral by trapezoid over the recorded outputs.
inline DefectEstimate martingale_defect(const std::vector<RecordedRun>& runs,
                                        const TestFunction& tf,
                                        const LimitCoefficients& coeffs,
                                        double s, double t,
                                        double requested_resolution = 0.0) {
  std::vector<double> contrib;
  contrib.reserve(runs.size());
  for (const auto& run : runs) {
    std::vector<double> ts, lphi;
    double phi_s = 0.0, phi_t = 0.0;
    bool seen_s = false, seen_t = false;
    for (std::size_t i = 0; i < run.times.size(); ++i) {
      const double ti = run.times[i];
      if (ti < s - 1e-12 || ti > t + 1e-12) continue;
      ts.push_back(ti);
      lphi.push_back(limiting_generator(run.rho[i], run.u[i], tf, coeffs));
      if (!seen_s) {
        phi_s = tf.value(run.rho[i], run.u[i]);
        seen_s = true;
      }
      phi_t = tf.value(run.rho[i], run.u[i]);
      seen_t = true;
    }
    if (!seen_s || !seen_t || ts.size() < 2)
      throw InsufficientEnsemble("run lacks outputs inside [s, t]");
    contrib.push_back(phi_t - phi_s - trapezoid(ts, lphi));
  }
  const SampleStats st = sample_stats(contrib);
  if (requested_resolution > 0.0 && st.std_error() > requested_resolution)
    throw InsufficientEnsemble(
        "defect standard error " + std::to_string(st.std_error()) +
        " exceeds the requested resolution");
  return {st.mean, st.std_error(), st.n};
}

}  // namespace kinspray
