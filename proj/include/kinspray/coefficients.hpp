#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "kinspray/errors.hpp"
#include "kinspray/fourier.hpp"
#include "kinspray/grid.hpp"
#include "kinspray/markov_driver.hpp"

namespace kinspray {

// ---------------------------------------------------------------------------
// Time quadrature for the stationary-correlation integrals
// ---------------------------------------------------------------------------

struct QuadratureGrid {
  std::vector<double> times;    // t_0 = 0 with weight 0, then GL nodes
  std::vector<double> weights;
  double t_cut = 0.0;
};

namespace detail {

/// Gauss-Legendre nodes/weights on [-1, 1] by Newton iteration.
inline void gauss_legendre(int q, std::vector<double>& x,
                           std::vector<double>& w) {
  x.resize(static_cast<std::size_t>(q));
  w.resize(static_cast<std::size_t>(q));
  for (int i = 0; i < q; ++i) {
    double t = std::cos(std::numbers::pi * (i + 0.75) / (q + 0.5));
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = t;
      for (int k = 2; k <= q; ++k) {
        double p2 = ((2.0 * k - 1.0) * t * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      double dp = q * (t * p1 - p0) / (t * t - 1.0);
      double dt = p1 / dp;
      t -= dt;
      if (std::abs(dt) < 1e-15) break;
    }
    double p0 = 1.0, p1 = t;
    for (int k = 2; k <= q; ++k) {
      double p2 = ((2.0 * k - 1.0) * t * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    double dp = q * (t * p1 - p0) / (t * t - 1.0);
    x[static_cast<std::size_t>(i)] = t;
    w[static_cast<std::size_t>(i)] = 2.0 / ((1.0 - t * t) * dp * dp);
  }
}

inline QuadratureGrid composite_gl(double t_cut, int panels, int order = 12) {
  std::vector<double> gx, gw;
  gauss_legendre(order, gx, gw);
  QuadratureGrid g;
  g.t_cut = t_cut;
  g.times.push_back(0.0);
  g.weights.push_back(0.0);
  const double h = t_cut / panels;
  for (int p = 0; p < panels; ++p) {
    const double a = p * h;
    for (int i = 0; i < order; ++i) {
      g.times.push_back(a + 0.5 * h * (gx[static_cast<std::size_t>(i)] + 1.0));
      g.weights.push_back(0.5 * h * gw[static_cast<std::size_t>(i)]);
    }
  }
  return g;
}

}  // namespace detail

/// Composite Gauss-Legendre on [0, T_cut] with
/// T_cut = -ln(1e-12 gamma / C0) / gamma, refined until the matrix integrals
/// of the centered weighted semigroup (plain and e^{-t}-damped) stabilize.
/// The dropped tail is bounded by C0 e^{-gamma T_cut} / gamma < 1e-12.
inline QuadratureGrid build_time_quadrature(const DriverSpec& driver) {
  const double gamma = spectral_gap(driver.transition);
  if (!(gamma > 0.0))
    throw NoSpectralGap("driver transition matrix has no spectral gap");
  const double sup = driver.cstar();
  const double c0 = std::max(sup * sup, 1e-300);
  const double t_cut = std::max(1.0, -std::log(1e-12 * gamma / c0) / gamma);

  const Eigen::MatrixXd limit =
      Eigen::VectorXd::Ones(driver.transition.rows()) *
      driver.stationary.transpose();
  auto integrals = [&](const QuadratureGrid& g) {
    const auto J = driver.transition.rows();
    Eigen::MatrixXd m_plain = Eigen::MatrixXd::Zero(J, J);
    Eigen::MatrixXd m_damped = Eigen::MatrixXd::Zero(J, J);
    for (std::size_t q = 1; q < g.times.size(); ++q) {
      const Eigen::MatrixXd w =
          driver.stationary.asDiagonal() *
          (transition_semigroup(driver, g.times[q]) - limit);
      m_plain += g.weights[q] * w;
      m_damped += g.weights[q] * std::exp(-g.times[q]) * w;
    }
    return std::make_pair(m_plain, m_damped);
  };

  int panels = std::max(8, static_cast<int>(std::ceil(t_cut * gamma)));
  QuadratureGrid g = detail::composite_gl(t_cut, panels);
  auto ref = integrals(g);
  for (int iter = 0; iter < 6; ++iter) {
    QuadratureGrid g2 = detail::composite_gl(t_cut, panels * 2);
    auto next = integrals(g2);
    const double diff =
        std::max((next.first - ref.first).cwiseAbs().maxCoeff(),
                 (next.second - ref.second).cwiseAbs().maxCoeff());
    g = std::move(g2);
    ref = next;
    panels *= 2;
    if (diff < 1e-13) break;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

/// Symmetric covariance kernel on the x-grid with its diagonal and the full
/// derivative along the diagonal (spectral derivative of the diagonal field).
struct Kernel2D {
  std::size_t nx = 0;
  std::vector<double> values;  // row-major (x, y)
  Field1D diag;
  Field1D diag_deriv;

  double operator()(std::size_t ix, std::size_t iy) const {
    return values[ix * nx + iy];
  }

  void finalize_diag() {
    diag.resize(nx);
    for (std::size_t i = 0; i < nx; ++i) diag[i] = values[i * nx + i];
    diag_deriv = spectral_derivative(diag);
  }
};

namespace detail {

/// sum_{j,l} M_{jl} A^j(x) B^l(y) over the grid.
inline std::vector<double> assemble_kernel(const Eigen::MatrixXd& M,
                                           const std::vector<Field1D>& A,
                                           const std::vector<Field1D>& B) {
  const std::size_t J = A.size();
  const std::size_t nx = A[0].size();
  std::vector<double> out(nx * nx, 0.0);
  for (std::size_t j = 0; j < J; ++j) {
    Field1D col(nx, 0.0);
    for (std::size_t l = 0; l < J; ++l) {
      const double m = M(static_cast<Eigen::Index>(j),
                         static_cast<Eigen::Index>(l));
      if (m == 0.0) continue;
      for (std::size_t iy = 0; iy < nx; ++iy) col[iy] += m * B[l][iy];
    }
    for (std::size_t ix = 0; ix < nx; ++ix) {
      const double a = A[j][ix];
      double* row = out.data() + ix * nx;
      for (std::size_t iy = 0; iy < nx; ++iy) row[iy] += a * col[iy];
    }
  }
  return out;
}

/// sum_{j,l} M_{jl} A^j(x) B^l(x): the diagonal of the mixed assembly.
inline Field1D assemble_diag(const Eigen::MatrixXd& M,
                             const std::vector<Field1D>& A,
                             const std::vector<Field1D>& B) {
  const std::size_t J = A.size();
  const std::size_t nx = A[0].size();
  Field1D out(nx, 0.0);
  for (std::size_t j = 0; j < J; ++j)
    for (std::size_t l = 0; l < J; ++l) {
      const double m = M(static_cast<Eigen::Index>(j),
                         static_cast<Eigen::Index>(l));
      if (m == 0.0) continue;
      for (std::size_t i = 0; i < nx; ++i) out[i] += m * A[j][i] * B[l][i];
    }
  return out;
}

inline Eigen::MatrixXd integrate_table(const CorrelationTable& tab,
                                       double damping_rate,
                                       bool one_minus_exp = false) {
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(
      tab.weighted_semigroup[0].rows(), tab.weighted_semigroup[0].cols());
  for (std::size_t q = 0; q < tab.times.size(); ++q) {
    double w = tab.weights[q];
    if (w == 0.0) continue;
    if (one_minus_exp)
      w *= 1.0 - std::exp(-damping_rate * tab.times[q]);
    else if (damping_rate != 0.0)
      w *= std::exp(-damping_rate * tab.times[q]);
    acc += w * tab.weighted_semigroup[q];
  }
  return acc;
}

}  // namespace detail

/// k(x, y) = int_0^inf [C(t,x,y) + C(t,y,x)] dt, symmetric by construction.
inline Kernel2D kernel_k(const CorrelationTable& table) {
  if (!(table.decay_rate > 0.0))
    throw NoSpectralGap("correlation table has no positive decay rate");
  const Eigen::MatrixXd m = detail::integrate_table(table, 0.0);
  Kernel2D k;
  k.nx = table.nx;
  k.values = detail::assemble_kernel(m + m.transpose(), table.state_values,
                                     table.state_values);
  k.finalize_diag();
  return k;
}

/// Drift a(x): the antisymmetric derivative correlation integral plus the
/// e^{-t}-damped cross term, both over the same quadrature as kernel_k.
/// The derivative-augmented correlations use the exact state derivatives
/// carried by the driver. When the driver is flagged reversible the
/// single-integral reversible form is evaluated as well and the two must
/// agree within 1e-8.
inline Field1D drift_a(const DriverSpec& driver,
                       const CorrelationTable& table) {
  if (!(table.decay_rate > 0.0))
    throw NoSpectralGap("correlation table has no positive decay rate");
  const Eigen::MatrixXd m_plain = detail::integrate_table(table, 0.0);
  const Eigen::MatrixXd m_damped = detail::integrate_table(table, 1.0);
  const auto& n = table.state_values;
  const auto& dn = table.state_derivs;
  // E[dm~_0(x) m~_t(x)] assembles dn against n; E[m~_0(x) dm~_t(x)] the
  // reverse.
  const Field1D d1 = detail::assemble_diag(m_plain, dn, n);
  const Field1D d2 = detail::assemble_diag(m_plain, n, dn);
  const Field1D cross = detail::assemble_diag(m_damped, n, dn);
  const std::size_t nx = table.nx;
  Field1D a(nx, 0.0);
  for (std::size_t i = 0; i < nx; ++i)
    a[i] = 0.5 * (d1[i] - d2[i]) + cross[i];

  if (driver.reversible_flag) {
    double err = 0.0;
    for (std::size_t i = 0; i < nx; ++i)
      err = std::max(err, std::abs(a[i] - cross[i]));
    if (err > 1e-8)
      throw ConsistencyFailure(
          "reversible-form drift deviates from the two-integral form by " +
          std::to_string(err));
  }
  return a;
}

/// E[w~(x) w~(y)] and G(x, y) = E[w~(x) Psi(m~_0)(y)], plus the diagonal
/// derivative of G in its second slot needed by the rewritten Ito drift.
struct CrossKernels {
  std::size_t nx = 0;
  std::vector<double> k_ww;  // symmetric
  std::vector<double> g;     // first slot w~, second slot Psi
  Field1D g_d2_diag;         // d/dy G(x, y) at y = x, spectral

  double kww(std::size_t ix, std::size_t iy) const {
    return k_ww[ix * nx + iy];
  }
  double gval(std::size_t ix, std::size_t iy) const {
    return g[ix * nx + iy];
  }
};

inline CrossKernels cross_kernels(const DriverSpec& driver,
                                  const CorrelationTable& table,
                                  const PoissonSolution& psi) {
  if (!(table.decay_rate > 0.0))
    throw NoSpectralGap("correlation table has no positive decay rate");
  const std::size_t nx = table.nx;
  const auto& n = table.state_values;
  CrossKernels ck;
  ck.nx = nx;

  const Eigen::MatrixXd m_damped = detail::integrate_table(table, 1.0);
  const Eigen::MatrixXd m_oneminus =
      detail::integrate_table(table, 1.0, /*one_minus_exp=*/true);

  ck.k_ww = detail::assemble_kernel(
      0.5 * (m_damped + m_damped.transpose()), n, n);
  ck.g = detail::assemble_kernel(-m_oneminus, n, n);

  // Consistency: E[m~_0(x) Psi(m~_0)(y)] + E[w~(x) m~_0(y)] = G(x, y).
  const std::size_t J = driver.num_states();
  std::vector<double> direct(nx * nx, 0.0);
  for (std::size_t j = 0; j < J; ++j) {
    const double nu = driver.stationary(static_cast<Eigen::Index>(j));
    for (std::size_t ix = 0; ix < nx; ++ix) {
      const double a = nu * n[j][ix];
      for (std::size_t iy = 0; iy < nx; ++iy)
        direct[ix * nx + iy] += a * psi.psi[j][iy];
    }
  }
  const std::vector<double> wm = detail::assemble_kernel(m_damped, n, n);
  double err = 0.0;
  for (std::size_t i = 0; i < nx * nx; ++i)
    err = std::max(err, std::abs(direct[i] + wm[i] - ck.g[i]));
  if (err > 1e-8)
    throw ConsistencyFailure(
        "cross-kernel identity E[m Psi] + E[w m] = G violated by " +
        std::to_string(err));

  ck.g_d2_diag.resize(nx);
  for (std::size_t ix = 0; ix < nx; ++ix) {
    Field1D row(ck.g.begin() + static_cast<std::ptrdiff_t>(ix * nx),
                ck.g.begin() + static_cast<std::ptrdiff_t>((ix + 1) * nx));
    const Field1D drow = spectral_derivative(row);
    ck.g_d2_diag[ix] = drow[ix];
  }
  return ck;
}

// ---------------------------------------------------------------------------
// Noise basis (Karhunen-Loeve modes of Q)
// ---------------------------------------------------------------------------

struct NoiseBasis {
  std::vector<Field1D> modes;      // phi_k = sqrt(lambda_k) unit eigenfield
  std::vector<double> eigenvalues;
  double energy_fraction = 1.0;
};

/// Eigendecomposition of the quadrature-weighted kernel matrix. Round-off
/// negatives below 1e-12 lambda_max are clamped to zero and dropped; modes
/// are kept until the retained energy reaches 1 - energy_tol.
inline NoiseBasis noise_basis(const Kernel2D& kernel, double energy_tol) {
  const std::size_t nx = kernel.nx;
  const double dx = 1.0 / static_cast<double>(nx);
  Eigen::MatrixXd B(static_cast<Eigen::Index>(nx),
                    static_cast<Eigen::Index>(nx));
  for (std::size_t i = 0; i < nx; ++i)
    for (std::size_t j = 0; j < nx; ++j)
      B(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          0.5 * (kernel.values[i * nx + j] + kernel.values[j * nx + i]) * dx;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(B);
  const Eigen::VectorXd ev = es.eigenvalues();
  const double lmax = std::max(ev.maxCoeff(), 0.0);
  if (lmax > 0.0 && ev.minCoeff() < -1e-8 * lmax)
    throw IndefiniteKernel("most negative eigenvalue below -1e-8 lambda_max");

  std::vector<std::size_t> order(static_cast<std::size_t>(ev.size()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return ev(static_cast<Eigen::Index>(a)) > ev(static_cast<Eigen::Index>(b));
  });

  const double clamp = lmax * 1e-12;
  double total = 0.0;
  for (Eigen::Index i = 0; i < ev.size(); ++i)
    if (ev(i) > clamp) total += ev(i);

  NoiseBasis basis;
  if (total == 0.0) return basis;
  double kept = 0.0;
  for (std::size_t idx : order) {
    const double lambda = ev(static_cast<Eigen::Index>(idx));
    if (lambda <= clamp) break;
    if (kept >= (1.0 - energy_tol) * total) break;
    Field1D mode(nx);
    const double scale = std::sqrt(lambda / dx);
    for (std::size_t i = 0; i < nx; ++i)
      mode[i] = scale * es.eigenvectors()(static_cast<Eigen::Index>(i),
                                          static_cast<Eigen::Index>(idx));
    basis.modes.push_back(std::move(mode));
    basis.eigenvalues.push_back(lambda);
    kept += lambda;
  }
  basis.energy_fraction = kept / total;
  return basis;
}

// ---------------------------------------------------------------------------
// Drift operators on grid fields
// ---------------------------------------------------------------------------

/// A^S rho = d/dx [(a - u) rho].
inline Field1D apply_strat_drift(const Field1D& rho, const Field1D& u,
                                 const Field1D& a) {
  if (rho.size() != u.size() || rho.size() != a.size())
    throw GridMismatch("apply_strat_drift field sizes");
  Field1D flux(rho.size());
  for (std::size_t i = 0; i < rho.size(); ++i)
    flux[i] = (a[i] - u[i]) * rho[i];
  return spectral_derivative(flux);
}

/// Ito-to-Stratonovich correction
/// A^{I->S} rho = 1/2 d^2/dx^2 [k(x,x) rho] - 1/4 d/dx [(d/dx k(x,x)) rho].
inline Field1D apply_ito_correction(const Field1D& rho,
                                    const Kernel2D& kernel) {
  if (rho.size() != kernel.diag.size())
    throw GridMismatch("apply_ito_correction field sizes");
  const std::size_t n = rho.size();
  Field1D kd_rho(n), kdd_rho(n);
  for (std::size_t i = 0; i < n; ++i) {
    kd_rho[i] = kernel.diag[i] * rho[i];
    kdd_rho[i] = kernel.diag_deriv[i] * rho[i];
  }
  const Field1D d2 = spectral_derivative(kd_rho, 2);
  const Field1D d1 = spectral_derivative(kdd_rho, 1);
  Field1D out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = 0.5 * d2[i] - 0.25 * d1[i];
  return out;
}

/// Full Ito drift A^I rho = A^S rho + A^{I->S} rho. When cross kernels are
/// supplied, the rewritten assembly
///   1/2 d^2[k(x,x) rho] + d[E(d Psi . w~) rho] - d[u rho]
/// is evaluated too and the two must agree within 1e-6.
inline Field1D apply_ito_drift(const Field1D& rho, const Field1D& u,
                               const Field1D& a, const Kernel2D& kernel,
                               const CrossKernels* cross = nullptr) {
  const Field1D strat = apply_strat_drift(rho, u, a);
  const Field1D corr = apply_ito_correction(rho, kernel);
  Field1D out(rho.size());
  for (std::size_t i = 0; i < rho.size(); ++i) out[i] = strat[i] + corr[i];

  if (cross != nullptr) {
    const std::size_t n = rho.size();
    if (cross->g_d2_diag.size() != n)
      throw GridMismatch("cross kernels on a different grid");
    Field1D kd_rho(n), g_rho(n), u_rho(n);
    for (std::size_t i = 0; i < n; ++i) {
      kd_rho[i] = kernel.diag[i] * rho[i];
      g_rho[i] = cross->g_d2_diag[i] * rho[i];
      u_rho[i] = u[i] * rho[i];
    }
    const Field1D d2 = spectral_derivative(kd_rho, 2);
    const Field1D d1 = spectral_derivative(g_rho, 1);
    const Field1D du = spectral_derivative(u_rho, 1);
    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double alt = 0.5 * d2[i] + d1[i] - du[i];
      err = std::max(err, std::abs(alt - out[i]));
    }
    if (err > 1e-6)
      throw ConsistencyFailure(
          "the two Ito-drift assemblies disagree by " + std::to_string(err));
  }
  return out;
}

/// Symmetrized identity K_ww - (G + G^T)/2 = k/2; returns the max deviation.
inline double symmetrized_identity_error(const CrossKernels& ck,
                                         const Kernel2D& k) {
  if (ck.nx != k.nx) throw GridMismatch("kernel grids differ");
  double err = 0.0;
  for (std::size_t i = 0; i < ck.nx; ++i)
    for (std::size_t j = 0; j < ck.nx; ++j) {
      const double lhs = ck.kww(i, j) - 0.5 * (ck.gval(i, j) + ck.gval(j, i));
      err = std::max(err, std::abs(lhs - 0.5 * k(i, j)));
    }
  return err;
}

}  // namespace kinspray
