#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "kinspray/errors.hpp"
#include "kinspray/fourier.hpp"
#include "kinspray/grid.hpp"
#include "kinspray/rng.hpp"

namespace kinspray {

/// One driver state: a band-limited field on the x-grid together with its
/// exact derivative, both generated from the Fourier coefficients.
struct StateField {
  FourierSeries series;
  Field1D values;
  Field1D deriv;

  void resample(const Grid1D& grid) {
    values = series.sample(grid.n);
    deriv = series.sample_derivative(grid.n);
  }
};

/// Finite-state, constant-rate (rate 1 in unscaled time) jump Markov driver.
/// Immutable after construction; sampling takes an explicit RNG stream.
struct DriverSpec {
  Grid1D grid;
  std::vector<StateField> states;
  Eigen::MatrixXd transition;   // row-stochastic J x J
  Eigen::VectorXd stationary;   // nu, nu P = nu
  bool centered = false;
  bool reversible_flag = false;  // user-declared; checked where used

  std::size_t num_states() const { return states.size(); }

  /// sup_x |n^j(x)| over all states; the bound entering velocity estimates.
  double cstar() const {
    double m = 0.0;
    for (const auto& s : states) m = std::max(m, max_abs(s.values));
    return m;
  }
};

struct JumpTrajectory {
  std::vector<double> jump_times;        // strictly increasing, <= horizon
  std::vector<std::size_t> state_indices;  // per inter-jump interval
  double horizon = 0.0;

  /// Occupied state index at time t (cadlag).
  std::size_t state_at(double t) const {
    auto it = std::upper_bound(jump_times.begin(), jump_times.end(), t);
    return state_indices[static_cast<std::size_t>(it - jump_times.begin())];
  }
};

namespace detail {

inline Eigen::VectorXd stationary_law(const Eigen::MatrixXd& P) {
  const auto J = P.rows();
  if (J == 1) return Eigen::VectorXd::Ones(1);
  // nu (P - I) = 0 with sum(nu) = 1: replace one equation by the constraint.
  Eigen::MatrixXd A = P.transpose() - Eigen::MatrixXd::Identity(J, J);
  A.row(J - 1).setOnes();
  Eigen::VectorXd b = Eigen::VectorXd::Zero(J);
  b(J - 1) = 1.0;
  return A.fullPivLu().solve(b);
}

inline void check_row_stochastic(const Eigen::MatrixXd& P) {
  for (Eigen::Index i = 0; i < P.rows(); ++i) {
    double row = 0.0;
    for (Eigen::Index j = 0; j < P.cols(); ++j) {
      if (P(i, j) < 0.0)
        throw NonStochasticMatrix("negative entry in transition matrix");
      row += P(i, j);
    }
    if (std::abs(row - 1.0) > 1e-10)
      throw NonStochasticMatrix("row sum deviates from 1 beyond 1e-10");
  }
}

inline void check_primitive(const Eigen::MatrixXd& P) {
  const auto J = P.rows();
  Eigen::MatrixXd Q = Eigen::MatrixXd::Identity(J, J);
  for (Eigen::Index k = 0; k < J; ++k) Q = Q * P;
  if ((Q.array() <= 1e-14).any())
    throw ReducibleChain("P^J has a vanishing entry; chain not primitive");
}

}  // namespace detail

/// Spectral gap: gamma = 1 - |lambda_2| with lambda_2 the second-largest
/// eigenvalue modulus of P. The semigroup satisfies
/// |e^{t(P-I)} - 1 nu^T| decaying at least at this rate for primitive P.
inline double spectral_gap(const Eigen::MatrixXd& P) {
  if (P.rows() == 1) return 1.0;
  Eigen::EigenSolver<Eigen::MatrixXd> es(P, /*computeEigenvectors=*/false);
  std::vector<double> mods;
  for (Eigen::Index i = 0; i < P.rows(); ++i)
    mods.push_back(std::abs(es.eigenvalues()(i)));
  std::sort(mods.rbegin(), mods.rend());
  return 1.0 - mods[1];
}

inline DriverSpec build_driver(std::vector<StateField> states,
                               const Eigen::MatrixXd& P, const Grid1D& grid) {
  if (states.empty()) throw ConfigError("driver needs at least one state");
  if (P.rows() != P.cols() ||
      static_cast<std::size_t>(P.rows()) != states.size())
    throw ConfigError("transition matrix shape does not match state count");
  detail::check_row_stochastic(P);
  detail::check_primitive(P);

  DriverSpec d;
  d.grid = grid;
  d.states = std::move(states);
  for (auto& s : d.states) s.resample(grid);
  d.transition = P;
  d.stationary = detail::stationary_law(P);
  if ((d.stationary.array() < -1e-12).any())
    throw ReducibleChain("stationary law has negative entries");
  if (std::abs(d.stationary.sum() - 1.0) > 1e-12)
    throw ReducibleChain("stationary law does not normalize");

  // Already centered? sum_j nu_j n^j(x) = 0 at every grid point.
  double dev = 0.0;
  for (std::size_t i = 0; i < grid.n; ++i) {
    double m = 0.0;
    for (std::size_t j = 0; j < d.num_states(); ++j)
      m += d.stationary(static_cast<Eigen::Index>(j)) * d.states[j].values[i];
    dev = std::max(dev, std::abs(m));
  }
  d.centered = dev <= 1e-12;
  return d;
}

/// Replace each state by n^j - sum_l nu_l n^l, coefficient-wise in the
/// Fourier representation so values and derivatives stay exactly consistent.
inline DriverSpec center_states(const DriverSpec& driver) {
  DriverSpec d = driver;
  const std::size_t J = d.num_states();
  FourierSeries mean;
  std::size_t kc = 0, ks = 0;
  for (const auto& s : d.states) {
    kc = std::max(kc, s.series.cos_coeff.size());
    ks = std::max(ks, s.series.sin_coeff.size());
  }
  mean.cos_coeff.assign(kc, 0.0);
  mean.sin_coeff.assign(ks, 0.0);
  for (std::size_t j = 0; j < J; ++j) {
    const double nu = d.stationary(static_cast<Eigen::Index>(j));
    const auto& s = d.states[j].series;
    mean.a0 += nu * s.a0;
    for (std::size_t k = 0; k < s.cos_coeff.size(); ++k)
      mean.cos_coeff[k] += nu * s.cos_coeff[k];
    for (std::size_t k = 0; k < s.sin_coeff.size(); ++k)
      mean.sin_coeff[k] += nu * s.sin_coeff[k];
  }
  for (auto& st : d.states) {
    st.series.a0 -= mean.a0;
    st.series.cos_coeff.resize(kc, 0.0);
    st.series.sin_coeff.resize(ks, 0.0);
    for (std::size_t k = 0; k < kc; ++k)
      st.series.cos_coeff[k] -= mean.cos_coeff[k];
    for (std::size_t k = 0; k < ks; ++k)
      st.series.sin_coeff[k] -= mean.sin_coeff[k];
    st.resample(d.grid);
  }
  d.centered = true;
  return d;
}

/// e^{t(P - I)} by uniformization: e^{-t} sum_k t^k/k! P^k, truncated once
/// the Poisson tail mass drops below 1e-14. Large t is split by squaring to
/// keep e^{-t} representable.
inline Eigen::MatrixXd transition_semigroup(const DriverSpec& driver,
                                            double t) {
  if (!(t >= 0.0) || !std::isfinite(t))
    throw NonFiniteTime("semigroup time must be finite and nonnegative");
  const auto J = driver.transition.rows();
  if (t == 0.0) return Eigen::MatrixXd::Identity(J, J);
  if (t > 64.0) {
    Eigen::MatrixXd half = transition_semigroup(driver, t / 2.0);
    return half * half;
  }
  double term = std::exp(-t);  // Poisson(t) mass at k = 0
  double cum = term;
  Eigen::MatrixXd acc = term * Eigen::MatrixXd::Identity(J, J);
  Eigen::MatrixXd Pk = Eigen::MatrixXd::Identity(J, J);
  for (int k = 1; cum < 1.0 - 1e-14 && k < 4096; ++k) {
    Pk = Pk * driver.transition;
    term *= t / k;
    cum += term;
    acc += term * Pk;
  }
  return acc;
}

inline JumpTrajectory sample_path(const DriverSpec& driver,
                                  std::size_t start_index, double horizon,
                                  RngStream& stream) {
  if (!(horizon > 0.0)) throw NonFiniteTime("horizon must be positive");
  if (start_index >= driver.num_states())
    throw ConfigError("start index out of range");
  JumpTrajectory traj;
  traj.horizon = horizon;
  traj.state_indices.push_back(start_index);
  const auto J = static_cast<Eigen::Index>(driver.num_states());
  double t = stream.exponential();
  std::size_t cur = start_index;
  while (t <= horizon) {
    traj.jump_times.push_back(t);
    // Inverse-CDF jump function over row P(cur, .).
    const double u = stream.uniform();
    double acc = 0.0;
    std::size_t next = driver.num_states() - 1;
    for (Eigen::Index j = 0; j < J; ++j) {
      acc += driver.transition(static_cast<Eigen::Index>(cur), j);
      if (u < acc) {
        next = static_cast<std::size_t>(j);
        break;
      }
    }
    cur = next;
    traj.state_indices.push_back(cur);
    t += stream.exponential();
  }
  return traj;
}

struct CoupledSample {
  JumpTrajectory chain;       // m*, started from the given index
  JumpTrajectory companion;   // stationary copy, started from a nu-draw
  std::size_t meeting_index = std::numeric_limits<std::size_t>::max();
  double meeting_time = std::numeric_limits<double>::infinity();

  bool met() const {
    return meeting_index != std::numeric_limits<std::size_t>::max();
  }
};

inline std::size_t draw_from_law(const Eigen::VectorXd& law, double u) {
  double acc = 0.0;
  for (Eigen::Index j = 0; j < law.size(); ++j) {
    acc += law(j);
    if (u < acc) return static_cast<std::size_t>(j);
  }
  return static_cast<std::size_t>(law.size() - 1);
}

/// Coupling on one shared Poisson clock: both chains jump at the same event
/// times with independent per-jump uniforms until the first index where the
/// states agree; from then on the chain copies its stationary companion.
inline CoupledSample coupled_sample(const DriverSpec& driver,
                                    std::size_t start_index, double horizon,
                                    RngStream& stream) {
  CoupledSample out;
  out.chain.horizon = horizon;
  out.companion.horizon = horizon;

  std::size_t a = start_index;
  std::size_t b = draw_from_law(driver.stationary, stream.uniform());
  out.chain.state_indices.push_back(a);
  out.companion.state_indices.push_back(b);
  bool met = a == b;
  if (met) {
    out.meeting_index = 0;
    out.meeting_time = 0.0;
  }

  auto step = [&](std::size_t cur, double u) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < driver.transition.cols(); ++j) {
      acc += driver.transition(static_cast<Eigen::Index>(cur), j);
      if (u < acc) return static_cast<std::size_t>(j);
    }
    return driver.num_states() - 1;
  };

  double t = stream.exponential();
  std::size_t i = 0;
  while (t <= horizon) {
    out.chain.jump_times.push_back(t);
    out.companion.jump_times.push_back(t);
    ++i;
    if (met) {
      b = step(b, stream.uniform());
      a = b;
    } else {
      a = step(a, stream.uniform());
      b = step(b, stream.uniform());
      if (a == b) {
        met = true;
        out.meeting_index = i;
        out.meeting_time = t;
      }
    }
    out.chain.state_indices.push_back(a);
    out.companion.state_indices.push_back(b);
    t += stream.exponential();
  }
  return out;
}

/// Exact stationary two-point correlations C(t, x, y) = E[m~_0(x) m~_t(y)]
/// on a time lattice, plus the per-node nu-weighted semigroup matrices used
/// by the coefficient quadratures.
struct CorrelationTable {
  std::vector<double> times;    // t_0 = 0 included
  std::vector<double> weights;  // quadrature weights (0 for the t = 0 node)
  std::size_t nx = 0;
  /// Dense C(t_q, x, y), row-major in (x, y), one block per node.
  std::vector<std::vector<double>> values;
  /// W~_q = diag(nu) (e^{t_q (P - I)} - 1 nu^T): the centered weighted
  /// semigroup, which decays entrywise at rate gamma. For centered states the
  /// dropped rank-one part assembles to zero, so kernels built from W~ equal
  /// those built from the raw semigroup.
  std::vector<Eigen::MatrixXd> weighted_semigroup;
  Eigen::VectorXd stationary;
  std::vector<Field1D> state_values;  // copies, for kernel assembly
  std::vector<Field1D> state_derivs;
  double decay_rate = 0.0;  // gamma
  double c0 = 0.0;          // max_j sup|n^j|^2

  double value(std::size_t q, std::size_t ix, std::size_t iy) const {
    return values[q][ix * nx + iy];
  }
};

inline CorrelationTable correlation_table(const DriverSpec& driver,
                                          const std::vector<double>& times,
                                          bool store_dense = true) {
  if (!driver.centered)
    throw NotCentered("correlation table needs a centered driver");
  CorrelationTable tab;
  tab.times = times;
  tab.weights.assign(times.size(), 0.0);
  tab.nx = driver.grid.n;
  tab.decay_rate = spectral_gap(driver.transition);
  const double sup = driver.cstar();
  tab.c0 = sup * sup;
  const std::size_t J = driver.num_states();
  tab.stationary = driver.stationary;
  for (const auto& s : driver.states) {
    tab.state_values.push_back(s.values);
    tab.state_derivs.push_back(s.deriv);
  }
  const Eigen::MatrixXd limit =
      Eigen::VectorXd::Ones(static_cast<Eigen::Index>(J)) *
      driver.stationary.transpose();
  tab.weighted_semigroup.reserve(times.size());
  if (store_dense) tab.values.reserve(times.size());
  for (double t : times) {
    Eigen::MatrixXd Pt = transition_semigroup(driver, t);
    Eigen::MatrixXd W = driver.stationary.asDiagonal() * (Pt - limit);
    if (store_dense) {
      std::vector<double> block(tab.nx * tab.nx, 0.0);
      // C(t,x,y) = sum_j nu_j n^j(x) [Pt N](j)(y)
      for (std::size_t j = 0; j < J; ++j) {
        Field1D pn(tab.nx, 0.0);
        for (std::size_t l = 0; l < J; ++l) {
          const double w = Pt(static_cast<Eigen::Index>(j),
                              static_cast<Eigen::Index>(l));
          if (w == 0.0) continue;
          for (std::size_t iy = 0; iy < tab.nx; ++iy)
            pn[iy] += w * driver.states[l].values[iy];
        }
        const double nuj = driver.stationary(static_cast<Eigen::Index>(j));
        for (std::size_t ix = 0; ix < tab.nx; ++ix) {
          const double lhs = nuj * driver.states[j].values[ix];
          for (std::size_t iy = 0; iy < tab.nx; ++iy)
            block[ix * tab.nx + iy] += lhs * pn[iy];
        }
      }
      tab.values.push_back(std::move(block));
    }
    tab.weighted_semigroup.push_back(std::move(W));
  }
  return tab;
}

/// Per-state Poisson solution Psi = M^{-1}I: (P - I) Psi(.)(x) = N(.)(x) at
/// each grid point, normalized by sum_j nu_j Psi_j(x) = 0. Solved through
/// the bordered matrix (P - I) - 1 nu^T, which is invertible exactly when
/// the chain is ergodic.
struct PoissonSolution {
  std::vector<Field1D> psi;        // one field per state
  std::vector<Field1D> psi_deriv;  // exact derivatives, same linear map
};

inline PoissonSolution minv_I(const DriverSpec& driver) {
  if (!driver.centered)
    throw NotCentered("M^-1 I needs a centered driver (solvability)");
  const auto J = static_cast<Eigen::Index>(driver.num_states());
  Eigen::MatrixXd A = driver.transition - Eigen::MatrixXd::Identity(J, J) -
                      Eigen::VectorXd::Ones(J) * driver.stationary.transpose();
  Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
  if (!lu.isInvertible())
    throw SingularBeyondKernel(
        "P - I is singular beyond its ergodic kernel; chain not ergodic");
  const std::size_t nx = driver.grid.n;
  PoissonSolution sol;
  sol.psi.assign(driver.num_states(), Field1D(nx, 0.0));
  sol.psi_deriv.assign(driver.num_states(), Field1D(nx, 0.0));
  Eigen::VectorXd rhs(J), rhs_d(J);
  for (std::size_t i = 0; i < nx; ++i) {
    for (Eigen::Index j = 0; j < J; ++j) {
      rhs(j) = driver.states[static_cast<std::size_t>(j)].values[i];
      rhs_d(j) = driver.states[static_cast<std::size_t>(j)].deriv[i];
    }
    Eigen::VectorXd p = lu.solve(rhs);
    Eigen::VectorXd pd = lu.solve(rhs_d);
    for (Eigen::Index j = 0; j < J; ++j) {
      sol.psi[static_cast<std::size_t>(j)][i] = p(j);
      sol.psi_deriv[static_cast<std::size_t>(j)][i] = pd(j);
    }
  }
  return sol;
}

}  // namespace kinspray
