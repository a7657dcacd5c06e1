#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "kinspray/coefficients.hpp"
#include "kinspray/driver_io.hpp"
#include "kinspray/markov_driver.hpp"
#include "kinspray/rng.hpp"

using namespace kinspray;

namespace {

const Grid1D grid{64};

struct TelegraphSetup {
  double c, p;
  DriverSpec driver;
  CorrelationTable table;
  PoissonSolution psi;

  TelegraphSetup(double c_, double p_)
      : c(c_), p(p_), driver(telegraph_driver(c_, p_, grid)) {
    auto quad = build_time_quadrature(driver);
    table = correlation_table(driver, quad.times, /*store_dense=*/false);
    table.weights = quad.weights;
    psi = minv_I(driver);
  }
};

/// Independent route to the kernel integrals: resolvent linear algebra
/// instead of quadrature. int_0^inf P_t N dt = -Psi with (P - I) Psi = N,
/// and int_0^inf e^{-t} P_t dt = (2I - P)^{-1}.
std::vector<double> kernel_by_resolvent(const DriverSpec& d) {
  const auto sol = minv_I(d);
  const std::size_t nx = d.grid.n;
  const std::size_t J = d.num_states();
  std::vector<double> k(nx * nx, 0.0);
  for (std::size_t j = 0; j < J; ++j) {
    const double nu = d.stationary(static_cast<Eigen::Index>(j));
    for (std::size_t ix = 0; ix < nx; ++ix)
      for (std::size_t iy = 0; iy < nx; ++iy)
        k[ix * nx + iy] -= nu * (d.states[j].values[ix] * sol.psi[j][iy] +
                                 d.states[j].values[iy] * sol.psi[j][ix]);
  }
  return k;
}

DriverSpec generic_three_state() {
  Eigen::MatrixXd P(3, 3);
  P << 0.8, 0.15, 0.05, 0.1, 0.8, 0.1, 0.05, 0.15, 0.8;
  StateField a, b, c;
  a.series.sin_coeff = {1.0};
  a.series.cos_coeff = {0.0, 0.2};
  b.series.sin_coeff = {0.3, -0.4};
  c.series.cos_coeff = {-0.6};
  return center_states(build_driver({a, b, c}, P, grid));
}

}  // namespace

TEST_CASE("kernel_k telegraph closed form and symmetry") {
  TelegraphSetup ts(0.5, 0.5);
  auto k = kernel_k(ts.table);

  for (std::size_t ix = 0; ix < grid.n; ++ix)
    for (std::size_t iy = 0; iy < grid.n; ++iy) {
      const double expect = ts.c * ts.c / ts.p *
                            std::sin(two_pi * grid.x(ix)) *
                            std::sin(two_pi * grid.x(iy));
      CHECK(k(ix, iy) == Catch::Approx(expect).margin(1e-9));
      CHECK(k(ix, iy) == Catch::Approx(k(iy, ix)).margin(1e-12));
    }
}

TEST_CASE("kernel_k zero driver") {
  Eigen::MatrixXd P(2, 2);
  P << 0.5, 0.5, 0.5, 0.5;
  auto d = build_driver({StateField{}, StateField{}}, P, grid);
  auto quad = build_time_quadrature(d);
  auto tab = correlation_table(d, quad.times, false);
  tab.weights = quad.weights;
  auto k = kernel_k(tab);
  for (double v : k.values) CHECK(v == 0.0);
}

TEST_CASE("kernel quadrature agrees with the resolvent route") {
  auto d = generic_three_state();
  auto quad = build_time_quadrature(d);
  auto tab = correlation_table(d, quad.times, false);
  tab.weights = quad.weights;
  auto k = kernel_k(tab);
  auto k_ref = kernel_by_resolvent(d);
  double err = 0.0;
  for (std::size_t i = 0; i < k.values.size(); ++i)
    err = std::max(err, std::abs(k.values[i] - k_ref[i]));
  CHECK(err < 1e-10);
}

TEST_CASE("drift_a") {
  SECTION("zero driver gives zero drift") {
    Eigen::MatrixXd P(2, 2);
    P << 0.5, 0.5, 0.5, 0.5;
    auto d = build_driver({StateField{}, StateField{}}, P, grid);
    auto quad = build_time_quadrature(d);
    auto tab = correlation_table(d, quad.times, false);
    tab.weights = quad.weights;
    CHECK(max_abs(drift_a(d, tab)) == 0.0);
  }
  SECTION("spatially constant states give zero drift") {
    Eigen::MatrixXd P(2, 2);
    P << 0.7, 0.3, 0.3, 0.7;
    StateField up, down;
    up.series.a0 = 0.4;
    down.series.a0 = -0.4;
    auto d = build_driver({up, down}, P, grid);
    auto quad = build_time_quadrature(d);
    auto tab = correlation_table(d, quad.times, false);
    tab.weights = quad.weights;
    CHECK(max_abs(drift_a(d, tab)) < 1e-14);
  }
  SECTION("telegraph closed form pi c^2 sin(4 pi x)/(1+2p)") {
    TelegraphSetup ts(0.5, 0.3);
    auto a = drift_a(ts.driver, ts.table);
    for (std::size_t i = 0; i < grid.n; ++i) {
      const double expect = std::numbers::pi * ts.c * ts.c *
                            std::sin(2.0 * two_pi * grid.x(i)) /
                            (1.0 + 2.0 * ts.p);
      CHECK(a[i] == Catch::Approx(expect).margin(1e-9));
    }
  }
  SECTION("reversible-form agreement is enforced for flagged drivers") {
    // The telegraph chain is reversible; drift_a checks (and passes).
    TelegraphSetup ts(0.4, 0.5);
    REQUIRE(ts.driver.reversible_flag);
    CHECK_NOTHROW(drift_a(ts.driver, ts.table));
  }
}

TEST_CASE("cross_kernels telegraph closed forms") {
  TelegraphSetup ts(0.5, 0.5);
  auto ck = cross_kernels(ts.driver, ts.table, ts.psi);

  const double kw_scale = ts.c * ts.c / (1.0 + 2.0 * ts.p);
  const double g_scale =
      -ts.c * ts.c * (1.0 / (2.0 * ts.p) - 1.0 / (1.0 + 2.0 * ts.p));
  for (std::size_t ix = 0; ix < grid.n; ix += 3)
    for (std::size_t iy = 0; iy < grid.n; iy += 3) {
      const double ss =
          std::sin(two_pi * grid.x(ix)) * std::sin(two_pi * grid.x(iy));
      CHECK(ck.kww(ix, iy) == Catch::Approx(kw_scale * ss).margin(1e-9));
      CHECK(ck.gval(ix, iy) == Catch::Approx(g_scale * ss).margin(1e-9));
      CHECK(ck.kww(ix, iy) == Catch::Approx(ck.kww(iy, ix)).margin(1e-12));
    }
  for (std::size_t i = 0; i < grid.n; ++i) CHECK(ck.kww(i, i) > -1e-12);
}

TEST_CASE("symmetrized identity K_ww - sym(G) = k/2") {
  for (auto d : {telegraph_driver(0.5, 0.5, grid), generic_three_state()}) {
    auto quad = build_time_quadrature(d);
    auto tab = correlation_table(d, quad.times, false);
    tab.weights = quad.weights;
    auto psi = minv_I(d);
    auto ck = cross_kernels(d, tab, psi);
    auto k = kernel_k(tab);
    CHECK(symmetrized_identity_error(ck, k) < 1e-8);
  }
}

TEST_CASE("noise_basis") {
  SECTION("telegraph kernel is rank one with mode (c/sqrt(p)) sin") {
    TelegraphSetup ts(0.5, 0.5);
    auto k = kernel_k(ts.table);
    auto basis = noise_basis(k, 1e-10);
    REQUIRE(basis.modes.size() == 1);
    CHECK(basis.eigenvalues[0] ==
          Catch::Approx(0.5 * ts.c * ts.c / ts.p).margin(1e-9));
    const double amp = ts.c / std::sqrt(ts.p);
    // Sign of the eigenvector is arbitrary.
    const double sign = basis.modes[0][grid.n / 4] > 0 ? 1.0 : -1.0;
    for (std::size_t i = 0; i < grid.n; ++i)
      CHECK(sign * basis.modes[0][i] ==
            Catch::Approx(amp * std::sin(two_pi * grid.x(i))).margin(1e-8));
  }
  SECTION("modes reconstruct the kernel and are orthogonal") {
    auto d = generic_three_state();
    auto quad = build_time_quadrature(d);
    auto tab = correlation_table(d, quad.times, false);
    tab.weights = quad.weights;
    auto k = kernel_k(tab);
    auto basis = noise_basis(k, 1e-12);
    double err = 0.0;
    for (std::size_t ix = 0; ix < grid.n; ++ix)
      for (std::size_t iy = 0; iy < grid.n; ++iy) {
        double rec = 0.0;
        for (const auto& m : basis.modes) rec += m[ix] * m[iy];
        err = std::max(err, std::abs(rec - k(ix, iy)));
      }
    CHECK(err < 1e-8);
    for (std::size_t a = 0; a < basis.modes.size(); ++a)
      for (std::size_t b = 0; b < basis.modes.size(); ++b) {
        const double ip = inner(basis.modes[a], basis.modes[b]);
        if (a == b)
          CHECK(ip == Catch::Approx(basis.eigenvalues[a]).margin(1e-10));
        else
          CHECK(std::abs(ip) < 1e-10);
      }
  }
  SECTION("zero kernel gives an empty basis") {
    Kernel2D k;
    k.nx = grid.n;
    k.values.assign(grid.n * grid.n, 0.0);
    k.finalize_diag();
    auto basis = noise_basis(k, 1e-10);
    CHECK(basis.modes.empty());
  }
  SECTION("indefinite kernels are rejected") {
    Kernel2D k;
    k.nx = grid.n;
    k.values.assign(grid.n * grid.n, 0.0);
    for (std::size_t i = 0; i < grid.n; ++i) {
      const double s = std::sin(two_pi * grid.x(i));
      for (std::size_t j = 0; j < grid.n; ++j)
        k.values[i * grid.n + j] =
            s * std::sin(two_pi * grid.x(j)) -
            0.5 * std::cos(two_pi * grid.x(i)) * std::cos(two_pi * grid.x(j));
    }
    k.finalize_diag();
    CHECK_THROWS_AS(noise_basis(k, 1e-10), IndefiniteKernel);
  }
}

TEST_CASE("drift operators") {
  TelegraphSetup ts(0.5, 0.3);
  auto k = kernel_k(ts.table);
  auto a = drift_a(ts.driver, ts.table);
  const std::size_t n = grid.n;

  SECTION("constant rho with constant a - u transports to zero") {
    Field1D rho(n, 1.0), u(n, 0.25), av(n, 0.25);
    CHECK(max_abs(apply_strat_drift(rho, u, av)) < 1e-12);
  }
  SECTION("unit coefficient differentiates exactly") {
    Field1D rho(n), u(n, 0.0), av(n, 1.0);
    for (std::size_t i = 0; i < n; ++i) rho[i] = std::sin(two_pi * grid.x(i));
    auto out = apply_strat_drift(rho, u, av);
    for (std::size_t i = 0; i < n; ++i)
      CHECK(out[i] ==
            Catch::Approx(two_pi * std::cos(two_pi * grid.x(i))).margin(1e-10));
  }
  SECTION("telegraph drift of rho = 1 is the derivative of a") {
    Field1D rho(n, 1.0), u(n, 0.0);
    auto out = apply_strat_drift(rho, u, a);
    for (std::size_t i = 0; i < n; ++i) {
      const double expect = 4.0 * std::numbers::pi * std::numbers::pi *
                            ts.c * ts.c *
                            std::cos(2.0 * two_pi * grid.x(i)) /
                            (1.0 + 2.0 * ts.p);
      CHECK(out[i] == Catch::Approx(expect).margin(1e-8));
    }
  }
  SECTION("Ito correction with constant diagonal is half a Laplacian") {
    Kernel2D kc;
    kc.nx = n;
    kc.values.assign(n * n, 0.0);
    const double kappa = 0.8;
    for (std::size_t i = 0; i < n; ++i) kc.values[i * n + i] = kappa;
    kc.finalize_diag();
    // The off-diagonal values do not enter the correction; only the diagonal
    // fields do, and those are constant here.
    kc.diag.assign(n, kappa);
    kc.diag_deriv.assign(n, 0.0);
    Field1D rho(n);
    for (std::size_t i = 0; i < n; ++i)
      rho[i] = std::cos(two_pi * grid.x(i));
    auto out = apply_ito_correction(rho, kc);
    for (std::size_t i = 0; i < n; ++i)
      CHECK(out[i] ==
            Catch::Approx(-0.5 * kappa * two_pi * two_pi * rho[i])
                .margin(1e-8));
  }
  SECTION("constant rho reduces the correction to a quarter Laplacian of k") {
    Field1D rho(n, 1.0);
    auto out = apply_ito_correction(rho, k);
    auto d2 = spectral_derivative(k.diag, 2);
    for (std::size_t i = 0; i < n; ++i)
      CHECK(out[i] == Catch::Approx(0.25 * d2[i]).margin(1e-9));
  }
  SECTION("zero kernel gives zero correction") {
    Kernel2D kz;
    kz.nx = n;
    kz.values.assign(n * n, 0.0);
    kz.finalize_diag();
    Field1D rho(n, 0.7);
    CHECK(max_abs(apply_ito_correction(rho, kz)) < 1e-14);
  }
  SECTION("telegraph A^I of rho = 1 is da/dx + quarter Laplacian of k") {
    Field1D rho(n, 1.0), u(n, 0.0);
    auto out = apply_ito_drift(rho, u, a, k);
    auto da = spectral_derivative(a);
    auto d2k = spectral_derivative(k.diag, 2);
    for (std::size_t i = 0; i < n; ++i)
      CHECK(out[i] == Catch::Approx(da[i] + 0.25 * d2k[i]).margin(1e-9));
  }
}

TEST_CASE("the two Ito-drift assemblies agree for random smooth fields") {
  for (auto d : {telegraph_driver(0.5, 0.5, grid), generic_three_state()}) {
    auto quad = build_time_quadrature(d);
    auto tab = correlation_table(d, quad.times, false);
    tab.weights = quad.weights;
    auto k = kernel_k(tab);
    auto a = drift_a(d, tab);
    auto psi = minv_I(d);
    auto ck = cross_kernels(d, tab, psi);
    RngStream rng(2024, 0);
    for (int trial = 0; trial < 50; ++trial) {
      FourierSeries rs, us;
      rs.a0 = 1.0;
      rs.cos_coeff = {0.4 * rng.normal(), 0.2 * rng.normal(),
                      0.1 * rng.normal()};
      rs.sin_coeff = {0.4 * rng.normal(), 0.2 * rng.normal()};
      us.sin_coeff = {0.3 * rng.normal()};
      auto rho = rs.sample(grid.n);
      auto u = us.sample(grid.n);
      CHECK_NOTHROW(apply_ito_drift(rho, u, a, k, &ck));
    }
  }
}
