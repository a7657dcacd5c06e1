#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "kinspray/driver_io.hpp"
#include "kinspray/markov_driver.hpp"
#include "kinspray/stats.hpp"

using namespace kinspray;

namespace {

const Grid1D grid{64};

StateField zero_state() { return StateField{}; }

StateField sine_state(double amp) {
  StateField s;
  s.series.sin_coeff = {amp};
  return s;
}

/// Driver whose every row of P equals nu (state resampled independently).
DriverSpec resampling_driver() {
  // nu = (0.5, 0.3, 0.2); states chosen nu-centered from the start.
  Eigen::MatrixXd P(3, 3);
  P << 0.5, 0.3, 0.2, 0.5, 0.3, 0.2, 0.5, 0.3, 0.2;
  StateField a = sine_state(1.0);
  StateField b = sine_state(-1.0);
  StateField c;
  c.series.sin_coeff = {-1.0};  // nu . n = 0.5 - 0.3 - 0.2 = 0
  return build_driver({a, b, c}, P, grid);
}

}  // namespace

TEST_CASE("build_driver validates and computes the stationary law") {
  SECTION("single absorbing state") {
    Eigen::MatrixXd P(1, 1);
    P << 1.0;
    auto d = build_driver({zero_state()}, P, grid);
    CHECK(d.stationary(0) == Catch::Approx(1.0));
    CHECK(d.centered);
  }
  SECTION("two-state symmetric") {
    Eigen::MatrixXd P(2, 2);
    P << 0.7, 0.3, 0.3, 0.7;
    auto d = build_driver({sine_state(1.0), sine_state(-1.0)}, P, grid);
    CHECK(d.stationary(0) == Catch::Approx(0.5).margin(1e-12));
    CHECK(d.stationary(1) == Catch::Approx(0.5).margin(1e-12));
    CHECK(d.centered);
  }
  SECTION("direct linear solve") {
    Eigen::MatrixXd P(2, 2);
    P << 0.9, 0.1, 0.3, 0.7;
    auto d = build_driver({sine_state(1.0), sine_state(-1.0)}, P, grid);
    CHECK(d.stationary(0) == Catch::Approx(0.75).margin(1e-12));
    CHECK(d.stationary(1) == Catch::Approx(0.25).margin(1e-12));
  }
  SECTION("rejects non-stochastic matrices") {
    Eigen::MatrixXd P(2, 2);
    P << 0.9, 0.2, 0.3, 0.7;
    CHECK_THROWS_AS(build_driver({sine_state(1.0), sine_state(-1.0)}, P, grid),
                    NonStochasticMatrix);
    P << 1.1, -0.1, 0.3, 0.7;
    CHECK_THROWS_AS(build_driver({sine_state(1.0), sine_state(-1.0)}, P, grid),
                    NonStochasticMatrix);
  }
  SECTION("rejects reducible and periodic chains") {
    Eigen::MatrixXd P(2, 2);
    P << 1.0, 0.0, 0.0, 1.0;
    CHECK_THROWS_AS(build_driver({sine_state(1.0), sine_state(-1.0)}, P, grid),
                    ReducibleChain);
    P << 0.0, 1.0, 1.0, 0.0;
    CHECK_THROWS_AS(build_driver({sine_state(1.0), sine_state(-1.0)}, P, grid),
                    ReducibleChain);
  }
}

TEST_CASE("center_states") {
  Eigen::MatrixXd P(2, 2);
  P << 0.5, 0.5, 0.5, 0.5;

  SECTION("is idempotent on centered drivers") {
    auto d = build_driver({sine_state(1.0), sine_state(-1.0)}, P, grid);
    auto c = center_states(d);
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t i = 0; i < grid.n; ++i)
        CHECK(c.states[j].values[i] ==
              Catch::Approx(d.states[j].values[i]).margin(1e-15));
  }
  SECTION("identical states collapse to zero") {
    auto d = build_driver({sine_state(1.0), sine_state(1.0)}, P, grid);
    auto c = center_states(d);
    for (std::size_t j = 0; j < 2; ++j)
      CHECK(max_abs(c.states[j].values) < 1e-15);
  }
  SECTION("subtracts the nu-mean field") {
    auto d = build_driver({sine_state(1.0), zero_state()}, P, grid);
    auto c = center_states(d);
    for (std::size_t i = 0; i < grid.n; ++i) {
      const double s = d.states[0].values[i];
      CHECK(c.states[0].values[i] == Catch::Approx(0.5 * s).margin(1e-14));
      CHECK(c.states[1].values[i] == Catch::Approx(-0.5 * s).margin(1e-14));
    }
    CHECK(c.centered);
  }
}

TEST_CASE("transition_semigroup by uniformization") {
  const double p = 0.3;
  auto d = telegraph_driver(0.5, p, grid);

  SECTION("t = 0 is the identity") {
    auto S = transition_semigroup(d, 0.0);
    CHECK(S(0, 0) == 1.0);
    CHECK(S(0, 1) == 0.0);
  }
  SECTION("matches the analytic telegraph semigroup") {
    for (double t : {0.1, 1.0, 7.5}) {
      auto S = transition_semigroup(d, t);
      const double e = std::exp(-2.0 * p * t);
      CHECK(S(0, 0) == Catch::Approx(0.5 * (1.0 + e)).margin(1e-13));
      CHECK(S(0, 1) == Catch::Approx(0.5 * (1.0 - e)).margin(1e-13));
      CHECK(S(1, 0) == Catch::Approx(0.5 * (1.0 - e)).margin(1e-13));
    }
  }
  SECTION("rows converge to nu in the ergodic limit") {
    const double gamma = spectral_gap(d.transition);
    const double t = -std::log(1e-10) / gamma + 1.0;
    auto S = transition_semigroup(d, t);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        CHECK(S(i, j) == Catch::Approx(0.5).margin(1e-10));
  }
  SECTION("is row-stochastic and has the semigroup property") {
    Eigen::MatrixXd P(3, 3);
    P << 0.8, 0.15, 0.05, 0.1, 0.8, 0.1, 0.05, 0.15, 0.8;
    auto d3 = build_driver(
        {sine_state(1.0), sine_state(0.3), sine_state(-0.6)}, P, grid);
    for (auto [t, s] : std::vector<std::pair<double, double>>{
             {0.2, 0.9}, {1.5, 2.5}, {0.05, 10.0}}) {
      auto A = transition_semigroup(d3, t);
      auto B = transition_semigroup(d3, s);
      auto AB = transition_semigroup(d3, t + s);
      CHECK((A * B - AB).cwiseAbs().maxCoeff() < 1e-10);
      for (int i = 0; i < 3; ++i)
        CHECK(A.row(i).sum() == Catch::Approx(1.0).margin(1e-12));
    }
  }
  SECTION("rejects negative or non-finite times") {
    CHECK_THROWS_AS(transition_semigroup(d, -1.0), NonFiniteTime);
    CHECK_THROWS_AS(transition_semigroup(d, std::nan("")), NonFiniteTime);
  }
}

TEST_CASE("sample_path statistics") {
  SECTION("single state never changes") {
    Eigen::MatrixXd P(1, 1);
    P << 1.0;
    auto d = build_driver({zero_state()}, P, grid);
    RngStream rng(7, 0);
    auto traj = sample_path(d, 0, 10.0, rng);
    for (auto s : traj.state_indices) CHECK(s == 0);
    for (std::size_t i = 1; i < traj.jump_times.size(); ++i)
      CHECK(traj.jump_times[i] > traj.jump_times[i - 1]);
  }
  SECTION("jump count is Poisson(T) on average") {
    auto d = telegraph_driver(0.5, 0.5, grid);
    const double T = 5.0;
    const int n = 10000;
    std::vector<double> counts(n);
    for (int r = 0; r < n; ++r) {
      RngStream rng(1234, static_cast<std::uint64_t>(r));
      counts[static_cast<std::size_t>(r)] =
          static_cast<double>(sample_path(d, 0, T, rng).jump_times.size());
    }
    auto st = sample_stats(counts);
    CHECK(std::abs(st.mean - T) < 4.0 * st.std_error());
  }
  SECTION("occupation frequencies converge to nu") {
    Eigen::MatrixXd P(2, 2);
    P << 0.9, 0.1, 0.3, 0.7;
    auto d = build_driver({sine_state(1.0), sine_state(-1.0)}, P, grid);
    const double T = 40.0;
    const int n = 2000;
    std::vector<double> occ0(n);
    for (int r = 0; r < n; ++r) {
      RngStream rng(99, static_cast<std::uint64_t>(r));
      auto traj = sample_path(d, 0, T, rng);
      double t0 = 0.0, prev = 0.0;
      for (std::size_t i = 0; i < traj.jump_times.size(); ++i) {
        if (traj.state_indices[i] == 0) t0 += traj.jump_times[i] - prev;
        prev = traj.jump_times[i];
      }
      if (traj.state_indices.back() == 0) t0 += T - prev;
      occ0[static_cast<std::size_t>(r)] = t0 / T;
    }
    auto st = sample_stats(occ0);
    CHECK(std::abs(st.mean - 0.75) < 4.0 * st.std_error());
  }
}

TEST_CASE("coupled_sample") {
  auto d = telegraph_driver(0.5, 0.5, grid);

  SECTION("single state meets immediately") {
    Eigen::MatrixXd P(1, 1);
    P << 1.0;
    auto d1 = build_driver({zero_state()}, P, grid);
    RngStream rng(5, 1);
    auto cs = coupled_sample(d1, 0, 3.0, rng);
    CHECK(cs.meeting_index == 0);
    CHECK(cs.meeting_time == 0.0);
  }
  SECTION("equal draws at index 0 give tau = 0 and identical paths") {
    int found = 0;
    for (int r = 0; r < 100 && found < 5; ++r) {
      RngStream rng(17, static_cast<std::uint64_t>(r));
      auto cs = coupled_sample(d, 0, 2.0, rng);
      if (cs.meeting_index == 0) {
        ++found;
        REQUIRE(cs.chain.state_indices.size() ==
                cs.companion.state_indices.size());
        for (std::size_t i = 0; i < cs.chain.state_indices.size(); ++i)
          CHECK(cs.chain.state_indices[i] == cs.companion.state_indices[i]);
      }
    }
    CHECK(found == 5);
  }
  SECTION("chains coincide after the meeting index") {
    for (int r = 0; r < 50; ++r) {
      RngStream rng(23, static_cast<std::uint64_t>(r));
      auto cs = coupled_sample(d, 0, 5.0, rng);
      if (!cs.met()) continue;
      for (std::size_t i = cs.meeting_index;
           i < cs.chain.state_indices.size(); ++i)
        CHECK(cs.chain.state_indices[i] == cs.companion.state_indices[i]);
    }
  }
  SECTION("coupling preserves the marginal law of the chain") {
    // Occupation frequency of state 0 at a fixed time, coupled chain vs
    // directly sampled chain, within 4 pooled standard errors.
    Eigen::MatrixXd P(2, 2);
    P << 0.9, 0.1, 0.3, 0.7;
    auto d2 = build_driver({sine_state(1.0), sine_state(-1.0)}, P, grid);
    const double t = 1.5, T = 2.0;
    const int n = 10000;
    std::vector<double> a(n), b(n);
    for (int r = 0; r < n; ++r) {
      RngStream rng_a(311, static_cast<std::uint64_t>(r));
      RngStream rng_b(787, static_cast<std::uint64_t>(r));
      a[static_cast<std::size_t>(r)] =
          coupled_sample(d2, 0, T, rng_a).chain.state_at(t) == 0 ? 1.0 : 0.0;
      b[static_cast<std::size_t>(r)] =
          sample_path(d2, 0, T, rng_b).state_at(t) == 0 ? 1.0 : 0.0;
    }
    auto sa = sample_stats(a), sb = sample_stats(b);
    CHECK(std::abs(sa.mean - sb.mean) <
          4.0 * pooled_std_error(sa.std_error(), sb.std_error()));
  }
}

TEST_CASE("correlation_table") {
  SECTION("zero states give a vanishing table") {
    Eigen::MatrixXd P(2, 2);
    P << 0.5, 0.5, 0.5, 0.5;
    auto d = build_driver({zero_state(), zero_state()}, P, grid);
    auto tab = correlation_table(d, {0.0, 0.5, 1.0});
    for (const auto& block : tab.values)
      for (double v : block) CHECK(v == 0.0);
  }
  SECTION("t = 0 reproduces the direct evaluation exactly") {
    auto d = telegraph_driver(0.4, 0.3, grid);
    auto tab = correlation_table(d, {0.0, 1.0});
    for (std::size_t ix = 0; ix < grid.n; ++ix)
      for (std::size_t iy = 0; iy < grid.n; ++iy) {
        double direct = 0.0;
        for (std::size_t j = 0; j < 2; ++j)
          direct += d.stationary(static_cast<Eigen::Index>(j)) *
                    d.states[j].values[ix] * d.states[j].values[iy];
        CHECK(tab.value(0, ix, iy) == direct);
      }
  }
  SECTION("telegraph correlation decays as c^2 sin sin e^{-2pt}") {
    const double c = 0.5, p = 0.3;
    auto d = telegraph_driver(c, p, grid);
    auto tab = correlation_table(d, {0.0, 0.7, 2.0});
    for (std::size_t q = 0; q < tab.times.size(); ++q) {
      const double decay = std::exp(-2.0 * p * tab.times[q]);
      for (std::size_t ix = 0; ix < grid.n; ix += 7)
        for (std::size_t iy = 0; iy < grid.n; iy += 7) {
          const double expect = c * c * decay *
                                std::sin(two_pi * grid.x(ix)) *
                                std::sin(two_pi * grid.x(iy));
          CHECK(tab.value(q, ix, iy) == Catch::Approx(expect).margin(1e-12));
        }
    }
  }
  SECTION("decay bound |C| <= C0 e^{-gamma t} holds on the nodes") {
    auto d = telegraph_driver(0.5, 0.3, grid);
    auto tab = correlation_table(d, {0.0, 0.5, 1.0, 2.0, 4.0});
    for (std::size_t q = 0; q < tab.times.size(); ++q) {
      const double bound =
          tab.c0 * std::exp(-tab.decay_rate * tab.times[q]) + 1e-12;
      for (double v : tab.values[q]) CHECK(std::abs(v) <= bound);
    }
  }
  SECTION("requires a centered driver") {
    Eigen::MatrixXd P(2, 2);
    P << 0.5, 0.5, 0.5, 0.5;
    auto d = build_driver({sine_state(1.0), zero_state()}, P, grid);
    CHECK_THROWS_AS(correlation_table(d, {0.0, 1.0}), NotCentered);
  }
  SECTION("semigroup correlations match Monte Carlo over stationary pairs") {
    const double c = 0.5, p = 0.5, t = 0.8;
    auto d = telegraph_driver(c, p, grid);
    const std::size_t ix = 5, iy = 20;
    const int n = 10000;
    std::vector<double> prod(n);
    for (int r = 0; r < n; ++r) {
      RngStream rng(4242, static_cast<std::uint64_t>(r));
      const std::size_t j0 = draw_from_law(d.stationary, rng.uniform());
      auto traj = sample_path(d, j0, t + 1e-9, rng);
      const std::size_t jt = traj.state_at(t);
      prod[static_cast<std::size_t>(r)] =
          d.states[j0].values[ix] * d.states[jt].values[iy];
    }
    auto st = sample_stats(prod);
    auto tab = correlation_table(d, {0.0, t});
    CHECK(std::abs(st.mean - tab.value(1, ix, iy)) < 4.0 * st.std_error());
  }
}

TEST_CASE("minv_I solves the driver Poisson system") {
  SECTION("resampling chain gives Psi = -n") {
    auto d = resampling_driver();
    REQUIRE(d.centered);
    auto sol = minv_I(d);
    for (std::size_t j = 0; j < d.num_states(); ++j)
      for (std::size_t i = 0; i < grid.n; ++i)
        CHECK(sol.psi[j][i] ==
              Catch::Approx(-d.states[j].values[i]).margin(1e-12));
  }
  SECTION("zero states give Psi = 0") {
    Eigen::MatrixXd P(2, 2);
    P << 0.5, 0.5, 0.5, 0.5;
    auto d = build_driver({zero_state(), zero_state()}, P, grid);
    auto sol = minv_I(d);
    for (const auto& f : sol.psi) CHECK(max_abs(f) == 0.0);
  }
  SECTION("telegraph solution is -n/(2p) on the first state") {
    const double c = 0.5, p = 0.3;
    auto d = telegraph_driver(c, p, grid);
    auto sol = minv_I(d);
    for (std::size_t i = 0; i < grid.n; ++i) {
      CHECK(sol.psi[0][i] ==
            Catch::Approx(-d.states[0].values[i] / (2.0 * p)).margin(1e-12));
      CHECK(sol.psi[1][i] ==
            Catch::Approx(-d.states[1].values[i] / (2.0 * p)).margin(1e-12));
    }
  }
  SECTION("plugging Psi back reproduces the states pointwise") {
    Eigen::MatrixXd P(3, 3);
    P << 0.8, 0.15, 0.05, 0.1, 0.8, 0.1, 0.05, 0.15, 0.8;
    auto d = center_states(build_driver(
        {sine_state(1.0), sine_state(0.3), sine_state(-0.6)}, P, grid));
    auto sol = minv_I(d);
    const auto J = static_cast<Eigen::Index>(d.num_states());
    for (std::size_t i = 0; i < grid.n; ++i) {
      Eigen::VectorXd psi(J), n(J);
      for (Eigen::Index j = 0; j < J; ++j) {
        psi(j) = sol.psi[static_cast<std::size_t>(j)][i];
        n(j) = d.states[static_cast<std::size_t>(j)].values[i];
      }
      Eigen::VectorXd resid =
          d.transition * psi - psi - n;
      CHECK(resid.cwiseAbs().maxCoeff() < 1e-10);
      // nu-centered normalization.
      CHECK(std::abs(d.stationary.dot(psi)) < 1e-10);
    }
  }
  SECTION("requires a centered driver") {
    Eigen::MatrixXd P(2, 2);
    P << 0.5, 0.5, 0.5, 0.5;
    auto d = build_driver({sine_state(1.0), zero_state()}, P, grid);
    CHECK_THROWS_AS(minv_I(d), NotCentered);
  }
}

TEST_CASE("coupling distance is nonincreasing and integrable") {
  auto d = telegraph_driver(0.5, 0.5, grid);
  const double T = 16.0;
  const int n = 4000;
  std::vector<double> probes;
  for (double t = 0.0; t <= T; t += 0.5) probes.push_back(t);
  std::vector<double> diff(probes.size(), 0.0);
  for (int r = 0; r < n; ++r) {
    RngStream rng(606, static_cast<std::uint64_t>(r));
    auto cs = coupled_sample(d, 0, T, rng);
    for (std::size_t q = 0; q < probes.size(); ++q) {
      const bool neq =
          cs.chain.state_at(probes[q]) != cs.companion.state_at(probes[q]);
      diff[q] += neq ? 1.0 / n : 0.0;
    }
  }
  // Nonincreasing up to Monte Carlo noise (4 sigma of a Bernoulli mean).
  for (std::size_t q = 1; q < probes.size(); ++q)
    CHECK(diff[q] <= diff[q - 1] + 4.0 / std::sqrt(static_cast<double>(n)));
  // Trapezoid integral stable under horizon doubling: [0, T/2] vs [0, T].
  double half = 0.0, full = 0.0;
  for (std::size_t q = 1; q < probes.size(); ++q) {
    const double inc =
        0.5 * (diff[q] + diff[q - 1]) * (probes[q] - probes[q - 1]);
    full += inc;
    if (probes[q] <= T / 2.0) half += inc;
  }
  CHECK(full - half < 0.05 * full + 1e-3);
}
