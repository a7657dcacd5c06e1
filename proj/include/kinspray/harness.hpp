#pragma once

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "kinspray/auxiliary.hpp"
#include "kinspray/coefficients.hpp"
#include "kinspray/driver_io.hpp"
#include "kinspray/errors.hpp"
#include "kinspray/kinetic.hpp"
#include "kinspray/spde.hpp"
#include "kinspray/stats.hpp"

namespace kinspray {

// ---------------------------------------------------------------------------
// Observables
// ---------------------------------------------------------------------------

/// Low Fourier modes: the weak-convergence currency of the whole harness.
struct ObservableSet {
  std::vector<std::string> names;
  std::vector<Field1D> fields;

  static ObservableSet default_set(std::size_t nx) {
    ObservableSet o;
    auto add = [&](const std::string& name, auto fn) {
      Field1D f(nx);
      for (std::size_t i = 0; i < nx; ++i)
        f[i] = fn(static_cast<double>(i) / static_cast<double>(nx));
      o.names.push_back(name);
      o.fields.push_back(std::move(f));
    };
    add("sin_2pi_x", [](double x) { return std::sin(two_pi * x); });
    add("cos_2pi_x", [](double x) { return std::cos(two_pi * x); });
    add("cos_4pi_x", [](double x) { return std::cos(2.0 * two_pi * x); });
    return o;
  }
};

inline std::size_t worker_count() {
  if (const char* env = std::getenv("KINSPRAY_WORKERS")) {
    const long n = std::atol(env);
    if (n > 0) return static_cast<std::size_t>(n);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? hw : 1;
}

/// Static-partition parallel for: run r is processed by worker r % W, so
/// results never depend on scheduling.
template <typename Fn>
void parallel_runs(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min(worker_count(), std::max<std::size_t>(n, 1));
  if (workers <= 1) {
    for (std::size_t r = 0; r < n; ++r) fn(r);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<bool> failed{false};
  std::vector<std::string> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      try {
        for (std::size_t r = w; r < n; r += workers) fn(r);
      } catch (const std::exception& e) {
        errors[w] = e.what();
        failed = true;
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failed) {
    std::string what;
    for (const auto& e : errors)
      if (!e.empty()) what = e;
    throw Error("ensemble worker failed: " + what);
  }
}

// ---------------------------------------------------------------------------
// Run setup: everything derived from one config file
// ---------------------------------------------------------------------------

struct RunSetup {
  nlohmann::json config;       // canonical copy
  DriverSpec driver;
  KineticConfig kinetic;
  SpdeConfig spde;
  LimitCoefficients coeffs;    // a, kernel, basis, cross kernels
  ObservableSet observables;
  double quadrature_t_cut = 0.0;
  std::uint64_t seed = 0;
  std::size_t runs = 2;
};

namespace detail {

inline FourierSeries series_from_json(const nlohmann::json& j) {
  FourierSeries s;
  if (j.is_null()) return s;
  s.a0 = j.value("a0", 0.0);
  if (j.contains("cos")) s.cos_coeff = j.at("cos").get<std::vector<double>>();
  if (j.contains("sin")) s.sin_coeff = j.at("sin").get<std::vector<double>>();
  return s;
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace detail

/// Digest of the canonical (key-sorted) config dump; stable under key
/// reordering in the source file.
inline std::string config_digest(const nlohmann::json& j) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(detail::fnv1a(j.dump())));
  return buf;
}

/// Build the full pipeline from a run config. Keys:
///   epsilon, N_x, N_v, V_max, dt_max, horizon, output_times,
///   f0: {rho0: {a0, cos, sin}, sigma_v, v_center}, u0: {a0, cos, sin},
///   driver: inline object or {"file": path}, seed, runs,
///   spde: {dt, energy_tol}.
inline RunSetup make_setup(const nlohmann::json& cfg) {
  RunSetup s;
  s.config = cfg;
  KineticConfig& k = s.kinetic;
  k.epsilon = cfg.value("epsilon", 0.1);
  k.nx = cfg.value("N_x", std::size_t{64});
  k.nv = cfg.value("N_v", std::size_t{64});
  k.v_max = cfg.value("V_max", 0.0);
  k.dt_max = cfg.value("dt_max", 1e-3);
  k.horizon = cfg.value("horizon", 0.5);
  if (cfg.contains("output_times"))
    k.output_times = cfg.at("output_times").get<std::vector<double>>();
  if (cfg.contains("f0")) {
    const auto& f0 = cfg.at("f0");
    if (f0.contains("rho0")) k.rho0 = detail::series_from_json(f0.at("rho0"));
    k.sigma_v = f0.value("sigma_v", 0.5);
    k.v_center = f0.value("v_center", 0.0);
  }
  if (k.rho0.a0 == 0.0 && k.rho0.cos_coeff.empty() && k.rho0.sin_coeff.empty())
    k.rho0.a0 = 1.0;
  if (cfg.contains("u0")) k.u0 = detail::series_from_json(cfg.at("u0"));

  const Grid1D grid{k.nx};
  if (!cfg.contains("driver"))
    throw ConfigError("run config needs a 'driver' entry");
  const auto& jd = cfg.at("driver");
  s.driver = jd.contains("file") ? load_driver(jd.at("file").get<std::string>(), grid)
                                 : driver_from_json(jd, grid);
  if (!s.driver.centered) s.driver = center_states(s.driver);

  s.seed = cfg.value("seed", std::uint64_t{12345});
  s.runs = cfg.value("runs", std::size_t{2});

  // Coefficient pipeline (skipped for drivers with no noise at all).
  auto quad = build_time_quadrature(s.driver);
  s.quadrature_t_cut = quad.t_cut;
  auto table = correlation_table(s.driver, quad.times, /*store_dense=*/false);
  table.weights = quad.weights;
  s.coeffs.kernel = kernel_k(table);
  s.coeffs.a = drift_a(s.driver, table);
  const auto psi = minv_I(s.driver);
  s.coeffs.cross = cross_kernels(s.driver, table, psi);
  double energy_tol = 1e-10;
  if (cfg.contains("spde")) energy_tol = cfg.at("spde").value("energy_tol", 1e-10);
  s.coeffs.basis = noise_basis(s.coeffs.kernel, energy_tol);

  s.spde.nx = k.nx;
  s.spde.horizon = k.horizon;
  s.spde.output_times = k.output_times;
  s.spde.rho0 = k.rho0;
  s.spde.u0 = k.u0;
  const double bound = spde_stability_bound(s.coeffs.basis, s.spde.nx);
  s.spde.dt = std::min(1e-4, 0.9 * bound);
  if (cfg.contains("spde")) {
    const auto& js = cfg.at("spde");
    if (js.contains("dt")) s.spde.dt = js.at("dt").get<double>();
  }

  s.observables = ObservableSet::default_set(k.nx);
  return s;
}

inline RunSetup load_setup(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  nlohmann::json j;
  in >> j;
  return make_setup(j);
}

// ---------------------------------------------------------------------------
// Ensembles
// ---------------------------------------------------------------------------

struct EnsembleSummary {
  std::string model;  // "kinetic" or "spde"
  double epsilon = 0.0;
  double horizon = 0.0;
  std::vector<std::string> observables;
  std::vector<SampleStats> stats;  // of <rho_T, xi_j>, per observable
  std::size_t runs = 0;
  std::uint64_t master_seed = 0;
  std::string digest;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["model"] = model;
    j["epsilon"] = epsilon;
    j["horizon"] = horizon;
    j["runs"] = runs;
    j["master_seed"] = master_seed;
    j["config_digest"] = digest;
    nlohmann::json obs = nlohmann::json::array();
    for (std::size_t i = 0; i < observables.size(); ++i) {
      obs.push_back({{"name", observables[i]},
                     {"mean", stats[i].mean},
                     {"variance", stats[i].variance},
                     {"std_error", stats[i].std_error()},
                     {"variance_std_error", stats[i].variance_std_error()}});
    }
    j["observables"] = obs;
    return j;
  }

  static EnsembleSummary from_json(const nlohmann::json& j) {
    EnsembleSummary s;
    s.model = j.at("model").get<std::string>();
    s.epsilon = j.at("epsilon").get<double>();
    s.horizon = j.at("horizon").get<double>();
    s.runs = j.at("runs").get<std::size_t>();
    s.master_seed = j.at("master_seed").get<std::uint64_t>();
    s.digest = j.value("config_digest", "");
    for (const auto& v : j.at("observables")) {
      s.observables.push_back(v.at("name").get<std::string>());
      SampleStats st;
      st.n = s.runs;
      st.mean = v.at("mean").get<double>();
      st.variance = v.at("variance").get<double>();
      s.stats.push_back(st);
    }
    return s;
  }
};

/// Summary plus raw per-run values (for merging and diagnostics) and the
/// recorded trajectories when requested (for defect estimators).
struct EnsembleData {
  EnsembleSummary summary;
  std::vector<std::vector<double>> values;  // [observable][run]
  std::vector<RecordedRun> recorded;
};

enum class Model { kinetic, spde };

inline const char* model_name(Model m) {
  return m == Model::kinetic ? "kinetic" : "spde";
}

inline EnsembleData run_ensemble(const RunSetup& setup, Model model,
                                 std::size_t n_runs,
                                 std::uint64_t master_seed,
                                 bool record_full = false) {
  if (n_runs < 2) throw ConfigError("ensemble needs at least 2 runs");
  const std::size_t n_obs = setup.observables.fields.size();
  EnsembleData out;
  out.values.assign(n_obs, std::vector<double>(n_runs, 0.0));
  if (record_full) out.recorded.resize(n_runs);

  parallel_runs(n_runs, [&](std::size_t r) {
    std::vector<double> tail_obs(n_obs);
    if (model == Model::kinetic) {
      auto res = simulate_kinetic(setup.kinetic, setup.driver, master_seed,
                                  static_cast<std::uint64_t>(r));
      for (std::size_t o = 0; o < n_obs; ++o)
        out.values[o][r] = inner(res.rho.back(), setup.observables.fields[o]);
      if (record_full)
        out.recorded[r] = RecordedRun{res.times, res.rho, res.u};
    } else {
      auto res = simulate_spde(setup.spde, setup.coeffs.a, setup.coeffs.basis,
                               master_seed, static_cast<std::uint64_t>(r));
      for (std::size_t o = 0; o < n_obs; ++o)
        out.values[o][r] = inner(res.rho.back(), setup.observables.fields[o]);
      if (record_full)
        out.recorded[r] = RecordedRun{res.times, res.rho, res.u};
    }
  });

  out.summary.model = model_name(model);
  out.summary.epsilon = model == Model::kinetic ? setup.kinetic.epsilon : 0.0;
  out.summary.horizon = setup.kinetic.horizon;
  out.summary.observables = setup.observables.names;
  for (std::size_t o = 0; o < n_obs; ++o)
    out.summary.stats.push_back(sample_stats(out.values[o]));
  out.summary.runs = n_runs;
  out.summary.master_seed = master_seed;
  out.summary.digest = config_digest(setup.config);
  return out;
}

// ---------------------------------------------------------------------------
// Law comparison
// ---------------------------------------------------------------------------

struct CompareTolerances {
  double mean_sigmas = 3.0;
  double var_sigmas = 3.0;
};

struct ObservableComparison {
  std::string name;
  std::vector<double> epsilons;
  std::vector<double> mean_diff;      // |mean_kin(eps) - mean_spde|
  std::vector<double> mean_pooled_se;
  std::vector<double> var_diff;
  std::vector<double> var_pooled_se;
  double mean_trend_slope = 0.0;      // of mean_diff against eps
  double var_trend_slope = 0.0;
  bool pass = false;
};

struct ComparisonReport {
  std::vector<ObservableComparison> observables;
  CompareTolerances tolerances;
  bool pass = false;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["pass"] = pass;
    j["tolerances"] = {{"mean_sigmas", tolerances.mean_sigmas},
                       {"var_sigmas", tolerances.var_sigmas}};
    nlohmann::json obs = nlohmann::json::array();
    for (const auto& o : observables) {
      nlohmann::json e;
      e["name"] = o.name;
      e["epsilons"] = o.epsilons;
      e["mean_diff"] = o.mean_diff;
      e["mean_pooled_se"] = o.mean_pooled_se;
      e["var_diff"] = o.var_diff;
      e["var_pooled_se"] = o.var_pooled_se;
      e["mean_trend_slope"] = o.mean_trend_slope;
      e["var_trend_slope"] = o.var_trend_slope;
      e["pass"] = o.pass;
      obs.push_back(e);
    }
    j["observables"] = obs;
    return j;
  }
};

/// PASS per observable: the smallest-eps discrepancy of both the mean and
/// the variance sits within the tolerance times its pooled standard error,
/// and the eps-trend of the discrepancy is decreasing toward eps -> 0
/// (nonnegative least-squares slope in eps, or every discrepancy already at
/// noise level, in which case no trend is resolvable).
inline ComparisonReport compare_laws(
    const std::vector<EnsembleSummary>& kinetic_summaries,
    const EnsembleSummary& spde_summary,
    const CompareTolerances& tol = CompareTolerances{}) {
  if (kinetic_summaries.empty())
    throw ObservableMismatch("no kinetic summaries supplied");
  for (const auto& k : kinetic_summaries) {
    if (k.observables != spde_summary.observables)
      throw ObservableMismatch("observable dictionaries differ");
    if (std::abs(k.horizon - spde_summary.horizon) > 1e-12)
      throw ObservableMismatch("horizons differ");
  }
  // Sort by eps descending so "toward eps -> 0" reads left to right.
  std::vector<const EnsembleSummary*> kin;
  for (const auto& k : kinetic_summaries) kin.push_back(&k);
  std::sort(kin.begin(), kin.end(), [](auto* a, auto* b) {
    return a->epsilon > b->epsilon;
  });

  ComparisonReport rep;
  rep.tolerances = tol;
  rep.pass = true;
  for (std::size_t o = 0; o < spde_summary.observables.size(); ++o) {
    ObservableComparison oc;
    oc.name = spde_summary.observables[o];
    const auto& sp = spde_summary.stats[o];
    for (const auto* k : kin) {
      const auto& ks = k->stats[o];
      oc.epsilons.push_back(k->epsilon);
      oc.mean_diff.push_back(std::abs(ks.mean - sp.mean));
      oc.mean_pooled_se.push_back(
          pooled_std_error(ks.std_error(), sp.std_error()));
      oc.var_diff.push_back(std::abs(ks.variance - sp.variance));
      oc.var_pooled_se.push_back(pooled_std_error(ks.variance_std_error(),
                                                  sp.variance_std_error()));
    }
    oc.mean_trend_slope = ls_slope(oc.epsilons, oc.mean_diff);
    oc.var_trend_slope = ls_slope(oc.epsilons, oc.var_diff);

    // Numerical floor so observables that are deterministic by symmetry
    // (variance at round-off level) compare as equal rather than by noise.
    const double mean_scale =
        1e-10 * (1.0 + std::abs(sp.mean) + std::sqrt(std::max(sp.variance, 0.0)));
    const double var_scale = 1e-10 * (1.0 + sp.variance);
    auto floored = [](std::vector<double>& se, double floor) {
      for (auto& v : se) v = std::max(v, floor);
    };
    floored(oc.mean_pooled_se, mean_scale);
    floored(oc.var_pooled_se, var_scale);

    // Standard error of the LS slope from the per-point standard errors;
    // the trend requirement only bites when a negative (growing toward
    // eps -> 0) trend is statistically resolvable.
    auto slope_se = [&](const std::vector<double>& se) {
      const double n = static_cast<double>(oc.epsilons.size());
      double me = 0.0;
      for (double e : oc.epsilons) me += e;
      me /= n;
      double sxx = 0.0;
      for (double e : oc.epsilons) sxx += (e - me) * (e - me);
      double s2 = 0.0;
      for (std::size_t i = 0; i < se.size(); ++i) {
        const double c = (oc.epsilons[i] - me) / sxx;
        s2 += c * c * se[i] * se[i];
      }
      return std::sqrt(s2);
    };

    const std::size_t last = oc.epsilons.size() - 1;
    const bool small_ok =
        oc.mean_diff[last] <= tol.mean_sigmas * oc.mean_pooled_se[last] &&
        oc.var_diff[last] <= tol.var_sigmas * oc.var_pooled_se[last];
    const bool trend_ok =
        oc.mean_trend_slope >= -2.0 * slope_se(oc.mean_pooled_se) &&
        oc.var_trend_slope >= -2.0 * slope_se(oc.var_pooled_se);
    oc.pass = small_ok && (oc.epsilons.size() < 2 || trend_ok);
    rep.pass = rep.pass && oc.pass;
    rep.observables.push_back(std::move(oc));
  }
  return rep;
}

}  // namespace kinspray
