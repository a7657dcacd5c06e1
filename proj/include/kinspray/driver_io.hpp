#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kinspray/errors.hpp"
#include "kinspray/markov_driver.hpp"

namespace kinspray {

/// Two-state symmetric driver with states +-c sin(2 pi mode x) and per-jump
/// switch probability p; every coefficient of this preset has a closed form.
inline DriverSpec telegraph_driver(double c, double p, const Grid1D& grid,
                                   int mode = 1) {
  if (!(p > 0.0 && p < 1.0)) throw ConfigError("telegraph needs p in (0,1)");
  StateField up, down;
  up.series.sin_coeff.assign(static_cast<std::size_t>(mode), 0.0);
  up.series.sin_coeff.back() = c;
  down.series.sin_coeff.assign(static_cast<std::size_t>(mode), 0.0);
  down.series.sin_coeff.back() = -c;
  Eigen::MatrixXd P(2, 2);
  P << 1.0 - p, p, p, 1.0 - p;
  DriverSpec d = build_driver({up, down}, P, grid);
  d.reversible_flag = true;
  return d;
}

/// Driver definition file: JSON with either a "telegraph" {c, p, mode?}
/// shorthand or explicit {"states": [{a0?, cos?, sin?}...], "P": [[...]...]}.
inline DriverSpec driver_from_json(const nlohmann::json& j,
                                   const Grid1D& grid) {
  if (j.contains("telegraph")) {
    const auto& t = j.at("telegraph");
    DriverSpec d = telegraph_driver(t.at("c").get<double>(),
                                    t.at("p").get<double>(), grid,
                                    t.value("mode", 1));
    if (j.contains("reversible"))
      d.reversible_flag = j.at("reversible").get<bool>();
    return d;
  }
  if (!j.contains("states") || !j.contains("P"))
    throw ConfigError("driver file needs 'states' and 'P' (or 'telegraph')");
  std::vector<StateField> states;
  for (const auto& js : j.at("states")) {
    StateField s;
    s.series.a0 = js.value("a0", 0.0);
    if (js.contains("cos"))
      s.series.cos_coeff = js.at("cos").get<std::vector<double>>();
    if (js.contains("sin"))
      s.series.sin_coeff = js.at("sin").get<std::vector<double>>();
    states.push_back(std::move(s));
  }
  const auto& jp = j.at("P");
  const auto J = static_cast<Eigen::Index>(states.size());
  if (static_cast<Eigen::Index>(jp.size()) != J)
    throw ConfigError("'P' row count does not match state count");
  Eigen::MatrixXd P(J, J);
  for (Eigen::Index r = 0; r < J; ++r) {
    const auto row = jp[static_cast<std::size_t>(r)].get<std::vector<double>>();
    if (static_cast<Eigen::Index>(row.size()) != J)
      throw ConfigError("'P' is not square");
    for (Eigen::Index c = 0; c < J; ++c)
      P(r, c) = row[static_cast<std::size_t>(c)];
  }
  DriverSpec d = build_driver(std::move(states), P, grid);
  d.reversible_flag = j.value("reversible", false);
  return d;
}

inline DriverSpec load_driver(const std::string& path, const Grid1D& grid) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open driver file: " + path);
  nlohmann::json j;
  in >> j;
  return driver_from_json(j, grid);
}

}  // namespace kinspray
