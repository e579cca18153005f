#pragma once

// Built-in systems.

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "orbitclose/errors.hpp"
#include "orbitclose/field.hpp"
#include "orbitclose/geometry.hpp"

namespace orbitclose {

struct CatalogEntry {
  std::string name;
  std::string description;
  int dimension = 0;
  std::string source;
  std::map<std::string, double> parameters;  // defaults
  Manifold manifold = Manifold::euclidean(1);
  Vec x0;             // a representative start point
  double period = 0;  // known period through x0, 0 if none

  FieldSpec field(const std::map<std::string, double>& overrides = {}) const {
    auto p = parameters;
    for (const auto& [k, v] : overrides) {
      if (!p.count(k)) throw UnknownSymbol(name + " has no parameter '" + k + "'");
      p[k] = v;
    }
    return parse_field(source, dimension, p, {}, name);
  }
};

inline const std::vector<CatalogEntry>& catalog() {
  static const std::vector<CatalogEntry> entries = [] {
    const double two_pi = 2 * std::numbers::pi;
    std::vector<CatalogEntry> v;
    v.push_back({"rotation2d", "rigid rotation of the plane", 2, "[-y, x]", {}, Manifold::euclidean(2), {1.0, 0.0},
                 two_pi});
    v.push_back({"torus_irrational", "linear flow with irrational slope on the flat torus", 2, "[1, w]",
                 {{"w", std::sqrt(2.0)}}, Manifold::flat_torus({two_pi, two_pi}), {0.0, 0.0}, 0.0});
    v.push_back({"lorenz", "Lorenz system", 3, "[sigma*(y - x), x*(rho - z) - y, x*y - beta*z]",
                 {{"sigma", 10.0}, {"rho", 28.0}, {"beta", 8.0 / 3.0}}, Manifold::euclidean(3), {1.0, 1.0, 20.0},
                 0.0});
    v.push_back({"vanderpol", "van der Pol oscillator", 2, "[y, m*(1 - x^2)*y - x]", {{"m", 1.0}},
                 Manifold::euclidean(2), {2.0, 0.0}, 0.0});
    v.push_back({"pendulum", "undamped pendulum", 2, "[y, -sin(x)]", {}, Manifold::euclidean(2), {0.0, 1.0}, 0.0});
    v.push_back({"limit_cycle_r3", "planar cycle with radial law r' = r - r^3", 2,
                 "[x - y - x*(x^2 + y^2), x + y - y*(x^2 + y^2)]", {}, Manifold::euclidean(2), {1.0, 0.0}, two_pi});
    v.push_back({"linear_skew_mu", "limit_cycle_r3 crossed with a linear contraction of multiplier mu", 3,
                 "[x - y - x*(x^2 + y^2), x + y - y*(x^2 + y^2), log(mu)/(2*pi)*z]", {{"mu", 0.9}},
                 Manifold::euclidean(3), {1.0, 0.0, 0.0}, two_pi});
    return v;
  }();
  return entries;
}

inline const CatalogEntry& catalog_entry(const std::string& name) {
  const auto& c = catalog();
  const auto it = std::find_if(c.begin(), c.end(), [&](const auto& e) { return e.name == name; });
  if (it == c.end()) throw UnknownSymbol("no catalog system named '" + name + "'");
  return *it;
}

}  // namespace orbitclose
