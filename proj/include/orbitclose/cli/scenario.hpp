#pragma once

// Scenario files: INI-style key-value tree read with Boost.PropertyTree.
//
//   schema = 1
//   name = rotation_close
//   pipeline = verify
//   [field]
//   system = rotation2d
//   [orbit]
//   x0 = 1, 0
//   return_time = 6.2830853
//
// Comments are whole lines starting with '#' or ';'. Lists are comma
// separated. Every key is checked against the table below before any
// computation starts.

#include <cstdint>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "orbitclose/catalog.hpp"
#include "orbitclose/errors.hpp"
#include "orbitclose/field.hpp"
#include "orbitclose/geometry.hpp"

namespace orbitclose::cli {

inline const std::vector<std::string>& pipelines() {
  static const std::vector<std::string> p{"close",       "perturb",  "verify",  "monodromy",
                                          "adjust",      "homoclinic", "gronwall", "returns"};
  return p;
}

struct Scenario {
  std::string path;
  std::string text;  // raw file contents
  std::string name;
  std::string pipeline;
  std::uint64_t seed = 0;

  // manifold
  std::string manifold_kind = "euclidean";
  Vec periods;
  double radius = 1.0;

  // field
  std::string system;
  std::string source;
  int dimension = 0;
  std::map<std::string, double> params;

  // orbit
  Vec x0;
  double transient = 0.0;
  std::optional<double> period, return_time, alpha_max;
  Vec section_normal;
  double horizon = 0.0, t_min = 0.0, t_max = 0.0;  // t_max 0 = horizon
  bool refine = false;
  int r = 2;
  double window = 0.0;

  // perturb
  std::string mode = "autonomous";
  double epsilon = 0.0;  // 0 = auto
  double amplitude = 1.0;
  int samples = 2000;
  int support_samples = 2000;
  double tau = 1.2;
  double homoclinic_horizon = 50.0;

  // monodromy / adjust
  double center_tol = 1e-3;
  std::optional<double> delta_req;
  std::optional<bool> expect_hyperbolic;
  std::optional<double> expect_multiplier;
  double delta_win = 0.5;

  // gronwall
  int pairs = 10;
  double offset = 1e-6;
  double gronwall_horizon = 3.0;

  // assertion tolerances; `tol` replaces the pipeline's primary one
  std::map<std::string, double> tolerances;
  std::optional<double> tol;

  int csv_samples = 1000;

  double tolerance(const std::string& key, double fallback) const {
    auto it = tolerances.find(key);
    return it == tolerances.end() ? fallback : it->second;
  }

  Manifold manifold() const {
    if (manifold_kind == "euclidean") return Manifold::euclidean(dimension);
    if (manifold_kind == "flat_torus") {
      if (static_cast<int>(periods.size()) != dimension) throw SchemaError("manifold.periods needs one entry per coordinate");
      return Manifold::flat_torus(periods);
    }
    if (manifold_kind == "sphere2") return Manifold::sphere2(radius);
    throw SchemaError("unknown manifold kind '" + manifold_kind + "'");
  }

  FieldSpec field() const {
    if (!system.empty()) return catalog_entry(system).field(params);
    return parse_field(source, dimension, params, {}, name);
  }
};

namespace detail {

inline std::string unquote(std::string s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
  return s;
}

inline double to_number(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    throw SchemaError(key + ": expected a number, got '" + v + "'");
  }
  if (used != v.size()) throw SchemaError(key + ": expected a number, got '" + v + "'");
  return x;
}

inline Vec to_list(const std::string& key, const std::string& v) {
  Vec out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto a = item.find_first_not_of(" \t");
    const auto b = item.find_last_not_of(" \t");
    if (a == std::string::npos) throw SchemaError(key + ": empty list entry");
    out.push_back(to_number(key, item.substr(a, b - a + 1)));
  }
  return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw SchemaError(key + ": expected true or false, got '" + v + "'");
}

}  // namespace detail

inline Scenario parse_scenario(const std::string& text, const std::string& path = {}) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  {
    std::istringstream in(text);
    try {
      pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
      throw SchemaError(e.message() + " at line " + std::to_string(e.line()));
    }
  }
  Scenario s;
  s.path = path;
  s.text = text;

  using Handler = std::function<void(const std::string& key, const std::string& value)>;
  auto num = [](double& dst) { return Handler([&dst](auto& k, auto& v) { dst = detail::to_number(k, v); }); };
  auto opt = [](std::optional<double>& dst) {
    return Handler([&dst](auto& k, auto& v) { dst = detail::to_number(k, v); });
  };
  auto integer = [](int& dst) {
    return Handler([&dst](auto& k, auto& v) {
      const double x = detail::to_number(k, v);
      if (x != std::floor(x)) throw SchemaError(k + ": expected an integer");
      dst = static_cast<int>(x);
    });
  };
  auto str = [](std::string& dst) { return Handler([&dst](auto&, auto& v) { dst = detail::unquote(v); }); };
  auto list = [](Vec& dst) { return Handler([&dst](auto& k, auto& v) { dst = detail::to_list(k, v); }); };
  auto flag = [](bool& dst) { return Handler([&dst](auto& k, auto& v) { dst = detail::to_bool(k, v); }); };

  int schema = 0;
  std::optional<bool> expect_hyp;
  const std::map<std::string, std::map<std::string, Handler>> table{
      {"",
       {{"schema", integer(schema)},
        {"name", str(s.name)},
        {"pipeline", str(s.pipeline)},
        {"description", Handler([](auto&, auto&) {})},
        {"seed", Handler([&s](auto& k, auto& v) {
           const double x = detail::to_number(k, v);
           if (x < 0 || x != std::floor(x)) throw SchemaError("seed must be a non-negative integer");
           s.seed = static_cast<std::uint64_t>(x);
         })}}},
      {"manifold", {{"kind", str(s.manifold_kind)}, {"periods", list(s.periods)}, {"radius", num(s.radius)}}},
      {"field", {{"system", str(s.system)}, {"source", str(s.source)}, {"dimension", integer(s.dimension)}}},
      {"orbit",
       {{"x0", list(s.x0)},
        {"transient", num(s.transient)},
        {"period", opt(s.period)},
        {"return_time", opt(s.return_time)},
        {"alpha_max", opt(s.alpha_max)},
        {"section_normal", list(s.section_normal)},
        {"horizon", num(s.horizon)},
        {"t_min", num(s.t_min)},
        {"t_max", num(s.t_max)},
        {"refine", flag(s.refine)},
        {"r", integer(s.r)},
        {"window", num(s.window)}}},
      {"perturb",
       {{"mode", str(s.mode)},
        {"epsilon", Handler([&s](auto& k, auto& v) { s.epsilon = v == "auto" ? 0.0 : detail::to_number(k, v); })},
        {"amplitude", num(s.amplitude)},
        {"samples", integer(s.samples)},
        {"support_samples", integer(s.support_samples)},
        {"tau", num(s.tau)},
        {"horizon", num(s.homoclinic_horizon)}}},
      {"monodromy",
       {{"center_tol", num(s.center_tol)},
        {"delta_req", opt(s.delta_req)},
        {"expect_hyperbolic", Handler([&expect_hyp](auto& k, auto& v) { expect_hyp = detail::to_bool(k, v); })},
        {"expect_multiplier", opt(s.expect_multiplier)},
        {"delta_win", num(s.delta_win)}}},
      {"gronwall", {{"pairs", integer(s.pairs)}, {"offset", num(s.offset)}, {"horizon", num(s.gronwall_horizon)}}},
      {"output", {{"csv_samples", integer(s.csv_samples)}}},
  };
  static const std::set<std::string> assert_keys{"tol",          "endpoint", "closure",  "multiplier",
                                                 "return_error", "distance", "gronwall", "support"};

  for (const auto& [section, node] : tree) {
    if (node.empty()) {
      // top-level key
      const auto& keys = table.at("");
      auto it = keys.find(section);
      if (it == keys.end()) throw SchemaError("unknown key '" + section + "'");
      it->second(section, node.data());
      continue;
    }
    if (section == "params") {
      for (const auto& [k, v] : node) s.params[k] = detail::to_number("params." + k, v.data());
      continue;
    }
    if (section == "assert") {
      for (const auto& [k, v] : node) {
        if (!assert_keys.count(k)) throw SchemaError("unknown key 'assert." + k + "'");
        const double x = detail::to_number("assert." + k, v.data());
        if (k == "tol") s.tol = x;
        else s.tolerances[k] = x;
      }
      continue;
    }
    auto sec = table.find(section);
    if (sec == table.end() || section.empty()) throw SchemaError("unknown section '[" + section + "]'");
    for (const auto& [k, v] : node) {
      auto it = sec->second.find(k);
      if (it == sec->second.end()) throw SchemaError("unknown key '" + section + "." + k + "'");
      it->second(section + "." + k, v.data());
    }
  }
  s.expect_hyperbolic = expect_hyp;

  if (schema != 1) throw SchemaError(schema == 0 ? "missing 'schema = 1'" : "unsupported schema " + std::to_string(schema));
  if (s.name.empty()) throw SchemaError("missing 'name'");
  if (std::find(pipelines().begin(), pipelines().end(), s.pipeline) == pipelines().end()) {
    throw SchemaError("unknown pipeline '" + s.pipeline + "'");
  }
  if (s.system.empty() == s.source.empty()) throw SchemaError("give exactly one of field.system and field.source");
  if (!s.system.empty()) {
    const auto& e = catalog_entry(s.system);
    if (s.dimension != 0 && s.dimension != e.dimension) throw SchemaError("field.dimension disagrees with the system");
    s.dimension = e.dimension;
    if (s.manifold_kind == "euclidean" && e.manifold.kind() != ManifoldKind::euclidean) {
      s.manifold_kind = to_string(e.manifold.kind());
      if (s.periods.empty()) s.periods = e.manifold.periods();
    }
    if (s.x0.empty()) s.x0 = e.x0;
  } else if (s.dimension <= 0) {
    throw SchemaError("field.dimension is required with field.source");
  }
  if (!s.x0.empty() && static_cast<int>(s.x0.size()) != s.dimension) throw SchemaError("orbit.x0 has the wrong length");
  if (s.mode != "autonomous" && s.mode != "nonautonomous") throw SchemaError("perturb.mode must be autonomous or nonautonomous");
  if (s.r < 0 || s.r > kDefaultMaxOrder) throw SchemaError("orbit.r out of range");
  return s;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read scenario '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str(), path);
}

}  // namespace orbitclose::cli
