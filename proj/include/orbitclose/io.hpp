#pragma once

// CSV and JSON export. JSON objects keep keys sorted so reports are
// byte-stable across runs.

#include <cstdio>
#include <ostream>
#include <string>

#include <json.hpp>

#include "orbitclose/closing.hpp"
#include "orbitclose/flow.hpp"
#include "orbitclose/flowbox.hpp"
#include "orbitclose/hyperbolicity.hpp"
#include "orbitclose/perturbation.hpp"

namespace orbitclose::io {

using Json = nlohmann::json;

inline std::string fmt12(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj, int samples = 1000) {
  const int n = traj.manifold().dimension();
  os << "t";
  for (int i = 1; i <= n; ++i) os << ",x" << i;
  os << "\n";
  const double a = traj.t_begin(), b = traj.t_end();
  for (int k = 0; k <= samples; ++k) {
    const double t = k == samples ? b : a + (b - a) * k / samples;
    os << fmt12(t);
    for (double x : traj.at(t)) os << "," << fmt12(x);
    os << "\n";
  }
}

/// Columns t, s (arc length), x1..xn, kappa (geodesic curvature).
inline void write_orbit_csv(std::ostream& os, const ClosedOrbit& orbit, int samples = 1000) {
  const int n = orbit.manifold().dimension();
  const ArcLength arc(orbit, 2000);
  os << "t,s";
  for (int i = 1; i <= n; ++i) os << ",x" << i;
  os << ",kappa\n";
  for (int k = 0; k < samples; ++k) {
    const double t = orbit.period() * k / samples;
    os << fmt12(t) << "," << fmt12(arc.s(t));
    for (double x : orbit.position(t)) os << "," << fmt12(x);
    os << "," << fmt12(curvature_at(orbit, t)) << "\n";
  }
}

inline Json to_json(const ReturnEvent& e) {
  return {{"x0", e.x0}, {"T", e.T}, {"x_ret", e.x_ret}, {"alpha", e.alpha}, {"t_anchor", e.t_anchor}};
}

inline Json to_json(const ReturnJetReport& r) {
  return {{"event", to_json(r.event)}, {"r", r.order},     {"deviations", r.deviations}, {"b", r.b},
          {"L", r.L},                  {"bound", r.bound}, {"pass", r.pass}};
}

inline Json flowbox_summary(const FlowBox& box) {
  Json overlaps = Json::array();
  for (const auto& o : box.overlaps()) {
    overlaps.push_back({{"t_a0", o.t_a0}, {"t_a1", o.t_a1}, {"t_b0", o.t_b0}, {"t_b1", o.t_b1}});
  }
  return {{"epsilon", box.epsilon()}, {"rc_min", box.rc_min()}, {"overlaps", overlaps}};
}

inline Json to_json(const ClosedOrbit& o) {
  return {{"period", o.period()},           {"window", o.window()},   {"alpha", o.alpha()},
          {"x0", o.x0()},                   {"correction", o.correction()},
          {"residual_sup", o.residual().sup}, {"v_min", o.v_min()}, {"v_max", o.v_max()}};
}

inline Json to_json(const CrDistanceReport& r) {
  Json per = Json::array();
  for (const auto& o : r.per_order) per.push_back({{"q", o.q}, {"measured", o.measured}, {"bound", o.bound}, {"pass", o.pass}});
  return {{"mode", to_string(r.mode)},
          {"r", r.r},
          {"alpha", r.alpha},
          {"epsilon", r.epsilon},
          {"rho0", r.rho0},
          {"constants", {{"b", r.b}, {"L", r.L}, {"H", r.H}}},
          {"per_order", per},
          {"seed", r.seed}};
}

inline Json to_json(const ClosureReport& r) {
  return {{"x0", r.x0},
          {"x_end", r.x_end},
          {"position_mismatch", r.position_mismatch},
          {"derivative_mismatch", r.derivative_mismatch}};
}

inline Json to_json(const HomoclinicReport& r) {
  return {{"y_slow", r.y_slow},
          {"Y_at_slow", r.Y_at_slow},
          {"exact_zero", r.exact_zero},
          {"forward_distance", r.forward_distance},
          {"backward_distance", r.backward_distance},
          {"horizon", r.horizon}};
}

inline Json to_json(const MonodromyReport& r) {
  Json ev = Json::array();
  for (auto lam : r.eigenvalues) ev.push_back({{"re", lam.real()}, {"im", lam.imag()}});
  return {{"T0", r.T0},
          {"T1", r.T1},
          {"eigenvalues", ev},
          {"margin", r.margin},
          {"splitting_dims", {{"s", r.Es.cols()}, {"u", r.Eu.cols()}, {"c", r.Ec.cols()}}}};
}

inline Json to_json(const AdjusterReport& r) {
  return {{"mu", r.mu}, {"beta", r.beta}, {"interpolation_error", r.interpolation_error}};
}

inline Json to_json(const GronwallReport& r) {
  return {{"L", r.L},
          {"d0", r.d0},
          {"horizon", r.horizon},
          {"max_ratio", r.max_ratio},
          {"t_at_max", r.t_at_max},
          {"bound_factor", r.bound_factor}};
}

inline Json to_json(const SplittingContinuityReport& r) {
  return {{"distances", r.distances},
          {"successive_angles", r.successive_angles},
          {"angles_to_omega", r.angles_to_omega},
          {"monotone", r.monotone}};
}

}  // namespace orbitclose::io
