#pragma once

// Scenario pipelines: build the orbit, run the module chain, collect
// reports and assertions, write JSON and CSV output.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <random>
#include <string>
#include <vector>

#include "orbitclose/catalog.hpp"
#include "orbitclose/cli/scenario.hpp"
#include "orbitclose/closing.hpp"
#include "orbitclose/flow.hpp"
#include "orbitclose/flowbox.hpp"
#include "orbitclose/hyperbolicity.hpp"
#include "orbitclose/io.hpp"
#include "orbitclose/perturbation.hpp"

namespace orbitclose::cli {

using io::Json;

enum ExitCode { kPass = 0, kAssertionFailed = 1, kUsage = 2, kNumerical = 3 };

struct Assertion {
  std::string name;
  double value = 0.0;
  double limit = 0.0;
  bool pass = false;
};

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<double> tol;
  std::optional<int> r;
};

struct RunResult {
  std::string name;
  Json report;
  Json timings = Json::object();
  std::vector<Assertion> assertions;
  int exit_code = kPass;
  std::string status = "pass";
  std::string message;
};

inline std::string digest(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace detail {

struct Context {
  const Scenario& s;
  RunResult& out;
  std::filesystem::path dir;
  FieldPtr X;
  Manifold man;
  std::string primary;  // tolerance key that --tol / assert.tol replaces

  double limit(const std::string& key, double fallback) const {
    if (key == primary && s.tol) return *s.tol;
    return s.tolerance(key, fallback);
  }

  void check_le(const std::string& name, double value, double limit) {
    out.assertions.push_back({name, value, limit, value <= limit});
  }

  template <class F>
  auto stage(const std::string& name, F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    struct Timer {
      RunResult& out;
      std::string name;
      std::chrono::steady_clock::time_point t0;
      ~Timer() {
        out.timings[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      }
    } timer{out, name, t0};
    try {
      return f();
    } catch (Error& e) {
      e.add_context(name);
      throw;
    }
  }

  void write(const std::string& file, const std::function<void(std::ostream&)>& body) const {
    std::ofstream os(dir / file);
    body(os);
  }
};

struct OrbitBuild {
  ClosedOrbit orbit;
  std::optional<ReturnEvent> event;
  std::optional<Trajectory> traj;
};

inline Vec start_point(Context& c) {
  Vec x = c.s.x0;
  if (c.s.transient > 0.0) x = integrate(c.X, c.man, x, 0.0, c.s.transient, tight_options()).at(c.s.transient);
  return x;
}

inline OrbitBuild build_orbit(Context& c) {
  const Scenario& s = c.s;
  return c.stage("orbit", [&] {
    OrbitBuild b;
    const Vec x = start_point(c);
    ClosingOptions co{s.r, s.window, tight_options()};
    if (s.period) {
      b.orbit = periodic_orbit(c.X, c.man, x, *s.period, co);
    } else if (!s.section_normal.empty()) {
      Vec nrm = s.section_normal;
      if (static_cast<int>(nrm.size()) != s.dimension) throw SchemaError("orbit.section_normal has the wrong length");
      const double len = std::sqrt(std::inner_product(nrm.begin(), nrm.end(), nrm.begin(), 0.0));
      for (double& v : nrm) v /= len;
      const auto rt = return_time_map(c.X, c.man, Section{x, nrm, 1.0}, x, s.horizon > 0 ? s.horizon : 100.0);
      b.orbit = periodic_orbit(c.X, c.man, x, rt.T, co);
    } else if (s.return_time || s.alpha_max) {
      ReturnEvent ev;
      if (s.return_time) {
        ev.x0 = x;
        ev.T = *s.return_time;
      } else {
        if (!(s.horizon > s.t_min && s.t_min > 0.0)) throw SchemaError("orbit.alpha_max needs 0 < t_min < horizon");
        auto evs = find_returns(c.X, c.man, x, *s.alpha_max, s.horizon, s.t_min, 0.0, tight_options());
        if (s.t_max > 0.0) std::erase_if(evs, [&](const ReturnEvent& e) { return e.T > s.t_max; });
        if (evs.empty()) throw NoCrossing("no return below alpha_max");
        ev = *std::min_element(evs.begin(), evs.end(), [](auto& a, auto& b) { return a.alpha < b.alpha; });
      }
      if (s.refine) {
        const auto fit = refine_periodic_orbit(c.X, c.man, ev.x0, ev.T);
        b.orbit = periodic_orbit(c.X, c.man, fit.x0, fit.T, co);
      } else {
        b.traj = integrate(c.X, c.man, ev.x0, 0.0, ev.T, tight_options());
        ev.x_ret = b.traj->at(ev.T);
        ev.alpha = c.man.distance(ev.x0, ev.x_ret);
        b.event = ev;
        b.orbit = hermite_close(*b.traj, ev, co);
      }
    } else {
      throw SchemaError("orbit needs one of period, section_normal, return_time, alpha_max");
    }
    return b;
  });
}

inline void report_orbit(Context& c, const OrbitBuild& b) {
  c.out.report["orbit"] = io::to_json(b.orbit);
  if (b.event) c.out.report["event"] = io::to_json(*b.event);
  const auto& m = b.orbit.closure_mismatch();
  c.out.report["orbit"]["closure_mismatch"] = m;
  c.check_le("endpoint_matching", *std::max_element(m.begin(), m.end()), c.limit("endpoint", 1e-8));
  c.write("orbit.csv", [&](std::ostream& os) { io::write_orbit_csv(os, b.orbit, c.s.csv_samples); });
  if (b.traj) c.write("trajectory.csv", [&](std::ostream& os) { io::write_trajectory_csv(os, *b.traj, c.s.csv_samples); });
}

inline std::shared_ptr<const FlowBox> make_box(Context& c, const ClosedOrbit& orbit) {
  return c.stage("flowbox", [&] {
    auto box = std::make_shared<const FlowBox>(build_flowbox(orbit, c.s.epsilon));
    c.out.report["flowbox"] = io::flowbox_summary(*box);
    return box;
  });
}

inline std::vector<Vec> outside_points(const FlowBox& box, int count, std::uint64_t seed) {
  const Box region = Box::around(box.samples(), 2 * box.epsilon());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Vec> pts;
  long tries = 0;
  while (static_cast<int>(pts.size()) < count && tries++ < 100L * count) {
    Vec x(region.lo.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = region.lo[i] + (region.hi[i] - region.lo[i]) * u(rng);
    if (box.project(x).outside()) pts.push_back(x);
  }
  return pts;
}

inline void run_perturb(Context& c, bool verify) {
  const Scenario& s = c.s;
  const auto b = build_orbit(c);
  report_orbit(c, b);
  const auto box = make_box(c, b.orbit);
  const auto bump = make_bump(box->epsilon(), s.r, s.amplitude);
  const PerturbedField Y = c.stage("perturb", [&] {
    return s.mode == "nonautonomous" ? perturb_nonautonomous(c.X, box, bump) : perturb_autonomous(c.X, box, bump);
  });
  if (verify) {
    const auto cl = c.stage("closure", [&] { return verify_closure(Y, s.r); });
    c.out.report["closure"] = io::to_json(cl);
    c.check_le("closure_position", cl.position_mismatch, c.limit("closure", 1e-6));
  }
  const auto cr = c.stage("cr_distance", [&] {
    return cr_distance(*c.X, Y, s.r, h_family(s.dimension, s.seed), s.samples, s.seed);
  });
  c.out.report["cr_distance"] = io::to_json(cr);
  for (const auto& o : cr.per_order) {
    c.out.assertions.push_back({"cr_bound_q" + std::to_string(o.q), o.measured, o.bound, o.pass});
  }
  c.stage("support", [&] {
    long differ = 0;
    for (const auto& x : outside_points(*box, s.support_samples, s.seed)) {
      if (Y(x, 0.0) != (*c.X)(x, 0.0)) ++differ;
    }
    c.check_le("support_exact", static_cast<double>(differ), c.s.tolerance("support", 0.0));
  });
}

inline void run_monodromy(Context& c) {
  const Scenario& s = c.s;
  const auto b = build_orbit(c);
  c.out.report["orbit"] = io::to_json(b.orbit);
  const auto mono = c.stage("monodromy", [&] {
    return section_monodromy(c.X, c.man, b.orbit.x0(), 0.0, b.orbit.period(), s.center_tol);
  });
  c.out.report["monodromy"] = io::to_json(mono);
  if (s.expect_multiplier) {
    double best = std::numeric_limits<double>::infinity();
    for (auto lam : mono.eigenvalues) best = std::min(best, std::abs(lam - *s.expect_multiplier));
    c.check_le("multiplier_relative_error", best / std::abs(*s.expect_multiplier), c.limit("multiplier", 1e-6));
  }
  if (s.delta_req) {
    const auto v = check_hyperbolic_margin(mono, *s.delta_req);
    Json m = {{"delta_req", *s.delta_req}, {"pass", v.pass}, {"margin", v.margin}};
    if (v.witness) m["witness"] = {{"re", v.witness->real()}, {"im", v.witness->imag()}};
    c.out.report["margin"] = m;
    const bool want = s.expect_hyperbolic.value_or(true);
    c.out.assertions.push_back({want ? "margin_at_least" : "margin_fails", v.margin, *s.delta_req, v.pass == want});
  }
}

inline void run_adjust(Context& c) {
  const Scenario& s = c.s;
  const auto b = build_orbit(c);
  c.out.report["orbit"] = io::to_json(b.orbit);
  const double T = b.orbit.period();
  const Vec x0 = b.orbit.x0();
  const auto before = c.stage("monodromy", [&] { return section_monodromy(c.X, c.man, x0, 0.0, T, s.center_tol); });
  const auto box = make_box(c, b.orbit);
  const auto Z = c.stage("adjust", [&] { return share(eigenvalue_adjuster(c.X, box, before, std::nullopt, s.delta_win)); });
  const auto& ar = dynamic_cast<const AdjustedField&>(*Z).report();
  const auto after = c.stage("monodromy_adjusted", [&] { return section_monodromy(Z, c.man, x0, 0.0, T, s.center_tol); });
  c.out.report["adjust"] = io::to_json(ar);
  c.out.report["monodromy"] = io::to_json(before);
  c.out.report["monodromy_adjusted"] = io::to_json(after);

  auto rest = after.eigenvalues;
  const auto moved = std::min_element(rest.begin(), rest.end(),
                                      [](auto a, auto b) { return std::abs(a - 1.0) < std::abs(b - 1.0); });
  const double target_err = std::abs(*moved - 1.0);
  rest.erase(moved);
  auto kept = before.eigenvalues;
  kept.erase(kept.begin() + ar.target_index);
  double off = 0.0;
  for (std::size_t k = 0; k < kept.size(); ++k) off = std::max(off, std::abs(kept[k] - rest[k]));
  const double mtol = c.limit("multiplier", 1e-6);
  c.check_le("target_multiplier_at_one", target_err, mtol);
  c.check_le("off_target_unchanged", off, s.tolerance("multiplier", 1e-6));

  const auto rt = c.stage("return_time", [&] {
    const Vec v = (*Z)(x0, 0.0);
    Vec nrm = v;
    const double len = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    for (double& e : nrm) e /= len;
    return return_time_map(Z, c.man, Section{x0, nrm, 1.0}, x0, 2 * T);
  });
  c.out.report["return_time"] = {{"before", T}, {"after", rt.T}};
  c.check_le("return_time_preserved", std::abs(rt.T - T), s.tolerance("return_error", 1e-8));
}

inline void run_homoclinic(Context& c) {
  const Scenario& s = c.s;
  const auto b = build_orbit(c);
  c.out.report["orbit"] = io::to_json(b.orbit);
  c.write("orbit.csv", [&](std::ostream& os) { io::write_orbit_csv(os, b.orbit, s.csv_samples); });
  const auto box = make_box(c, b.orbit);
  const Vec y_slow = b.orbit.position(slowest_parameter(b.orbit));
  const auto Y = c.stage("perturb", [&] {
    return perturb_homoclinic(c.X, box, y_slow, s.tau, make_bump(box->epsilon(), s.r, s.amplitude));
  });
  const auto h = c.stage("homoclinic", [&] { return homoclinic_convergence(Y, s.homoclinic_horizon); });
  c.out.report["homoclinic"] = io::to_json(h);
  const double dtol = c.limit("distance", 1e-3);
  c.out.assertions.push_back({"Y_zero_at_slow_point", h.exact_zero ? 0.0 : 1.0, 0.0, h.exact_zero});
  c.check_le("forward_convergence", h.forward_distance, dtol);
  c.check_le("backward_convergence", h.backward_distance, dtol);
}

inline void run_gronwall(Context& c) {
  const Scenario& s = c.s;
  const Vec x = c.stage("orbit", [&] { return start_point(c); });
  const auto traj = integrate(c.X, c.man, x, 0.0, std::max(1, s.pairs) * 1.0, tight_options());
  std::mt19937_64 rng(s.seed);
  std::normal_distribution<double> g;
  double worst = 0.0, L = 0.0, factor = 0.0;
  Json pairs = Json::array();
  c.stage("gronwall", [&] {
    for (int k = 0; k < s.pairs; ++k) {
      const Vec p = traj.at(1.0 * k);
      Vec d(p.size());
      double len = 0.0;
      for (double& v : d) {
        v = g(rng);
        len += v * v;
      }
      Vec w = p;
      for (std::size_t i = 0; i < w.size(); ++i) w[i] += s.offset * d[i] / std::sqrt(len);
      const auto rep = gronwall_check(c.X, c.man, p, w, s.gronwall_horizon);
      worst = std::max(worst, rep.max_ratio);
      L = std::max(L, rep.L);
      factor = std::max(factor, rep.bound_factor);
      pairs.push_back(io::to_json(rep));
    }
  });
  c.out.report["gronwall"] = {{"pairs", pairs}, {"max_ratio", worst}, {"L_max", L}, {"bound_factor_max", factor}};
  c.check_le("gronwall_ratio", worst, c.limit("gronwall", 1.01));
}

inline void run_returns(Context& c) {
  const Scenario& s = c.s;
  if (!s.alpha_max || !(s.horizon > s.t_min && s.t_min > 0.0)) {
    throw SchemaError("returns pipeline needs orbit.alpha_max and 0 < t_min < horizon");
  }
  const Vec x = c.stage("orbit", [&] { return start_point(c); });
  const auto evs = c.stage("returns", [&] {
    return find_returns(c.X, c.man, x, *s.alpha_max, s.horizon, s.t_min, 0.0, tight_options());
  });
  Json list = Json::array();
  int failing = 0;
  c.stage("return_jets", [&] {
    const auto hs = h_family(s.dimension, s.seed);
    for (const auto& ev : evs) {
      const auto rep = check_return_jets(*c.X, c.man, ev, s.r, hs);
      if (!rep.pass) ++failing;
      list.push_back(io::to_json(rep));
    }
  });
  c.out.report["returns"] = list;
  c.out.assertions.push_back({"events_found", static_cast<double>(evs.size()), 1.0, !evs.empty()});
  c.check_le("return_jet_failures", failing, 0.0);
}

}  // namespace detail

inline Scenario apply(Scenario s, const Overrides& o) {
  if (o.seed) s.seed = *o.seed;
  if (o.tol) s.tol = *o.tol;
  if (o.r) {
    if (*o.r < 0 || *o.r > kDefaultMaxOrder) throw UsageError("--r out of range");
    s.r = *o.r;
  }
  return s;
}

inline std::string describe(const Error& e) {
  return e.stage().empty() ? std::string(e.what()) : e.stage() + ": " + e.what();
}

inline RunResult run_scenario(const Scenario& s, const std::filesystem::path& out_root) {
  RunResult res;
  res.name = s.name;
  const auto dir = out_root / s.name;
  std::filesystem::create_directories(dir);
  res.report["scenario"] = {{"name", s.name},
                            {"pipeline", s.pipeline},
                            {"digest", digest(s.text)},
                            {"seed", s.seed},
                            {"r", s.r}};
  if (s.tol) res.report["scenario"]["tol"] = *s.tol;
  try {
    static const std::map<std::string, std::string> primary{
        {"close", "endpoint"},     {"perturb", "endpoint"},   {"verify", "closure"},   {"monodromy", "multiplier"},
        {"adjust", "multiplier"}, {"homoclinic", "distance"}, {"gronwall", "gronwall"}, {"returns", ""}};
    detail::Context c{s, res, dir, share(s.field()), s.manifold(), primary.at(s.pipeline)};
    if (s.pipeline == "close") {
      detail::report_orbit(c, detail::build_orbit(c));
    } else if (s.pipeline == "perturb" || s.pipeline == "verify") {
      detail::run_perturb(c, s.pipeline == "verify");
    } else if (s.pipeline == "monodromy") {
      detail::run_monodromy(c);
    } else if (s.pipeline == "adjust") {
      detail::run_adjust(c);
    } else if (s.pipeline == "homoclinic") {
      detail::run_homoclinic(c);
    } else if (s.pipeline == "gronwall") {
      detail::run_gronwall(c);
    } else if (s.pipeline == "returns") {
      detail::run_returns(c);
    }
    const bool ok = std::all_of(res.assertions.begin(), res.assertions.end(), [](auto& a) { return a.pass; });
    res.exit_code = ok ? kPass : kAssertionFailed;
    res.status = ok ? "pass" : "assertion_failed";
  } catch (const UsageError& e) {
    res.exit_code = kUsage;
    res.status = "usage_error";
    res.message = describe(e);
  } catch (const NumericalError& e) {
    res.exit_code = kNumerical;
    res.status = "numerical_error";
    res.message = describe(e);
  }
  Json as = Json::array();
  for (const auto& a : res.assertions) as.push_back({{"name", a.name}, {"value", a.value}, {"limit", a.limit}, {"pass", a.pass}});
  res.report["assertions"] = as;
  res.report["status"] = res.status;
  res.report["pass"] = res.exit_code == kPass;
  if (!res.message.empty()) res.report["error"] = res.message;
  std::ofstream(dir / "report.json") << res.report.dump(2) << "\n";
  std::ofstream(dir / "timings.json") << res.timings.dump(2) << "\n";
  return res;
}

inline RunResult run_file(const std::string& path, const std::filesystem::path& out_root, const Overrides& o = {}) {
  try {
    return run_scenario(apply(load_scenario(path), o), out_root);
  } catch (const UsageError& e) {
    RunResult res;
    res.name = std::filesystem::path(path).stem().string();
    res.exit_code = kUsage;
    res.status = "usage_error";
    res.message = e.what();
    return res;
  }
}

struct SuiteResult {
  std::vector<std::string> files;
  std::vector<RunResult> runs;
  int exit_code = kPass;
  Json report;
};

/// Runs every *.toml in dir; scenarios run concurrently and results are
/// merged in file name order.
inline SuiteResult run_suite(const std::filesystem::path& dir, const std::filesystem::path& out_root,
                             const Overrides& o = {}) {
  if (!std::filesystem::is_directory(dir)) throw UsageError("not a directory: " + dir.string());
  SuiteResult sr;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".toml") sr.files.push_back(e.path().string());
  }
  std::sort(sr.files.begin(), sr.files.end());
  std::vector<std::future<RunResult>> jobs;
  for (const auto& f : sr.files) jobs.push_back(std::async(std::launch::async, [&, f] { return run_file(f, out_root, o); }));
  Json list = Json::array();
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    sr.runs.push_back(jobs[k].get());
    const auto& r = sr.runs.back();
    sr.exit_code = std::max(sr.exit_code, r.exit_code);
    Json item = {{"file", std::filesystem::path(sr.files[k]).filename().string()},
                 {"name", r.name},
                 {"status", r.status},
                 {"exit_code", r.exit_code}};
    if (!r.message.empty()) item["error"] = r.message;
    list.push_back(item);
  }
  sr.report = {{"scenarios", list}, {"pass", sr.exit_code == kPass}};
  std::filesystem::create_directories(out_root);
  std::ofstream(out_root / "suite.json") << sr.report.dump(2) << "\n";
  return sr;
}

}  // namespace orbitclose::cli
