#pragma once

// Flows of vector fields: trajectories with dense output, variational
// (linearized) flows, almost-periodic return detection, return-jet checks
// and section return times.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/tools/toms748_solve.hpp>

#include "orbitclose/errors.hpp"
#include "orbitclose/field.hpp"
#include "orbitclose/geometry.hpp"
#include "orbitclose/ode.hpp"

namespace orbitclose {

template <class F>
FieldPtr share(F field) {
  return std::make_shared<const F>(std::move(field));
}

/// Tolerances used for monodromy-grade linearizations.
inline OdeOptions tight_options() {
  OdeOptions o;
  o.rtol = 1e-12;
  o.atol = 1e-14;
  return o;
}

namespace detail {

inline Rhs field_rhs(FieldPtr field) {
  return [field](double t, std::span<const double> y, std::span<double> dy) { field->eval(y, t, dy); };
}

/// Second time derivative of a solution, from the order-2 time Taylor series.
inline Accel field_accel(FieldPtr field) {
  return [field](double t, std::span<const double> y, std::span<const double>, std::span<double> ddy) {
    auto c = time_taylor(*field, y, t, 2);
    for (std::size_t i = 0; i < ddy.size(); ++i) ddy[i] = 2.0 * c[2][i];
  };
}

/// Root of g on [a, b] (sign change required) to absolute tolerance tol in t.
template <class G>
double refine_root(G&& g, double a, double b, double ga, double gb, double tol) {
  std::uintmax_t iters = 200;
  auto stop = [tol](double lo, double hi) { return std::abs(hi - lo) <= tol; };
  auto r = boost::math::tools::toms748_solve(g, a, b, ga, gb, stop, iters);
  return 0.5 * (r.first + r.second);
}

}  // namespace detail

/// phi_t(x0) on [t_a, t_b] with dense output.
class Trajectory {
 public:
  Trajectory(FieldPtr field, Manifold man, Vec x0, OdeSolution sol)
      : field_(std::move(field)), man_(std::move(man)), x0_(std::move(x0)), sol_(std::move(sol)) {}

  const VectorField& field() const { return *field_; }
  const FieldPtr& field_ptr() const { return field_; }
  const Manifold& manifold() const { return man_; }
  const Vec& x0() const { return x0_; }
  double t_begin() const { return sol_.t_begin(); }
  double t_end() const { return sol_.t_end(); }
  const OdeSolution& solution() const { return sol_; }
  double tolerance() const { return sol_.options().rtol; }

  Vec at(double t) const { return sol_.at(t); }
  /// Derivative of the dense interpolant.
  Vec interpolant_derivative(double t) const { return sol_.derivative_at(t); }
  /// X(phi_t, t), the exact velocity at the interpolated state.
  Vec velocity(double t) const {
    Vec x = at(t);
    return (*field_)(x, t);
  }

 private:
  FieldPtr field_;
  Manifold man_;
  Vec x0_;
  OdeSolution sol_;
};

inline void check_field_manifold(const VectorField& field, const Manifold& man) {
  if (field.dimension() != man.dimension()) throw DimensionMismatch("field and manifold dimensions differ");
}

inline Trajectory integrate(FieldPtr field, const Manifold& man, const Vec& x0, double t_a, double t_b,
                            const OdeOptions& opt = {}, const StepObserver& observer = nullptr) {
  check_field_manifold(*field, man);
  if (static_cast<int>(x0.size()) != field->dimension()) throw DimensionMismatch("x0 dimension differs from field");
  if (!std::isfinite(t_a) || !std::isfinite(t_b)) throw UsageError("time span must be finite");
  auto sol = dopri5(detail::field_rhs(field), t_a, x0, t_b, opt, detail::field_accel(field), observer);
  return Trajectory(std::move(field), man, x0, std::move(sol));
}

/// Base trajectory together with the fundamental matrix M(t) = d phi_{t,t0}.
class VariationalSolution {
 public:
  VariationalSolution(int n, OdeSolution sol) : n_(n), sol_(std::move(sol)) {}

  Vec x(double t) const {
    Vec s = sol_.at(t);
    return Vec(s.begin(), s.begin() + n_);
  }
  Eigen::MatrixXd M(double t) const {
    Vec s = sol_.at(t);
    Eigen::MatrixXd m(n_, n_);
    for (int i = 0; i < n_; ++i) {
      for (int j = 0; j < n_; ++j) m(i, j) = s[n_ + i * n_ + j];
    }
    return m;
  }
  double t_begin() const { return sol_.t_begin(); }
  double t_end() const { return sol_.t_end(); }
  const OdeSolution& solution() const { return sol_; }

 private:
  int n_;
  OdeSolution sol_;
};

namespace detail {

inline Rhs variational_rhs(FieldPtr field) {
  const int n = field->dimension();
  return [field, n](double t, std::span<const double> s, std::span<double> ds) {
    auto fj = eval_jet(*field, s.first(n), t, 1);
    const auto J = fj.jacobian();
    for (int i = 0; i < n; ++i) ds[i] = fj.value[i];
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int k = 0; k < n; ++k) acc += J[i][k] * s[n + k * n + j];
        ds[n + i * n + j] = acc;
      }
    }
  };
}

}  // namespace detail

inline VariationalSolution variational_solution(FieldPtr field, const Manifold& man, const Vec& x0, double t0,
                                                double t1, const OdeOptions& opt = tight_options(),
                                                const StepObserver& observer = nullptr) {
  check_field_manifold(*field, man);
  const int n = field->dimension();
  Vec s(x0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) s.push_back(i == j ? 1.0 : 0.0);
  }
  auto sol = dopri5(detail::variational_rhs(field), t0, s, t1, opt, nullptr, observer);
  return VariationalSolution(n, std::move(sol));
}

/// d phi_T(x0) for the flow started at time t0.
inline Eigen::MatrixXd variational_flow(FieldPtr field, const Manifold& man, const Vec& x0, double T,
                                        double t0 = 0.0, const OdeOptions& opt = tight_options()) {
  return variational_solution(std::move(field), man, x0, t0, t0 + T, opt).M(t0 + T);
}

// ---- returns ----------------------------------------------------------

struct ReturnEvent {
  Vec x0;
  double T = 0.0;
  Vec x_ret;
  double alpha = 0.0;
  double t_anchor = 0.0;
};

/// Local minima of t -> dis(x0, phi_t x0) below alpha_max with
/// T_min_filter <= t <= horizon, sorted by T.
inline std::vector<ReturnEvent> find_returns(FieldPtr field, const Manifold& man, const Vec& x0, double alpha_max,
                                             double horizon, double T_min_filter, double t_anchor = 0.0,
                                             const OdeOptions& opt = {}) {
  if (!(alpha_max > 0.0)) throw UsageError("alpha_max must be positive");
  if (!(T_min_filter > 0.0 && T_min_filter < horizon)) throw UsageError("need 0 < T_min_filter < horizon");
  const Trajectory traj = integrate(field, man, x0, t_anchor, t_anchor + horizon, opt);
  const ChartPoint base{x0, 0};

  // g(t) = half the t-derivative of the squared distance
  auto g = [&](double t) {
    Vec x = traj.at(t);
    Vec v = (*field)(x, t);
    const ChartPoint p{x, 0};
    const Vec toward = man.log_map(p, base);
    return -man.inner(p, toward, v);
  };

  // sample densely enough that the orbit moves at most alpha_max between samples
  constexpr int kSub = 8;
  std::vector<double> ts;
  const auto& steps = traj.solution().step_times();
  for (std::size_t k = 0; k + 1 < steps.size(); ++k) {
    const double dt = steps[k + 1] - steps[k];
    const double speed = man.norm({traj.at(steps[k]), 0}, traj.velocity(steps[k]));
    const int sub = std::max(kSub, static_cast<int>(std::ceil(std::abs(dt) * speed / alpha_max)));
    for (int j = 0; j < sub; ++j) ts.push_back(steps[k] + dt * j / sub);
  }
  ts.push_back(steps.back());
  std::vector<double> gs(ts.size());
  for (std::size_t k = 0; k < ts.size(); ++k) gs[k] = g(ts[k]);

  std::vector<ReturnEvent> events;
  const double t_lo = t_anchor + T_min_filter;
  for (std::size_t k = 0; k + 1 < ts.size(); ++k) {
    if (!(gs[k] < 0.0 && gs[k + 1] >= 0.0)) continue;
    if (ts[k + 1] < t_lo) continue;
    // cheap rejection before refinement
    const double d_here = man.distance(x0, traj.at(ts[k + 1]));
    const double v_here = man.norm({traj.at(ts[k + 1]), 0}, traj.velocity(ts[k + 1]));
    if (d_here > alpha_max + v_here * (ts[k + 1] - ts[k])) continue;
    double t_min = gs[k + 1] == 0.0 ? ts[k + 1] : detail::refine_root(g, ts[k], ts[k + 1], gs[k], gs[k + 1], 1e-10);
    if (t_min < t_lo) continue;
    ReturnEvent ev;
    ev.x0 = x0;
    ev.T = t_min - t_anchor;
    ev.x_ret = traj.at(t_min);
    ev.alpha = man.distance(x0, ev.x_ret);
    ev.t_anchor = t_anchor;
    if (ev.alpha <= alpha_max) events.push_back(std::move(ev));
  }
  std::sort(events.begin(), events.end(), [](const auto& a, const auto& b) { return a.T < b.T; });
  return events;
}

/// Chart basis plus `random_count` seeded random unit vectors.
inline std::vector<Vec> h_family(int n, std::uint64_t seed, int random_count = 8) {
  std::vector<Vec> hs;
  for (int i = 0; i < n; ++i) {
    Vec e(n, 0.0);
    e[i] = 1.0;
    hs.push_back(e);
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  for (int k = 0; k < random_count; ++k) {
    Vec v(n);
    double s = 0.0;
    for (auto& c : v) {
      c = gauss(rng);
      s += c * c;
    }
    for (auto& c : v) c /= std::sqrt(s);
    hs.push_back(v);
  }
  return hs;
}

/// Directional derivative D^q X(x,t)[h,...,h], i.e. L^q_h X for constant h.
inline Vec directional_derivative(const VectorField& X, std::span<const double> x, double t, const Vec& h, int q) {
  ConstantField hf(h);
  std::vector<const VectorField*> hs(q, &hf);
  return lie_derivative(X, hs, x, t);
}

struct ReturnJetReport {
  ReturnEvent event;
  int order = 0;
  Vec deviations;        // d_q over the full h-family
  Vec basis_deviations;  // d_q over the chart basis only
  double b = 0.0;
  double L = 0.0;
  double bound = 0.0;
  bool pass = false;
};

inline ReturnJetReport check_return_jets(const VectorField& field, const Manifold& man, const ReturnEvent& event,
                                         int r, const std::vector<Vec>& hs) {
  const int n = field.dimension();
  if (man.kind() == ManifoldKind::sphere2 && event.alpha > 0.5 * std::numbers::pi * man.radius()) {
    throw GeodesicAmbiguous("return too far for a unique connecting geodesic");
  }
  ReturnJetReport rep;
  rep.event = event;
  rep.order = r;
  rep.deviations.assign(r + 1, 0.0);
  rep.basis_deviations.assign(r + 1, 0.0);
  const ChartPoint a{event.x0, 0}, b{event.x_ret, 0};
  const double t0 = event.t_anchor, t1 = event.t_anchor + event.T;
  for (std::size_t k = 0; k < hs.size(); ++k) {
    // the constant field h at x_ret is compared with its transport
    for (int q = 0; q <= r; ++q) {
      Vec at0 = directional_derivative(field, event.x0, t0, hs[k], q);
      Vec at1 = directional_derivative(field, event.x_ret, t1, hs[k], q);
      Vec moved = transport_between(man, b, a, at1);
      Vec diff(n);
      for (int i = 0; i < n; ++i) diff[i] = moved[i] - at0[i];
      const double d = man.norm(a, diff);
      rep.deviations[q] = std::max(rep.deviations[q], d);
      if (static_cast<int>(k) < n) rep.basis_deviations[q] = std::max(rep.basis_deviations[q], d);
    }
  }
  const double pad = std::max(event.alpha, 1e-3);
  const Box box = Box::around({event.x0, event.x_ret}, pad);
  const auto est = estimate_lipschitz(field, box, r, 5, t0);
  rep.b = est.b;
  rep.L = est.L;
  rep.bound = rep.b * std::pow(rep.L, r) * event.alpha;
  rep.pass = std::all_of(rep.deviations.begin(), rep.deviations.end(), [&](double d) { return d <= rep.bound; });
  return rep;
}

// ---- section return times ---------------------------------------------

struct Section {
  Vec anchor;
  Vec normal;  // unit; crossings counted in the direction of the normal
  double radius = 1.0;

  double coordinate(std::span<const double> x) const {
    double s = 0.0;
    for (std::size_t i = 0; i < anchor.size(); ++i) s += normal[i] * (x[i] - anchor[i]);
    return s;
  }
  bool within(std::span<const double> x) const {
    double s = 0.0;
    for (std::size_t i = 0; i < anchor.size(); ++i) s += (x[i] - anchor[i]) * (x[i] - anchor[i]);
    return std::sqrt(s) <= radius;
  }
  /// Orthonormal basis of the hyperplane, as columns.
  Eigen::MatrixXd tangent_basis() const {
    const int n = static_cast<int>(anchor.size());
    Eigen::VectorXd nv = Eigen::Map<const Eigen::VectorXd>(normal.data(), n);
    Eigen::MatrixXd P = Eigen::MatrixXd::Identity(n, n) - nv * nv.transpose();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(P, Eigen::ComputeFullU);
    return svd.matrixU().leftCols(n - 1);
  }
};

struct ReturnTime {
  double T = 0.0;
  Vec x_end;
  Vec X_end;
  Eigen::MatrixXd M;           // d phi_T(p)
  Eigen::RowVectorXd dT;       // gradient in the full chart space
  Eigen::RowVectorXd dT_section;  // restricted to the section hyperplane
};

inline ReturnTime return_time_map(FieldPtr field, const Manifold& man, const Section& sec, const Vec& p,
                                  double horizon, double t0 = 0.0, const OdeOptions& opt = tight_options()) {
  const int n = field->dimension();
  double t_cross = std::numeric_limits<double>::quiet_NaN();
  double t_prev_step = t0;
  const double s_start = sec.coordinate(p);
  double s_prev = s_start;
  auto observer = [&](double tp, double t, std::span<const double> y) {
    const double s = sec.coordinate(y.first(n));
    // a start point lying on the section does not count as a crossing
    const bool hit = s_prev < 0.0 && s >= 0.0 && (tp > t0 || s_start < -1e-9);
    s_prev = s;
    t_prev_step = tp;
    if (hit) {
      t_cross = t;
      return true;
    }
    return false;
  };
  std::optional<VariationalSolution> vs;
  try {
    vs.emplace(variational_solution(field, man, p, t0, t0 + horizon, opt, observer));
  } catch (const BlowUp&) {
    throw NoCrossing("trajectory left the domain before reaching the section");
  }
  if (std::isnan(t_cross)) throw NoCrossing("no section crossing within the horizon");
  auto sfun = [&](double t) { return sec.coordinate(vs->x(t)); };
  const double a = t_prev_step, b = t_cross;
  const double T = detail::refine_root(sfun, a, b, sfun(a), sfun(b), 1e-12) - t0;
  ReturnTime rt;
  rt.T = T;
  rt.x_end = vs->x(t0 + T);
  if (!sec.within(rt.x_end)) throw NoCrossing("crossing lies outside the section radius");
  rt.X_end = (*field)(rt.x_end, t0 + T);
  double nX = 0.0;
  for (int i = 0; i < n; ++i) nX += sec.normal[i] * rt.X_end[i];
  if (std::abs(nX) <= 1e-8) throw TangentialCrossing("flow is tangent to the section at the crossing");
  rt.M = vs->M(t0 + T);
  Eigen::RowVectorXd nv = Eigen::Map<const Eigen::RowVectorXd>(sec.normal.data(), n);
  rt.dT = -(nv * rt.M) / nX;
  rt.dT_section = rt.dT * sec.tangent_basis();
  return rt;
}

}  // namespace orbitclose
