#pragma once

// Closing a near-return into a C^r closed curve: two-point Hermite blend
// inside a window around t = 0 = T, residual measurement, arc length and
// curvature.

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include <Eigen/Dense>
// pchip.hpp in Boost 1.74 calls isnan unqualified
namespace boost::math::interpolators {
using std::isnan;
}
#include <boost/math/interpolators/pchip.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/minima.hpp>

#include "orbitclose/errors.hpp"
#include "orbitclose/field.hpp"
#include "orbitclose/flow.hpp"
#include "orbitclose/geometry.hpp"

namespace orbitclose {

/// A T-periodic curve in one chart with derivatives of every order.
class ParametrizedCurve {
 public:
  virtual ~ParametrizedCurve() = default;
  virtual const Manifold& manifold() const = 0;
  virtual double period() const = 0;
  /// f^(q)(t) for q = 0..K, t taken modulo the period.
  virtual std::vector<Vec> derivatives(double t, int K) const = 0;
  virtual Vec position(double t) const { return derivatives(t, 0)[0]; }

  /// Curve at a jet-valued parameter, by Taylor expansion around its value.
  std::vector<Jet> eval_jet(const Jet& t, int order) const {
    const auto d = derivatives(t.value(), order);
    const int n = static_cast<int>(d[0].size());
    const Jet dt = t - t.value();
    std::vector<Jet> out(n, Jet(0.0));
    for (int i = 0; i < n; ++i) {
      Jet acc(d[order][i]);
      for (int q = order - 1; q >= 0; --q) acc = acc * dt / (q + 1) + d[q][i];
      out[i] = acc;
    }
    return out;
  }
};

struct ClosingOptions {
  int r = 2;
  double window = 0.0;  // 0 selects the default rule
  OdeOptions ode;
};

class ClosedOrbit;
namespace detail {
inline void finish_orbit(ClosedOrbit& orbit);
}

struct ResidualProfile {
  std::vector<double> samples_t;
  std::vector<Vec> samples;  // per sample, residual_q for q = 0..r
  Vec sup;                   // per order
  double H = 0.0;
  bool window_only = true;   // residual outside the window below 1e-9
};

class ClosedOrbit final : public ParametrizedCurve {
 public:
  const Manifold& manifold() const override { return man_; }
  double period() const override { return T_; }
  const VectorField& field() const { return *field_; }
  const FieldPtr& field_ptr() const { return field_; }
  int order() const { return r_; }
  double window() const { return w_; }
  double alpha() const { return alpha_; }
  double t_anchor() const { return t_anchor_; }
  const Vec& x0() const { return x0_; }
  const Trajectory& trajectory() const { return *traj_; }
  /// Hermite solve residuals at the two window edges, per order.
  const Vec& edge_residuals() const { return edge_residuals_; }
  /// |f^(q)(T-) - f^(q)(0+)| per order.
  const Vec& closure_mismatch() const { return closure_mismatch_; }
  const ResidualProfile& residual() const { return residual_; }
  const LipschitzEstimate& lipschitz() const { return lip_; }
  double v_min() const { return v_min_; }
  double v_max() const { return v_max_; }
  /// Largest coordinate change introduced by the blend.
  double correction() const { return correction_; }

  bool in_window(double t) const {
    if (w_ <= 0.0) return false;
    const double tm = wrap(t);
    return tm >= T_ - w_ || tm < w_;
  }

  std::vector<Vec> derivatives(double t, int K) const override { return derivatives_impl(wrap(t), K, false); }

  /// Derivatives at t approached from below; at t = T this is the end of
  /// the parameter interval rather than the start of the next period.
  std::vector<Vec> derivatives_left(double t, int K) const { return derivatives_impl(t, K, true); }

 private:
  friend ClosedOrbit hermite_close(const Trajectory&, const ReturnEvent&, const ClosingOptions&);
  friend ClosedOrbit periodic_orbit(FieldPtr, const Manifold&, const Vec&, double, const ClosingOptions&, double);
  friend ResidualProfile interpolation_residual(const ClosedOrbit&, int);
  friend void detail::finish_orbit(ClosedOrbit&);

  double wrap(double t) const {
    if (t >= 0.0 && t < T_) return t;
    double m = std::fmod(t, T_);
    if (m < 0.0) m += T_;
    return m;
  }

  std::vector<Vec> derivatives_impl(double t, int K, bool left) const {
    if (!left && t >= T_) t = 0.0;
    const bool blend = w_ > 0.0 && (t >= T_ - w_ || t < w_);
    // inside the window the curve is the trajectory on [T - w, T + w] plus
    // the Hermite correction
    const double tau = blend && t < w_ ? t + T_ : t;
    auto c = flow_derivatives(std::min(t_anchor_ + tau, traj_->t_end()), K);
    if (blend) {
      const auto p = poly_derivatives(tau, K);
      for (int q = 0; q <= K; ++q)
        for (std::size_t i = 0; i < c[q].size(); ++i) c[q][i] += p[q][i];
    }
    return c;
  }

  std::vector<Vec> flow_derivatives(double t, int K) const {
    Vec x = traj_->at(t);
    auto c = time_taylor(*field_, x, t, K);
    double f = 1.0;
    for (int q = 0; q <= K; ++q) {
      if (q > 0) f *= q;
      for (auto& v : c[q]) v *= f;
    }
    return c;
  }

  std::vector<Vec> poly_derivatives(double tau, int K) const {
    const int n = man_.dimension();
    const int deg = 2 * r_ + 1;
    const double u = (tau - (T_ - w_)) / (2.0 * w_);
    const double du = 1.0 / (2.0 * w_);
    std::vector<Vec> out(K + 1, Vec(n, 0.0));
    for (int q = 0; q <= K && q <= deg; ++q) {
      for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int k = deg; k >= q; --k) {
          double fall = 1.0;
          for (int j = 0; j < q; ++j) fall *= (k - j);
          acc = acc * u + fall * coef_(k, i);
        }
        out[q][i] = acc * std::pow(du, q);
      }
    }
    return out;
  }

  FieldPtr field_;
  Manifold man_ = Manifold::euclidean(1);
  std::shared_ptr<const Trajectory> traj_;
  Vec x0_;
  double T_ = 0.0;
  double t_anchor_ = 0.0;
  int r_ = 0;
  double w_ = 0.0;
  double alpha_ = 0.0;
  Eigen::MatrixXd coef_;  // (2r+2) x n correction coefficients in u
  Vec edge_residuals_;
  Vec closure_mismatch_;
  ResidualProfile residual_;
  LipschitzEstimate lip_;
  double v_min_ = 0.0, v_max_ = 0.0;
  double correction_ = 0.0;
};

namespace detail {

inline std::vector<Vec> trajectory_derivatives(const Trajectory& tr, double t, int K) {
  Vec x = tr.at(t);
  auto c = time_taylor(tr.field(), x, t, K);
  double f = 1.0;
  for (int q = 0; q <= K; ++q) {
    if (q > 0) f *= q;
    for (auto& v : c[q]) v *= f;
  }
  return c;
}

inline double vec_dist(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

inline void finish_orbit(ClosedOrbit& orbit);

}  // namespace detail

/// Residual of the closed curve as a solution: the q-th time derivative of
/// f'(t) - X(f(t), t), sampled at 1000 uniform parameters plus the window.
inline ResidualProfile interpolation_residual(const ClosedOrbit& orbit, int r) {
  const int n = orbit.manifold().dimension();
  const double T = orbit.period();
  std::vector<double> ts;
  for (int k = 0; k < 1000; ++k) ts.push_back(T * k / 1000.0);
  if (orbit.window() > 0.0) {
    const double w = orbit.window();
    for (int k = 0; k < 200; ++k) {
      ts.push_back(T - w + w * k / 200.0);
      ts.push_back(w * k / 200.0);
    }
  }
  std::sort(ts.begin(), ts.end());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());

  ResidualProfile prof;
  prof.sup.assign(r + 1, 0.0);
  const JetLayout& L = JetLayout::get(1, r + 1);
  for (double t : ts) {
    const auto d = orbit.derivatives(t, r + 2);
    // f and f' as univariate jets in the parameter offset
    std::vector<Jet> f(n), fp(n);
    for (int i = 0; i < n; ++i) {
      Jet a(L, d[0][i]), b(L, d[1][i]);
      double fact = 1.0;
      for (int k = 1; k <= r + 1; ++k) {
        fact *= k;
        a.coeff_ref(k) = d[k][i] / fact;
        b.coeff_ref(k) = d[k + 1][i] / fact;
      }
      f[i] = a;
      fp[i] = b;
    }
    const auto X = orbit.field().eval(f, Jet::variable(L, 0, orbit.t_anchor() + t));
    Vec res(r + 1, 0.0);
    for (int q = 0; q <= r; ++q) {
      double fact = 1.0;
      for (int j = 2; j <= q; ++j) fact *= j;
      double s = 0.0;
      for (int i = 0; i < n; ++i) {
        const double c = (fp[i].coeff(q) - X[i].coeff(q)) * fact;
        s += c * c;
      }
      res[q] = std::sqrt(s);
      prof.sup[q] = std::max(prof.sup[q], res[q]);
    }
    if (!orbit.in_window(t) && res[0] > 1e-9) prof.window_only = false;
    prof.samples_t.push_back(t);
    prof.samples.push_back(std::move(res));
  }
  const double scale = orbit.lipschitz().b * std::pow(orbit.lipschitz().L, r) * orbit.alpha();
  prof.H = 0.0;
  if (scale > 0.0) {
    for (int q = 1; q <= r; ++q) prof.H = std::max(prof.H, std::pow(prof.sup[q] / scale, 1.0 / q));
  }
  return prof;
}

inline double default_window(double T, double alpha, int r) {
  return std::max(T / 20.0, 10.0 * std::pow(alpha, 1.0 / (r + 1)));
}

/// Closes the near-return `event` of `traj` into a C^r periodic curve.
inline ClosedOrbit hermite_close(const Trajectory& traj, const ReturnEvent& event, const ClosingOptions& opt = {}) {
  const Manifold& man = traj.manifold();
  if (man.kind() == ManifoldKind::flat_torus) {
    throw ManifoldUnsupported("closing works in a single chart; flat tori are not supported");
  }
  const int n = man.dimension();
  const int r = opt.r;
  check_order(r + 2);
  const double T = event.T;
  const double t0 = event.t_anchor;
  if (man.kind() == ManifoldKind::sphere2 && event.alpha > 0.5 * std::numbers::pi * man.radius()) {
    throw AlphaTooLarge("return distance exceeds the geodesic-uniqueness radius");
  }

  ClosedOrbit orbit;
  orbit.field_ = traj.field_ptr();
  orbit.man_ = man;
  orbit.x0_ = event.x0;
  orbit.T_ = T;
  orbit.t_anchor_ = t0;
  orbit.r_ = r;
  orbit.alpha_ = event.alpha;

  double w = 0.0;
  if (event.alpha > 0.0) {
    if (opt.window > 0.0) {
      w = opt.window;
      if (w >= T / 4.0) throw UsageError("blend window must be shorter than T/4");
    } else {
      w = default_window(T, event.alpha, r);
      if (w >= T / 4.0) throw AlphaTooLarge("return distance needs a blend window of T/4 or more");
    }
  }
  orbit.w_ = w;

  // trajectory covering [t0, t0 + T + w]
  const double need = t0 + T + w;
  if (traj.t_begin() <= t0 && traj.t_end() >= need) {
    orbit.traj_ = std::make_shared<Trajectory>(traj);
  } else {
    orbit.traj_ = std::make_shared<Trajectory>(integrate(traj.field_ptr(), man, event.x0, t0, need, opt.ode));
  }

  const int deg = 2 * r + 1;
  orbit.coef_ = Eigen::MatrixXd::Zero(deg + 1, n);
  orbit.edge_residuals_.assign(r + 1, 0.0);
  if (w > 0.0) {
    // correction vanishes to order r at T - w and carries the trajectory
    // at T + w onto the start of the next period
    const auto start = detail::trajectory_derivatives(*orbit.traj_, t0 + w, r);
    const auto late = detail::trajectory_derivatives(*orbit.traj_, t0 + T + w, r);
    std::vector<Vec> left(r + 1, Vec(n, 0.0)), right(r + 1, Vec(n, 0.0));
    for (int q = 0; q <= r; ++q)
      for (int i = 0; i < n; ++i) right[q][i] = start[q][i] - late[q][i];
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(deg + 1, deg + 1);
    Eigen::MatrixXd B(deg + 1, n);
    const double span = 2.0 * w;
    for (int q = 0; q <= r; ++q) {
      for (int k = q; k <= deg; ++k) {
        double fall = 1.0;
        for (int j = 0; j < q; ++j) fall *= (k - j);
        if (k == q) A(q, k) = fall;  // u = 0
        A(r + 1 + q, k) = fall;      // u = 1
      }
      for (int i = 0; i < n; ++i) {
        B(q, i) = left[q][i] * std::pow(span, q);
        B(r + 1 + q, i) = right[q][i] * std::pow(span, q);
      }
    }
    orbit.coef_ = A.fullPivLu().solve(B);
    const auto pl = orbit.poly_derivatives(T - w, r);
    const auto pr = orbit.poly_derivatives(T + w, r);
    for (int q = 0; q <= r; ++q) {
      orbit.edge_residuals_[q] = std::max(detail::vec_dist(pl[q], left[q]), detail::vec_dist(pr[q], right[q]));
    }
  }

  detail::finish_orbit(orbit);

  // overshoot: the blend must stay comparable to the mismatch it removes
  if (w > 0.0) {
    const double L = std::max(orbit.lip_.L, 1e-12);
    const double allowed =
        10.0 * orbit.lip_.b * std::pow(L, r) * event.alpha * (1.0 + std::pow(1.0 / (2.0 * w * L), r));
    if (orbit.residual_.sup[0] > allowed) {
      throw WindowTooSmall("blend residual " + std::to_string(orbit.residual_.sup[0]) + " exceeds " +
                           std::to_string(allowed));
    }
  }
  return orbit;
}

/// A closed orbit for a trajectory already known to be T-periodic.
inline ClosedOrbit periodic_orbit(FieldPtr field, const Manifold& man, const Vec& x0, double T,
                                  const ClosingOptions& opt = {}, double t_anchor = 0.0) {
  ClosedOrbit orbit;
  orbit.field_ = field;
  orbit.man_ = man;
  orbit.x0_ = x0;
  orbit.T_ = T;
  orbit.t_anchor_ = t_anchor;
  orbit.r_ = opt.r;
  orbit.traj_ = std::make_shared<Trajectory>(integrate(field, man, x0, t_anchor, t_anchor + T, opt.ode));
  orbit.coef_ = Eigen::MatrixXd::Zero(2 * opt.r + 2, man.dimension());
  orbit.edge_residuals_.assign(opt.r + 1, 0.0);
  detail::finish_orbit(orbit);
  return orbit;
}

namespace detail {

inline void finish_orbit(ClosedOrbit& orbit) {
  const int n = orbit.man_.dimension();
  const int r = orbit.r_;
  const double T = orbit.T_;
  // closure mismatch between the end of the parameter interval and its start
  const auto end = orbit.derivatives_left(T, r);
  const auto start = orbit.derivatives(0.0, r);
  orbit.closure_mismatch_.assign(r + 1, 0.0);
  for (int q = 0; q <= r; ++q) orbit.closure_mismatch_[q] = vec_dist(end[q], start[q]);

  std::vector<Vec> pts;
  orbit.v_min_ = std::numeric_limits<double>::infinity();
  orbit.v_max_ = 0.0;
  orbit.correction_ = 0.0;
  for (int k = 0; k < 2000; ++k) {
    const double t = T * k / 2000.0;
    const auto d = orbit.derivatives(t, 1);
    const double v = orbit.man_.norm({d[0], 0}, d[1]);
    orbit.v_min_ = std::min(orbit.v_min_, v);
    orbit.v_max_ = std::max(orbit.v_max_, v);
    pts.push_back(d[0]);
  }
  if (orbit.w_ > 0.0) {
    for (int k = 0; k <= 200; ++k) {
      const double tau = T - orbit.w_ + 2.0 * orbit.w_ * k / 200.0;
      const Vec p = orbit.poly_derivatives(tau, 0)[0];
      orbit.correction_ = std::max(orbit.correction_, vec_dist(p, Vec(n, 0.0)));
    }
  }
  Box box = Box::around(pts, 0.0);
  double diam = 0.0;
  for (int i = 0; i < n; ++i) diam = std::max(diam, box.hi[i] - box.lo[i]);
  const double pad = 0.1 * diam + 1e-3;
  for (int i = 0; i < n; ++i) {
    box.lo[i] -= pad;
    box.hi[i] += pad;
  }
  orbit.lip_ = estimate_lipschitz(*orbit.field_, box, r, 7, orbit.t_anchor_);
  orbit.residual_ = interpolation_residual(orbit, r);
}

}  // namespace detail

// ---- arc length and curvature ------------------------------------------

class ArcLength {
 public:
  ArcLength(const ParametrizedCurve& c, int grid) : curve_(&c) {
    const double T = c.period();
    t_.resize(grid + 1);
    s_.resize(grid + 1);
    for (int k = 0; k <= grid; ++k) t_[k] = T * k / grid;
    s_[0] = 0.0;
    auto speed = [&c](double t) {
      const auto d = c.derivatives(t, 1);
      return c.manifold().norm({d[0], 0}, d[1]);
    };
    for (int k = 0; k < grid; ++k) {
      s_[k + 1] = s_[k] + boost::math::quadrature::gauss_kronrod<double, 15>::integrate(speed, t_[k], t_[k + 1], 10,
                                                                                         1e-12);
    }
    total_ = s_.back();
    for (int k = 0; k < grid; ++k) {
      if (!(s_[k + 1] > s_[k])) throw ZeroSpeed("arc length is not strictly increasing");
    }
    inverse_ = std::make_shared<boost::math::interpolators::pchip<std::vector<double>>>(std::vector<double>(s_),
                                                                                        std::vector<double>(t_));
  }

  double total() const { return total_; }
  const std::vector<double>& t_grid() const { return t_; }
  const std::vector<double>& s_grid() const { return s_; }

  double s(double t) const {
    auto it = std::upper_bound(t_.begin(), t_.end(), t);
    std::size_t k = it == t_.begin() ? 0 : static_cast<std::size_t>(it - t_.begin()) - 1;
    k = std::min(k, t_.size() - 2);
    const ParametrizedCurve& c = *curve_;
    auto speed = [&c](double tt) {
      const auto d = c.derivatives(tt, 1);
      return c.manifold().norm({d[0], 0}, d[1]);
    };
    if (t == t_[k]) return s_[k];
    return s_[k] + boost::math::quadrature::gauss_kronrod<double, 15>::integrate(speed, t_[k], t, 10, 1e-12);
  }

  /// Parameter at arc length s, by monotone interpolation and Newton polish.
  double t_of_s(double s) const {
    double t = (*inverse_)(std::clamp(s, 0.0, total_));
    for (int it = 0; it < 4; ++it) {
      const auto d = curve_->derivatives(t, 1);
      const double v = curve_->manifold().norm({d[0], 0}, d[1]);
      t -= (this->s(t) - s) / v;
      t = std::clamp(t, 0.0, curve_->period());
    }
    return t;
  }

 private:
  const ParametrizedCurve* curve_;
  std::vector<double> t_, s_;
  double total_ = 0.0;
  std::shared_ptr<boost::math::interpolators::pchip<std::vector<double>>> inverse_;
};

inline ArcLength arclength(const ParametrizedCurve& c, int grid = 2000) { return ArcLength(c, grid); }

/// Geodesic curvature of a curve at parameter t.
inline double curvature_at(const ParametrizedCurve& c, double t) {
  const Manifold& man = c.manifold();
  const int n = man.dimension();
  const auto d = c.derivatives(t, 2);
  const ChartPoint p{d[0], 0};
  Vec a = d[2];
  if (!man.is_flat()) {
    Vec g(n);
    man.contract(man.christoffel(p), d[1], d[1], g);
    for (int i = 0; i < n; ++i) a[i] += g[i];
  }
  const double v2 = man.inner(p, d[1], d[1]);
  if (!(v2 > 0.0)) throw ZeroSpeed("curvature undefined at zero speed");
  const double along = man.inner(p, a, d[1]) / v2;
  Vec perp(n);
  for (int i = 0; i < n; ++i) perp[i] = a[i] - along * d[1][i];
  return man.norm(p, perp) / v2;
}

struct CurvatureProfile {
  std::vector<double> t;
  std::vector<double> kappa;
  double max_kappa = 0.0;
  double t_max = 0.0;
  double rc_min = 0.0;
};

inline constexpr double kRadiusCap = 1e6;

inline CurvatureProfile curvature_radius(const ParametrizedCurve& c, int grid = 2000) {
  CurvatureProfile prof;
  const double T = c.period();
  for (int k = 0; k < grid; ++k) {
    const double t = T * k / grid;
    prof.t.push_back(t);
    prof.kappa.push_back(curvature_at(c, t));
  }
  const auto it = std::max_element(prof.kappa.begin(), prof.kappa.end());
  const std::size_t k = static_cast<std::size_t>(it - prof.kappa.begin());
  prof.max_kappa = *it;
  prof.t_max = prof.t[k];
  if (prof.max_kappa > 0.0) {
    const double h = T / grid;
    auto neg = [&](double t) { return -curvature_at(c, t); };
    auto res = boost::math::tools::brent_find_minima(neg, prof.t[k] - h, prof.t[k] + h, 40);
    if (-res.second > prof.max_kappa) {
      prof.max_kappa = -res.second;
      prof.t_max = res.first;
    }
  }
  prof.rc_min = prof.max_kappa > 1.0 / kRadiusCap ? 1.0 / prof.max_kappa : kRadiusCap;
  return prof;
}

}  // namespace orbitclose
