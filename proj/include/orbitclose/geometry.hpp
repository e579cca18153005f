#pragma once

// Charted Riemannian manifolds: euclidean space, the flat torus and the
// round 2-sphere (two stereographic charts). Provides metric, Christoffel
// symbols, geodesics, parallel transport, exp/log maps and distance.

#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "orbitclose/errors.hpp"
#include "orbitclose/jet.hpp"
#include "orbitclose/ode.hpp"

namespace orbitclose {

using Vec = std::vector<double>;

enum class ManifoldKind { euclidean, flat_torus, sphere2 };

inline std::string to_string(ManifoldKind k) {
  switch (k) {
    case ManifoldKind::euclidean: return "euclidean";
    case ManifoldKind::flat_torus: return "flat_torus";
    case ManifoldKind::sphere2: return "sphere2";
  }
  return "?";
}

/// A point together with the chart its coordinates refer to.
struct ChartPoint {
  Vec x;
  int chart = 0;
};

class Manifold {
 public:
  static Manifold euclidean(int n) {
    if (n < 1) throw UsageError("dimension must be positive");
    Manifold m;
    m.kind_ = ManifoldKind::euclidean;
    m.n_ = n;
    return m;
  }
  static Manifold flat_torus(Vec periods) {
    for (double p : periods) {
      if (!(p > 0.0)) throw UsageError("torus periods must be positive");
    }
    Manifold m;
    m.kind_ = ManifoldKind::flat_torus;
    m.n_ = static_cast<int>(periods.size());
    m.periods_ = std::move(periods);
    return m;
  }
  static Manifold sphere2(double radius) {
    if (!(radius > 0.0)) throw UsageError("sphere radius must be positive");
    Manifold m;
    m.kind_ = ManifoldKind::sphere2;
    m.n_ = 2;
    m.R_ = radius;
    return m;
  }

  ManifoldKind kind() const { return kind_; }
  int dimension() const { return n_; }
  const Vec& periods() const { return periods_; }
  double radius() const { return R_; }
  int chart_count() const { return kind_ == ManifoldKind::sphere2 ? 2 : 1; }
  bool is_flat() const { return kind_ != ManifoldKind::sphere2; }

  /// Chart handoff radius for the sphere.
  double handoff_radius() const { return 1.5 * R_; }

  void check_domain(const ChartPoint& p) const {
    if (static_cast<int>(p.x.size()) != n_) throw DimensionMismatch("point dimension differs from manifold");
    if (p.chart < 0 || p.chart >= chart_count()) throw ChartDomainError("no such chart");
    for (double c : p.x) {
      if (!std::isfinite(c)) throw ChartDomainError("non-finite chart coordinates");
    }
    if (kind_ == ManifoldKind::sphere2 && norm2(p.x) > 1e6 * R_ * R_) {
      throw ChartDomainError("point too close to the projection pole of its chart");
    }
  }

  /// Conformal factor of the sphere charts; 1 for the flat kinds.
  template <class S>
  S conformal(std::span<const S> x) const {
    if (kind_ != ManifoldKind::sphere2) return S(1.0);
    const S s = x[0] * x[0] + x[1] * x[1];
    const S d = R_ * R_ + s;
    return 4.0 * R_ * R_ * R_ * R_ / (d * d);
  }

  Eigen::MatrixXd metric(const ChartPoint& p) const {
    check_domain(p);
    return conformal<double>(p.x) * Eigen::MatrixXd::Identity(n_, n_);
  }

  double inner(const ChartPoint& p, std::span<const double> v, std::span<const double> w) const {
    double s = 0.0;
    for (int i = 0; i < n_; ++i) s += v[i] * w[i];
    return conformal<double>(p.x) * s;
  }
  double norm(const ChartPoint& p, std::span<const double> v) const { return std::sqrt(inner(p, v, v)); }

  /// Gamma^j_{kl} at index j*n*n + k*n + l, from first metric derivatives.
  std::vector<double> christoffel(const ChartPoint& p) const {
    check_domain(p);
    std::vector<double> G(n_ * n_ * n_, 0.0);
    if (is_flat()) return G;
    const JetLayout& L = JetLayout::get(n_, 1);
    std::vector<Jet> xj;
    for (int i = 0; i < n_; ++i) xj.push_back(Jet::variable(L, i, p.x[i]));
    const Jet phi = conformal<Jet>(xj);
    // g_ij = phi delta_ij; dg[m][i][j] = d_m g_ij
    std::vector<double> dphi(n_);
    for (int m = 0; m < n_; ++m) dphi[m] = phi.partial(m).value();
    auto dg = [&](int m, int i, int j) { return i == j ? dphi[m] : 0.0; };
    const double ginv = 1.0 / phi.value();
    for (int j = 0; j < n_; ++j) {
      for (int k = 0; k < n_; ++k) {
        for (int l = 0; l < n_; ++l) {
          // g^{jm} is diagonal
          const int m = j;
          G[(j * n_ + k) * n_ + l] = 0.5 * ginv * (dg(k, m, l) + dg(l, m, k) - dg(m, k, l));
        }
      }
    }
    return G;
  }

  /// Gamma(p)(v, w) contracted: out^j = Gamma^j_{kl} v^k w^l.
  void contract(const std::vector<double>& G, std::span<const double> v, std::span<const double> w,
                std::span<double> out) const {
    for (int j = 0; j < n_; ++j) {
      double s = 0.0;
      for (int k = 0; k < n_; ++k) {
        for (int l = 0; l < n_; ++l) s += G[(j * n_ + k) * n_ + l] * v[k] * w[l];
      }
      out[j] = s;
    }
  }

  // ---- sphere charts and embedding ------------------------------------

  /// Chart change for the sphere: x' = R^2 x / |x|^2 (an involution).
  ChartPoint to_chart(const ChartPoint& p, int chart) const {
    if (p.chart == chart) return p;
    const double s = norm2(p.x);
    if (s == 0.0) throw ChartDomainError("projection pole has no coordinates in the other chart");
    return ChartPoint{{R_ * R_ * p.x[0] / s, R_ * R_ * p.x[1] / s}, chart};
  }

  /// Pushes a tangent vector at p through the chart change.
  Vec tangent_to_chart(const ChartPoint& p, std::span<const double> v, int chart) const {
    if (p.chart == chart) return Vec(v.begin(), v.end());
    const double s = norm2(p.x);
    const double a = R_ * R_ / s, b = 2.0 * R_ * R_ / (s * s);
    const double xv = p.x[0] * v[0] + p.x[1] * v[1];
    return {a * v[0] - b * p.x[0] * xv, a * v[1] - b * p.x[1] * xv};
  }

  Eigen::Vector3d embed(const ChartPoint& p) const {
    const double s = norm2(p.x);
    const double d = s + R_ * R_;
    const double z = R_ * (s - R_ * R_) / d;
    return {2 * R_ * R_ * p.x[0] / d, 2 * R_ * R_ * p.x[1] / d, p.chart == 0 ? z : -z};
  }

  /// 3x2 Jacobian of the embedding.
  Eigen::Matrix<double, 3, 2> embed_jacobian(const ChartPoint& p) const {
    const double s = norm2(p.x);
    const double d = s + R_ * R_;
    const double R2 = R_ * R_;
    Eigen::Matrix<double, 3, 2> J;
    for (int k = 0; k < 2; ++k) {
      for (int i = 0; i < 2; ++i) {
        J(i, k) = 2 * R2 * ((i == k ? 1.0 : 0.0) / d - 2 * p.x[i] * p.x[k] / (d * d));
      }
      // dz/dx_k = R * 2x_k * 2R^2 / d^2
      const double dz = 4 * R_ * R2 * p.x[k] / (d * d);
      J(2, k) = p.chart == 0 ? dz : -dz;
    }
    return J;
  }

  /// Chart point for an embedded point, choosing the chart whose pole is far.
  ChartPoint from_embedded(const Eigen::Vector3d& P) const {
    const int chart = P.z() <= 0.0 ? 0 : 1;
    const double denom = chart == 0 ? R_ - P.z() : R_ + P.z();
    return ChartPoint{{R_ * P.x() / denom, R_ * P.y() / denom}, chart};
  }

  Vec tangent_from_embedded(const ChartPoint& p, const Eigen::Vector3d& V) const {
    const auto J = embed_jacobian(p);
    Eigen::Vector2d v = (J.transpose() * J).ldlt().solve(J.transpose() * V);
    return {v.x(), v.y()};
  }

  /// Representative of a torus point with coordinates in [0, period).
  Vec wrap(Vec x) const {
    if (kind_ == ManifoldKind::flat_torus) {
      for (int i = 0; i < n_; ++i) {
        x[i] -= periods_[i] * std::floor(x[i] / periods_[i]);
      }
    }
    return x;
  }

  // ---- closed-form metric quantities ----------------------------------

  double distance(const ChartPoint& a, const ChartPoint& b) const {
    check_domain(a);
    check_domain(b);
    switch (kind_) {
      case ManifoldKind::euclidean: {
        double s = 0.0;
        for (int i = 0; i < n_; ++i) s += (a.x[i] - b.x[i]) * (a.x[i] - b.x[i]);
        return std::sqrt(s);
      }
      case ManifoldKind::flat_torus: {
        Vec d = min_image(a.x, b.x);
        return std::sqrt(norm2(d));
      }
      case ManifoldKind::sphere2: return R_ * angle(embed(a), embed(b));
    }
    return 0.0;
  }
  double distance(std::span<const double> a, std::span<const double> b) const {
    return distance(ChartPoint{Vec(a.begin(), a.end()), 0}, ChartPoint{Vec(b.begin(), b.end()), 0});
  }

  /// Initial velocity at a of the minimal geodesic reaching b at time 1.
  Vec log_map(const ChartPoint& a, const ChartPoint& b) const {
    check_domain(a);
    check_domain(b);
    switch (kind_) {
      case ManifoldKind::euclidean: {
        Vec d(n_);
        for (int i = 0; i < n_; ++i) d[i] = b.x[i] - a.x[i];
        return d;
      }
      case ManifoldKind::flat_torus: return min_image(b.x, a.x);
      case ManifoldKind::sphere2: {
        const Eigen::Vector3d P = embed(a) / R_, Q = embed(b) / R_;
        const double th = angle(P, Q);
        if (th > std::numbers::pi - 1e-6) throw GeodesicAmbiguous("antipodal points have no unique geodesic");
        if (th == 0.0) return {0.0, 0.0};
        Eigen::Vector3d u = Q - P.dot(Q) * P;
        u.normalize();
        return tangent_from_embedded(a, R_ * th * u);
      }
    }
    return {};
  }

 private:
  static double norm2(std::span<const double> x) {
    double s = 0.0;
    for (double c : x) s += c * c;
    return s;
  }
  static double angle(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
    return std::atan2(a.cross(b).norm(), a.dot(b));
  }
  /// a - b reduced to the minimal representative modulo the periods.
  Vec min_image(std::span<const double> a, std::span<const double> b) const {
    Vec d(n_);
    for (int i = 0; i < n_; ++i) {
      const double p = periods_[i];
      double v = std::fmod(a[i] - b[i], p);
      if (v > 0.5 * p) v -= p;
      if (v < -0.5 * p) v += p;
      d[i] = v;
    }
    return d;
  }

  ManifoldKind kind_ = ManifoldKind::euclidean;
  int n_ = 1;
  Vec periods_;
  double R_ = 1.0;
};

/// Solution of the geodesic equation, possibly in several chart pieces.
class GeodesicSegment {
 public:
  struct Piece {
    int chart;
    double tau0, tau1;
    OdeSolution sol;  // state (x, v)
  };

  const Manifold& manifold() const { return man_; }
  const ChartPoint& start() const { return start_; }
  const Vec& initial_velocity() const { return v0_; }
  double tau_end() const { return tau_end_; }
  double speed() const { return speed_; }
  const std::vector<Piece>& pieces() const { return pieces_; }

  ChartPoint at(double tau) const {
    if (man_.is_flat()) {
      Vec x(start_.x);
      for (std::size_t i = 0; i < x.size(); ++i) x[i] += tau * v0_[i];
      return {x, 0};
    }
    const Piece& p = piece(tau);
    Vec s = p.sol.at(tau);
    return {Vec(s.begin(), s.begin() + 2), p.chart};
  }

  /// Velocity at tau, in the chart of at(tau).
  Vec velocity(double tau) const {
    if (man_.is_flat()) return v0_;
    const Piece& p = piece(tau);
    Vec s = p.sol.at(tau);
    return Vec(s.begin() + 2, s.end());
  }

  ChartPoint end() const { return at(tau_end_); }

 private:
  friend GeodesicSegment geodesic(const Manifold&, const ChartPoint&, std::span<const double>, double,
                                  const OdeOptions&);

  const Piece& piece(double tau) const {
    for (const auto& p : pieces_) {
      if (tau <= p.tau1) return p;
    }
    return pieces_.back();
  }

  Manifold man_;
  ChartPoint start_;
  Vec v0_;
  double tau_end_ = 0.0;
  double speed_ = 0.0;
  std::vector<Piece> pieces_;
};

namespace detail {

inline Rhs geodesic_rhs(const Manifold& man) {
  return [man](double, std::span<const double> s, std::span<double> ds) {
    const int n = man.dimension();
    ChartPoint p{Vec(s.begin(), s.begin() + n), 0};
    const auto G = man.christoffel(p);
    Vec acc(n);
    man.contract(G, s.subspan(n), s.subspan(n), acc);
    for (int i = 0; i < n; ++i) {
      ds[i] = s[n + i];
      ds[n + i] = -acc[i];
    }
  };
}

}  // namespace detail

inline GeodesicSegment geodesic(const Manifold& man, const ChartPoint& p, std::span<const double> v, double tau_end,
                                const OdeOptions& opt = {}) {
  man.check_domain(p);
  if (!(tau_end >= 0.0)) throw UsageError("geodesic span must be non-negative");
  GeodesicSegment seg;
  seg.man_ = man;
  seg.start_ = p;
  seg.v0_.assign(v.begin(), v.end());
  seg.tau_end_ = tau_end;
  seg.speed_ = man.norm(p, v);
  if (man.is_flat()) return seg;

  const int n = man.dimension();
  ChartPoint cur = p;
  Vec vel(v.begin(), v.end());
  // start in the chart where the point is nearer the chart centre
  if (std::hypot(cur.x[0], cur.x[1]) > man.handoff_radius()) {
    vel = man.tangent_to_chart(cur, vel, 1 - cur.chart);
    cur = man.to_chart(cur, 1 - cur.chart);
  }
  double tau = 0.0;
  const auto rhs = detail::geodesic_rhs(man);
  for (int guard = 0; guard < 1000; ++guard) {
    Vec s(cur.x);
    s.insert(s.end(), vel.begin(), vel.end());
    // hand off after the first step that leaves the good part of the chart
    OdeSolution sol = dopri5(rhs, tau, s, tau_end, opt, nullptr, [&](double, double, std::span<const double> y) {
      return std::hypot(y[0], y[1]) > man.handoff_radius();
    });
    const double tcut = sol.t_end();
    const bool done = tcut == tau_end;
    Vec end = sol.step_states().back();
    seg.pieces_.push_back({cur.chart, tau, tcut, std::move(sol)});
    if (done) break;
    ChartPoint here{Vec(end.begin(), end.begin() + n), cur.chart};
    vel = man.tangent_to_chart(here, Vec(end.begin() + n, end.end()), 1 - cur.chart);
    cur = man.to_chart(here, 1 - cur.chart);
    tau = tcut;
  }
  return seg;
}

inline GeodesicSegment geodesic(const Manifold& man, std::span<const double> p, std::span<const double> v,
                                double tau_end, const OdeOptions& opt = {}) {
  return geodesic(man, ChartPoint{Vec(p.begin(), p.end()), 0}, v, tau_end, opt);
}

/// Parallel transport of w0 (tangent at the segment start) to the end.
/// Returns the vector in the chart of seg.end().
inline Vec parallel_transport(const GeodesicSegment& seg, std::span<const double> w0, const OdeOptions& opt = {}) {
  const Manifold& man = seg.manifold();
  if (man.is_flat() || seg.tau_end() == 0.0) return Vec(w0.begin(), w0.end());
  const int n = man.dimension();
  Vec w(w0.begin(), w0.end());
  int chart = seg.start().chart;
  for (const auto& piece : seg.pieces()) {
    if (piece.chart != chart) {
      // at a boundary seg.at() resolves to the earlier piece, in the old chart
      w = man.tangent_to_chart(seg.at(piece.tau0), w, piece.chart);
      chart = piece.chart;
    }
    const OdeSolution* path = &piece.sol;
    Rhs rhs = [&man, path, n](double tau, std::span<const double> s, std::span<double> ds) {
      Vec xv = path->at(tau);
      ChartPoint p{Vec(xv.begin(), xv.begin() + n), 0};
      const auto G = man.christoffel(p);
      man.contract(G, std::span<const double>(xv).subspan(n), s, ds);
      for (int i = 0; i < n; ++i) ds[i] = -ds[i];
    };
    OdeSolution sol = dopri5(rhs, piece.tau0, w, piece.tau1, opt);
    w = sol.at(piece.tau1);
  }
  return w;
}

/// Parallel transport along a general curve in one chart; curve(tau) gives
/// (x(tau), x'(tau)).
inline Vec transport_along_curve(const Manifold& man, int chart,
                                 const std::function<std::pair<Vec, Vec>(double)>& curve, double tau0, double tau1,
                                 std::span<const double> w0, const OdeOptions& opt = {}) {
  const int n = man.dimension();
  if (man.is_flat()) return Vec(w0.begin(), w0.end());
  Rhs rhs = [&](double tau, std::span<const double> s, std::span<double> ds) {
    auto [x, v] = curve(tau);
    const auto G = man.christoffel(ChartPoint{x, chart});
    man.contract(G, v, s, ds);
    for (int i = 0; i < n; ++i) ds[i] = -ds[i];
  };
  OdeSolution sol = dopri5(rhs, tau0, w0, tau1, opt);
  return sol.at(tau1);
}

inline ChartPoint exp_map(const Manifold& man, const ChartPoint& p, std::span<const double> v,
                          const OdeOptions& opt = {}) {
  return geodesic(man, p, v, 1.0, opt).end();
}

/// Transports w from a to b along the minimal geodesic; result in b's chart.
inline Vec transport_between(const Manifold& man, const ChartPoint& a, const ChartPoint& b, std::span<const double> w,
                             const OdeOptions& opt = {}) {
  if (man.is_flat()) return Vec(w.begin(), w.end());
  const Vec v = man.log_map(a, b);
  const auto seg = geodesic(man, a, v, 1.0, opt);
  Vec out = parallel_transport(seg, w, opt);
  const ChartPoint end = seg.end();
  return man.tangent_to_chart(end, out, b.chart);
}

}  // namespace orbitclose
