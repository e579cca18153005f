#pragma once

// Return-map linearization on cross-sections: multipliers, splittings,
// hyperbolic margins, eigenvalue surgery, Gronwall growth and splitting
// continuity along orbit families.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "orbitclose/closing.hpp"
#include "orbitclose/errors.hpp"
#include "orbitclose/field.hpp"
#include "orbitclose/flow.hpp"
#include "orbitclose/flowbox.hpp"
#include "orbitclose/perturbation.hpp"

namespace orbitclose {

/// Hyperplane through `anchor`, g-orthogonal to the field there.
struct CrossSection {
  Vec anchor;
  Vec field_at_anchor;
  Eigen::MatrixXd basis;  // n x (n-1), g-orthonormal columns
  double radius = 1.0;
};

inline CrossSection make_cross_section(const VectorField& field, const Manifold& man, const Vec& p, double t = 0.0,
                                       double radius = 1.0) {
  const int n = man.dimension();
  CrossSection sec;
  sec.anchor = p;
  sec.radius = radius;
  sec.field_at_anchor = field(p, t);
  const Eigen::MatrixXd G = man.metric({p, 0});
  const Eigen::VectorXd X = Eigen::Map<const Eigen::VectorXd>(sec.field_at_anchor.data(), n);
  const double xx = X.dot(G * X);
  if (!(xx > 0.0)) throw ZeroSpeed("cross-section through an equilibrium");
  std::vector<Eigen::VectorXd> cols;
  std::vector<Eigen::VectorXd> done{X / std::sqrt(xx)};
  for (int k = 0; k < n && static_cast<int>(cols.size()) < n - 1; ++k) {
    Eigen::VectorXd v = Eigen::VectorXd::Unit(n, k);
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& u : done) v -= u.dot(G * v) * u;
    }
    const double nv = std::sqrt(v.dot(G * v));
    if (nv < 1e-6) continue;
    v /= nv;
    done.push_back(v);
    cols.push_back(v);
  }
  sec.basis.resize(n, n - 1);
  for (int k = 0; k < n - 1; ++k) sec.basis.col(k) = cols[k];
  return sec;
}

struct MonodromyReport {
  CrossSection section;
  double T0 = 0.0, T1 = 0.0;
  Eigen::MatrixXd M;        // d phi over [T0, T1], chart coordinates
  Eigen::MatrixXd P;        // section return map linearization
  Eigen::RowVectorXd dT;    // return time gradient
  std::vector<std::complex<double>> eigenvalues;
  Eigen::MatrixXd Es, Eu, Ec;  // section coordinates, orthonormal columns
  double center_tol = 1e-3;
  double margin = 0.0;
  double C = 0.0, lambda_rate = 0.0;
  double invariance_residual = 0.0;
  double return_error = 0.0;
  double det_P = 0.0, det_M = 0.0, liouville = 0.0;
  bool hyperbolic() const { return Ec.cols() == 0; }
};

namespace detail {

inline Eigen::MatrixXd orthonormal_columns(const std::vector<Eigen::VectorXd>& vs, int rows) {
  if (vs.empty()) return Eigen::MatrixXd(rows, 0);
  Eigen::MatrixXd A(rows, static_cast<int>(vs.size()));
  for (std::size_t k = 0; k < vs.size(); ++k) A.col(static_cast<int>(k)) = vs[k];
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  const int rank = static_cast<int>(qr.rank());
  Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(rows, rank);
  return Q;
}

/// Real invariant subspaces of P grouped by |lambda| against 1.
inline void classify(MonodromyReport& rep) {
  const int m = static_cast<int>(rep.P.rows());
  rep.eigenvalues.clear();
  std::vector<Eigen::VectorXd> s, u, c;
  if (m > 0) {
    Eigen::EigenSolver<Eigen::MatrixXd> es(rep.P);
    const auto vals = es.eigenvalues();
    const auto vecs = es.eigenvectors();
    for (int k = 0; k < m; ++k) {
      const std::complex<double> lam = vals(k);
      rep.eigenvalues.push_back(lam);
      const double a = std::abs(lam);
      auto& bucket = std::abs(a - 1.0) <= rep.center_tol ? c : (a < 1.0 ? s : u);
      if (std::abs(lam.imag()) <= 1e-14 * std::max(1.0, a)) {
        bucket.push_back(vecs.col(k).real());
      } else if (lam.imag() > 0.0) {
        bucket.push_back(vecs.col(k).real());
        bucket.push_back(vecs.col(k).imag());
      }
    }
  }
  std::sort(rep.eigenvalues.begin(), rep.eigenvalues.end(), [](auto a, auto b) {
    return std::abs(a) != std::abs(b) ? std::abs(a) < std::abs(b) : a.imag() < b.imag();
  });
  rep.Es = orthonormal_columns(s, m);
  rep.Eu = orthonormal_columns(u, m);
  rep.Ec = orthonormal_columns(c, m);

  double ms = 0.0, mu_inv = 0.0;
  for (auto lam : rep.eigenvalues) {
    const double a = std::abs(lam);
    if (std::abs(a - 1.0) <= rep.center_tol) continue;
    if (a < 1.0) ms = std::max(ms, a);
    else mu_inv = std::max(mu_inv, 1.0 / a);
  }
  rep.margin = rep.Ec.cols() > 0 ? 0.0 : std::clamp(std::min(1.0 - ms, 1.0 - mu_inv), 0.0, 1.0);

  // invariance residual of each block
  rep.invariance_residual = 0.0;
  for (const Eigen::MatrixXd* V : {&rep.Es, &rep.Eu, &rep.Ec}) {
    if (V->cols() == 0) continue;
    const Eigen::MatrixXd PV = rep.P * *V;
    const Eigen::MatrixXd R = PV - *V * (V->transpose() * PV);
    rep.invariance_residual = std::max(rep.invariance_residual, R.norm());
  }

  // ||P^k | E^s|| <= C lambda^k, k = 1..5
  rep.C = 0.0;
  rep.lambda_rate = 0.0;
  if (rep.Es.cols() > 0) {
    std::vector<double> a;
    Eigen::MatrixXd Pk = rep.Es;
    for (int k = 1; k <= 5; ++k) {
      Pk = rep.P * Pk;
      a.push_back(Pk.operatorNorm());
    }
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int k = 1; k <= 5; ++k) {
      const double y = std::log(std::max(a[k - 1], 1e-300));
      sx += k;
      sy += y;
      sxx += k * k;
      sxy += k * y;
    }
    rep.lambda_rate = std::exp((5 * sxy - sx * sy) / (5 * sxx - sx * sx));
    for (int k = 1; k <= 5; ++k) rep.C = std::max(rep.C, a[k - 1] / std::pow(rep.lambda_rate, k));
  }
}

/// Section linearization of the flow from q over [t0, t0 + tau].
inline void section_linearization(MonodromyReport& rep, FieldPtr field, const Manifold& man, const Vec& q, double t0,
                                  double tau, const OdeOptions& opt) {
  const int n = man.dimension();
  rep.section = make_cross_section(*field, man, q, t0);
  const auto vs = variational_solution(field, man, q, t0, t0 + tau, opt);
  rep.M = vs.M(t0 + tau);
  const Vec x_end = vs.x(t0 + tau);
  rep.return_error = man.distance(x_end, q);
  const Vec Xe = (*field)(x_end, t0 + tau);
  const Eigen::MatrixXd G = man.metric({q, 0});
  const Eigen::VectorXd Xq = Eigen::Map<const Eigen::VectorXd>(rep.section.field_at_anchor.data(), n);
  const Eigen::VectorXd XE = Eigen::Map<const Eigen::VectorXd>(Xe.data(), n);
  const Eigen::RowVectorXd ng = (G * Xq).transpose();
  const double denom = ng.dot(XE);
  if (std::abs(denom) <= 1e-10 * Xq.dot(G * Xq)) throw TangentialSection("flow tangent to the section at the return");
  rep.dT = -(ng * rep.M) / denom;
  const Eigen::MatrixXd Pfull = rep.M + XE * rep.dT;
  const Eigen::MatrixXd& B = rep.section.basis;
  rep.P = B.transpose() * G * Pfull * B;

  rep.det_M = rep.M.determinant();
  rep.det_P = rep.P.rows() > 0 ? rep.P.determinant() : 1.0;
  // Liouville: det M = exp(int div X)
  auto div = [&](double t) {
    const Vec x = vs.x(t);
    const auto J = eval_jet(*field, x, t, 1).jacobian();
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += J[i][i];
    return s;
  };
  double integral = 0.0;
  const int pieces = 64;
  for (int k = 0; k < pieces; ++k) {
    integral += boost::math::quadrature::gauss_kronrod<double, 21>::integrate(div, t0 + tau * k / pieces,
                                                                              t0 + tau * (k + 1) / pieces, 5, 1e-13);
  }
  rep.liouville = std::exp(integral);
}

}  // namespace detail

/// Monodromy of the periodic orbit through p on the section at phi_T0(p),
/// over the sub-period [T0, T1].
inline MonodromyReport section_monodromy(FieldPtr field, const Manifold& man, const Vec& p, double T0, double T1,
                                         double center_tol = 1e-3, const OdeOptions& opt = tight_options()) {
  if (!(T1 > T0) || T0 < 0.0) throw UsageError("sub-period needs 0 <= T0 < T1");
  MonodromyReport rep;
  rep.T0 = T0;
  rep.T1 = T1;
  rep.center_tol = center_tol;
  Vec q = p;
  if (T0 > 0.0) q = integrate(field, man, p, 0.0, T0, opt).at(T0);
  detail::section_linearization(rep, field, man, q, T0, T1 - T0, opt);
  const double scale = std::max(1.0, std::sqrt(std::inner_product(q.begin(), q.end(), q.begin(), 0.0)));
  if (rep.return_error > 1e-8 * scale) {
    throw NotPeriodic("orbit misses its start by " + std::to_string(rep.return_error));
  }
  detail::classify(rep);
  return rep;
}

struct MarginVerdict {
  bool pass = false;
  double margin = 0.0;
  std::optional<std::complex<double>> witness;
};

inline MarginVerdict check_hyperbolic_margin(const MonodromyReport& rep, double delta_req) {
  MarginVerdict v;
  v.margin = rep.margin;
  v.pass = rep.hyperbolic() && rep.margin >= delta_req;
  if (!v.pass && !rep.eigenvalues.empty()) {
    v.witness = *std::min_element(rep.eigenvalues.begin(), rep.eigenvalues.end(), [](auto a, auto b) {
      return std::abs(std::abs(a) - 1.0) < std::abs(std::abs(b) - 1.0);
    });
  }
  return v;
}

// ---- eigenvalue surgery ---------------------------------------------------

/// Trigonometric interpolant of a T-periodic vector function from N samples.
class PeriodicInterpolant {
 public:
  PeriodicInterpolant() = default;
  PeriodicInterpolant(double T, const std::vector<Eigen::VectorXd>& samples) : T_(T) {
    const int N = static_cast<int>(samples.size());
    const int n = static_cast<int>(samples[0].size());
    H_ = N / 2;
    a_ = Eigen::MatrixXd::Zero(n, H_ + 1);
    b_ = Eigen::MatrixXd::Zero(n, H_ + 1);
    for (int k = 0; k < N; ++k) {
      const double th = 2.0 * std::numbers::pi * k / N;
      for (int m = 0; m <= H_; ++m) {
        a_.col(m) += samples[k] * std::cos(m * th);
        b_.col(m) += samples[k] * std::sin(m * th);
      }
    }
    a_ *= 2.0 / N;
    b_ *= 2.0 / N;
    a_.col(0) *= 0.5;
    if (N % 2 == 0) {
      a_.col(H_) *= 0.5;
      b_.col(H_).setZero();
    }
  }

  template <class S>
  std::vector<S> operator()(const S& t) const {
    const int n = static_cast<int>(a_.rows());
    const S th = (2.0 * std::numbers::pi / T_) * t;
    const S c1 = cos(th), s1 = sin(th);
    std::vector<S> out(n);
    for (int i = 0; i < n; ++i) out[i] = S(a_(i, 0));
    S cm = c1, sm = s1;
    for (int m = 1; m <= H_; ++m) {
      for (int i = 0; i < n; ++i) out[i] = out[i] + a_(i, m) * cm + b_(i, m) * sm;
      const S cn = cm * c1 - sm * s1;
      sm = sm * c1 + cm * s1;
      cm = cn;
    }
    return out;
  }

 private:
  double T_ = 1.0;
  int H_ = 0;
  Eigen::MatrixXd a_, b_;
};

struct AdjusterReport {
  double mu = 0.0;
  double beta = 0.0;     // -log(mu) / T
  int target_index = -1;  // into the monodromy report's eigenvalues
  Eigen::VectorXd e0;    // right Floquet vector, chart coordinates
  Eigen::VectorXd l0;    // left Floquet covector, l0 . e0 = 1
  Eigen::MatrixXd dA_T;  // realized return-map factor I + (1/mu - 1) e0 l0^T
  double interpolation_error = 0.0;  // max sample mismatch at mid-nodes
};

/// Z = Y + rho(d) beta e(t_x) l(t_x)^T (x - f(t_x)) inside the tube: the
/// linearization along the orbit gains beta e l^T, which moves the chosen
/// Floquet multiplier mu to 1 and leaves the others and the orbit alone.
class AdjustedField final : public VectorField {
 public:
  int dimension() const override { return Y_->dimension(); }
  bool time_dependent() const override { return Y_->time_dependent(); }
  const AdjusterReport& report() const { return rep_; }
  const FlowBox& box() const { return *box_; }

  void eval(std::span<const double> x, double t, std::span<double> out) const override {
    Y_->eval(x, t, out);
    const auto P = box_->project(x);
    if (P.outside()) return;
    const auto c = correction<double>(x, P);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += c[i];
  }

  std::vector<Jet> eval(std::span<const Jet> x, const Jet& t) const override {
    auto out = Y_->eval(x, t);
    Vec xv(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) xv[i] = x[i].value();
    const auto P = box_->project(xv);
    if (P.outside()) return out;
    const auto c = correction<Jet>(x, P);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] + c[i];
    return out;
  }

 private:
  friend AdjustedField eigenvalue_adjuster(FieldPtr, std::shared_ptr<const FlowBox>, const MonodromyReport&,
                                           std::optional<Eigen::VectorXd>, double);

  template <class S>
  std::vector<S> correction(std::span<const S> x, const Projection& P) const {
    const int n = static_cast<int>(x.size());
    if (P.branches.size() > 1) throw OverlapPresent("eigenvalue surgery needs an overlap-free tube");
    const auto bj = detail::branch_jet<S>(box_->orbit(), x, P.branches[0]);
    const auto e = e_(bj.t);
    const auto l = l_(bj.t);
    S dot(0.0);
    for (int i = 0; i < n; ++i) dot = dot + l[i] * (x[i] - bj.foot[i]);
    const S scale = (rep_.beta * bump_.radial(bj.u)) * dot;
    std::vector<S> out(n);
    for (int i = 0; i < n; ++i) out[i] = scale * e[i];
    return out;
  }

  FieldPtr Y_;
  std::shared_ptr<const FlowBox> box_;
  BumpProfile bump_;
  PeriodicInterpolant e_, l_;
  AdjusterReport rep_;
};

/// Moves one real multiplier mu in (1 - delta_win, 1) to 1. The monodromy
/// report must be taken at the box orbit's start over one period.
inline AdjustedField eigenvalue_adjuster(FieldPtr Y, std::shared_ptr<const FlowBox> box, const MonodromyReport& mono,
                                         std::optional<Eigen::VectorXd> target_dir = std::nullopt,
                                         double delta_win = 0.5) {
  if (!box->overlap_free()) throw OverlapPresent("eigenvalue surgery needs an overlap-free tube");
  const ClosedOrbit& orbit = box->orbit();
  const int n = Y->dimension();
  const double T = orbit.period();

  // choose the target multiplier
  int target = -1;
  if (target_dir) {
    Eigen::EigenSolver<Eigen::MatrixXd> es(mono.P);
    double best = -1.0;
    for (int k = 0; k < es.eigenvalues().size(); ++k) {
      const Eigen::VectorXd v = es.eigenvectors().col(k).real();
      const double c = std::abs(v.normalized().dot(target_dir->normalized()));
      if (c > best) {
        best = c;
        const auto lam = es.eigenvalues()(k);
        target = static_cast<int>(std::find(mono.eigenvalues.begin(), mono.eigenvalues.end(), lam) -
                                  mono.eigenvalues.begin());
      }
    }
  } else {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < mono.eigenvalues.size(); ++k) {
      const double a = std::abs(mono.eigenvalues[k]);
      if (a < 1.0 && 1.0 - a < best) {
        best = 1.0 - a;
        target = static_cast<int>(k);
      }
    }
  }
  if (target < 0 || target >= static_cast<int>(mono.eigenvalues.size())) {
    throw WindowTooWide("no multiplier inside the unit circle");
  }
  const std::complex<double> lam = mono.eigenvalues[target];
  if (std::abs(lam.imag()) > 1e-12 * std::abs(lam)) throw EigenvalueNotSimple("target multiplier is complex");
  for (std::size_t k = 0; k < mono.eigenvalues.size(); ++k) {
    if (static_cast<int>(k) != target && std::abs(mono.eigenvalues[k] - lam) < 1e-8) {
      throw EigenvalueNotSimple("target multiplier is repeated");
    }
  }
  const double mu = lam.real();
  if (mu <= 0.0) throw EigenvalueNotSimple("negative multipliers are not adjusted");
  if (!(mu > 1.0 - delta_win && mu < 1.0)) {
    throw WindowTooWide("multiplier " + std::to_string(mu) + " outside (" + std::to_string(1.0 - delta_win) + ", 1)");
  }

  AdjustedField Z;
  Z.Y_ = Y;
  Z.box_ = box;
  Z.bump_ = make_bump(box->epsilon(), kDefaultMaxOrder);
  auto& rep = Z.rep_;
  rep.mu = mu;
  rep.beta = -std::log(mu) / T;
  rep.target_index = target;

  // Floquet vectors of the full monodromy for mu
  const double t0 = orbit.t_anchor();
  const auto vs = variational_solution(Y, orbit.manifold(), orbit.x0(), t0, t0 + T);
  const Eigen::MatrixXd MT = vs.M(t0 + T);
  Eigen::EigenSolver<Eigen::MatrixXd> right(MT), left(MT.transpose());
  auto pick = [&](const Eigen::EigenSolver<Eigen::MatrixXd>& es) {
    int k_best = 0;
    for (int k = 1; k < n; ++k) {
      if (std::abs(es.eigenvalues()(k) - mu) < std::abs(es.eigenvalues()(k_best) - mu)) k_best = k;
    }
    return Eigen::VectorXd(es.eigenvectors().col(k_best).real());
  };
  rep.e0 = pick(right).normalized();
  rep.l0 = pick(left);
  rep.l0 /= rep.l0.dot(rep.e0);
  rep.dA_T = Eigen::MatrixXd::Identity(n, n) + (1.0 / mu - 1.0) * rep.e0 * rep.l0.transpose();

  const int N = 256;
  std::vector<Eigen::VectorXd> es, ls;
  auto frame = [&](double s, Eigen::VectorXd& e, Eigen::VectorXd& l) {
    const Eigen::MatrixXd M = vs.M(t0 + s);
    e = std::pow(mu, -s / T) * (M * rep.e0);
    l = std::pow(mu, s / T) * M.transpose().partialPivLu().solve(rep.l0);
  };
  for (int k = 0; k < N; ++k) {
    Eigen::VectorXd e, l;
    frame(T * k / N, e, l);
    es.push_back(e);
    ls.push_back(l);
  }
  Z.e_ = PeriodicInterpolant(T, es);
  Z.l_ = PeriodicInterpolant(T, ls);
  for (int k = 0; k < 16; ++k) {
    const double s = T * (k + 0.5) / 16;
    Eigen::VectorXd e, l;
    frame(s, e, l);
    const auto ei = Z.e_(s);
    const auto li = Z.l_(s);
    for (int i = 0; i < n; ++i) {
      rep.interpolation_error = std::max(rep.interpolation_error, std::abs(ei[i] - e(i)));
      rep.interpolation_error = std::max(rep.interpolation_error, std::abs(li[i] - l(i)));
    }
  }
  return Z;
}

// ---- Gronwall growth --------------------------------------------------------

struct GronwallReport {
  double L = 0.0;
  double d0 = 0.0;
  double horizon = 0.0;
  double max_ratio = 0.0;
  double t_at_max = 0.0;
  double bound_factor = 0.0;  // e^{L T}
};

/// max over t of dist(phi_t p, phi_t w) / (e^{Lt} dist(p, w)) with L the
/// measured sup of |DX| over the region both orbits visit.
inline GronwallReport gronwall_check(FieldPtr field, const Manifold& man, const Vec& p, const Vec& w, double horizon,
                                     int samples = 1000, const OdeOptions& opt = tight_options()) {
  GronwallReport rep;
  rep.d0 = man.distance(p, w);
  if (!(rep.d0 > 0.0)) throw UsageError("Gronwall check needs distinct points");
  rep.horizon = horizon;
  const auto a = integrate(field, man, p, 0.0, horizon, opt);
  const auto b = integrate(field, man, w, 0.0, horizon, opt);
  std::vector<Vec> pts;
  std::vector<double> dist;
  for (int k = 0; k <= samples; ++k) {
    const double t = horizon * k / samples;
    const Vec xa = a.at(t), xb = b.at(t);
    pts.push_back(xa);
    pts.push_back(xb);
    dist.push_back(man.distance(xa, xb));
  }
  const auto est = estimate_lipschitz(*field, Box::around(pts, 0.0), 0, 5);
  rep.L = est.per_order[0];
  rep.bound_factor = std::exp(rep.L * horizon);
  for (int k = 0; k <= samples; ++k) {
    const double t = horizon * k / samples;
    const double ratio = dist[k] / (std::exp(rep.L * t) * rep.d0);
    if (ratio > rep.max_ratio) {
      rep.max_ratio = ratio;
      rep.t_at_max = t;
    }
  }
  return rep;
}

// ---- splitting continuity ---------------------------------------------------

struct SplittingContinuityReport {
  std::vector<double> distances;         // |p_i - omega|
  std::vector<double> successive_angles;  // largest principal angle between E^s(p_i), E^s(p_{i+1})
  std::vector<double> angles_to_omega;    // against E^s(omega)
  bool monotone = false;
};

namespace detail {

inline double largest_principal_angle(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  if (A.cols() != B.cols()) return std::numbers::pi / 2;
  if (A.cols() == 0) return 0.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A.transpose() * B);
  const double smin = svd.singularValues().minCoeff();
  return std::acos(std::clamp(smin, -1.0, 1.0));
}

inline Eigen::MatrixXd stable_space_at(FieldPtr field, const Manifold& man, const Vec& p, double t0, double T,
                                       const Vec& omega, double center_tol) {
  MonodromyReport rep;
  rep.center_tol = center_tol;
  section_linearization(rep, field, man, p, t0, T, tight_options());
  classify(rep);
  Eigen::MatrixXd E = rep.section.basis * rep.Es;
  if (!man.is_flat()) {
    for (int k = 0; k < E.cols(); ++k) {
      const Vec v(E.col(k).data(), E.col(k).data() + E.rows());
      const Vec w = transport_between(man, {p, 0}, {omega, 0}, v);
      E.col(k) = Eigen::Map<const Eigen::VectorXd>(w.data(), E.rows());
    }
  }
  if (E.cols() == 0) return E;
  return Eigen::HouseholderQR<Eigen::MatrixXd>(E).householderQ() * Eigen::MatrixXd::Identity(E.rows(), E.cols());
}

}  // namespace detail

/// Principal angles between the stable spaces of a family of orbits whose
/// base points approach omega; omega_period is the return time at omega.
inline SplittingContinuityReport splitting_continuity(const std::vector<ClosedOrbit>& family, const Vec& omega,
                                                      double omega_period, double center_tol = 1e-3) {
  if (family.size() < 3) throw InsufficientFamily("need at least 3 orbits, got " + std::to_string(family.size()));
  const Manifold& man = family[0].manifold();
  SplittingContinuityReport rep;
  for (const auto& o : family) rep.distances.push_back(man.distance(o.x0(), omega));
  for (std::size_t k = 1; k < rep.distances.size(); ++k) {
    if (!(rep.distances[k] < rep.distances[k - 1])) throw UsageError("base points must approach omega");
  }
  const auto& f0 = family[0];
  const Eigen::MatrixXd E_omega =
      detail::stable_space_at(f0.field_ptr(), man, omega, f0.t_anchor(), omega_period, omega, center_tol);
  std::vector<Eigen::MatrixXd> spaces;
  for (const auto& o : family) {
    spaces.push_back(detail::stable_space_at(o.field_ptr(), man, o.x0(), o.t_anchor(), o.period(), omega, center_tol));
    rep.angles_to_omega.push_back(detail::largest_principal_angle(spaces.back(), E_omega));
  }
  for (std::size_t k = 0; k + 1 < spaces.size(); ++k) {
    rep.successive_angles.push_back(detail::largest_principal_angle(spaces[k], spaces[k + 1]));
  }
  rep.monotone = true;
  for (std::size_t k = 1; k < rep.successive_angles.size(); ++k) {
    const double a = rep.successive_angles[k - 1], b = rep.successive_angles[k];
    if (!(b < a || (a <= 1e-12 && b <= 1e-12))) rep.monotone = false;
  }
  return rep;
}

// ---- periodic orbits by shooting -----------------------------------------

struct PeriodicOrbitFit {
  Vec x0;
  double T = 0.0;
  double residual = 0.0;
  int iterations = 0;
};

/// Newton shooting on phi_T(x) - x = 0 with the phase fixed by the section
/// through the guess.
inline PeriodicOrbitFit refine_periodic_orbit(FieldPtr field, const Manifold& man, const Vec& x_guess, double T_guess,
                                              double tol = 1e-10, int max_iter = 40) {
  const int n = man.dimension();
  const Vec Xg = (*field)(x_guess, 0.0);
  const Eigen::VectorXd Xgv = Eigen::Map<const Eigen::VectorXd>(Xg.data(), n);
  Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(x_guess.data(), n);
  double T = T_guess;
  auto residual = [&](const Eigen::VectorXd& xv, double Tv, Eigen::MatrixXd* J) {
    const Vec xs(xv.data(), xv.data() + n);
    const auto vs = variational_solution(field, man, xs, 0.0, Tv);
    const Vec xe = vs.x(Tv);
    Eigen::VectorXd F(n + 1);
    for (int i = 0; i < n; ++i) F(i) = xe[i] - xs[i];
    F(n) = Xgv.dot(xv - Eigen::Map<const Eigen::VectorXd>(x_guess.data(), n));
    if (J) {
      const Vec Xe = (*field)(xe, Tv);
      J->setZero(n + 1, n + 1);
      J->topLeftCorner(n, n) = vs.M(Tv) - Eigen::MatrixXd::Identity(n, n);
      for (int i = 0; i < n; ++i) (*J)(i, n) = Xe[i];
      J->block(n, 0, 1, n) = Xgv.transpose();
    }
    return F;
  };
  PeriodicOrbitFit fit;
  Eigen::MatrixXd J;
  Eigen::VectorXd F = residual(x, T, &J);
  for (int it = 0; it < max_iter && F.norm() > tol; ++it) {
    const Eigen::VectorXd step = J.fullPivLu().solve(-F);
    double lam = 1.0;
    bool accepted = false;
    for (int h = 0; h < 12; ++h) {
      const Eigen::VectorXd xn = x + lam * step.head(n);
      const double Tn = T + lam * step(n);
      Eigen::MatrixXd Jn;
      const Eigen::VectorXd Fn = residual(xn, Tn, &Jn);
      if (Fn.norm() < F.norm()) {
        x = xn;
        T = Tn;
        F = Fn;
        J = Jn;
        accepted = true;
        break;
      }
      lam *= 0.5;
    }
    fit.iterations = it + 1;
    if (!accepted) break;
  }
  fit.x0.assign(x.data(), x.data() + n);
  fit.T = T;
  fit.residual = F.norm();
  if (!(fit.residual <= tol)) throw NotPeriodic("shooting stalled at residual " + std::to_string(fit.residual));
  return fit;
}

}  // namespace orbitclose
