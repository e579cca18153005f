#pragma once

// Perturbed field Y supported in a flow box: Y = X + weight * (Ybar - Xbar)
// with Ybar the closed orbit's velocity and Xbar the field at the foot.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

#include "orbitclose/closing.hpp"
#include "orbitclose/errors.hpp"
#include "orbitclose/field.hpp"
#include "orbitclose/flow.hpp"
#include "orbitclose/flowbox.hpp"

namespace orbitclose {

namespace detail {

inline double value_of(double x) { return x; }
inline double value_of(const Jet& x) { return x.value(); }

template <class S>
std::vector<S> eval_field(const VectorField& F, const std::vector<S>& x, const S& t) {
  if constexpr (std::is_same_v<S, double>) {
    return F(x, t);
  } else {
    return F.eval(std::span<const Jet>(x), t);
  }
}

inline double binomial(int n, int k) {
  double r = 1.0;
  for (int j = 1; j <= k; ++j) r = r * (n - k + j) / j;
  return r;
}

}  // namespace detail

/// Monomial coefficients of S_r(v) = sum_{j<=r} C(2r+1,j) v^j (1-v)^(2r+1-j):
/// S(0) = 1, S(1) = 0, derivatives 1..r vanish at both ends.
inline std::vector<double> smoothstep_coefficients(int r) {
  const int n = 2 * r + 1;
  std::vector<double> c(n + 1, 0.0);
  for (int j = 0; j <= r; ++j) {
    for (int i = 0; i <= n - j; ++i) {
      c[j + i] += detail::binomial(n, j) * detail::binomial(n - j, i) * (i % 2 == 0 ? 1.0 : -1.0);
    }
  }
  return c;
}

class BumpProfile {
 public:
  BumpProfile() = default;
  BumpProfile(double eps, int r, double amplitude) : eps_(eps), r_(r), amp_(amplitude), c_(smoothstep_coefficients(r)) {}

  double epsilon() const { return eps_; }
  int order() const { return r_; }
  double amplitude() const { return amp_; }
  /// max over q <= r of sup |rho^(q)| eps^q, measured on a grid.
  double rho0() const { return rho0_; }
  const std::vector<double>& coefficients() const { return c_; }

  double operator()(double d) const { return derivative(d, 0); }

  double derivative(double d, int q) const {
    if (d >= eps_) return 0.0;
    const double v = std::max(d, 0.0) / eps_;
    double acc = 0.0;
    for (int k = static_cast<int>(c_.size()) - 1; k >= q; --k) {
      double fall = 1.0;
      for (int j = 0; j < q; ++j) fall *= (k - j);
      acc = acc * v + fall * c_[k];
    }
    return amp_ * acc / std::pow(eps_, q);
  }

  /// rho as a function of u = d^2, smooth through d = 0.
  template <class S>
  S radial(const S& u) const {
    const double d = std::sqrt(std::max(detail::value_of(u), 0.0));
    if (d >= eps_) return S(0.0);
    S acc(amp_ * c_[0]);
    for (std::size_t k = 1; k < c_.size(); ++k) {
      if (c_[k] == 0.0) continue;
      acc = acc + (amp_ * c_[k] / std::pow(eps_, static_cast<double>(k))) * radial_power(u, static_cast<int>(k));
    }
    return acc;
  }

 private:
  friend BumpProfile make_bump(double, int, double);
  double eps_ = 1.0;
  int r_ = 0;
  double amp_ = 1.0;
  double rho0_ = 0.0;
  std::vector<double> c_;
};

inline BumpProfile make_bump(double eps, int r, double amplitude = 1.0) {
  if (!(eps > 0.0)) throw UsageError("bump radius must be positive");
  check_order(r);
  BumpProfile b(eps, r, amplitude);
  for (int k = 0; k <= 10000; ++k) {
    const double d = eps * k / 10000.0;
    for (int q = 0; q <= r; ++q) b.rho0_ = std::max(b.rho0_, std::abs(b.derivative(d, q)) * std::pow(eps, q));
  }
  return b;
}

/// Two-branch weights rho_i(d_i, d_j) = rho(d_i) S(d_i / (d_i + d_j)).
class BranchWeights {
 public:
  BranchWeights() = default;
  BranchWeights(BumpProfile bump, double separation)
      : bump_(std::move(bump)), sep_(separation), s_(smoothstep_coefficients(bump_.order())) {
    measure();
  }

  const BumpProfile& bump() const { return bump_; }
  double separation() const { return sep_; }
  /// max over q <= r of sup |d^q rho_i / d d_i^q| eps^q on the grid d_i in
  /// [0, eps], d_j in [separation, eps] with d_i + d_j >= separation.
  double rho0() const { return rho0_; }

  template <class S>
  S weight(const S& u_i, const S& u_j) const {
    const double di = std::sqrt(std::max(detail::value_of(u_i), 0.0));
    const double dj = std::sqrt(std::max(detail::value_of(u_j), 0.0));
    if (di >= bump_.epsilon() || dj == 0.0) return S(0.0);
    const S sum = safe_root(u_i) + safe_root(u_j);
    S acc(s_[0]);
    S inv = S(1.0) / sum;
    S invk = inv;
    for (std::size_t k = 1; k < s_.size(); ++k) {
      if (s_[k] != 0.0) acc = acc + s_[k] * radial_power(u_i, static_cast<int>(k)) * invk;
      invk = invk * inv;
    }
    return bump_.radial(u_i) * acc;
  }

 private:
  void measure() {
    const double eps = bump_.epsilon();
    const int r = bump_.order();
    const JetLayout& L = JetLayout::get(1, r);
    for (int a = 0; a <= 100; ++a) {
      for (int c = 0; c <= 100; ++c) {
        const double di = eps * a / 100.0;
        const double dj = sep_ + (eps - sep_) * c / 100.0;
        if (di + dj < sep_ || dj <= 0.0) continue;
        const Jet x = Jet::variable(L, 0, di);
        const Jet w = weight(x * x, Jet(dj * dj));
        for (int q = 0; q <= r; ++q) {
          const int alpha[1] = {q};
          rho0_ = std::max(rho0_, std::abs(w.is_constant() ? (q == 0 ? w.value() : 0.0) : w.derivative(alpha)) *
                                      std::pow(eps, q));
        }
      }
    }
  }

  BumpProfile bump_;
  double sep_ = 0.0;
  std::vector<double> s_;
  double rho0_ = 0.0;
};

namespace detail {

/// Foot of x on the orbit with its parameter, position and velocity as
/// jets in x: Newton on (f - x) . f' = 0 carried out in jet arithmetic.
template <class S>
struct BranchJet {
  S t;
  std::vector<S> foot, vel;
  S u;  // squared distance
};

template <class S>
BranchJet<S> branch_jet(const ClosedOrbit& orbit, std::span<const S> x, const ProjectionBranch& br) {
  const int n = static_cast<int>(x.size());
  BranchJet<S> bj;
  if constexpr (std::is_same_v<S, double>) {
    const auto d = orbit.derivatives(br.t, 1);
    bj.t = br.t;
    bj.foot = d[0];
    bj.vel = d[1];
  } else {
    int K = 0;
    for (const auto& xi : x) K = std::max(K, xi.order());
    const auto D = orbit.derivatives(br.t, K + 2);
    auto taylor = [&](const Jet& dt, int shift) {
      std::vector<Jet> f(n);
      for (int i = 0; i < n; ++i) {
        Jet acc(D[K + shift][i]);
        for (int m = K - 1; m >= 0; --m) acc = acc * dt / (m + 1) + D[m + shift][i];
        f[i] = acc;
      }
      return f;
    };
    // foot parameter as a jet in x: Newton on (f - x) . f' = 0
    Jet dt(0.0);
    for (int it = 0; it <= K; ++it) {
      const auto f0 = taylor(dt, 0), f1 = taylor(dt, 1), f2 = taylor(dt, 2);
      Jet g(0.0), gp(0.0);
      for (int i = 0; i < n; ++i) {
        const Jet r = f0[i] - x[i];
        g = g + r * f1[i];
        gp = gp + f1[i] * f1[i] + r * f2[i];
      }
      dt = with_value(dt - g / gp, 0.0);
    }
    bj.t = dt + br.t;
    bj.foot = taylor(dt, 0);
    bj.vel = taylor(dt, 1);
  }
  S u(0.0);
  for (int i = 0; i < n; ++i) {
    const S r = x[i] - bj.foot[i];
    u = u + r * r;
  }
  bj.u = u;
  return bj;
}

}  // namespace detail

enum class PerturbationMode { nonautonomous, autonomous, homoclinic };

inline std::string to_string(PerturbationMode m) {
  switch (m) {
    case PerturbationMode::nonautonomous: return "nonautonomous";
    case PerturbationMode::autonomous: return "autonomous";
    case PerturbationMode::homoclinic: return "homoclinic";
  }
  return "?";
}

/// Slowdown data of the homoclinic mode: the orbit is reparametrized by
/// p' = sigma(p) with sigma vanishing at the slow point.
struct Reparametrization {
  double s_star = 0.0;   // orbit parameter of the slow point
  double width = 0.0;    // half-width of the slowdown in orbit parameter
  double tau = 0.0;
  Vec p_bounds;          // sup |p^(q)| for q = 1..r+1, measured
  Vec y_slow;
  double slow_speed = 0.0;
};

class PerturbedField final : public VectorField {
 public:
  int dimension() const override { return X_->dimension(); }
  bool time_dependent() const override { return mode_ == PerturbationMode::nonautonomous || X_->time_dependent(); }
  PerturbationMode mode() const { return mode_; }
  const VectorField& base() const { return *X_; }
  const FlowBox& box() const { return *box_; }
  const ClosedOrbit& orbit() const { return box_->orbit(); }
  const BumpProfile& bump() const { return bump_; }
  const std::optional<BranchWeights>& weights() const { return weights_; }
  const std::optional<Reparametrization>& reparametrization() const { return rep_; }
  /// Temporal rate in the nonautonomous bump argument.
  double time_rate() const { return L_time_; }
  /// Weight-derivative constant: bump rho0, or the branch weights' when larger.
  double rho0() const { return weights_ ? std::max(bump_.rho0(), weights_->rho0()) : bump_.rho0(); }

  void eval(std::span<const double> x, double t, std::span<double> out) const override {
    X_->eval(x, t, out);
    const auto P = box_->project(x);
    if (P.outside()) return;
    if (rep_ && std::equal(x.begin(), x.end(), rep_->y_slow.begin())) {
      std::fill(out.begin(), out.end(), 0.0);
      return;
    }
    const auto c = correction<double>(x, t, P);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += c[i];
  }

  std::vector<Jet> eval(std::span<const Jet> x, const Jet& t) const override {
    auto out = X_->eval(x, t);
    Vec xv(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) xv[i] = x[i].value();
    const auto P = box_->project(xv);
    if (P.outside()) return out;
    const auto c = correction<Jet>(x, t, P);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] + c[i];
    if (rep_ && xv == rep_->y_slow) {
      for (auto& o : out) o = with_value(o, 0.0);
    }
    return out;
  }

  /// Correction Y - X at x, zero outside the tube.
  Vec correction_at(std::span<const double> x, double t) const {
    const auto P = box_->project(x);
    if (P.outside()) return Vec(x.size(), 0.0);
    return correction<double>(x, t, P);
  }

  /// sigma(s) for the homoclinic slowdown, 1 elsewhere.
  template <class S>
  S sigma(const S& s) const {
    if (!rep_) return S(1.0);
    const double T = orbit().period();
    const double shift = std::round((detail::value_of(s) - rep_->s_star) / T) * T;
    const S v = (s - (rep_->s_star + shift)) / rep_->width;
    if (std::abs(detail::value_of(v)) >= 1.0) return S(1.0);
    return S(1.0) - ipow(S(1.0) - v * v, bump_.order() + 1);
  }

 private:
  friend PerturbedField perturb_nonautonomous(FieldPtr, std::shared_ptr<const FlowBox>, const BumpProfile&);
  friend PerturbedField perturb_autonomous(FieldPtr, std::shared_ptr<const FlowBox>, const BumpProfile&);
  friend PerturbedField perturb_homoclinic(FieldPtr, std::shared_ptr<const FlowBox>, const Vec&, double,
                                           const BumpProfile&);

  template <class S>
  std::vector<S> correction(std::span<const S> x, const S& t, const Projection& P) const {
    const int n = static_cast<int>(x.size());
    const std::size_t nb = P.branches.size();
    if (mode_ == PerturbationMode::nonautonomous && nb > 1) {
      throw OverlapPresent("point reached by several orbit branches in nonautonomous mode");
    }
    if (nb > 2) throw TooManyBranches(std::to_string(nb) + " projection feet");

    std::vector<detail::BranchJet<S>> bjs;
    std::vector<std::vector<S>> diffs;
    for (const auto& br : P.branches) {
      bjs.push_back(detail::branch_jet<S>(orbit(), x, br));
      const auto& bj = bjs.back();
      const auto Xbar = detail::eval_field(*X_, bj.foot, t);
      const S sg = sigma(bj.t);
      std::vector<S> d(n);
      for (int i = 0; i < n; ++i) d[i] = sg * bj.vel[i] - Xbar[i];
      diffs.push_back(std::move(d));
    }

    std::vector<S> w(nb, S(0.0));
    if (mode_ == PerturbationMode::nonautonomous) {
      const double T = orbit().period();
      const S tau0 = (t - orbit().t_anchor()) - bjs[0].t;
      const S tau = tau0 - std::round(detail::value_of(tau0) / T) * T;
      w[0] = bump_.radial(bjs[0].u + (L_time_ * L_time_) * tau * tau);
    } else if (nb == 1) {
      w[0] = bump_.radial(bjs[0].u);
    } else {
      w[0] = weights_->weight(bjs[0].u, bjs[1].u);
      w[1] = weights_->weight(bjs[1].u, bjs[0].u);
    }

    std::vector<S> total(n, S(0.0));
    for (std::size_t b = 0; b < nb; ++b) {
      for (int i = 0; i < n; ++i) total[i] = total[i] + w[b] * diffs[b][i];
    }
    if (nb > 1) {
      // never exceed the largest single-branch correction
      double cap = 0.0;
      for (const auto& d : diffs) {
        double s = 0.0;
        for (const auto& v : d) s += detail::value_of(v) * detail::value_of(v);
        cap = std::max(cap, std::sqrt(s));
      }
      S norm2(0.0);
      for (const auto& v : total) norm2 = norm2 + v * v;
      const double nv = std::sqrt(detail::value_of(norm2));
      if (nv > cap && nv > 0.0) {
        const S scale = cap / safe_root(norm2);
        for (auto& v : total) v = v * scale;
      }
    }
    return total;
  }

  PerturbationMode mode_ = PerturbationMode::autonomous;
  FieldPtr X_;
  std::shared_ptr<const FlowBox> box_;
  BumpProfile bump_;
  std::optional<BranchWeights> weights_;
  std::optional<Reparametrization> rep_;
  double L_time_ = 0.0;
};

namespace detail {

inline void check_bump_box(const FlowBox& box, const BumpProfile& bump) {
  if (std::abs(bump.epsilon() - box.epsilon()) > 1e-12 * box.epsilon()) {
    throw UsageError("bump radius differs from the flow box radius");
  }
}

inline BranchWeights branch_weights_for(const FlowBox& box, const BumpProfile& bump) {
  double sep = bump.epsilon();
  for (const auto& reg : box.overlaps()) sep = std::min(sep, reg.min_distance);
  return BranchWeights(bump, std::max(sep, 1e-3 * bump.epsilon()));
}

}  // namespace detail

inline PerturbedField perturb_nonautonomous(FieldPtr X, std::shared_ptr<const FlowBox> box, const BumpProfile& bump) {
  detail::check_bump_box(*box, bump);
  if (!box->overlap_free()) {
    throw OverlapPresent("flow box has " + std::to_string(box->overlaps().size()) +
                         " overlap regions; use the autonomous mode");
  }
  PerturbedField Y;
  Y.mode_ = PerturbationMode::nonautonomous;
  Y.X_ = std::move(X);
  Y.box_ = std::move(box);
  Y.bump_ = bump;
  Y.L_time_ = std::max(Y.orbit().lipschitz().L, 1e-12);
  return Y;
}

inline PerturbedField perturb_autonomous(FieldPtr X, std::shared_ptr<const FlowBox> box, const BumpProfile& bump) {
  detail::check_bump_box(*box, bump);
  PerturbedField Y;
  Y.mode_ = PerturbationMode::autonomous;
  Y.X_ = std::move(X);
  Y.box_ = std::move(box);
  Y.bump_ = bump;
  if (!Y.box_->overlap_free()) Y.weights_ = detail::branch_weights_for(*Y.box_, bump);
  return Y;
}

namespace detail {

/// sup |p^(q)| for q = 1..K over the slowdown, from Taylor jets of p' = sigma(p).
inline Vec reparametrization_bounds(const PerturbedField& Y, double s_star, double width, int K) {
  Vec out(K, 0.0);
  const JetLayout& L = JetLayout::get(1, K);
  for (int k = 0; k <= 400; ++k) {
    const double p0 = s_star - width + 2.0 * width * k / 400.0;
    Jet p(L, p0);
    for (int it = 0; it < K; ++it) {
      // Picard: p(t) = p0 + int sigma(p)
      Jet rate = Y.sigma(p);
      Jet integ(L, p0);
      for (int m = 0; m < K; ++m) integ.coeff_ref(m + 1) = (rate.is_constant() ? (m == 0 ? rate.value() : 0.0)
                                                                                  : rate.coeff(m)) /
                                                           (m + 1);
      p = integ;
    }
    double fact = 1.0;
    for (int q = 1; q <= K; ++q) {
      fact *= q;
      out[q - 1] = std::max(out[q - 1], std::abs(p.coeff(q)) * fact);
    }
  }
  return out;
}

}  // namespace detail

/// Orbit parameter of minimal speed.
inline double slowest_parameter(const ClosedOrbit& orbit) {
  const double T = orbit.period();
  auto speed = [&](double t) {
    const auto d = orbit.derivatives(t, 1);
    return orbit.manifold().norm({d[0], 0}, d[1]);
  };
  const int N = 4000;
  int best = 0;
  double vb = speed(0.0);
  for (int k = 1; k < N; ++k) {
    const double v = speed(T * k / N);
    if (v < vb) vb = v, best = k;
  }
  const double h = T / N;
  const auto res = boost::math::tools::brent_find_minima(speed, T * best / N - h, T * best / N + h, 50);
  double t = std::fmod(res.first, T);
  return t < 0.0 ? t + T : t;
}

/// Homoclinic mode: slows the orbit down to rest at y_slow.
inline PerturbedField perturb_homoclinic(FieldPtr X, std::shared_ptr<const FlowBox> box, const Vec& y_slow, double tau,
                                         const BumpProfile& bump) {
  detail::check_bump_box(*box, bump);
  PerturbedField Y;
  Y.mode_ = PerturbationMode::homoclinic;
  Y.X_ = X;
  Y.box_ = box;
  Y.bump_ = bump;
  if (!box->overlap_free()) Y.weights_ = detail::branch_weights_for(*box, bump);

  const auto P = box->project(y_slow);
  if (P.branches.empty() || P.branches[0].d > 1e-6) {
    throw BranchConstructionFailure("slow point is not on the closed orbit");
  }
  const double v_slow = box->orbit().manifold().norm({y_slow, 0}, (*X)(y_slow, box->orbit().t_anchor()));
  if (v_slow > 0.05 * box->v_max()) {
    throw NotSlowEnough("speed " + std::to_string(v_slow) + " at the slow point exceeds 0.05 v_max = " +
                        std::to_string(0.05 * box->v_max()));
  }
  Reparametrization rep;
  rep.s_star = P.branches[0].t;
  rep.tau = tau;
  rep.y_slow = y_slow;
  rep.slow_speed = v_slow;
  const double T = box->orbit().period();
  const int K = bump.order() + 1;
  for (double w = 0.5; w < 0.5 * T; w *= 1.25) {
    rep.width = w;
    Y.rep_ = rep;
    rep.p_bounds = detail::reparametrization_bounds(Y, rep.s_star, w, K);
    if (std::all_of(rep.p_bounds.begin(), rep.p_bounds.end(), [&](double b) { return b <= 1.0 + tau; })) {
      Y.rep_ = rep;
      return Y;
    }
  }
  throw BranchConstructionFailure("no slowdown width keeps |p^(q)| <= 1 + tau");
}

// ---- measuring the perturbation ------------------------------------------

struct CrOrder {
  int q = 0;
  double measured = 0.0;
  double bound = 0.0;
  bool pass = false;
};

struct CrDistanceReport {
  PerturbationMode mode = PerturbationMode::autonomous;
  int r = 0;
  double alpha = 0.0, epsilon = 0.0, rho0 = 0.0;
  double b = 0.0, L = 0.0, H = 0.0;
  std::vector<CrOrder> per_order;
  std::uint64_t seed = 0;
  long samples = 0;
  long inside = 0;
  bool pass() const {
    return std::all_of(per_order.begin(), per_order.end(), [](const CrOrder& o) { return o.pass; });
  }
};

namespace detail {

/// X - Y as a field, for Lie derivatives of the difference.
class DifferenceField final : public VectorField {
 public:
  DifferenceField(const VectorField& X, const VectorField& Y) : X_(X), Y_(Y) {}
  int dimension() const override { return X_.dimension(); }
  bool time_dependent() const override { return X_.time_dependent() || Y_.time_dependent(); }
  void eval(std::span<const double> x, double t, std::span<double> out) const override {
    const Vec a = X_(x, t), b = Y_(x, t);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  }
  std::vector<Jet> eval(std::span<const Jet> x, const Jet& t) const override {
    auto a = X_.eval(x, t);
    const auto b = Y_.eval(x, t);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = a[i] - b[i];
    return a;
  }

 private:
  const VectorField& X_;
  const VectorField& Y_;
};

/// q-th directional derivatives D^q_h Z for q = 0..r from one spatial jet of Z.
inline std::vector<Vec> directional_from_jet(const std::vector<Jet>& z, const Vec& h, int r) {
  const int n = static_cast<int>(z.size());
  std::vector<Vec> out(r + 1, Vec(n, 0.0));
  const Jet* ref = nullptr;
  for (const auto& c : z) {
    if (!c.is_constant()) ref = &c;
  }
  for (int i = 0; i < n; ++i) out[0][i] = z[i].value();
  if (!ref) return out;
  const JetLayout& L = *ref->layout();
  for (int k = 1; k < L.size(); ++k) {
    const auto& alpha = L.multi_index(k);
    int q = 0;
    double hp = 1.0;
    for (int j = 0; j < n; ++j) {
      q += alpha[j];
      for (int a = 0; a < alpha[j]; ++a) hp *= h[j];
    }
    if (q > r) continue;
    double qf = 1.0;
    for (int j = 2; j <= q; ++j) qf *= j;
    for (int i = 0; i < n; ++i) out[q][i] += qf * z[i].coeff(k) * hp;
  }
  return out;
}

}  // namespace detail

/// sup over samples and h of |D^q_h (X - Y)| against the bound
/// (rho0 / eps^q) b^2 L^(2r) (L^r + H^r) (eps L^r + 2) alpha.
inline CrDistanceReport cr_distance(const VectorField& X, const PerturbedField& Y, int r, const std::vector<Vec>& hs,
                                    int sample_count, std::uint64_t seed) {
  if (sample_count < 1000) throw UsageError("cr_distance needs at least 1000 samples");
  check_order(r);
  const FlowBox& box = Y.box();
  const ClosedOrbit& orbit = box.orbit();
  const int n = X.dimension();
  const double eps = box.epsilon();
  const double T = orbit.period();

  CrDistanceReport rep;
  rep.mode = Y.mode();
  rep.r = r;
  rep.alpha = orbit.alpha();
  rep.epsilon = eps;
  rep.rho0 = Y.rho0();
  rep.seed = seed;

  const Box region = Box::around(box.samples(), eps);
  const auto lip = estimate_lipschitz(X, region, r, 5, orbit.t_anchor());
  rep.b = lip.b;
  rep.L = lip.L;
  rep.H = orbit.residual().H;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const detail::DifferenceField diff(X, Y);
  Vec sup(r + 1, 0.0);
  for (int k = 0; k < sample_count; ++k) {
    Vec x(n);
    double t = orbit.t_anchor();
    if (k % 2 == 0) {
      // orbit-stratified: random normal offset inside the tube
      const double s = T * (k / 2 + unif(rng)) / ((sample_count + 1) / 2);
      const auto d = orbit.derivatives(s, 1);
      Vec nu(n);
      double vv = 0.0, nv = 0.0;
      for (int i = 0; i < n; ++i) vv += d[1][i] * d[1][i];
      for (int i = 0; i < n; ++i) nu[i] = gauss(rng);
      double proj = 0.0;
      for (int i = 0; i < n; ++i) proj += nu[i] * d[1][i];
      for (int i = 0; i < n; ++i) {
        nu[i] -= proj / vv * d[1][i];
        nv += nu[i] * nu[i];
      }
      nv = std::sqrt(nv);
      const double rad = eps * (0.02 + 1.0 * unif(rng));
      for (int i = 0; i < n; ++i) x[i] = d[0][i] + rad * nu[i] / nv;
      t += s;
    } else {
      for (int i = 0; i < n; ++i) x[i] = region.lo[i] + (region.hi[i] - region.lo[i]) * unif(rng);
      t += T * unif(rng);
    }
    if (Y.box().project(x).outside()) continue;
    ++rep.inside;
    const auto z = spatial_jet(diff, x, t, r);
    for (const auto& h : hs) {
      const auto dq = detail::directional_from_jet(z, h, r);
      for (int q = 0; q <= r; ++q) {
        double s = 0.0;
        for (double v : dq[q]) s += v * v;
        sup[q] = std::max(sup[q], std::sqrt(s));
      }
    }
  }
  rep.samples = sample_count;
  const double Lr = std::pow(rep.L, r);
  for (int q = 0; q <= r; ++q) {
    CrOrder o;
    o.q = q;
    o.measured = sup[q];
    o.bound = rep.rho0 / std::pow(eps, q) * rep.b * rep.b * std::pow(rep.L, 2 * r) * (Lr + std::pow(rep.H, r)) *
              (eps * Lr + 2.0) * rep.alpha;
    o.pass = o.measured <= o.bound;
    rep.per_order.push_back(o);
  }
  return rep;
}

struct ClosureReport {
  Vec x0;
  Vec x_end;
  double position_mismatch = 0.0;
  Vec derivative_mismatch;  // q = 1..r: |psi^(q)(T) - psi^(q)(0)|
};

/// Integrates Y from the orbit's start over one period and compares the
/// time jets of the solution at both ends.
inline ClosureReport verify_closure(const PerturbedField& Y, int r, const OdeOptions& opt = tight_options()) {
  if (Y.mode() == PerturbationMode::homoclinic) throw UsageError("closure check applies to closing modes");
  const ClosedOrbit& orbit = Y.orbit();
  const double t0 = orbit.t_anchor(), T = orbit.period();
  ClosureReport rep;
  rep.x0 = orbit.position(0.0);
  auto Yp = std::shared_ptr<const VectorField>(std::shared_ptr<const VectorField>{}, &Y);
  const auto tr = integrate(Yp, orbit.manifold(), rep.x0, t0, t0 + T, opt);
  rep.x_end = tr.at(t0 + T);
  rep.position_mismatch = detail::vec_dist(rep.x_end, rep.x0);
  const auto a = time_taylor(Y, rep.x0, t0, r);
  const auto b = time_taylor(Y, rep.x_end, t0 + T, r);
  double fact = 1.0;
  for (int q = 1; q <= r; ++q) {
    fact *= q;
    double s = 0.0;
    for (std::size_t i = 0; i < rep.x0.size(); ++i) s += std::pow((b[q][i] - a[q][i]) * fact, 2);
    rep.derivative_mismatch.push_back(std::sqrt(s));
  }
  return rep;
}

struct HomoclinicReport {
  Vec y_slow;
  Vec Y_at_slow;
  bool exact_zero = false;
  double forward_distance = 0.0;   // |psi_50(a) - y_slow|, a on the outgoing arc
  double backward_distance = 0.0;  // |psi_-50(b) - y_slow|, b on the incoming arc
  double horizon = 0.0;
};

inline HomoclinicReport homoclinic_convergence(const PerturbedField& Y, double horizon = 50.0,
                                               const OdeOptions& opt = tight_options()) {
  if (!Y.reparametrization()) throw UsageError("field has no homoclinic slowdown");
  const auto& rp = *Y.reparametrization();
  const ClosedOrbit& orbit = Y.orbit();
  HomoclinicReport rep;
  rep.y_slow = rp.y_slow;
  rep.Y_at_slow = Y(rp.y_slow, orbit.t_anchor());
  rep.exact_zero = std::all_of(rep.Y_at_slow.begin(), rep.Y_at_slow.end(), [](double v) { return v == 0.0; });
  rep.horizon = horizon;
  auto Yp = std::shared_ptr<const VectorField>(std::shared_ptr<const VectorField>{}, &Y);
  const double t0 = orbit.t_anchor();
  const Vec a = orbit.position(rp.s_star + 0.5 * rp.width);
  const Vec b = orbit.position(rp.s_star - 0.5 * rp.width);
  const auto fwd = integrate(Yp, orbit.manifold(), a, t0, t0 + horizon, opt);
  const auto bwd = integrate(Yp, orbit.manifold(), b, t0, t0 - horizon, opt);
  rep.forward_distance = detail::vec_dist(fwd.at(t0 + horizon), rp.y_slow);
  rep.backward_distance = detail::vec_dist(bwd.at(t0 - horizon), rp.y_slow);
  return rep;
}

// ---- scaling fits ---------------------------------------------------------

/// Least-squares slope of log y against log x.
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t m = x.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t k = 0; k < m; ++k) {
    const double a = std::log(x[k]), b = std::log(y[k]);
    sx += a;
    sy += b;
    sxx += a * a;
    sxy += a * b;
  }
  return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}

}  // namespace orbitclose
