#pragma once

// Dormand-Prince 5(4) integrator with dense output. When the caller can
// supply the second derivative of the solution, the dense output is the
// quintic Hermite interpolant on each step; otherwise the method's own
// continuous extension is used.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "orbitclose/errors.hpp"

namespace orbitclose {

using Rhs = std::function<void(double t, std::span<const double> y, std::span<double> dy)>;
/// Second derivative of the solution given (t, y, y').
using Accel = std::function<void(double t, std::span<const double> y, std::span<const double> dy, std::span<double> ddy)>;
/// Called after each accepted step on [t_prev, t] with the new state;
/// returning true stops the run there.
using StepObserver = std::function<bool(double t_prev, double t, std::span<const double> y)>;

struct OdeOptions {
  double rtol = 1e-10;
  double atol = 1e-10;
  double h_init = 0.0;
  double h_max = std::numeric_limits<double>::infinity();
  long max_steps = 2'000'000;
  double blowup = 1e8;
};

struct OdeStats {
  long accepted = 0;
  long rejected = 0;
  long rhs_evals = 0;
};

/// Piecewise polynomial solution; step k covers [t[k], t[k+1]] and stores
/// monomial coefficients in the normalized step variable theta in [0,1].
class OdeSolution {
 public:
  static constexpr int kDegree = 5;

  int dimension() const { return n_; }
  double t_begin() const { return t_.front(); }
  double t_end() const { return t_.back(); }
  const std::vector<double>& step_times() const { return t_; }
  const std::vector<std::vector<double>>& step_states() const { return y_; }
  const OdeStats& stats() const { return stats_; }
  const OdeOptions& options() const { return opts_; }

  std::vector<double> at(double t) const {
    std::vector<double> out(n_);
    eval(t, 0, out);
    return out;
  }
  std::vector<double> derivative_at(double t) const {
    std::vector<double> out(n_);
    eval(t, 1, out);
    return out;
  }

  /// Value (deriv = 0) or first time-derivative (deriv = 1) of the interpolant.
  void eval(double t, int deriv, std::span<double> out) const {
    const std::size_t k = locate(t);
    if (deriv == 0 && t == t_[k]) {
      std::copy(y_[k].begin(), y_[k].end(), out.begin());
      return;
    }
    const double h = t_[k + 1] - t_[k];
    const double th = (t - t_[k]) / h;
    const double* c = coef_[k].data();
    for (int i = 0; i < n_; ++i) {
      double acc = 0.0;
      if (deriv == 0) {
        for (int d = kDegree; d >= 0; --d) acc = acc * th + c[d * n_ + i];
      } else {
        for (int d = kDegree; d >= 1; --d) acc = acc * th + d * c[d * n_ + i];
        acc /= h;
      }
      out[i] = acc;
    }
  }

  bool covers(double t) const {
    const double lo = std::min(t_begin(), t_end()), hi = std::max(t_begin(), t_end());
    return t >= lo && t <= hi;
  }

 private:
  friend OdeSolution dopri5(const Rhs&, double, std::span<const double>, double, const OdeOptions&, const Accel&,
                            const StepObserver&);

  std::size_t locate(double t) const {
    if (!covers(t)) throw DomainError("time outside the integrated span");
    if (t_.size() == 1) throw DomainError("solution has no steps");
    const bool fwd = t_.back() >= t_.front();
    std::size_t lo = 0, hi = t_.size() - 1;
    while (hi - lo > 1) {
      const std::size_t mid = (lo + hi) / 2;
      if (fwd ? t_[mid] <= t : t_[mid] >= t) lo = mid;
      else hi = mid;
    }
    return lo;
  }

  int n_ = 0;
  std::vector<double> t_;
  std::vector<std::vector<double>> y_;
  std::vector<std::vector<double>> coef_;
  OdeStats stats_;
  OdeOptions opts_;
};

inline OdeSolution dopri5(const Rhs& f, double t0, std::span<const double> y0, double t1, const OdeOptions& opt = {},
                          const Accel& accel = nullptr, const StepObserver& observer = nullptr) {
  // Dormand-Prince coefficients
  constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  constexpr double a21 = 1.0 / 5;
  constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                   a65 = -5103.0 / 18656;
  constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784, a76 = 11.0 / 84;
  constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                   e6 = 22.0 / 525, e7 = -1.0 / 40;
  constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                   d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                   d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

  const int n = static_cast<int>(y0.size());
  OdeSolution sol;
  sol.n_ = n;
  sol.opts_ = opt;
  sol.t_.push_back(t0);
  sol.y_.emplace_back(y0.begin(), y0.end());
  if (t1 == t0) {
    sol.t_.push_back(t0);
    sol.y_.emplace_back(y0.begin(), y0.end());
    sol.coef_.emplace_back((OdeSolution::kDegree + 1) * n, 0.0);
    for (int i = 0; i < n; ++i) sol.coef_.back()[i] = y0[i];
    return sol;
  }
  const double dir = t1 > t0 ? 1.0 : -1.0;

  std::vector<double> y(y0.begin(), y0.end()), ynew(n), ytmp(n), err(n);
  std::vector<double> k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), acc0(n), acc1(n);
  auto call = [&](double t, const std::vector<double>& s, std::vector<double>& out) {
    f(t, s, out);
    ++sol.stats_.rhs_evals;
  };
  call(t0, y, k1);

  auto scale = [&](int, double a, double b) { return opt.atol + opt.rtol * std::max(std::abs(a), std::abs(b)); };

  double h = opt.h_init;
  if (h <= 0.0) {
    // initial step from the local Lipschitz behaviour
    double d0 = 0.0, d1n = 0.0;
    for (int i = 0; i < n; ++i) {
      const double sc = scale(i, y[i], y[i]);
      d0 += (y[i] / sc) * (y[i] / sc);
      d1n += (k1[i] / sc) * (k1[i] / sc);
    }
    d0 = std::sqrt(d0 / n);
    d1n = std::sqrt(d1n / n);
    double h0 = (d0 < 1e-5 || d1n < 1e-5) ? 1e-6 : 0.01 * d0 / d1n;
    h0 = std::min(h0, std::abs(t1 - t0));
    for (int i = 0; i < n; ++i) ytmp[i] = y[i] + dir * h0 * k1[i];
    call(t0 + dir * h0, ytmp, k2);
    double d2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double sc = scale(i, y[i], y[i]);
      d2 += ((k2[i] - k1[i]) / sc) * ((k2[i] - k1[i]) / sc);
    }
    d2 = std::sqrt(d2 / n) / h0;
    const double h1 = std::max(d1n, d2) <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / std::max(d1n, d2), 0.2);
    h = std::min({100 * h0, h1, opt.h_max});
  }
  h = std::min(h, std::abs(t1 - t0));

  double t = t0;
  double err_old = 1e-4;
  bool last_rejected = false;
  if (accel) accel(t, y, k1, acc0);
  while (dir * (t1 - t) > 0.0) {
    if (sol.stats_.accepted + sol.stats_.rejected >= opt.max_steps) throw ToleranceFailure("step budget exhausted");
    if (h < 1e-14 * std::max(1.0, std::abs(t))) throw ToleranceFailure("step size underflow");
    bool final_step = false;
    if (h >= std::abs(t1 - t) * (1 - 1e-14)) {
      h = std::abs(t1 - t);
      final_step = true;
    }
    const double hs = dir * h;

    for (int i = 0; i < n; ++i) ytmp[i] = y[i] + hs * a21 * k1[i];
    call(t + c2 * hs, ytmp, k2);
    for (int i = 0; i < n; ++i) ytmp[i] = y[i] + hs * (a31 * k1[i] + a32 * k2[i]);
    call(t + c3 * hs, ytmp, k3);
    for (int i = 0; i < n; ++i) ytmp[i] = y[i] + hs * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
    call(t + c4 * hs, ytmp, k4);
    for (int i = 0; i < n; ++i) ytmp[i] = y[i] + hs * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
    call(t + c5 * hs, ytmp, k5);
    for (int i = 0; i < n; ++i)
      ytmp[i] = y[i] + hs * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] + a65 * k5[i]);
    const double tnew = final_step ? t1 : t + hs;
    call(tnew, ytmp, k6);
    for (int i = 0; i < n; ++i)
      ynew[i] = y[i] + hs * (a71 * k1[i] + a73 * k3[i] + a74 * k4[i] + a75 * k5[i] + a76 * k6[i]);
    call(tnew, ynew, k7);

    double e = 0.0;
    bool finite = true;
    for (int i = 0; i < n; ++i) {
      err[i] = hs * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
      const double r = err[i] / scale(i, y[i], ynew[i]);
      e += r * r;
      finite = finite && std::isfinite(ynew[i]);
    }
    e = std::sqrt(e / n);
    if (!finite) e = 1e10;

    if (e <= 1.0) {
      // PI step-size control
      double fac = 0.9 * std::pow(e, -0.17) * std::pow(err_old, 0.04);
      fac = std::clamp(fac, 0.2, 10.0);
      if (last_rejected) fac = std::min(fac, 1.0);
      err_old = std::max(e, 1e-4);

      std::vector<double> coef((OdeSolution::kDegree + 1) * n, 0.0);
      if (accel) {
        accel(tnew, ynew, k7, acc1);
        for (int i = 0; i < n; ++i) {
          const double c0 = y[i], c1 = hs * k1[i], c2h = 0.5 * hs * hs * acc0[i];
          const double dd = ynew[i] - (c0 + c1 + c2h);
          const double ee = hs * k7[i] - (c1 + 2 * c2h);
          const double gg = hs * hs * acc1[i] - 2 * c2h;
          coef[0 * n + i] = c0;
          coef[1 * n + i] = c1;
          coef[2 * n + i] = c2h;
          coef[3 * n + i] = 10 * dd - 4 * ee + 0.5 * gg;
          coef[4 * n + i] = -15 * dd + 7 * ee - gg;
          coef[5 * n + i] = 6 * dd - 3 * ee + 0.5 * gg;
        }
        acc0 = acc1;
      } else {
        for (int i = 0; i < n; ++i) {
          const double r1 = y[i];
          const double r2 = ynew[i] - y[i];
          const double r3 = hs * k1[i] - r2;
          const double r4 = r2 - hs * k7[i] - r3;
          const double r5 = hs * (d1 * k1[i] + d3 * k3[i] + d4 * k4[i] + d5 * k5[i] + d6 * k6[i] + d7 * k7[i]);
          coef[0 * n + i] = r1;
          coef[1 * n + i] = r2 + r3;
          coef[2 * n + i] = -r3 + r4 + r5;
          coef[3 * n + i] = -r4 - 2 * r5;
          coef[4 * n + i] = r5;
        }
      }
      const double tprev = t;
      t = tnew;
      y = ynew;
      k1 = k7;
      sol.t_.push_back(t);
      sol.y_.push_back(y);
      sol.coef_.push_back(std::move(coef));
      ++sol.stats_.accepted;
      for (int i = 0; i < n; ++i) {
        if (std::abs(y[i]) > opt.blowup) throw BlowUp("solution norm exceeds bound at t = " + std::to_string(t));
      }
      if (observer && observer(tprev, t, y)) break;
      h = std::min(h * fac, opt.h_max);
      last_rejected = false;
    } else {
      ++sol.stats_.rejected;
      h *= std::max(0.2, 0.9 * std::pow(e, -0.2));
      last_rejected = true;
    }
  }
  return sol;
}

}  // namespace orbitclose
