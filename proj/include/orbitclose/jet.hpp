#pragma once

// Truncated multivariate Taylor polynomials ("jets") with forward-mode
// arithmetic. A jet in k variables of order r holds the Taylor coefficients
// c_a = (d^a f)(x0) / a! for every multi-index |a| <= r.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include "orbitclose/errors.hpp"

namespace orbitclose {

class JetLayout {
 public:
  static constexpr int kMaxVars = 8;
  static constexpr int kMaxOrder = 10;

  /// Shared, immutable layout for (nvars, order); lives for the program.
  static const JetLayout& get(int nvars, int order) {
    if (nvars < 1 || nvars > kMaxVars || order < 0 || order > kMaxOrder) {
      throw OrderUnsupported("jet layout (" + std::to_string(nvars) + " vars, order " +
                             std::to_string(order) + ") out of range");
    }
    static std::mutex mu;
    static std::map<std::pair<int, int>, std::unique_ptr<JetLayout>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto& slot = cache[{nvars, order}];
    if (!slot) slot.reset(new JetLayout(nvars, order));
    return *slot;
  }

  int nvars() const noexcept { return nvars_; }
  int order() const noexcept { return order_; }
  int size() const noexcept { return static_cast<int>(index_.size()); }
  int degree(int k) const noexcept { return degree_[k]; }
  const std::vector<int>& multi_index(int k) const noexcept { return index_[k]; }
  /// prod_i a_i! for slot k.
  double factorial_weight(int k) const noexcept { return weight_[k]; }
  /// Slot of a + e_var, or -1 when that exceeds the order.
  int raise(int var, int k) const noexcept { return raise_[var][k]; }

  int find(std::span<const int> alpha) const {
    auto it = lookup_.find(std::vector<int>(alpha.begin(), alpha.end()));
    return it == lookup_.end() ? -1 : it->second;
  }

  struct Term {
    int a, b, out;
  };
  const std::vector<Term>& products() const noexcept { return products_; }

 private:
  JetLayout(int nvars, int order) : nvars_(nvars), order_(order) {
    std::vector<int> alpha(nvars, 0);
    for (int d = 0; d <= order; ++d) enumerate(alpha, 0, d);
    for (int k = 0; k < size(); ++k) lookup_[index_[k]] = k;
    raise_.assign(nvars, std::vector<int>(size(), -1));
    for (int v = 0; v < nvars; ++v) {
      for (int k = 0; k < size(); ++k) {
        auto up = index_[k];
        ++up[v];
        auto it = lookup_.find(up);
        if (it != lookup_.end()) raise_[v][k] = it->second;
      }
    }
    for (int i = 0; i < size(); ++i) {
      for (int j = 0; j < size(); ++j) {
        if (degree_[i] + degree_[j] > order) continue;
        std::vector<int> sum(nvars);
        for (int v = 0; v < nvars; ++v) sum[v] = index_[i][v] + index_[j][v];
        products_.push_back({i, j, lookup_.at(sum)});
      }
    }
  }

  void enumerate(std::vector<int>& alpha, int var, int remaining) {
    if (var == nvars_ - 1) {
      alpha[var] = remaining;
      index_.push_back(alpha);
      int deg = 0;
      double w = 1.0;
      for (int a : alpha) {
        deg += a;
        for (int m = 2; m <= a; ++m) w *= m;
      }
      degree_.push_back(deg);
      weight_.push_back(w);
      return;
    }
    for (int a = remaining; a >= 0; --a) {
      alpha[var] = a;
      enumerate(alpha, var + 1, remaining - a);
    }
    alpha[var] = 0;
  }

  int nvars_;
  int order_;
  std::vector<std::vector<int>> index_;
  std::vector<int> degree_;
  std::vector<double> weight_;
  std::map<std::vector<int>, int> lookup_;
  std::vector<std::vector<int>> raise_;
  std::vector<Term> products_;
};

/// A jet with no layout is a plain constant; it adopts the layout of
/// whatever it is combined with.
class Jet {
 public:
  Jet(double v = 0.0) : c_{v} {}  // NOLINT: implicit by design of generic code

  Jet(const JetLayout& layout, double v) : layout_(&layout), c_(layout.size(), 0.0) { c_[0] = v; }

  static Jet variable(const JetLayout& layout, int var, double v) {
    Jet j(layout, v);
    if (layout.order() >= 1) {
      std::vector<int> alpha(layout.nvars(), 0);
      alpha[var] = 1;
      j.c_[layout.find(alpha)] = 1.0;
    }
    return j;
  }

  double value() const noexcept { return c_[0]; }
  const JetLayout* layout() const noexcept { return layout_; }
  bool is_constant() const noexcept { return layout_ == nullptr; }
  int order() const noexcept { return layout_ ? layout_->order() : 0; }
  int size() const noexcept { return static_cast<int>(c_.size()); }

  double coeff(int k) const noexcept { return k < size() ? c_[k] : 0.0; }
  double& coeff_ref(int k) { return c_[k]; }
  std::span<const double> coeffs() const noexcept { return c_; }

  /// Partial derivative with multi-index alpha (not divided by alpha!).
  double derivative(std::span<const int> alpha) const {
    int total = 0;
    for (int a : alpha) total += a;
    if (total == 0) return value();
    if (!layout_) return 0.0;
    const int k = layout_->find(alpha);
    if (k < 0) throw OrderUnsupported("derivative order exceeds jet order");
    return c_[k] * layout_->factorial_weight(k);
  }

  /// d/dx_var as a jet; the top-degree coefficients become zero.
  Jet partial(int var) const {
    if (!layout_) return Jet(0.0);
    Jet out(*layout_, 0.0);
    for (int k = 0; k < size(); ++k) {
      const int up = layout_->raise(var, k);
      if (up < 0) continue;
      out.c_[k] = c_[up] * (layout_->multi_index(k)[var] + 1);
    }
    return out;
  }

  Jet operator-() const {
    Jet r = *this;
    for (double& v : r.c_) v = -v;
    return r;
  }

  Jet& operator+=(const Jet& o) {
    adopt(o);
    for (int k = 0; k < o.size(); ++k) c_[k] += o.c_[k];
    return *this;
  }
  Jet& operator-=(const Jet& o) {
    adopt(o);
    for (int k = 0; k < o.size(); ++k) c_[k] -= o.c_[k];
    return *this;
  }
  Jet& operator*=(const Jet& o) {
    *this = *this * o;
    return *this;
  }
  Jet& operator/=(const Jet& o) {
    *this = *this / o;
    return *this;
  }
  Jet& operator*=(double s) {
    for (double& v : c_) v *= s;
    return *this;
  }

  friend Jet operator+(Jet a, const Jet& b) { return a += b; }
  friend Jet operator-(Jet a, const Jet& b) { return a -= b; }

  friend Jet operator*(const Jet& a, const Jet& b) {
    if (a.is_constant()) return scaled(b, a.value());
    if (b.is_constant()) return scaled(a, b.value());
    check_same(a, b);
    Jet r(*a.layout_, 0.0);
    for (const auto& t : a.layout_->products()) r.c_[t.out] += a.c_[t.a] * b.c_[t.b];
    return r;
  }

  friend Jet operator/(const Jet& a, const Jet& b) {
    if (b.is_constant()) return scaled(a, 1.0 / b.value());
    return a * reciprocal(b);
  }

  friend Jet reciprocal(const Jet& x) {
    const double a = x.value();
    if (a == 0.0) throw DomainError("division by zero");
    std::vector<double> t(x.order() + 1);
    double p = 1.0 / a;
    for (int k = 0; k <= x.order(); ++k) {
      t[k] = (k % 2 == 0 ? 1.0 : -1.0) * p;
      p /= a;
    }
    return compose(x, t);
  }

  /// sum_k taylor[k] * (x - x0)^k where x0 = x.value().
  friend Jet compose(const Jet& x, std::span<const double> taylor) {
    if (x.is_constant()) return Jet(taylor[0]);
    Jet h = x;
    h.c_[0] = 0.0;
    const int top = std::min<int>(x.order(), static_cast<int>(taylor.size()) - 1);
    Jet r(*x.layout_, taylor[top]);
    for (int k = top - 1; k >= 0; --k) {
      r = r * h;
      r.c_[0] += taylor[k];
    }
    return r;
  }

  friend Jet exp(const Jet& x) {
    std::vector<double> t(x.order() + 1);
    const double e = std::exp(x.value());
    double f = 1.0;
    for (int k = 0; k <= x.order(); ++k) {
      if (k > 0) f *= k;
      t[k] = e / f;
    }
    return compose(x, t);
  }

  friend Jet log(const Jet& x) {
    const double a = x.value();
    if (!(a > 0.0)) throw DomainError("log of non-positive value");
    std::vector<double> t(x.order() + 1);
    t[0] = std::log(a);
    double p = a;
    for (int k = 1; k <= x.order(); ++k) {
      t[k] = (k % 2 == 1 ? 1.0 : -1.0) / (k * p);
      p *= a;
    }
    return compose(x, t);
  }

  friend Jet sin(const Jet& x) { return trig(x, 0); }
  friend Jet cos(const Jet& x) { return trig(x, 1); }

  /// Real power via the generalized binomial series; base must be positive
  /// unless the exponent is a non-negative integer.
  friend Jet pow(const Jet& x, double p) {
    if (p == std::floor(p) && std::abs(p) <= 64) return ipow(x, static_cast<int>(p));
    const double a = x.value();
    if (!(a > 0.0)) throw DomainError("non-integer power of non-positive value");
    std::vector<double> t(x.order() + 1);
    double binom = 1.0;
    for (int k = 0; k <= x.order(); ++k) {
      t[k] = binom * std::pow(a, p - k);
      binom *= (p - k) / (k + 1);
    }
    return compose(x, t);
  }

  friend Jet sqrt(const Jet& x) {
    if (!(x.value() > 0.0)) {
      if (x.value() == 0.0 && x.order() == 0) return Jet(0.0);
      throw DomainError("sqrt of non-positive value");
    }
    return pow(x, 0.5);
  }

  friend Jet ipow(const Jet& x, int n) {
    if (n < 0) return reciprocal(ipow(x, -n));
    Jet result(1.0);
    Jet base = x;
    while (n > 0) {
      if (n & 1) result = result * base;
      n >>= 1;
      if (n) base = base * base;
    }
    return result;
  }

 private:
  static Jet scaled(const Jet& a, double s) {
    Jet r = a;
    for (double& v : r.c_) v *= s;
    return r;
  }

  static void check_same(const Jet& a, const Jet& b) {
    if (a.layout_ != b.layout_) throw DimensionMismatch("jets with different layouts combined");
  }

  void adopt(const Jet& o) {
    if (o.is_constant()) return;
    if (is_constant()) {
      const double v = c_[0];
      layout_ = o.layout_;
      c_.assign(layout_->size(), 0.0);
      c_[0] = v;
      return;
    }
    check_same(*this, o);
  }

  static Jet trig(const Jet& x, int phase) {
    std::vector<double> t(x.order() + 1);
    const double s = std::sin(x.value());
    const double c = std::cos(x.value());
    // derivatives of sin cycle: sin, cos, -sin, -cos
    const double cyc[4] = {s, c, -s, -c};
    double f = 1.0;
    for (int k = 0; k <= x.order(); ++k) {
      if (k > 0) f *= k;
      t[k] = cyc[(k + phase) % 4] / f;
    }
    return compose(x, t);
  }

  const JetLayout* layout_ = nullptr;
  std::vector<double> c_;
};

inline Jet operator+(const Jet& a, double b) { return a + Jet(b); }
inline Jet operator+(double a, const Jet& b) { return Jet(a) + b; }
inline Jet operator-(const Jet& a, double b) { return a - Jet(b); }
inline Jet operator-(double a, const Jet& b) { return Jet(a) - b; }
inline Jet operator*(const Jet& a, double b) { return a * Jet(b); }
inline Jet operator*(double a, const Jet& b) { return Jet(a) * b; }
inline Jet operator/(const Jet& a, double b) { return a / Jet(b); }
inline Jet operator/(double a, const Jet& b) { return Jet(a) / b; }

// Scalar helpers shared by code templated on double or Jet.
inline double value_of(double x) noexcept { return x; }
inline double value_of(const Jet& x) noexcept { return x.value(); }

inline double ipow(double x, int n) {
  double r = 1.0;
  const bool inv = n < 0;
  for (int k = 0; k < std::abs(n); ++k) r *= x;
  return inv ? 1.0 / r : r;
}

/// Replaces the value of x by v, keeping its derivative coefficients.
inline double with_value(double, double v) { return v; }
inline Jet with_value(Jet x, double v) {
  if (x.is_constant()) return Jet(v);
  x.coeff_ref(0) = v;
  return x;
}

/// |v|^k written in terms of u = |v|^2. At u == 0 the Taylor coefficients
/// through the jet order vanish when k exceeds that order, which lets C^r
/// radial profiles be evaluated on their own centre line.
inline double radial_power(double u, int k) { return k % 2 == 0 ? ipow(u, k / 2) : std::pow(u, 0.5 * k); }
inline Jet radial_power(const Jet& u, int k) {
  if (k % 2 == 0) return ipow(u, k / 2);
  if (u.value() == 0.0) {
    if (k > u.order()) return u.is_constant() ? Jet(0.0) : Jet(*u.layout(), 0.0);
    throw DomainError("odd radial power at the centre exceeds smoothness of the jet");
  }
  return pow(u, 0.5 * k);
}

/// Distance from its square; at zero the jet carries no derivative data.
inline double safe_root(double u) { return std::sqrt(u); }
inline Jet safe_root(const Jet& u) {
  if (u.value() == 0.0) return u.is_constant() ? Jet(0.0) : Jet(*u.layout(), 0.0);
  return sqrt(u);
}

}  // namespace orbitclose
