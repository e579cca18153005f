#pragma once

// Vector fields: the abstract evaluation contract, fields defined by parsed
// expressions, jets of fields, Lie derivatives and Lipschitz estimates.

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "orbitclose/errors.hpp"
#include "orbitclose/expr.hpp"
#include "orbitclose/jet.hpp"

namespace orbitclose {

using Vec = std::vector<double>;

inline constexpr int kDefaultMaxOrder = 3;

/// A smooth, possibly time-dependent vector field in chart coordinates.
/// Jet evaluation accepts jets of any layout; time may be a jet as well.
class VectorField {
 public:
  virtual ~VectorField() = default;

  virtual int dimension() const = 0;
  virtual bool time_dependent() const = 0;
  virtual void eval(std::span<const double> x, double t, std::span<double> out) const = 0;
  virtual std::vector<Jet> eval(std::span<const Jet> x, const Jet& t) const = 0;

  Vec operator()(std::span<const double> x, double t = 0.0) const {
    Vec out(dimension());
    eval(x, t, out);
    return out;
  }
};

using FieldPtr = std::shared_ptr<const VectorField>;

inline std::vector<std::string> default_coordinate_names(int n) {
  if (n == 1) return {"x"};
  if (n == 2) return {"x", "y"};
  if (n == 3) return {"x", "y", "z"};
  std::vector<std::string> names;
  for (int i = 1; i <= n; ++i) names.push_back("x" + std::to_string(i));
  return names;
}

/// A field given by one expression tree per component.
class FieldSpec final : public VectorField {
 public:
  std::string name;
  std::vector<expr::ExprPtr> components;
  std::vector<std::string> coordinate_names;
  std::map<std::string, double> parameters;

  int dimension() const override { return static_cast<int>(components.size()); }
  bool time_dependent() const override {
    return std::any_of(components.begin(), components.end(), [](const auto& e) { return expr::depends_on_time(*e); });
  }

  void eval(std::span<const double> x, double t, std::span<double> out) const override {
    for (std::size_t i = 0; i < components.size(); ++i) out[i] = expr::eval<double>(*components[i], x, t);
  }

  std::vector<Jet> eval(std::span<const Jet> x, const Jet& t) const override {
    std::vector<Jet> out;
    out.reserve(components.size());
    for (const auto& c : components) out.push_back(expr::eval<Jet>(*c, x, t));
    return out;
  }

  using VectorField::eval;
};

inline FieldSpec parse_field(std::string_view source, int dimension, const std::map<std::string, double>& params = {},
                             std::vector<std::string> names = {}, std::string name = {}) {
  if (dimension < 1) throw ArityError("dimension must be positive");
  if (names.empty()) names = default_coordinate_names(dimension);
  if (static_cast<int>(names.size()) != dimension) throw ArityError("coordinate name count differs from dimension");
  expr::Parser parser(source, names, params);
  auto comps = parser.parse_components();
  if (static_cast<int>(comps.size()) != dimension) {
    throw ArityError("field has " + std::to_string(comps.size()) + " components, dimension is " +
                     std::to_string(dimension));
  }
  FieldSpec spec;
  spec.name = std::move(name);
  spec.components = std::move(comps);
  spec.coordinate_names = std::move(names);
  spec.parameters = params;
  return spec;
}

inline std::string print(const FieldSpec& spec) {
  std::string s = "[";
  for (std::size_t i = 0; i < spec.components.size(); ++i) {
    if (i) s += ", ";
    s += expr::print(*spec.components[i], spec.coordinate_names);
  }
  return s + "]";
}

inline bool structurally_equal(const FieldSpec& a, const FieldSpec& b) {
  if (a.components.size() != b.components.size()) return false;
  for (std::size_t i = 0; i < a.components.size(); ++i) {
    if (!expr::structurally_equal(*a.components[i], *b.components[i])) return false;
  }
  return true;
}

/// Constant field h(x) = v, used as a test direction for Lie derivatives.
class ConstantField final : public VectorField {
 public:
  explicit ConstantField(Vec v) : v_(std::move(v)) {}
  int dimension() const override { return static_cast<int>(v_.size()); }
  bool time_dependent() const override { return false; }
  void eval(std::span<const double>, double, std::span<double> out) const override {
    std::copy(v_.begin(), v_.end(), out.begin());
  }
  std::vector<Jet> eval(std::span<const Jet>, const Jet&) const override { return {v_.begin(), v_.end()}; }
  using VectorField::eval;
  const Vec& value() const { return v_; }

 private:
  Vec v_;
};

/// Value and all mixed partials through `order` in the n spatial variables
/// followed by time (variable index n).
struct FieldJet {
  Vec point;
  double time = 0.0;
  int order = 0;
  Vec value;
  std::vector<Jet> components;

  /// Partial derivative of component i for multi-index alpha (length n+1).
  double derivative(int i, std::span<const int> alpha) const { return components[i].derivative(alpha); }

  /// Spatial Jacobian dX.
  std::vector<Vec> jacobian() const {
    const int n = static_cast<int>(point.size());
    std::vector<Vec> J(n, Vec(n, 0.0));
    std::vector<int> alpha(n + 1, 0);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        alpha[j] = 1;
        J[i][j] = derivative(i, alpha);
        alpha[j] = 0;
      }
    }
    return J;
  }
};

inline void check_order(int order, int max_order = kDefaultMaxOrder + 2) {
  if (order < 0 || order > std::min(max_order, JetLayout::kMaxOrder)) {
    throw OrderUnsupported("order " + std::to_string(order) + " not supported");
  }
}

inline FieldJet eval_jet(const VectorField& field, std::span<const double> point, double time, int order) {
  check_order(order);
  const int n = field.dimension();
  if (static_cast<int>(point.size()) != n) throw DimensionMismatch("point dimension differs from field");
  const JetLayout& layout = JetLayout::get(n + 1, order);
  std::vector<Jet> x;
  for (int i = 0; i < n; ++i) x.push_back(Jet::variable(layout, i, point[i]));
  const Jet t = Jet::variable(layout, n, time);
  FieldJet fj;
  fj.point.assign(point.begin(), point.end());
  fj.time = time;
  fj.order = order;
  fj.components = field.eval(x, t);
  for (auto& c : fj.components) {
    if (c.is_constant()) c = Jet(layout, c.value());
    fj.value.push_back(c.value());
  }
  return fj;
}

/// Spatial jets of a field at (point, time) with time held fixed.
inline std::vector<Jet> spatial_jet(const VectorField& field, std::span<const double> point, double time, int order) {
  const int n = field.dimension();
  const JetLayout& layout = JetLayout::get(n, order);
  std::vector<Jet> x;
  for (int i = 0; i < n; ++i) x.push_back(Jet::variable(layout, i, point[i]));
  auto out = field.eval(x, Jet(time));
  for (auto& c : out) {
    if (c.is_constant()) c = Jet(layout, c.value());
  }
  return out;
}

namespace detail {

/// Bracket [h, Z] = dZ h - dh Z on spatial jets.
inline std::vector<Jet> bracket(const std::vector<Jet>& h, const std::vector<Jet>& z) {
  const int n = static_cast<int>(z.size());
  std::vector<Jet> out(n, Jet(0.0));
  for (int i = 0; i < n; ++i) {
    Jet acc(0.0);
    for (int j = 0; j < n; ++j) acc = acc + z[i].partial(j) * h[j] - h[i].partial(j) * z[j];
    out[i] = acc;
  }
  return out;
}

}  // namespace detail

/// L_{h_q} ... L_{h_1} X at (point, time).
inline Vec lie_derivative(const VectorField& X, const std::vector<const VectorField*>& hs, std::span<const double> point,
                          double time) {
  const int n = X.dimension();
  for (const auto* h : hs) {
    if (h->dimension() != n) throw DimensionMismatch("Lie derivative of fields with different dimensions");
  }
  const int q = static_cast<int>(hs.size());
  check_order(q);
  if (static_cast<int>(point.size()) != n) throw DimensionMismatch("point dimension differs from field");
  if (q == 0) return X(point, time);
  std::vector<Jet> z = spatial_jet(X, point, time, q);
  for (const auto* h : hs) z = detail::bracket(spatial_jet(*h, point, time, q), z);
  Vec out(n);
  for (int i = 0; i < n; ++i) out[i] = z[i].value();
  return out;
}

struct Box {
  Vec lo, hi;

  int dimension() const { return static_cast<int>(lo.size()); }
  bool contains(std::span<const double> x) const {
    for (std::size_t i = 0; i < lo.size(); ++i) {
      if (x[i] < lo[i] || x[i] > hi[i]) return false;
    }
    return true;
  }
  /// Smallest box containing the points, padded by `pad` on every side.
  static Box around(const std::vector<Vec>& pts, double pad) {
    Box b{pts.front(), pts.front()};
    for (const auto& p : pts) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        b.lo[i] = std::min(b.lo[i], p[i]);
        b.hi[i] = std::max(b.hi[i], p[i]);
      }
    }
    for (std::size_t i = 0; i < b.lo.size(); ++i) {
      b.lo[i] -= pad;
      b.hi[i] += pad;
    }
    return b;
  }
};

struct LipschitzEstimate {
  Box region;
  Vec per_order;
  double L = 0.0;
  double b = 0.0;
  long sample_count = 0;
};

namespace detail {

/// Largest singular value of an n x m matrix (row-major) by power iteration
/// on A A^T.
inline double spectral_norm(const std::vector<double>& A, int n, int m, int iterations = 50) {
  std::vector<double> G(n * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int k = 0; k < m; ++k) s += A[i * m + k] * A[j * m + k];
      G[i * n + j] = s;
    }
  }
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = 1.0 + 0.1 * (i + 1);
  double lambda = 0.0;
  for (int it = 0; it < iterations; ++it) {
    Vec w(n, 0.0);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) w[i] += G[i * n + j] * v[j];
    }
    double norm = 0.0;
    for (double c : w) norm += c * c;
    norm = std::sqrt(norm);
    if (norm == 0.0) return 0.0;
    for (int i = 0; i < n; ++i) v[i] = w[i] / norm;
    lambda = norm;
  }
  return std::sqrt(lambda);
}

}  // namespace detail

/// per_order[q] is the largest operator norm of the (q+1)-st spatial
/// derivative tensor over a uniform grid of the box.
inline LipschitzEstimate estimate_lipschitz(const VectorField& field, const Box& region, int order, int grid,
                                            double time = 0.0) {
  const int n = field.dimension();
  if (region.dimension() != n) throw DimensionMismatch("box dimension differs from field");
  if (grid < 2) throw UsageError("grid needs at least 2 points per axis");
  for (int i = 0; i < n; ++i) {
    if (!(region.hi[i] >= region.lo[i])) throw UsageError("empty region");
  }
  check_order(order + 1);
  const JetLayout& layout = JetLayout::get(n, order + 1);

  // flattened tensor column index -> multi-index position in the jet
  std::vector<std::vector<int>> columns(order + 1);
  for (int q = 0; q <= order; ++q) {
    const int m = static_cast<int>(std::pow(n, q + 1));
    columns[q].resize(m);
    for (int c = 0; c < m; ++c) {
      std::vector<int> alpha(n, 0);
      int rem = c;
      for (int k = 0; k <= q; ++k) {
        alpha[rem % n] += 1;
        rem /= n;
      }
      columns[q][c] = layout.find(alpha);
    }
  }

  LipschitzEstimate est;
  est.region = region;
  est.per_order.assign(order + 1, 0.0);
  est.b = 3.0 * n;
  std::vector<int> idx(n, 0);
  Vec x(n);
  long total = 1;
  for (int i = 0; i < n; ++i) total *= grid;
  for (long s = 0; s < total; ++s) {
    long rem = s;
    for (int i = 0; i < n; ++i) {
      const int k = static_cast<int>(rem % grid);
      rem /= grid;
      x[i] = region.lo[i] + (region.hi[i] - region.lo[i]) * k / (grid - 1);
    }
    std::vector<Jet> xj;
    for (int i = 0; i < n; ++i) xj.push_back(Jet::variable(layout, i, x[i]));
    auto val = field.eval(xj, Jet(time));
    for (int q = 0; q <= order; ++q) {
      const int m = static_cast<int>(columns[q].size());
      std::vector<double> A(n * m, 0.0);
      for (int i = 0; i < n; ++i) {
        for (int c = 0; c < m; ++c) {
          const int k = columns[q][c];
          A[i * m + c] = val[i].coeff(k) * layout.factorial_weight(k);
        }
      }
      est.per_order[q] = std::max(est.per_order[q], detail::spectral_norm(A, n, m));
    }
  }
  est.sample_count = total;
  est.L = *std::max_element(est.per_order.begin(), est.per_order.end());
  return est;
}

/// Taylor coefficients c_0..c_K in time of the solution through (x, t),
/// obtained by Picard iteration on univariate jets: x(t+s) = sum c_k s^k.
inline std::vector<Vec> time_taylor(const VectorField& field, std::span<const double> x, double t, int K) {
  const int n = field.dimension();
  const JetLayout& layout = JetLayout::get(1, K);
  std::vector<Jet> xs;
  for (int i = 0; i < n; ++i) xs.push_back(Jet(layout, x[i]));
  const Jet tj = Jet::variable(layout, 0, t);
  for (int it = 0; it < K; ++it) {
    auto f = field.eval(xs, tj);
    for (int i = 0; i < n; ++i) {
      Jet next(layout, x[i]);
      for (int k = 1; k <= K; ++k) next.coeff_ref(k) = f[i].coeff(k - 1) / k;
      xs[i] = next;
    }
  }
  std::vector<Vec> c(K + 1, Vec(n));
  for (int k = 0; k <= K; ++k) {
    for (int i = 0; i < n; ++i) c[k][i] = xs[i].coeff(k);
  }
  return c;
}

}  // namespace orbitclose
