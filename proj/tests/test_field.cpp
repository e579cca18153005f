#include <cmath>
#include <random>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "orbitclose/field.hpp"

using namespace orbitclose;

namespace {

// Random smooth 3-D fields assembled from a fixed pool of analytic terms.
FieldSpec random_spec(std::mt19937_64& rng) {
  static const char* terms[] = {"x*y", "sin(z)", "exp(0.3*x)", "y^2", "cos(x*z)", "sqrt(2+y^2)", "log(3+x^2)",
                                "x/(2+z^2)", "z^3", "y*exp(-x^2)"};
  std::uniform_int_distribution<int> pick(0, 9);
  std::uniform_real_distribution<double> coef(-2.0, 2.0);
  std::string src = "[";
  for (int i = 0; i < 3; ++i) {
    if (i) src += ", ";
    for (int k = 0; k < 3; ++k) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%s%.6f*%s", k ? " + " : "", coef(rng), terms[pick(rng)]);
      src += buf;
    }
  }
  src += "]";
  return parse_field(src, 3);
}

}  // namespace

TEST(ParseField, RotationComponents) {
  auto spec = parse_field("[-y, x]", 2);
  EXPECT_EQ(spec.dimension(), 2);
  EXPECT_FALSE(spec.time_dependent());
  const double p[] = {3.0, 5.0};
  EXPECT_EQ(spec(p), (Vec{-5.0, 3.0}));
}

TEST(ParseField, ArityAndTime) {
  EXPECT_THROW(parse_field("[x, y]", 3), ArityError);
  EXPECT_TRUE(parse_field("[cos(t)*x]", 1).time_dependent());
  EXPECT_THROW(parse_field("[x +]", 1), SyntaxError);
}

TEST(ParseField, PrintRoundTrip) {
  auto spec = parse_field("[s*(y-x), x*(r-z)-y, x*y-b*z]", 3, {{"s", 10.0}, {"r", 28.0}, {"b", -8.0 / 3.0}});
  auto again = parse_field(print(spec), 3);
  EXPECT_TRUE(structurally_equal(spec, again));
  EXPECT_EQ(print(spec), print(again));
}

TEST(EvalJet, LinearAndIdentityFields) {
  auto rot = parse_field("[-y, x]", 2);
  const double p[] = {1.0, 0.0};
  auto fj = eval_jet(rot, p, 0.0, 1);
  EXPECT_EQ(fj.value, (Vec{0.0, 1.0}));
  auto J = fj.jacobian();
  EXPECT_EQ(J[0], (Vec{0.0, -1.0}));
  EXPECT_EQ(J[1], (Vec{1.0, 0.0}));

  auto id = parse_field("[x]", 1);
  const double q[] = {2.0};
  auto ij = eval_jet(id, q, 0.0, 2);
  const int d1[] = {1, 0}, d2[] = {2, 0};
  EXPECT_EQ(ij.value[0], 2.0);
  EXPECT_EQ(ij.derivative(0, d1), 1.0);
  EXPECT_EQ(ij.derivative(0, d2), 0.0);
}

TEST(EvalJet, LorenzValueByHand) {
  auto lorenz = parse_field("[s*(y-x), x*(r-z)-y, x*y-b*z]", 3, {{"s", 10.0}, {"r", 28.0}, {"b", 8.0 / 3.0}});
  const double p[] = {1.0, 1.0, 1.0};
  auto fj = eval_jet(lorenz, p, 0.0, 0);
  EXPECT_DOUBLE_EQ(fj.value[0], 0.0);
  EXPECT_DOUBLE_EQ(fj.value[1], 26.0);
  EXPECT_DOUBLE_EQ(fj.value[2], 1.0 - 8.0 / 3.0);
}

TEST(EvalJet, OrderLimitsAndDomain) {
  auto spec = parse_field("[1/x]", 1);
  const double zero[] = {0.0};
  EXPECT_THROW(eval_jet(spec, zero, 0.0, 1), DomainError);
  const double one[] = {1.0};
  EXPECT_THROW(eval_jet(spec, one, 0.0, 40), OrderUnsupported);
}

TEST(EvalJet, MatchesCentralFiniteDifferences) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double h = 1e-4;
  for (int trial = 0; trial < 100; ++trial) {
    auto spec = random_spec(rng);
    Vec p{u(rng), u(rng), u(rng)};
    auto fj = eval_jet(spec, p, 0.0, 2);
    for (int j = 0; j < 3; ++j) {
      Vec pp = p, pm = p;
      pp[j] += h;
      pm[j] -= h;
      Vec fp = spec(pp), fm = spec(pm), f0 = spec(p);
      std::vector<int> a1(4, 0), a2(4, 0);
      a1[j] = 1;
      a2[j] = 2;
      for (int i = 0; i < 3; ++i) {
        const double d1 = (fp[i] - fm[i]) / (2 * h);
        const double d2 = (fp[i] - 2 * f0[i] + fm[i]) / (h * h);
        const double j1 = fj.derivative(i, a1), j2 = fj.derivative(i, a2);
        EXPECT_NEAR(j1, d1, 1e-5 * std::max(1.0, std::abs(j1))) << print(spec);
        // the second difference loses ~8 digits to cancellation
        EXPECT_NEAR(j2, d2, 1e-5 * std::max(1.0, std::abs(j2)) + 2e-7 * std::abs(f0[i]) / (h * h) * 1e-2)
            << print(spec);
      }
    }
  }
}

TEST(EvalJet, MixedPartialsSymmetric) {
  std::mt19937_64 rng(5);
  auto spec = random_spec(rng);
  const double p[] = {0.3, -0.2, 0.4};
  auto fj = eval_jet(spec, p, 0.0, 3);
  // jets store each multi-index once, so symmetry holds by construction;
  // compare against nested partial() calls which apply the rule explicitly
  const auto& L = JetLayout::get(3, 3);
  std::vector<Jet> x;
  for (int i = 0; i < 3; ++i) x.push_back(Jet::variable(L, i, p[i]));
  auto v = spec.eval(x, Jet(0.0));
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(v[i].partial(0).partial(1).value(), v[i].partial(1).partial(0).value(), 1e-12);
    const int a[] = {1, 1, 0, 0};
    EXPECT_NEAR(fj.derivative(i, a), v[i].partial(1).partial(0).value(), 1e-12);
  }
}

TEST(LieDerivative, HandExamples) {
  auto X = parse_field("[x, 0]", 2);
  auto h = parse_field("[1, 0]", 2);
  const double p[] = {0.3, -2.0};
  EXPECT_EQ(lie_derivative(X, {&h}, p, 0.0), (Vec{1.0, 0.0}));
  ConstantField c1(Vec{1.0, 2.0}), c2(Vec{-0.5, 0.25});
  EXPECT_EQ(lie_derivative(c1, {&c2}, p, 0.0), (Vec{0.0, 0.0}));
  EXPECT_EQ(lie_derivative(X, {}, p, 0.0), X(p));
  auto X3 = parse_field("[x, y, z]", 3);
  EXPECT_THROW(lie_derivative(X3, {&h}, p, 0.0), DimensionMismatch);
}

TEST(LieDerivative, BracketAntisymmetry) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    auto X = random_spec(rng);
    auto h = random_spec(rng);
    Vec p{u(rng), u(rng), u(rng)};
    Vec a = lie_derivative(X, {&h}, p, 0.0);
    Vec b = lie_derivative(h, {&X}, p, 0.0);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(a[i], -b[i], 1e-10 * std::max(1.0, std::abs(a[i])));
  }
}

TEST(LieDerivative, SecondOrderAgainstNestedFiniteDifference) {
  // L_h2 L_h1 X with constant h is the second directional derivative
  auto X = parse_field("[sin(x)*y, x^2*y^3]", 2);
  ConstantField h1(Vec{0.6, 0.8}), h2(Vec{1.0, 0.0});
  const double p[] = {0.4, 0.9};
  Vec got = lie_derivative(X, {&h1, &h2}, p, 0.0);
  const double e = 1e-4;
  auto dir = [&](Vec q) {
    Vec a = q, b = q;
    for (int i = 0; i < 2; ++i) {
      a[i] += e * h1.value()[i];
      b[i] -= e * h1.value()[i];
    }
    Vec fa = X(a), fb = X(b);
    return Vec{(fa[0] - fb[0]) / (2 * e), (fa[1] - fb[1]) / (2 * e)};
  };
  Vec qp{p[0] + e, p[1]}, qm{p[0] - e, p[1]};
  Vec dp = dir(qp), dm = dir(qm);
  for (int i = 0; i < 2; ++i) EXPECT_NEAR(got[i], (dp[i] - dm[i]) / (2 * e), 1e-5);
}

TEST(Lipschitz, LinearFieldMatchesSvd) {
  Eigen::Matrix3d A;
  A << 1.0, -2.0, 0.5, 0.3, 0.7, -1.1, 2.0, 0.0, 0.4;
  char buf[512];
  std::snprintf(buf, sizeof buf, "[%.17g*x + %.17g*y + %.17g*z, %.17g*x + %.17g*y + %.17g*z, %.17g*x + %.17g*y + %.17g*z]",
                A(0, 0), A(0, 1), A(0, 2), A(1, 0), A(1, 1), A(1, 2), A(2, 0), A(2, 1), A(2, 2));
  auto spec = parse_field(buf, 3);
  auto est = estimate_lipschitz(spec, Box{{-1, -1, -1}, {1, 1, 1}}, 0, 3);
  const double sigma = Eigen::JacobiSVD<Eigen::Matrix3d>(A).singularValues()(0);
  EXPECT_NEAR(est.per_order[0], sigma, 0.01 * sigma);
  EXPECT_EQ(est.b, 9.0);
}

TEST(Lipschitz, ConstantAndQuadratic) {
  auto c = parse_field("[1, 2]", 2);
  auto est = estimate_lipschitz(c, Box{{0, 0}, {1, 1}}, 2, 4);
  for (double v : est.per_order) EXPECT_EQ(v, 0.0);
  auto sq = parse_field("[x^2]", 1);
  auto e2 = estimate_lipschitz(sq, Box{{0.0}, {2.0}}, 0, 101);
  EXPECT_NEAR(e2.per_order[0], 4.0, 0.02);
  EXPECT_GE(e2.L, e2.per_order[0]);
}

TEST(Lipschitz, MonotoneInNestedBoxes) {
  auto spec = parse_field("[sin(x)*y^2, x*y - y^3]", 2);
  double prev = 0.0;
  for (double r : {0.5, 1.0, 2.0}) {
    auto est = estimate_lipschitz(spec, Box{{-r, -r}, {r, r}}, 1, 9);
    EXPECT_GE(est.L, prev);
    prev = est.L;
  }
}

TEST(TimeTaylor, ExponentialSeries) {
  auto spec = parse_field("[x]", 1);
  const double p[] = {2.0};
  auto c = time_taylor(spec, p, 0.0, 5);
  double f = 1.0;
  for (int k = 0; k <= 5; ++k) {
    if (k) f *= k;
    EXPECT_NEAR(c[k][0], 2.0 / f, 1e-14);
  }
}
