#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>
#include <gtest/gtest.h>

#include "orbitclose/flow.hpp"

using namespace orbitclose;
using std::numbers::pi;

namespace {

FieldPtr lorenz() {
  return share(parse_field("[s*(y-x), x*(r-z)-y, x*y-b*z]", 3, {{"s", 10.0}, {"r", 28.0}, {"b", 8.0 / 3.0}}));
}

double maxabs(const Vec& a, const Vec& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Integrate, ExponentialAndRotation) {
  auto e = integrate(share(parse_field("[x]", 1)), Manifold::euclidean(1), {1.0}, 0.0, 1.0);
  EXPECT_NEAR(e.at(1.0)[0], std::exp(1.0), 1e-9);
  EXPECT_EQ(e.at(0.0)[0], 1.0);
  auto r = integrate(share(parse_field("[-y, x]", 2)), Manifold::euclidean(2), {1.0, 0.0}, 0.0, 2 * pi);
  EXPECT_LT(maxabs(r.at(2 * pi), {1.0, 0.0}), 1e-9);
}

TEST(Integrate, LorenzSelfConvergence) {
  auto f = lorenz();
  auto a = integrate(f, Manifold::euclidean(3), {1, 1, 1}, 0.0, 10.0);
  OdeOptions half;
  half.rtol = half.atol = 5e-11;
  auto b = integrate(f, Manifold::euclidean(3), {1, 1, 1}, 0.0, 10.0, half);
  for (int k = 0; k <= 100; ++k) EXPECT_LT(maxabs(a.at(0.1 * k), b.at(0.1 * k)), 1e-5);
}

TEST(Integrate, InterpolantResidualSmall) {
  auto f = lorenz();
  auto tr = integrate(f, Manifold::euclidean(3), {1, 1, 1}, 0.0, 5.0);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (int k = 0; k < 50; ++k) {
    const double t = u(rng);
    Vec d = tr.interpolant_derivative(t), v = tr.velocity(t);
    double scale = 0.0;
    for (double c : v) scale = std::max(scale, std::abs(c));
    EXPECT_LE(maxabs(d, v), 10 * tr.tolerance() * std::max(1.0, scale));
  }
}

TEST(Integrate, BackwardAndBlowUp) {
  auto tr = integrate(share(parse_field("[x]", 1)), Manifold::euclidean(1), {1.0}, 0.0, -1.0);
  EXPECT_NEAR(tr.at(-1.0)[0], std::exp(-1.0), 1e-10);
  EXPECT_THROW(integrate(share(parse_field("[x^2]", 1)), Manifold::euclidean(1), {1.0}, 0.0, 2.0), NumericalError);
}

TEST(Integrate, FlowProperty) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0), tt(0.0, 1.0);
  auto f = share(parse_field("[y, mu*(1-x^2)*y - x]", 2, {{"mu", 1.0}}));
  auto m = Manifold::euclidean(2);
  for (int k = 0; k < 100; ++k) {
    Vec x{2 * u(rng), 2 * u(rng)};
    const double s = tt(rng), t = tt(rng);
    Vec direct = integrate(f, m, x, 0.0, s + t).at(s + t);
    Vec mid = integrate(f, m, x, 0.0, s).at(s);
    Vec composed = integrate(f, m, mid, 0.0, t).at(t);
    EXPECT_LT(maxabs(direct, composed), 1e-7);
  }
}

TEST(Variational, LinearFieldMatchesMatrixExponential) {
  Eigen::Matrix3d A;
  A << -0.5, 1.0, 0.2, -1.0, -0.3, 0.0, 0.4, 0.1, -0.8;
  char buf[512];
  std::snprintf(buf, sizeof buf, "[%.17g*x + %.17g*y + %.17g*z, %.17g*x + %.17g*y + %.17g*z, %.17g*x + %.17g*y + %.17g*z]",
                A(0, 0), A(0, 1), A(0, 2), A(1, 0), A(1, 1), A(1, 2), A(2, 0), A(2, 1), A(2, 2));
  const double T = 2.5;
  Eigen::MatrixXd M = variational_flow(share(parse_field(buf, 3)), Manifold::euclidean(3), {0.3, -0.2, 1.0}, T);
  Eigen::Matrix3d expect = (A * T).exp();
  EXPECT_LT((M - expect).norm() / expect.norm(), 1e-7);
}

TEST(Variational, HalfTurnRotation) {
  Eigen::MatrixXd M = variational_flow(share(parse_field("[-y, x]", 2)), Manifold::euclidean(2), {1.0, 0.0}, pi);
  EXPECT_LT((M + Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Variational, MatchesFiniteDifferencesAndComposes) {
  auto f = lorenz();
  auto m = Manifold::euclidean(3);
  const Vec x{1.0, 2.0, 20.0};
  const double T = 0.5, h = 1e-5;
  Eigen::MatrixXd M = variational_flow(f, m, x, T);
  for (int j = 0; j < 3; ++j) {
    Vec xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    Vec a = integrate(f, m, xp, 0.0, T, tight_options()).at(T);
    Vec b = integrate(f, m, xm, 0.0, T, tight_options()).at(T);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(M(i, j), (a[i] - b[i]) / (2 * h), 1e-4 * M.col(j).norm());
  }
  const double s = 0.3;
  Vec xs = integrate(f, m, x, 0.0, s, tight_options()).at(s);
  Eigen::MatrixXd composed = variational_flow(f, m, xs, T - s) * variational_flow(f, m, x, s);
  EXPECT_LT((composed - M).norm() / M.norm(), 1e-6);
}

TEST(FindReturns, RotationExactPeriod) {
  auto ev = find_returns(share(parse_field("[-y, x]", 2)), Manifold::euclidean(2), {1.0, 0.0}, 1e-6, 10.0, 1.0);
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_NEAR(ev[0].T, 2 * pi, 1e-9);
  EXPECT_LT(ev[0].alpha, 1e-8);
}

TEST(FindReturns, TorusAgainstBruteForceGrid) {
  auto man = Manifold::flat_torus({1.0, 1.0});
  const double vy = 1.41421356;
  auto ev = find_returns(share(parse_field("[1, 1.41421356]", 2)), man, {0.0, 0.0}, 0.05, 100.0, 0.5);
  ASSERT_FALSE(ev.empty());
  double best = 1e9, best_t = 0;
  for (double t = 0.5; t <= 100.0; t += 1e-3) {
    const double d = man.distance(Vec{0.0, 0.0}, Vec{t, vy * t});
    if (d < best) {
      best = d;
      best_t = t;
    }
  }
  auto it = std::min_element(ev.begin(), ev.end(), [](auto& a, auto& b) { return a.alpha < b.alpha; });
  EXPECT_LE(it->alpha, 0.05);
  EXPECT_LE(it->alpha, best + 1e-9);
  EXPECT_NEAR(it->T, best_t, 2e-3);
  for (std::size_t k = 1; k < ev.size(); ++k) EXPECT_LE(ev[k - 1].T, ev[k].T);
}

TEST(FindReturns, GradientDecayHasNone) {
  auto ev = find_returns(share(parse_field("[-x]", 1)), Manifold::euclidean(1), {1.0}, 0.1, 20.0, 0.5);
  EXPECT_TRUE(ev.empty());
}

TEST(ReturnJets, ExactReturnHasZeroDeviation) {
  auto f = share(parse_field("[-y, x]", 2));
  auto ev = find_returns(f, Manifold::euclidean(2), {1.0, 0.0}, 1e-6, 10.0, 1.0);
  ReturnEvent exact = ev.at(0);
  exact.x_ret = exact.x0;
  exact.alpha = 0.0;
  auto rep = check_return_jets(*f, Manifold::euclidean(2), exact, 2, h_family(2, 1));
  for (double d : rep.deviations) EXPECT_EQ(d, 0.0);
}

TEST(ReturnJets, LinearFieldMeanValueBound) {
  auto f = share(parse_field("[0.1*x - y, x + 0.1*y]", 2));
  Eigen::Matrix2d A;
  A << 0.1, -1, 1, 0.1;
  const double normA = Eigen::JacobiSVD<Eigen::Matrix2d>(A).singularValues()(0);
  ReturnEvent ev;
  ev.x0 = {1.0, 0.0};
  ev.T = 2 * pi;
  ev.x_ret = integrate(f, Manifold::euclidean(2), ev.x0, 0.0, ev.T).at(ev.T);
  ev.alpha = Manifold::euclidean(2).distance(ev.x0, ev.x_ret);
  auto rep = check_return_jets(*f, Manifold::euclidean(2), ev, 2, h_family(2, 3));
  EXPECT_LE(rep.deviations[0], normA * ev.alpha + 1e-9);
  EXPECT_TRUE(rep.pass);
}

TEST(ReturnTime, RotationSection) {
  auto f = share(parse_field("[-y, x]", 2));
  Section sec{{1.0, 0.0}, {0.0, 1.0}, 0.9};
  auto rt = return_time_map(f, Manifold::euclidean(2), sec, {1.0, 0.0}, 10.0);
  EXPECT_NEAR(rt.T, 2 * pi, 1e-10);
  EXPECT_NEAR(rt.dT_section(0), 0.0, 1e-9);
  // finite differences of T along the section and across it
  const double h = 1e-6;
  auto tp = return_time_map(f, Manifold::euclidean(2), sec, {1.0 + h, 0.0}, 10.0).T;
  auto tm = return_time_map(f, Manifold::euclidean(2), sec, {1.0 - h, 0.0}, 10.0).T;
  EXPECT_NEAR((tp - tm) / (2 * h), rt.dT(0), 1e-5);
  // starting just above the section the next crossing comes h earlier
  auto ty = return_time_map(f, Manifold::euclidean(2), sec, {1.0, h}, 10.0).T;
  EXPECT_NEAR((ty - rt.T) / h, rt.dT(1), 1e-4);
}

TEST(ReturnTime, LimitCyclePeriodAndNoCrossing) {
  auto f = share(parse_field("[x - y - x*(x^2+y^2), x + y - y*(x^2+y^2)]", 2));
  Section sec{{1.0, 0.0}, {0.0, 1.0}, 0.5};
  auto rt = return_time_map(f, Manifold::euclidean(2), sec, {1.0, 0.0}, 10.0);
  EXPECT_NEAR(rt.T, 2 * pi, 1e-9);
  auto drift = share(parse_field("[1, 0]", 2));
  EXPECT_THROW(return_time_map(drift, Manifold::euclidean(2), sec, {1.0, 0.1}, 10.0), NoCrossing);
}
