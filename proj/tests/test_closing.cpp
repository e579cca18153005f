#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "orbitclose/closing.hpp"

using namespace orbitclose;
using std::numbers::pi;

namespace {

const Manifold kPlane = Manifold::euclidean(2);

// Rotation orbit from (1,0) cut short so the return misses by `alpha`.
ReturnEvent short_rotation_event(double alpha) {
  ReturnEvent ev;
  ev.x0 = {1.0, 0.0};
  ev.T = 2 * pi - 2 * std::asin(alpha / 2);
  ev.x_ret = {std::cos(ev.T), std::sin(ev.T)};
  ev.alpha = kPlane.distance(ev.x0, ev.x_ret);
  return ev;
}

// Rotation orbit starting off the unit circle; the real return is exact,
// so the event uses the radial offset as the near-return.
ClosedOrbit close_rotation(double alpha, int r, double window = 0.0) {
  auto f = share(parse_field("[-y, x]", 2));
  auto ev = short_rotation_event(alpha);
  auto tr = integrate(f, kPlane, ev.x0, 0.0, ev.T);
  ClosingOptions opt;
  opt.r = r;
  opt.window = window;
  return hermite_close(tr, ev, opt);
}

}  // namespace

TEST(HermiteClose, ExactReturnIsTrajectory) {
  auto f = share(parse_field("[-y, x]", 2));
  ReturnEvent ev;
  ev.x0 = {1.0, 0.0};
  ev.T = 2 * pi;
  ev.x_ret = ev.x0;
  ev.alpha = 0.0;
  auto tr = integrate(f, kPlane, ev.x0, 0.0, ev.T);
  auto orbit = hermite_close(tr, ev);
  EXPECT_EQ(orbit.window(), 0.0);
  EXPECT_EQ(orbit.correction(), 0.0);
  for (double t : {0.3, 1.0, 4.0}) {
    EXPECT_EQ(orbit.position(t), tr.at(t));
  }
  for (double s : orbit.residual().sup) EXPECT_LT(s, 1e-9);
}

TEST(HermiteClose, RotationClosesExactly) {
  auto orbit = close_rotation(1e-4, 2);
  EXPECT_EQ(orbit.position(0.0), orbit.position(orbit.period()));
  const auto a = orbit.derivatives_left(orbit.period(), 2);
  const auto b = orbit.derivatives(0.0, 2);
  EXPECT_EQ(a[0], b[0]);
  for (double m : orbit.closure_mismatch()) EXPECT_LE(m, 1e-8);
  for (double e : orbit.edge_residuals()) EXPECT_LE(e, 1e-8);
  EXPECT_GT(orbit.residual().sup[0], 0.0);
  EXPECT_TRUE(orbit.residual().window_only);
}

TEST(HermiteClose, ResidualAgainstBruteForce) {
  auto orbit = close_rotation(1e-4, 2);
  // brute force: central differences of f against X(f) on a dense grid
  double brute = 0.0;
  const double T = orbit.period(), w = orbit.window(), h = 1e-6;
  for (int k = 0; k <= 4000; ++k) {
    const double t = T - w + 2 * w * k / 4000.0;
    const Vec a = orbit.position(t + h), b = orbit.position(t - h), x = orbit.position(t);
    const double dx = (a[0] - b[0]) / (2 * h) + x[1], dy = (a[1] - b[1]) / (2 * h) - x[0];
    brute = std::max(brute, std::hypot(dx, dy));
  }
  EXPECT_NEAR(orbit.residual().sup[0], brute, 1e-3 * brute + 1e-8);
  // sup residual is O(alpha) with a moderate constant
  EXPECT_LE(orbit.residual().sup[0], 100 * 1e-4);
}

TEST(HermiteClose, ResidualBoundWithMeasuredConstants) {
  for (int r : {1, 2}) {
    auto orbit = close_rotation(1e-4, r);
    const auto& lip = orbit.lipschitz();
    const double H = orbit.residual().H;
    const double bound = lip.b * lip.b * (std::pow(lip.L, r) + std::pow(H, r)) * std::pow(lip.L, r) * orbit.alpha();
    for (int q = 0; q <= r; ++q) EXPECT_LE(orbit.residual().sup[q], bound) << q;
  }
}

TEST(HermiteClose, PositionOnlyClosure) {
  auto orbit = close_rotation(1e-4, 0);
  EXPECT_EQ(orbit.position(0.0), orbit.position(orbit.period()));
}

TEST(HermiteClose, ResidualScalesLinearlyInAlpha) {
  std::vector<double> la, lr;
  for (double alpha : {1e-3, 1e-4, 1e-5}) {
    auto orbit = close_rotation(alpha, 2, 0.3);
    la.push_back(std::log(alpha));
    lr.push_back(std::log(orbit.residual().sup[0]));
  }
  const double slope1 = (lr[1] - lr[0]) / (la[1] - la[0]);
  const double slope2 = (lr[2] - lr[1]) / (la[2] - la[1]);
  EXPECT_NEAR(slope1, 1.0, 0.1);
  EXPECT_NEAR(slope2, 1.0, 0.1);
}

TEST(HermiteClose, TooLargeAlphaRejected) {
  EXPECT_THROW(close_rotation(0.5, 2), AlphaTooLarge);
}

TEST(ArcLength, CirclesAndInverse) {
  auto unit = periodic_orbit(share(parse_field("[-y, x]", 2)), kPlane, {1.0, 0.0}, 2 * pi);
  auto al = arclength(unit);
  EXPECT_NEAR(al.total(), 2 * pi, 1e-9);
  EXPECT_NEAR(al.s(1.234), 1.234, 1e-9);
  EXPECT_EQ(al.s(0.0), 0.0);
  auto big = periodic_orbit(share(parse_field("[-y, x]", 2)), kPlane, {2.0, 0.0}, 2 * pi);
  auto bl = arclength(big);
  EXPECT_NEAR(bl.total(), 4 * pi, 1e-8);
  // unit speed in arc length on the ellipse
  auto ell = periodic_orbit(share(parse_field("[-2*y, x/2]", 2)), kPlane, {2.0, 0.0}, 2 * pi);
  auto el = arclength(ell);
  const double h = 1e-4;
  for (int k = 1; k < 100; ++k) {
    const double s = el.total() * k / 100.0;
    Vec a = ell.position(el.t_of_s(s + h)), b = ell.position(el.t_of_s(s - h));
    EXPECT_NEAR(std::hypot(a[0] - b[0], a[1] - b[1]) / (2 * h), 1.0, 1e-8);
  }
}

TEST(Curvature, CircleLineEllipse) {
  auto big = periodic_orbit(share(parse_field("[-y, x]", 2)), kPlane, {2.0, 0.0}, 2 * pi);
  auto cp = curvature_radius(big);
  EXPECT_NEAR(cp.rc_min, 2.0, 1e-6);
  auto ell = periodic_orbit(share(parse_field("[-2*y, x/2]", 2)), kPlane, {2.0, 0.0}, 2 * pi);
  EXPECT_NEAR(curvature_radius(ell).rc_min, 0.5, 1e-4);
  auto torus_line = periodic_orbit(share(parse_field("[1, 0]", 2)), kPlane, {0.0, 0.0}, 1.0);
  EXPECT_EQ(curvature_radius(torus_line).rc_min, kRadiusCap);
}
