#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "orbitclose/perturbation.hpp"

using namespace orbitclose;
using std::numbers::pi;

namespace {

const Manifold kPlane = Manifold::euclidean(2);

FieldPtr rotation() { return share(parse_field("[-y, x]", 2)); }

ClosedOrbit rotation_orbit(double alpha, int r = 2) {
  ReturnEvent ev;
  ev.x0 = {1.0, 0.0};
  ev.T = 2 * pi - 2 * std::asin(alpha / 2);
  ev.x_ret = {std::cos(ev.T), std::sin(ev.T)};
  ev.alpha = kPlane.distance(ev.x0, ev.x_ret);
  if (alpha == 0.0) return periodic_orbit(rotation(), kPlane, ev.x0, 2 * pi, ClosingOptions{r, 0.0, {}});
  auto tr = integrate(rotation(), kPlane, ev.x0, 0.0, ev.T);
  ClosingOptions opt;
  opt.r = r;
  return hermite_close(tr, ev, opt);
}

std::shared_ptr<const FlowBox> box_of(const ClosedOrbit& orbit, double eps) {
  return std::make_shared<const FlowBox>(build_flowbox(orbit, eps));
}

std::vector<Vec> outside_points(const FlowBox& box, int count, std::uint64_t seed) {
  const Box region = Box::around(box.samples(), 2 * box.epsilon());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Vec> pts;
  while (static_cast<int>(pts.size()) < count) {
    Vec x(region.lo.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = region.lo[i] + (region.hi[i] - region.lo[i]) * u(rng);
    if (box.project(x).outside()) pts.push_back(x);
  }
  return pts;
}

struct Pendulum {
  FieldPtr X = share(parse_field("[y, -sin(x)]", 2));
  ClosedOrbit orbit;
  std::shared_ptr<const FlowBox> box;
  Vec y_slow;
};

Pendulum pendulum() {
  Pendulum p;
  const Vec x0{0.0, std::sqrt(2 * (2 - 1e-4))};
  Section sec{x0, {1.0, 0.0}, 1.0};
  const auto rt = return_time_map(p.X, kPlane, sec, x0, 100.0);
  p.orbit = periodic_orbit(p.X, kPlane, x0, rt.T);
  p.box = box_of(p.orbit, 0.0);
  p.y_slow = p.orbit.position(slowest_parameter(p.orbit));
  return p;
}

}  // namespace

TEST(Bump, EndpointsAndCubic) {
  auto b = make_bump(1.0, 1);
  EXPECT_EQ(b(0.0), 1.0);
  for (int q = 0; q <= 1; ++q) EXPECT_NEAR(b.derivative(1.0 - 1e-15, q), 0.0, 1e-12);
  EXPECT_NEAR(b(0.5), 0.5, 1e-15);
  for (double d : {0.1, 0.3, 0.77}) EXPECT_NEAR(b(d), 1 - 3 * d * d + 2 * d * d * d, 1e-14);
}

TEST(Bump, DerivativeBoundAndRadialForm) {
  for (int r : {0, 1, 2, 3}) {
    auto b = make_bump(0.3, r);
    EXPECT_GE(b.rho0(), 1.0);
    EXPECT_TRUE(std::isfinite(b.rho0()));
    for (int k = 0; k <= 1000; ++k) {
      const double d = 0.3 * k / 1000;
      for (int q = 0; q <= r; ++q) EXPECT_LE(std::abs(b.derivative(d, q)), b.rho0() / std::pow(0.3, q) * (1 + 1e-9));
      for (int q = 1; q <= r; ++q) EXPECT_NEAR(b.derivative(0.3, q), 0.0, 1e-9);
    }
    // radial form against the polynomial, including derivative through a 1-D jet
    const JetLayout& L = JetLayout::get(1, 1);
    for (double d : {0.05, 0.2}) {
      const Jet x = Jet::variable(L, 0, d);
      const Jet rho = b.radial(x * x);
      EXPECT_NEAR(rho.value(), b(d), 1e-13);
      const int a1[1] = {1};
      EXPECT_NEAR(rho.derivative(a1), b.derivative(d, 1), 1e-10);
    }
  }
}

TEST(BranchWeights, BoundaryValues) {
  BranchWeights w(make_bump(0.2, 2), 0.05);
  EXPECT_EQ(w.weight(0.0, 0.01), 1.0);
  EXPECT_EQ(w.weight(0.01, 0.0), 0.0);
  EXPECT_EQ(w.weight(0.2 * 0.2, 0.01), 0.0);
  EXPECT_GE(w.rho0(), 1.0);
  // symmetric split at equal distances: both weights equal rho(d) S(1/2)
  const double d = 0.05;
  EXPECT_NEAR(w.weight(d * d, d * d), make_bump(0.2, 2)(d) * 0.5, 1e-14);
}

TEST(Nonautonomous, OrbitVelocityAtAnchorTime) {
  auto orbit = rotation_orbit(1e-4);
  auto Y = perturb_nonautonomous(rotation(), box_of(orbit, 0.3), make_bump(0.3, 2));
  for (double s : {0.0, 0.1, 3.0, orbit.period() - 0.1}) {
    const auto d = orbit.derivatives(s, 1);
    const Vec y = Y(d[0], orbit.t_anchor() + s);
    for (int i = 0; i < 2; ++i) EXPECT_NEAR(y[i], d[1][i], 1e-9);
  }
}

TEST(Support, OutsideIsBitwiseX) {
  auto orbit = rotation_orbit(1e-4);
  auto box = box_of(orbit, 0.3);
  auto X = rotation();
  auto Yn = perturb_nonautonomous(X, box, make_bump(0.3, 2));
  auto Ya = perturb_autonomous(X, box, make_bump(0.3, 2));
  for (const auto& x : outside_points(*box, 10000, 7)) {
    for (double t : {0.0, 1.3}) {
      EXPECT_EQ(Yn(x, t), (*X)(x, t));
      EXPECT_EQ(Ya(x, t), (*X)(x, t));
    }
  }
}

TEST(Support, ZeroAlphaGivesX) {
  auto orbit = rotation_orbit(0.0);
  auto box = box_of(orbit, 0.3);
  auto Y = perturb_autonomous(rotation(), box, make_bump(0.3, 2));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.75, 1.25), a(0.0, 2 * pi);
  for (int k = 0; k < 200; ++k) {
    const double rr = u(rng), th = a(rng);
    const Vec x{rr * std::cos(th), rr * std::sin(th)};
    const Vec y = Y(x, 0.0), xv = (*rotation())(x, 0.0);
    for (int i = 0; i < 2; ++i) EXPECT_NEAR(y[i], xv[i], 1e-12);
  }
}

TEST(Autonomous, MatchesNonautonomousAtAnchor) {
  auto orbit = rotation_orbit(1e-4);
  auto box = box_of(orbit, 0.3);
  auto Yn = perturb_nonautonomous(rotation(), box, make_bump(0.3, 2));
  auto Ya = perturb_autonomous(rotation(), box, make_bump(0.3, 2));
  for (double s : {0.05, 6.2}) {
    const auto d = orbit.derivatives(s, 0);
    const Vec x{1.1 * d[0][0], 1.1 * d[0][1]};
    const double tx = box->project(x).branches[0].t;
    const Vec a = Ya(x, 0.0), b = Yn(x, orbit.t_anchor() + tx);
    for (int i = 0; i < 2; ++i) EXPECT_NEAR(a[i], b[i], 1e-14);
  }
}

TEST(Autonomous, JetsMatchFiniteDifferences) {
  auto orbit = rotation_orbit(1e-3);
  auto box = box_of(orbit, 0.3);
  auto Y = perturb_autonomous(rotation(), box, make_bump(0.3, 2));
  const double s = orbit.period() - 0.05;
  const auto d = orbit.derivatives(s, 0);
  const Vec x{1.08 * d[0][0], 1.08 * d[0][1] + 0.01};
  const auto J = spatial_jet(Y, x, 0.0, 2);
  const double h = 1e-5;
  for (int j = 0; j < 2; ++j) {
    Vec xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    const Vec yp = Y(xp, 0.0), ym = Y(xm, 0.0);
    for (int i = 0; i < 2; ++i) {
      int alpha[2] = {0, 0};
      alpha[j] = 1;
      EXPECT_NEAR(J[i].derivative(alpha), (yp[i] - ym[i]) / (2 * h), 1e-7);
    }
  }
}

TEST(Smoothness, JetsContinuousAcrossTubeBoundary) {
  auto orbit = rotation_orbit(1e-4);
  auto box = box_of(orbit, 0.3);
  auto Y = perturb_autonomous(rotation(), box, make_bump(0.3, 2));
  for (double s : {orbit.period() - 0.1, 0.05}) {
    const auto d = orbit.derivatives(s, 0);
    const double rad = std::hypot(d[0][0], d[0][1]);
    const Vec in{(rad + 0.3 - 5e-7) * d[0][0] / rad, (rad + 0.3 - 5e-7) * d[0][1] / rad};
    const Vec out{(rad + 0.3 + 5e-7) * d[0][0] / rad, (rad + 0.3 + 5e-7) * d[0][1] / rad};
    const auto X = rotation();
    const detail::DifferenceField diff(*X, Y);
    const auto a = spatial_jet(diff, in, 0.0, 2), b = spatial_jet(diff, out, 0.0, 2);
    // orders below r continuous to 1e-7; order r moves by at most
    // sup|rho^(r+1)| * 1e-6 * |Ybar - Xbar| (rho^(r+1) is the first jump)
    const auto P = box->project(in);
    const auto f = orbit.derivatives(P.branches[0].t, 1);
    const Vec Xf = (*X)(f[0], 0.0);
    const double c = std::hypot(f[1][0] - Xf[0], f[1][1] - Xf[1]);
    double rho3 = 0.0;
    for (int k = 0; k <= 1000; ++k) {
      const double v = k / 1000.0;
      rho3 = std::max(rho3, std::abs(-60 + 360 * v - 360 * v * v) / std::pow(0.3, 3));
    }
    const JetLayout& L = *a[0].layout();
    for (int i = 0; i < 2; ++i) {
      for (int k = 0; k < a[i].size(); ++k) {
        int q = 0;
        for (int m : L.multi_index(k)) q += m;
        const double tol = q < 2 ? 1e-7 : rho3 * 1e-6 * c;
        EXPECT_NEAR(a[i].coeff(k), b[i].coeff(k), tol) << q;
      }
    }
  }
}

TEST(Transport, CorrectionNormEqualsFootDifference) {
  auto orbit = rotation_orbit(1e-3);
  auto box = box_of(orbit, 0.3);
  auto Y = perturb_autonomous(rotation(), box, make_bump(0.3, 2));
  const double s = orbit.period() - 0.02;
  const auto d = orbit.derivatives(s, 1);
  const Vec x{1.0001 * d[0][0], 1.0001 * d[0][1]};
  const auto P = box->project(x);
  const auto f = orbit.derivatives(P.branches[0].t, 1);
  const Vec Xf = (*rotation())(f[0], 0.0);
  const double foot_diff = std::hypot(f[1][0] - Xf[0], f[1][1] - Xf[1]);
  const Vec c = Y.correction_at(x, 0.0);
  const double rho = Y.bump()(P.branches[0].d);
  EXPECT_NEAR(std::hypot(c[0], c[1]), rho * foot_diff, 1e-9);
}

TEST(CrDistance, ZeroAlpha) {
  auto orbit = rotation_orbit(0.0);
  auto Y = perturb_autonomous(rotation(), box_of(orbit, 0.3), make_bump(0.3, 2));
  auto rep = cr_distance(*rotation(), Y, 2, h_family(2, 1), 1000, 1);
  for (const auto& o : rep.per_order) EXPECT_LE(o.measured, 1e-12);
}

TEST(CrDistance, LinearInAmplitude) {
  auto orbit = rotation_orbit(1e-4);
  auto box = box_of(orbit, 0.3);
  auto Y1 = perturb_autonomous(rotation(), box, make_bump(0.3, 2, 1.0));
  auto Y2 = perturb_autonomous(rotation(), box, make_bump(0.3, 2, 2.0));
  auto a = cr_distance(*rotation(), Y1, 2, h_family(2, 1), 1000, 5);
  auto b = cr_distance(*rotation(), Y2, 2, h_family(2, 1), 1000, 5);
  EXPECT_NEAR(b.rho0 / a.rho0, 2.0, 1e-12);
  EXPECT_NEAR(b.per_order[0].measured / a.per_order[0].measured, 2.0, 0.1);
}

TEST(CrDistance, RotationWithinBound) {
  auto orbit = rotation_orbit(1e-4);
  auto Y = perturb_autonomous(rotation(), box_of(orbit, 0.3), make_bump(0.3, 2));
  auto rep = cr_distance(*rotation(), Y, 2, h_family(2, 1), 2000, 11);
  for (const auto& o : rep.per_order) {
    EXPECT_GT(o.measured, 0.0) << o.q;
    EXPECT_LE(o.measured, o.bound) << o.q;
  }
}

TEST(Closure, AutonomousRecloses) {
  auto orbit = rotation_orbit(1e-4);
  auto Y = perturb_autonomous(rotation(), box_of(orbit, 0.3), make_bump(0.3, 2));
  auto rep = verify_closure(Y, 2);
  EXPECT_LE(rep.position_mismatch, 1e-6);
  EXPECT_LE(rep.derivative_mismatch[0], 1e-5);
}

TEST(Closure, NonautonomousRecloses) {
  auto orbit = rotation_orbit(1e-4);
  auto Y = perturb_nonautonomous(rotation(), box_of(orbit, 0.3), make_bump(0.3, 2));
  auto rep = verify_closure(Y, 2);
  EXPECT_LE(rep.position_mismatch, 1e-6);
}

TEST(Closure, ExactOrbit) {
  auto orbit = rotation_orbit(0.0);
  auto Y = perturb_autonomous(rotation(), box_of(orbit, 0.3), make_bump(0.3, 2));
  EXPECT_LE(verify_closure(Y, 2).position_mismatch, 1e-9);
}

TEST(Nonautonomous, OverlapRejected) {
  auto orbit = periodic_orbit(share(parse_field("[2*cos(t), cos(2*t), -0.05*sin(t)]", 3)), Manifold::euclidean(3),
                              {0.0, 0.0, 0.05}, 2 * pi);
  auto box = box_of(orbit, 0.2);
  ASSERT_FALSE(box->overlap_free());
  EXPECT_THROW(perturb_nonautonomous(orbit.field_ptr(), box, make_bump(0.2, 2)), OverlapPresent);
  auto Y = perturb_autonomous(orbit.field_ptr(), box, make_bump(0.2, 2));
  ASSERT_TRUE(Y.weights().has_value());
  // on the orbit inside the overlap the own branch has full weight
  const auto d = orbit.derivatives(0.0, 1);
  const Vec y = Y(d[0], 0.0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(y[i], d[1][i], 1e-9);
}

TEST(Homoclinic, PendulumSlowPoint) {
  auto p = pendulum();
  EXPECT_NEAR(p.y_slow[0], pi, 0.02);
  EXPECT_NEAR(p.y_slow[1], 0.0, 1e-6);
  auto Y = perturb_homoclinic(p.X, p.box, p.y_slow, 1.2, make_bump(p.box->epsilon(), 2));
  const Vec z = Y(p.y_slow, 0.0);
  EXPECT_EQ(z[0], 0.0);
  EXPECT_EQ(z[1], 0.0);
  for (double b : Y.reparametrization()->p_bounds) EXPECT_LE(b, 2.2);
  auto rep = homoclinic_convergence(Y, 50.0);
  EXPECT_TRUE(rep.exact_zero);
  EXPECT_LT(rep.forward_distance, 1e-3);
  EXPECT_LT(rep.backward_distance, 1e-3);
  for (const auto& x : outside_points(*p.box, 2000, 9)) EXPECT_EQ(Y(x, 0.0), (*p.X)(x, 0.0));
}

TEST(Homoclinic, FastPointRejected) {
  auto p = pendulum();
  EXPECT_THROW(perturb_homoclinic(p.X, p.box, p.orbit.position(0.0), 1.2, make_bump(p.box->epsilon(), 2)),
               NotSlowEnough);
}

TEST(Scaling, LogLogSlope) {
  EXPECT_NEAR(loglog_slope({1, 10, 100}, {3, 30, 300}), 1.0, 1e-12);
  EXPECT_NEAR(loglog_slope({1, 2, 4}, {1, 0.25, 0.0625}), -2.0, 1e-12);
}
