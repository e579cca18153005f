#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "orbitclose/flowbox.hpp"

using namespace orbitclose;
using std::numbers::pi;

namespace {

ClosedOrbit unit_circle() {
  return periodic_orbit(share(parse_field("[-y, x]", 2)), Manifold::euclidean(2), {1.0, 0.0}, 2 * pi);
}

// Figure eight in the plane lifted so the two passes through the origin
// are 0.1 apart: x = 2 sin t, y = sin(2t)/2, z = 0.05 cos t.
ClosedOrbit lifted_eight() {
  return periodic_orbit(share(parse_field("[2*cos(t), cos(2*t), -0.05*sin(t)]", 3)), Manifold::euclidean(3),
                        {0.0, 0.0, 0.05}, 2 * pi);
}

Vec eight_at(double t) { return {2 * std::sin(t), 0.5 * std::sin(2 * t), 0.05 * std::cos(t)}; }

double dist(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST(FlowBox, CircleHasNoOverlap) {
  auto box = build_flowbox(unit_circle(), 0.3);
  EXPECT_TRUE(box.overlap_free());
  EXPECT_NEAR(box.rc_min(), 1.0, 1e-6);
}

TEST(FlowBox, AutoRadiusOnCircle) {
  auto box = build_flowbox(unit_circle(), 0.0);
  EXPECT_NEAR(box.epsilon(), 0.5, 1e-4);
}

TEST(FlowBox, RadiusAboveCurvatureRadiusRejected) {
  EXPECT_THROW(build_flowbox(unit_circle(), 1.2), RadiusTooLarge);
}

TEST(FlowBox, NearPassesGiveOverlap) {
  // brute-force oracle: closest approach between the passes near t = 0 and t = pi
  double best = 1e9;
  for (int i = -200; i <= 200; ++i) {
    for (int j = -200; j <= 200; ++j) best = std::min(best, dist(eight_at(i * 1e-3), eight_at(pi + j * 1e-3)));
  }
  ASSERT_NEAR(best, 0.1, 1e-4);
  auto box = build_flowbox(lifted_eight(), 0.2);
  ASSERT_GE(box.overlaps().size(), 1u);
  bool found = false;
  for (const auto& r : box.overlaps()) {
    auto covers = [](double a0, double a1, double t) {
      return a0 <= a1 ? (t >= a0 && t <= a1) : (t >= a0 || t <= a1);
    };
    const bool ab = covers(r.t_a0, r.t_a1, 0.0) && covers(r.t_b0, r.t_b1, pi);
    const bool ba = covers(r.t_a0, r.t_a1, pi) && covers(r.t_b0, r.t_b1, 0.0);
    if (ab || ba) found = true;
  }
  EXPECT_TRUE(found);
}

TEST(Project, PointOnOrbit) {
  auto box = build_flowbox(unit_circle(), 0.3);
  const Vec x{std::cos(2.0), std::sin(2.0)};
  auto p = box.project(x);
  ASSERT_TRUE(p.unique());
  EXPECT_NEAR(p.branches[0].d, 0.0, 1e-9);
  EXPECT_NEAR(dist(p.branches[0].foot, x), 0.0, 1e-9);
}

TEST(Project, NormalOffsetMatchesBruteForce) {
  auto box = build_flowbox(unit_circle(), 0.3);
  const double ts = 1.0;
  const Vec x{1.1 * std::cos(ts), 1.1 * std::sin(ts)};
  double best_t = 0.0, best_d = 1e9;
  for (int k = 0; k < 200000; ++k) {
    const double t = 2 * pi * k / 200000;
    const double d = dist(x, {std::cos(t), std::sin(t)});
    if (d < best_d) best_d = d, best_t = t;
  }
  auto p = box.project(x);
  ASSERT_TRUE(p.unique());
  EXPECT_NEAR(p.branches[0].t, ts, 1e-9);
  EXPECT_NEAR(p.branches[0].d, 0.1, 1e-9);
  EXPECT_NEAR(p.branches[0].t, best_t, 1e-4);
  EXPECT_NEAR(p.branches[0].d, best_d, 1e-8);
}

TEST(Project, IdempotentOnFeet) {
  auto box = build_flowbox(unit_circle(), 0.3);
  for (double t : {0.1, 2.5, 5.9}) {
    const Vec x{1.2 * std::cos(t) + 0.01, 1.2 * std::sin(t)};
    auto p = box.project(x);
    ASSERT_TRUE(p.unique());
    auto q = box.project(p.branches[0].foot);
    ASSERT_TRUE(q.unique());
    EXPECT_LT(q.branches[0].d, 1e-10);
  }
}

TEST(Project, OutsideTube) {
  auto box = build_flowbox(unit_circle(), 0.3);
  EXPECT_TRUE(box.project(Vec{0.0, 0.0}).outside());
  EXPECT_TRUE(box.project(Vec{1.31, 0.0}).outside());
  EXPECT_FALSE(box.project(Vec{1.29, 0.0}).outside());
}

TEST(Project, TwoBranchesInOverlap) {
  auto box = build_flowbox(lifted_eight(), 0.2);
  const Vec x{0.0, 0.0, 0.0};
  // grid scan oracle: distance to the curve has two local minima below eps
  int minima = 0;
  const int N = 100000;
  auto d = [&](int k) { return dist(x, eight_at(2 * pi * ((k % N + N) % N) / N)); };
  for (int k = 0; k < N; ++k) {
    if (d(k) < d(k - 1) && d(k) < d(k + 1) && d(k) < 0.2) ++minima;
  }
  ASSERT_EQ(minima, 2);
  auto p = box.project(x);
  ASSERT_EQ(p.branches.size(), 2u);
  for (const auto& b : p.branches) {
    EXPECT_LT(b.d, 0.2);
    EXPECT_NEAR(b.d, 0.05, 1e-6);
  }
}
