#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "orbitclose/ode.hpp"

using namespace orbitclose;

TEST(Dopri5, ExponentialGrowth) {
  Rhs f = [](double, std::span<const double> y, std::span<double> dy) { dy[0] = y[0]; };
  const double y0[] = {1.0};
  auto sol = dopri5(f, 0.0, y0, 1.0);
  EXPECT_NEAR(sol.at(1.0)[0], std::exp(1.0), 1e-9);
  EXPECT_EQ(sol.at(0.0)[0], 1.0);
  for (double t : {0.1, 0.37, 0.5, 0.93}) EXPECT_NEAR(sol.at(t)[0], std::exp(t), 1e-9);
}

TEST(Dopri5, BackwardTime) {
  Rhs f = [](double, std::span<const double> y, std::span<double> dy) { dy[0] = y[0]; };
  const double y0[] = {1.0};
  auto sol = dopri5(f, 0.0, y0, -2.0);
  EXPECT_NEAR(sol.at(-2.0)[0], std::exp(-2.0), 1e-10);
  EXPECT_NEAR(sol.at(-0.7)[0], std::exp(-0.7), 1e-10);
}

TEST(Dopri5, HermiteDenseOutputIsSmooth) {
  Rhs f = [](double, std::span<const double> y, std::span<double> dy) {
    dy[0] = -y[1];
    dy[1] = y[0];
  };
  Accel a = [](double, std::span<const double> y, std::span<const double>, std::span<double> ddy) {
    ddy[0] = -y[0];
    ddy[1] = -y[1];
  };
  const double y0[] = {1.0, 0.0};
  auto sol = dopri5(f, 0.0, y0, 2 * std::numbers::pi, {}, a);
  for (int k = 0; k < 50; ++k) {
    const double t = 0.1234 * k;
    auto y = sol.at(t);
    auto d = sol.derivative_at(t);
    EXPECT_NEAR(y[0], std::cos(t), 2e-9);
    EXPECT_NEAR(d[0], -std::sin(t), 1e-8);
  }
}

TEST(Dopri5, BlowUpDetected) {
  Rhs f = [](double, std::span<const double> y, std::span<double> dy) { dy[0] = y[0] * y[0]; };
  const double y0[] = {1.0};
  EXPECT_THROW(dopri5(f, 0.0, y0, 2.0), NumericalError);
}

TEST(Dopri5, ObserverStopsEarly) {
  Rhs f = [](double, std::span<const double>, std::span<double> dy) { dy[0] = 1.0; };
  const double y0[] = {0.0};
  OdeOptions opt;
  opt.h_max = 0.5;
  auto sol = dopri5(f, 0.0, y0, 10.0, opt, nullptr,
                    [](double, double, std::span<const double> y) { return y[0] > 3.0; });
  EXPECT_LT(sol.t_end(), 10.0);
  EXPECT_GT(sol.t_end(), 3.0);
}
