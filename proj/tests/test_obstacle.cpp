#include "pide/obstacle.hpp"
#include "support.hpp"

#include <cmath>

using namespace pide;
using pide::testing::pt;
using pide::testing::raises;

namespace {

const MarketParams kMarket{0.05, 0.2, 100.0};

PathBundle put_paths(int M, std::uint64_t seed) {
  return simulate_paths(black_scholes_model(kMarket), TimeGrid(0, 1, 50), pt(0.0), M, seed);
}

}  // namespace

TEST(Penalized, ZeroLevelMatchesUnreflected) {
  const auto model = black_scholes_model(kMarket);
  const auto paths = put_paths(5000, 1);
  const auto basis = RegressionBasis::local(16);
  const auto plain = solve_bsde(model, discount_driver(0.05), put_terminal(100), paths, basis);
  const auto pen = solve_penalized(model, discount_driver(0.05), put_terminal(100), put_obstacle(100), paths, basis, 0.0);
  for (int k = 0; k <= 50; ++k) EXPECT_TRUE(plain.Y[k] == pen.Y[k]);
}

TEST(Penalized, InactiveObstacle) {
  const auto model = black_scholes_model(kMarket);
  const auto paths = put_paths(5000, 2);
  const auto basis = RegressionBasis::local(16);
  const auto plain = solve_bsde(model, discount_driver(0.05), put_terminal(100), paths, basis);
  const auto pen = solve_penalized(model, discount_driver(0.05), put_terminal(100), constant_obstacle(-1e9), paths,
                                   basis, 64.0);
  for (const auto& dk : pen.dK) EXPECT_EQ(dk.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(pen.y0, plain.y0);
  EXPECT_EQ(skorokhod_gap(pen).defect, 0.0);
}

TEST(Penalized, PenaltyArithmetic) {
  // explicit reading: y = h - 0.1, n = 10 adds n (y - h)^- = 1.0 to the driver
  const ObstacleTerm term{constant_obstacle(0.0), 10.0};
  const double dt = 0.02, h = 0.0;
  // implicit step y = a + dt n (y - h)^- solved exactly: y = (a + dt n h) / (1 + dt n) below h
  const double a = h - 0.1 * (1.0 + dt * 10.0);
  const double y = project_obstacle(term, dt, a, h);
  EXPECT_NEAR(y, h - 0.1, 1e-14);
  EXPECT_NEAR(10.0 * negative_part(y - h), 1.0, 1e-12);
  EXPECT_EQ(project_obstacle(term, dt, 0.5, h), 0.5);
  const ObstacleTerm reflect{constant_obstacle(0.0), std::numeric_limits<double>::infinity()};
  EXPECT_EQ(project_obstacle(reflect, dt, -0.3, 0.2), 0.2);
}

TEST(Reflected, InactiveConvergesAtFirstLevel) {
  const auto model = black_scholes_model(kMarket);
  const auto paths = put_paths(5000, 3);
  const auto basis = RegressionBasis::local(16);
  const auto plain = solve_bsde(model, discount_driver(0.05), put_terminal(100), paths, basis);
  const auto sol = solve_reflected(model, discount_driver(0.05), put_terminal(100), constant_obstacle(-1e9), paths, basis);
  EXPECT_TRUE(sol.converged);
  EXPECT_EQ(sol.trace.size(), 1u);
  EXPECT_EQ(sol.trace.front().n, 1.0);
  EXPECT_NEAR(sol.trace.front().y0, plain.y0, 1e-12);
  EXPECT_EQ(sol.measure.mass, 0.0);
  for (double d : sol.measure.density) EXPECT_EQ(d, 0.0);
  const auto support = support_check(sol.measure, WeightFunction{4.0}, 0.5);
  EXPECT_TRUE(support.trivial);
  EXPECT_EQ(support.fraction, 0.0);
}

TEST(Reflected, AmericanPutSmall) {
  const auto model = black_scholes_model(kMarket);
  const auto paths = put_paths(20000, 4);
  ReflectedOptions opts;
  const auto sol = solve_reflected(model, discount_driver(0.05), put_terminal(100), put_obstacle(100), paths,
                                   RegressionBasis::local(16), opts);
  // binomial tree with 2000 steps: 6.0899899526
  EXPECT_NEAR(sol.trace.back().y0, 6.0899899526, 0.02 * 6.09);
  EXPECT_GE(sol.trace.back().y0, sol.trace.front().y0 - 3 * sol.trace.front().y0_stderr);
  for (const auto& dk : sol.solution.dK) EXPECT_GE(dk.minCoeff(), 0.0);
  // support shrinks to nothing as delta grows
  EXPECT_EQ(support_check(sol.measure, opts.rho, 1e9).fraction, 0.0);
  // heavier weight decay lowers pi_n
  const auto heavy = estimate_reflection_measure(sol.solution, paths, WeightFunction{8.0}, opts.bins);
  EXPECT_LT(heavy.mass, sol.measure.mass);
  // reflected and penalized answers agree
  EXPECT_NEAR(sol.reflected_y0, sol.trace.back().y0, 0.02);
}

TEST(Reflected, ExhaustedSchedule) {
  const auto model = black_scholes_model(kMarket);
  const auto paths = put_paths(2000, 5);
  ReflectedOptions opts;
  opts.schedule = {1.0, 2.0};
  opts.tol = 1e-9;
  try {
    solve_reflected(model, discount_driver(0.05), put_terminal(100), put_obstacle(100), paths,
                    RegressionBasis::local(16), opts);
    FAIL() << "expected E_NOCONVERGE";
  } catch (const NoConvergenceError& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoConverge);
    EXPECT_EQ(e.trace().size(), 2u);
  }
}

TEST(Reflected, DefaultSchedule) {
  const auto s = default_schedule();
  ASSERT_EQ(s.size(), 13u);
  EXPECT_EQ(s.front(), 1.0);
  EXPECT_EQ(s.back(), 4096.0);
}
