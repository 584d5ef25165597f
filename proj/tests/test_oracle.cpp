#include "pide/oracle.hpp"
#include "support.hpp"

#include <cmath>

using namespace pide;
using pide::testing::pt;
using pide::testing::raises;

TEST(BlackScholes, FrozenValues) {
  EXPECT_NEAR(black_scholes(100.0, 100.0, 0.0, 0.2, 1.0), 7.9655674554, 1e-9);
  EXPECT_NEAR(black_scholes(100.0, 100.0, 0.05, 0.2, 1.0), 10.4505835722, 1e-9);
  EXPECT_NEAR(black_scholes(100.0, 100.0, 0.05, 0.2, 1.0, OptionKind::Put), 5.5735260223, 1e-9);
  EXPECT_NEAR(black_scholes(100.0f, 100.0f, 0.0f, 0.2f, 1.0f), 7.96557f, 1e-3f);
}

TEST(Merton, NoJumpsIsBlackScholes) {
  MertonParams p;
  p.intensity = 0.0;
  EXPECT_DOUBLE_EQ(merton_price(p), black_scholes(100.0, 100.0, 0.05, 0.2, 1.0));
  p.r = 0.0;
  EXPECT_NEAR(merton_price(p), 7.9656, 5e-4);
}

TEST(Merton, FrozenValues) {
  EXPECT_NEAR(merton_price({}), 12.7612885936, 1e-8);
  EXPECT_NEAR(merton_put({}), 7.8842310437, 1e-8);
}

TEST(Merton, IncreasingInIntensity) {
  MertonParams p;
  double last = 0.0;
  for (double lam : {0.0, 0.5, 1.0, 2.0, 4.0}) {
    p.intensity = lam;
    const double v = merton_price(p);
    EXPECT_GT(v, last);
    last = v;
  }
}

TEST(Merton, TailGuard) {
  MertonParams p;
  p.intensity = 50.0;
  EXPECT_TRUE(raises([&] { merton_price(p, 5); }, ErrorCode::Tail));
}

TEST(Binomial, FrozenAmericanPut) {
  EXPECT_NEAR(binomial_american(100, 100, 0.05, 0.2, 1, 2000, OptionKind::Put), 6.0899899526, 1e-8);
}

TEST(Binomial, OneStepAtTheMoney) {
  EXPECT_NEAR(binomial_american(1, 1, 0, 1e-8, 1, 1, OptionKind::Put), 0.0, 1e-7);
  // one step by hand: u = e^{0.2}, p = (1 - d) / (u - d), value = (1 - p) (1 - d)
  const double u = std::exp(0.2), d = 1.0 / u, p = (1.0 - d) / (u - d);
  EXPECT_NEAR(binomial_price(1, 1, 0, 0.2, 1, 1, OptionKind::Put, false), (1 - p) * (1 - d), 1e-14);
}

TEST(Binomial, AmericanDominatesEuropean) {
  for (double r : {0.0, 0.03, 0.08})
    for (auto kind : {OptionKind::Put, OptionKind::Call})
      EXPECT_GE(binomial_price(100, 95, r, 0.25, 1, 300, kind, true),
                binomial_price(100, 95, r, 0.25, 1, 300, kind, false));
}

TEST(Binomial, NoEarlyExerciseAtZeroRate) {
  EXPECT_NEAR(binomial_price(100, 100, 0.0, 0.2, 1, 500, OptionKind::Call, true),
              binomial_price(100, 100, 0.0, 0.2, 1, 500, OptionKind::Call, false), 1e-12);
}

TEST(Binomial, Richardson) {
  const auto r = binomial_richardson(100, 100, 0.05, 0.2, 1, 1000, OptionKind::Put);
  EXPECT_DOUBLE_EQ(r.extrapolated, 2 * r.fine - r.coarse);
}

TEST(FdPide, HeatSquare) {
  FdGrid g;
  g.x_lo = -6;
  g.x_hi = 6;
  g.J = 401;
  g.N = 400;
  g.boundary = BoundaryKind::Linear;
  const auto sol = fd_solve_pide(heat_model(), zero_driver(), square_terminal(), std::nullopt, g);
  for (double x : {-1.0, 0.0, 0.5, 2.0}) EXPECT_NEAR(sol.value(x), x * x + 1.0, 1e-3);
}

TEST(FdPide, ToyUniformSquare) {
  FdGrid g;
  g.x_lo = -6;
  g.x_hi = 6;
  g.boundary = BoundaryKind::Linear;
  const auto sol = fd_solve_pide(toy_uniform_model(), zero_driver(), square_terminal(), std::nullopt, g);
  EXPECT_NEAR(sol.value(0.0), 4.0 / 3.0, 1e-3);
}

TEST(FdPide, ObstacleProjection) {
  FdGrid g;
  g.x_lo = -3;
  g.x_hi = 3;
  g.J = 301;
  g.N = 200;
  g.store_every = 20;
  const auto obstacle = put_obstacle(100);
  const auto sol = fd_solve_pide(merton_model({}, {}), discount_driver(0.05), put_terminal(100), obstacle, g);
  for (std::size_t s = 0; s < sol.slices.size(); ++s)
    for (std::size_t i = 0; i < sol.x.size(); ++i)
      EXPECT_GE(sol.slices[s][i], obstacle(sol.times[s], pt(sol.x[i])));
}

TEST(FdPide, MertonCallMatchesSeries) {
  FdGrid g;
  g.x_lo = -4;
  g.x_hi = 4;
  g.J = 801;
  g.N = 800;
  const auto price = fd_price(merton_model({}, {}), discount_driver(0.05), call_terminal(100), std::nullopt, g, 0.0);
  EXPECT_NEAR(price.price, 12.7612885936, 0.002 * 12.76);
  EXPECT_LT(price.error_estimate, 0.01);
}

TEST(FdPide, Guards) {
  FdGrid g;
  g.N = 1;
  auto loud = toy_uniform_model();
  loud.jumps = JumpMeasure::uniform(-1.0, 1.0, 5.0);
  EXPECT_TRUE(raises([&] { fd_solve_pide(loud, zero_driver(), square_terminal(), std::nullopt, g); }, ErrorCode::Stability));
  FdGrid tight;
  tight.padding = 0;
  EXPECT_TRUE(raises([&] { fd_solve_pide(toy_uniform_model(), zero_driver(), square_terminal(), std::nullopt, tight); },
                     ErrorCode::Boundary));
}
