#include "pide/model.hpp"
#include "support.hpp"

#include <cmath>
#include <limits>

using namespace pide;
using pide::testing::pt;
using pide::testing::raises;

namespace {

ModelSpec constant_model(double b, double s) {
  ModelSpec m = zero_model(1);
  m.drift = [b](const Point&) { return Point::Constant(1, b); };
  m.diffusion = [s](const Point&) { return SquareMatrix::Constant(1, 1, s); };
  return m;
}

ScalarField square() {
  return {[](const Point& x) { return x.squaredNorm(); }, [](const Point& x) { return Point(2.0 * x); },
          [](const Point& x) { return SquareMatrix(2.0 * SquareMatrix::Identity(x.size(), x.size())); }};
}

ScalarField identity() {
  return {[](const Point& x) { return x(0); }, [](const Point&) { return Point::Constant(1, 1.0); }, {}};
}

ModelSpec with_jump(ModelSpec m, std::function<Point(const Point&, const Mark&)> beta) {
  m.jump = std::move(beta);
  m.jumps = JumpMeasure::uniform(-1.0, 1.0, 1.0);
  return m;
}

}  // namespace

TEST(ApplyK1, HeatOnSquare) { EXPECT_NEAR(apply_k1(heat_model(), square(), pt(3.0)), 1.0, 1e-12); }

TEST(ApplyK1, DriftOnly) {
  for (double x : {-2.0, 0.0, 5.0}) EXPECT_NEAR(apply_k1(constant_model(2.0, 0.0), identity(), pt(x)), 2.0, 1e-12);
}

TEST(ApplyK1, DriftAndDiffusion) { EXPECT_NEAR(apply_k1(constant_model(1.0, 2.0), square(), pt(1.0)), 6.0, 1e-12); }

TEST(ApplyK1, FiniteDifferenceFallback) {
  ScalarField phi{[](const Point& x) { return x(0) * x(0); }, {}, {}};
  EXPECT_NEAR(apply_k1(constant_model(1.0, 2.0), phi, pt(1.0)), 6.0, 1e-5);
}

TEST(ApplyK1, NonFiniteCoefficient) {
  auto m = constant_model(std::numeric_limits<double>::quiet_NaN(), 1.0);
  EXPECT_TRUE(raises([&] { apply_k1(m, square(), pt(0.0)); }, ErrorCode::Numeric));
}

TEST(ApplyK2, NoJumps) { EXPECT_EQ(apply_k2(heat_model(), square(), pt(0.7)), 0.0); }

TEST(ApplyK2, AffineAnnihilated) {
  auto m = with_jump(heat_model(), [](const Point& x, const Mark& e) { return Point(0.3 * x + e * e(0)); });
  ScalarField affine{[](const Point& x) { return 2.0 - 3.0 * x(0); }, [](const Point&) { return Point::Constant(1, -3.0); }, {}};
  for (double x : {-1.0, 0.0, 2.5}) EXPECT_NEAR(apply_k2(m, affine, pt(x)), 0.0, 1e-12);
}

TEST(ApplyK2, ToyUniformSquare) {
  for (double x : {-1.0, 0.0, 0.4}) EXPECT_NEAR(apply_k2(toy_uniform_model(), square(), pt(x)), 1.0 / 3.0, 1e-12);
}

TEST(ApplyK2, NonFiniteShift) {
  auto m = with_jump(heat_model(), [](const Point&, const Mark&) { return Point::Constant(1, std::nan("")); });
  EXPECT_TRUE(raises([&] { apply_k2(m, square(), pt(0.0)); }, ErrorCode::Numeric));
}

TEST(Linkage, Translation) {
  const Box box{pt(-3.0), pt(3.0)};
  auto r = check_linkage_diffeo(toy_uniform_model(), pt(0.5), box, 101);
  EXPECT_TRUE(r.injective);
  EXPECT_NEAR(r.min_jacobian, 1.0, 1e-9);
}

TEST(Linkage, CollapsingMap) {
  auto m = with_jump(heat_model(), [](const Point& x, const Mark&) { return Point(-x); });
  auto r = check_linkage_diffeo(m, pt(0.5), Box{pt(-3.0), pt(3.0)}, 101);
  EXPECT_FALSE(r.injective);
}

TEST(Linkage, SineShift) {
  auto m = with_jump(heat_model(), [](const Point& x, const Mark& e) {
    return Point::Constant(1, 0.5 * std::sin(x(0)) * std::min(1.0, std::abs(e(0))));
  });
  for (double e : {0.1, 1.0, 3.0}) {
    auto r = check_linkage_diffeo(m, pt(e), Box{pt(-6.0), pt(6.0)}, 401);
    EXPECT_TRUE(r.injective);
    EXPECT_GE(r.min_jacobian, 0.5 - 1e-6);
  }
}

TEST(PideResidual, HeatSolution) {
  TimeSpaceField u{[](double t, const Point& x) { return x.squaredNorm() + (1.0 - t); },
                   [](double, const Point&) { return -1.0; }, {}, {}};
  for (double x : {-1.0, 0.0, 2.0}) EXPECT_NEAR(pide_residual(heat_model(), zero_driver(), u, 0.3, pt(x)), 0.0, 1e-6);
}

TEST(PideResidual, Constant) {
  TimeSpaceField u{[](double, const Point&) { return 4.0; }, [](double, const Point&) { return 0.0; }, {}, {}};
  EXPECT_NEAR(pide_residual(toy_uniform_model(), zero_driver(), u, 0.5, pt(1.0)), 0.0, 1e-9);
}

TEST(PideResidual, ToyUniformSolution) {
  TimeSpaceField u{[](double t, const Point& x) { return x.squaredNorm() + (1.0 - t) * (4.0 / 3.0); },
                   [](double, const Point&) { return -4.0 / 3.0; }, {}, {}};
  for (double x : {-0.5, 0.0, 1.5}) EXPECT_NEAR(pide_residual(toy_uniform_model(), zero_driver(), u, 0.2, pt(x)), 0.0, 1e-6);
}

TEST(JumpMeasure, QuadratureInvariants) {
  for (const auto& mu : {JumpMeasure::uniform(-1, 1, 1.0), JumpMeasure::normal(-0.1, 0.15, 1.0),
                         JumpMeasure::two_point(0.1, -0.15, 0.4, 2.0)}) {
    EXPECT_GE(mu.weights().minCoeff(), 0.0);
    EXPECT_NEAR(mu.weights().sum(), mu.intensity(), 1e-12);
    EXPECT_TRUE(std::isfinite(mu.small_jump_moment()));
  }
  EXPECT_TRUE(raises([] { JumpMeasure::uniform(1, -1, 1.0); }, ErrorCode::Config));
}

TEST(JumpMeasure, SamplerMatchesQuadrature) {
  for (const auto& mu : {JumpMeasure::uniform(-1, 1, 1.0), JumpMeasure::normal(-0.1, 0.15, 1.0),
                         JumpMeasure::two_point(0.1, -0.15, 0.4, 2.0)}) {
    auto r = check_mark_sampler(mu, 100000, 5);
    EXPECT_TRUE(r.ok) << r.detail;
  }
}

TEST(Assumptions, PresetsPassSpotChecks) {
  const Box box{pt(-3.0), pt(3.0)};
  EXPECT_TRUE(check_jump_growth(merton_model({}, {}), box, 2000, 1).ok);
  EXPECT_TRUE(check_jump_growth(toy_uniform_model(), box, 2000, 1).ok);
  EXPECT_TRUE(check_driver_lipschitz(discount_driver(0.05), 1, box, 2000, 2).ok);
  EXPECT_TRUE(check_driver_lipschitz(borrowing_driver(0.05, 0.1, 0.2), 1, box, 2000, 2).ok);
  EXPECT_TRUE(check_obstacle_growth(put_obstacle(100.0), 1.0, box, 50).ok);
  EXPECT_TRUE(check_terminal_integrability(put_terminal(100.0), WeightFunction{4.0}).ok);
}

TEST(Assumptions, ViolationsAreReported) {
  auto m = toy_uniform_model();
  m.jump_bound = 0.1;
  EXPECT_FALSE(check_jump_growth(m, Box{pt(-1.0), pt(1.0)}, 2000, 1).ok);
  auto d = discount_driver(0.05);
  d.lipschitz = 0.01;
  EXPECT_FALSE(check_driver_lipschitz(d, 1, Box{pt(-1.0), pt(1.0)}, 2000, 2).ok);
}

TEST(Weight, AdmissibleExponent) {
  EXPECT_DOUBLE_EQ(min_weight_exponent(1.0, 1), 3.0);
  WeightFunction rho{4.0};
  EXPECT_DOUBLE_EQ(rho(0.0), 1.0);
  EXPECT_DOUBLE_EQ(rho(1.0), 1.0 / 16.0);
}
