#include "pide/normcheck.hpp"
#include "support.hpp"

#include <cmath>

using namespace pide;
using pide::testing::raises;

namespace {

const std::vector<double> kTimes{0.1, 0.5, 1.0};

NormcheckOptions opts(int M, std::uint64_t seed = 1) {
  NormcheckOptions o;
  o.M = M;
  o.seed = seed;
  return o;
}

}  // namespace

TEST(NormRatio, ZeroModelExactlyOne) {
  const auto r = norm_ratio(zero_model(), WeightFunction{4.0}, shipped_family(), 0.0, kTimes, unit_panel_rule(8), opts(500));
  ASSERT_EQ(r.entries.size(), shipped_family().size() * kTimes.size());
  for (const auto& e : r.entries) EXPECT_EQ(e.ratio, 1.0) << e.id;
}

TEST(NormRatio, ConstantTestFunction) {
  const std::vector<TestFunction> one{{"one", [](const Point&) { return 1.0; }}};
  const auto rule = unit_panel_rule(40);
  for (const auto& model : {heat_model(), merton_model({}, {})}) {
    const auto r = norm_ratio(model, WeightFunction{4.0}, one, 0.0, kTimes, rule, opts(200));
    for (const auto& e : r.entries) EXPECT_EQ(e.ratio, 1.0);
  }
}

TEST(NormRatio, BrownianIndicatorBracket) {
  const std::vector<TestFunction> ind{shipped_family()[0]};
  const auto a = norm_ratio(heat_model(), WeightFunction{4.0}, ind, 0.0, {1.0}, unit_panel_rule(8), opts(20000, 3));
  const auto b = norm_ratio(heat_model(), WeightFunction{4.0}, ind, 0.0, {1.0}, unit_panel_rule(8), opts(40000, 3));
  EXPECT_GE(a.entries[0].ratio, 0.3);
  EXPECT_LE(a.entries[0].ratio, 3.0);
  EXPECT_NEAR(a.entries[0].ratio, b.entries[0].ratio, 3.0 * (a.entries[0].standard_error + b.entries[0].standard_error));
}

TEST(NormRatio, QuadratureTailGuard) {
  const std::vector<TestFunction> one{{"one", [](const Point&) { return 1.0; }}};
  EXPECT_TRUE(raises([&] { norm_ratio(heat_model(), WeightFunction{2.0}, one, 0.0, {1.0}, unit_panel_rule(4), opts(10)); },
                     ErrorCode::Quad));
}

TEST(NormRatio, TimesMustBeNodes) {
  NormcheckOptions o = opts(10);
  o.steps = 3;
  EXPECT_TRUE(raises([&] { norm_ratio(heat_model(), WeightFunction{4.0}, shipped_family(), 0.0, {0.5, 1.0}, unit_panel_rule(8), o); },
                     ErrorCode::Grid));
}

TEST(SpacetimeRatio, ConstantIsOne) {
  const std::vector<SpaceTimeFunction> one{{"one", [](double, const Point&) { return 1.0; }}};
  const auto r = spacetime_norm_ratio(merton_model({}, {}), WeightFunction{4.0}, one, 0.0, 1.0, unit_panel_rule(40), opts(200));
  EXPECT_EQ(r.entries[0].ratio, 1.0);
}

TEST(SpacetimeRatio, FubiniOnGrid) {
  const auto phi = shipped_family()[2];
  NormcheckOptions o = opts(2000, 4);
  o.steps = 4;
  std::vector<double> nodes{0.25, 0.5, 0.75, 1.0};
  const auto pointwise = norm_ratio(heat_model(), WeightFunction{4.0}, {phi}, 0.0, nodes, unit_panel_rule(8), o);
  const std::vector<SpaceTimeFunction> psi{{phi.id, [f = phi.phi](double, const Point& x) { return f(x); }}};
  const auto st = spacetime_norm_ratio(heat_model(), WeightFunction{4.0}, psi, 0.0, 1.0, unit_panel_rule(8), o);
  // trapezoid weights 1/8, 1/4, 1/4, 1/4, 1/8 with r(phi, 0) = 1
  double avg = 0.125;
  for (std::size_t i = 0; i < 4; ++i) avg += (i == 3 ? 0.125 : 0.25) * pointwise.entries[i].ratio;
  EXPECT_NEAR(st.entries[0].ratio, avg, 1e-12);
}

TEST(SpacetimeRatio, MertonGaussianInsideBracket) {
  const auto model = merton_model({}, {});
  const auto family = norm_ratio(model, WeightFunction{4.0}, shipped_family(), 0.0, kTimes, unit_panel_rule(8), opts(5000, 5));
  const std::vector<SpaceTimeFunction> psi{{"exp(-x^2)", [](double, const Point& x) { return std::exp(-x.squaredNorm()); }}};
  NormcheckOptions o = opts(5000, 5);
  const auto st = spacetime_norm_ratio(model, WeightFunction{4.0}, psi, 0.0, 1.0, unit_panel_rule(8), o);
  const double r = st.entries[0].ratio;
  EXPECT_TRUE(std::isfinite(r));
  EXPECT_GE(r, family.min - 3.0 * family.max_stderr);
  EXPECT_LE(r, family.max + 3.0 * family.max_stderr);
}

TEST(NormRatio, ContinuityInTime) {
  const std::vector<TestFunction> g{shipped_family()[2]};
  NormcheckOptions o = opts(5000, 6);
  o.steps = 60;
  const auto r = norm_ratio(merton_model({}, {}), WeightFunction{4.0}, g, 0.0, {0.5, 0.51, 0.6}, unit_panel_rule(8), o);
  const double d_near = std::abs(r.entries[1].ratio - r.entries[0].ratio);
  const double d_far = std::abs(r.entries[2].ratio - r.entries[0].ratio);
  EXPECT_LT(d_near, d_far);
  EXPECT_LT(d_near, 3.0 * (r.entries[0].standard_error + r.entries[1].standard_error) + 2e-3);
}

TEST(NormRatio, BootstrapIntervalBracketsEstimate) {
  const auto r = norm_ratio(heat_model(), WeightFunction{4.0}, shipped_family(), 0.0, kTimes, unit_panel_rule(8), opts(10000, 7));
  for (const auto& e : r.entries) {
    EXPECT_LE(e.ci_lo, e.ratio + 1e-12);
    EXPECT_GE(e.ci_hi, e.ratio - 1e-12);
  }
}
