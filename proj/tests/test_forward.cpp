#include "pide/forward.hpp"
#include "support.hpp"

#include <cmath>

using namespace pide;
using pide::testing::pt;
using pide::testing::raises;
using pide::testing::TempDir;

TEST(Simulate, ZeroModelStaysPut) {
  const auto paths = simulate_paths(zero_model(), TimeGrid(0, 1, 10), pt(0.7), 500, 1);
  for (const auto& s : paths.states) EXPECT_TRUE((s.array() == 0.7).all());
}

TEST(Simulate, BrownianVariance) {
  const auto paths = simulate_paths(heat_model(), TimeGrid(0, 1, 10), pt(0.0), 100000, 2);
  const auto& xT = paths.states.back();
  const double mean = xT.mean();
  const double var = (xT.array() - mean).square().sum() / (xT.cols() - 1);
  EXPECT_NEAR(var, 1.0, 0.02);
  EXPECT_NEAR(mean, 0.0, 4.0 / std::sqrt(1e5));
}

TEST(Simulate, IncrementsAndInitialState) {
  const TimeGrid grid(0, 1, 20);
  const auto paths = simulate_paths(heat_model(), grid, pt(1.5), 20000, 3);
  EXPECT_TRUE((paths.states[0].array() == 1.5).all());
  const double dt = grid.dt();
  for (const auto& dw : paths.dW) {
    EXPECT_NEAR(dw.mean(), 0.0, 4.0 * std::sqrt(dt / 20000));
    EXPECT_NEAR(dw.array().square().mean(), dt, 4.0 * dt * std::sqrt(2.0 / 20000));
  }
}

TEST(Simulate, JumpCountMatchesIntensity) {
  auto model = toy_uniform_model();
  model.jumps = JumpMeasure::uniform(-1.0, 1.0, 2.0);
  const auto paths = simulate_paths(model, TimeGrid(0, 1, 10), pt(0.0), 100000, 4);
  double total = 0.0;
  for (int k = 0; k < paths.steps(); ++k) total += paths.jumps[k].offsets.back();
  EXPECT_NEAR(total / paths.paths, 2.0, 0.02);
}

TEST(Simulate, Reproducible) {
  const auto a = simulate_paths(merton_model({}, {}), TimeGrid(0, 1, 10), pt(0.0), 3000, 9);
  const auto b = simulate_paths(merton_model({}, {}), TimeGrid(0, 1, 10), pt(0.0), 3000, 9, {0.0, 3});
  for (int k = 0; k <= 10; ++k) EXPECT_TRUE(a.states[k] == b.states[k]);
}

TEST(Simulate, NonFiniteState) {
  auto m = heat_model();
  m.drift = [](const Point& x) { return Point(x * 1e300 * 1e300); };
  EXPECT_TRUE(raises([&] { simulate_paths(m, TimeGrid(0, 1, 5), pt(1.0), 10, 1); }, ErrorCode::Numeric));
}

TEST(Simulate, BinaryRoundTrip) {
  TempDir dir("forward_bin");
  const auto a = simulate_paths(toy_uniform_model(), TimeGrid(0.25, 1, 6), pt(0.2), 50, 11);
  write_paths_binary(a, dir.path() / "p.bin");
  const auto b = read_paths_binary(dir.path() / "p.bin");
  EXPECT_EQ(b.grid.N, 6);
  EXPECT_DOUBLE_EQ(b.grid.t0, 0.25);
  for (int k = 0; k <= 6; ++k) EXPECT_TRUE(a.states[k] == b.states[k]);
}

TEST(Flow, ZeroModel) { EXPECT_EQ(check_flow_property(zero_model(), 0, 0.5, 1, 10, pt(0.3), 100, 1), 0.0); }

TEST(Flow, DeterministicDrift) {
  auto m = zero_model();
  m.drift = [](const Point&) { return Point::Constant(1, 1.0); };
  EXPECT_EQ(check_flow_property(m, 0, 0.5, 1, 10, pt(0.0), 10, 1), 0.0);
  const auto paths = simulate_paths(m, TimeGrid(0, 1, 10), pt(0.0), 1, 1);
  EXPECT_NEAR(paths.states.back()(0, 0), 1.0, 1e-14);
}

TEST(Flow, MertonSharedNoise) {
  EXPECT_LT(check_flow_property(merton_model({}, {}), 0, 0.4, 1, 50, pt(0.1), 2000, 5), 1e-12);
}

TEST(Flow, MisalignedNode) {
  EXPECT_TRUE(raises([] { check_flow_property(heat_model(), 0, 0.33, 1, 10, pt(0.0), 10, 1); }, ErrorCode::Grid));
}

TEST(Moments, ZeroModel) {
  const auto paths = simulate_paths(zero_model(), TimeGrid(0, 1, 10), pt(2.0), 100, 1);
  EXPECT_EQ(moment_report(paths, pt(2.0), 2.0).ratio, 0.0);
}

TEST(Moments, BrownianSupSquare) {
  const auto paths = simulate_paths(heat_model(), TimeGrid(0, 1, 1000), pt(0.0), 20000, 6);
  const auto r = moment_report(paths, pt(0.0), 2.0);
  // E sup_{t<=1} |W_t|^2 = 1.8319 from the series for the law of sup |W|; the grid maximum sits
  // slightly below it, and reflection bounds it by 2
  EXPECT_NEAR(r.ratio, 1.8319, 0.1);
  EXPECT_LE(r.ratio, 2.0);
  const auto far = simulate_paths(heat_model(), TimeGrid(0, 1, 1000), pt(10.0), 20000, 6);
  EXPECT_LE(moment_report(far, pt(10.0), 2.0).ratio, r.ratio);
}

TEST(Tangent, ZeroModel) {
  const auto r = tangent_flow(zero_model(), TimeGrid(0, 1, 10), pt(0.0), 100, 1);
  EXPECT_EQ(r.min_det, 1.0);
  EXPECT_EQ(r.max_det, 1.0);
}

TEST(Tangent, LinearDecay) {
  auto m = zero_model();
  m.drift = [](const Point& x) { return Point(-x); };
  m.drift_jacobian = [](const Point&) { return SquareMatrix::Constant(1, 1, -1.0); };
  const auto r = tangent_flow(m, TimeGrid(0, 1, 1000), pt(1.0), 10, 1);
  EXPECT_NEAR(r.mean_det, std::exp(-1.0), 1e-3);
}

TEST(Tangent, MertonShortHorizon) {
  const auto r = tangent_flow(merton_model({}, {}), TimeGrid(0, 0.01, 10), pt(0.0), 2000, 1);
  EXPECT_LE(std::abs(r.mean_det - 1.0), 2.0 * std::sqrt(0.01));
}
