#include "pide/bsde.hpp"
#include "support.hpp"

#include <cmath>

using namespace pide;
using pide::testing::pt;
using pide::testing::raises;
using pide::testing::TempDir;

namespace {

PathBundle paths_for(const ModelSpec& m, int M, std::uint64_t seed, double x0 = 0.0, double spread = 0.0) {
  return simulate_paths(m, TimeGrid(0, 1, 50), pt(x0), M, seed, {spread, 0});
}

}  // namespace

TEST(SolveBsde, ConstantTerminal) {
  const auto paths = paths_for(toy_uniform_model(), 5000, 1);
  const auto sol = solve_bsde(toy_uniform_model(), zero_driver(), constant_terminal(2.5), paths,
                              RegressionBasis::polynomial(4));
  for (int k = 0; k <= 50; ++k) EXPECT_NEAR((sol.Y[k].array() - 2.5).abs().maxCoeff(), 0.0, 1e-10);
  for (const auto& z : sol.Z) EXPECT_NEAR(z.cwiseAbs().maxCoeff(), 0.0, 1e-10);
  for (const auto& v : sol.V) EXPECT_TRUE(v.size() == 0 || v.cwiseAbs().maxCoeff() < 1e-10);
  EXPECT_NEAR(evaluate_u(sol, 20, pt(0.1)), 2.5, 1e-10);
}

TEST(SolveBsde, TerminalConditionExact) {
  const auto paths = paths_for(heat_model(), 2000, 2);
  const auto sol = solve_bsde(heat_model(), zero_driver(), square_terminal(), paths, RegressionBasis::polynomial(4));
  for (int p = 0; p < 2000; ++p) EXPECT_EQ(sol.Y[50](p), std::pow(paths.states[50](0, p), 2));
}

TEST(SolveBsde, DiscountOde) {
  const auto paths = paths_for(heat_model(), 2000, 3);
  const auto sol = solve_bsde(heat_model(), discount_driver(0.05), constant_terminal(1.0), paths,
                              RegressionBasis::polynomial(2));
  EXPECT_NEAR(sol.y0, std::exp(-0.05), 2e-3);
}

TEST(SolveBsde, HeatSquare) {
  const auto paths = paths_for(heat_model(), 20000, 4);
  const auto sol = solve_bsde(heat_model(), zero_driver(), square_terminal(), paths, RegressionBasis::polynomial(4));
  EXPECT_NEAR(sol.y0, 1.0, 3.0 * sol.y0_stderr + 1e-12);
  EXPECT_GT(sol.y0_stderr, 0.0);
}

TEST(SolveBsde, ToyUniformSquare) {
  const auto paths = paths_for(toy_uniform_model(), 20000, 5);
  const auto sol =
      solve_bsde(toy_uniform_model(), zero_driver(), square_terminal(), paths, RegressionBasis::polynomial(4));
  EXPECT_NEAR(sol.y0, 4.0 / 3.0, 3.0 * sol.y0_stderr);
}

TEST(SolveBsde, ContractionGuard) {
  const auto paths = paths_for(heat_model(), 100, 6);
  EXPECT_TRUE(raises([&] { solve_bsde(heat_model(), discount_driver(60.0), square_terminal(), paths, {}); },
                     ErrorCode::Contraction));
}

TEST(EvaluateU, RefusesExtrapolation) {
  const auto paths = paths_for(heat_model(), 2000, 7);
  const auto sol = solve_bsde(heat_model(), zero_driver(), square_terminal(), paths, RegressionBasis::polynomial(4));
  EXPECT_TRUE(raises([&] { evaluate_u(sol, 25, pt(50.0)); }, ErrorCode::Domain));
  EXPECT_TRUE(raises([&] { evaluate_u(sol, 0, pt(0.5)); }, ErrorCode::Domain));
  EXPECT_NEAR(evaluate_u(sol, 25, pt(0.0)), 0.5, 0.05);
}

TEST(EvaluateU, SpreadStart) {
  const auto paths = paths_for(heat_model(), 40000, 8, 0.0, 1.0);
  const auto sol = solve_bsde(heat_model(), zero_driver(), square_terminal(), paths, RegressionBasis::polynomial(4));
  for (double x : {-0.5, 0.0, 0.5}) EXPECT_NEAR(evaluate_u(sol, 0, pt(x)), x * x + 1.0, 0.03);
}

TEST(ZCheck, ConstantIsZero) {
  const auto paths = paths_for(heat_model(), 2000, 9);
  const auto sol = solve_bsde(heat_model(), zero_driver(), constant_terminal(1.0), paths, {});
  EXPECT_EQ(check_z_representation(sol, paths, heat_model()), 0.0);
}

TEST(ZCheck, HeatSquare) {
  const auto paths = paths_for(heat_model(), 20000, 10);
  const auto sol = solve_bsde(heat_model(), zero_driver(), square_terminal(), paths, RegressionBasis::polynomial(4));
  EXPECT_LE(check_z_representation(sol, paths, heat_model()), 0.1);
  // Z_k close to 2 X_k
  const int k = 25;
  const double err = (sol.Z[k].row(0).array() - 2.0 * paths.states[k].row(0).array()).abs().mean();
  EXPECT_LT(err, 0.1);
}

TEST(Apriori, ZeroData) {
  const auto paths = paths_for(heat_model(), 1000, 11);
  const auto sol = solve_bsde(heat_model(), zero_driver(), constant_terminal(0.0), paths, {});
  const std::vector<AprioriTerms> terms{apriori_terms(sol)};
  const std::vector<double> w{1.0};
  const auto r = check_apriori_estimate(terms, w, WeightFunction{4.0});
  EXPECT_EQ(r.numerator, 0.0);
  EXPECT_EQ(r.ratio, 0.0);
}

TEST(Apriori, DivZeroWhenOnlyDenominatorVanishes) {
  AprioriTerms t;
  t.x0 = pt(0.0);
  t.y_sq = {1.0, 1.0};
  const std::vector<AprioriTerms> terms{t};
  const std::vector<double> w{1.0};
  EXPECT_TRUE(raises([&] { check_apriori_estimate(terms, w, WeightFunction{4.0}); }, ErrorCode::DivZero));
}

TEST(Apriori, StableUnderDoublingPaths) {
  auto terms_for = [](int M, std::uint64_t seed) {
    std::vector<AprioriTerms> all;
    for (double x0 : {-2.0, -1.0, 0.0, 1.0, 2.0}) {
      const auto paths = paths_for(heat_model(), M, seed, x0);
      all.push_back(apriori_terms(
          solve_bsde(heat_model(), zero_driver(), square_terminal(), paths, RegressionBasis::polynomial(4))));
    }
    return all;
  };
  const std::vector<double> w5{0.5, 1.0, 1.0, 1.0, 0.5};
  const auto coarse = terms_for(5000, 12);
  const auto fine = terms_for(10000, 13);
  const auto a = check_apriori_estimate(coarse, w5, WeightFunction{4.0});
  const auto b = check_apriori_estimate(fine, w5, WeightFunction{4.0});
  ASSERT_TRUE(std::isfinite(a.ratio));
  ASSERT_TRUE(std::isfinite(b.ratio));
  EXPECT_LE(std::max(a.ratio, b.ratio) / std::min(a.ratio, b.ratio), 2.0);
  const std::vector<double> w3{0.5, 1.0, 0.5};
  EXPECT_TRUE(std::isfinite(check_apriori_estimate(std::span(fine).subspan(1, 3), w3, WeightFunction{4.0}).ratio));
  // g(0) = 0 and f = 0 leave nothing in the denominator at the centre alone
  EXPECT_TRUE(raises([&] {
    check_apriori_estimate(std::span(fine).subspan(2, 1), std::vector<double>{1.0}, WeightFunction{4.0});
  }, ErrorCode::DivZero));
}

TEST(Apriori, LinearInTerminal) {
  const auto paths = paths_for(heat_model(), 10000, 13, 1.0);
  TerminalSpec g2{"double", [](const Point& x) { return 2.0 * x.squaredNorm(); }, 2.0};
  const auto a = apriori_terms(solve_bsde(heat_model(), zero_driver(), square_terminal(), paths, {}));
  const auto b = apriori_terms(solve_bsde(heat_model(), zero_driver(), g2, paths, {}));
  const std::vector<double> w{1.0};
  const auto ra = check_apriori_estimate(std::span(&a, 1), w, WeightFunction{4.0});
  const auto rb = check_apriori_estimate(std::span(&b, 1), w, WeightFunction{4.0});
  EXPECT_NEAR(rb.numerator / ra.numerator, 4.0, 1e-6);
}

TEST(SolutionCsv, Writes) {
  TempDir dir("bsde_csv");
  const auto paths = paths_for(heat_model(), 2000, 14);
  const auto sol = solve_bsde(heat_model(), zero_driver(), square_terminal(), paths, {});
  write_solution_csv(sol, {pt(0.0)}, dir.path() / "s.csv");
  write_diagnostics_json(sol, dir.path() / "d.json");
  EXPECT_GT(std::filesystem::file_size(dir.path() / "s.csv"), 100u);
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "d.json"));
}
