#pragma once

#include "pide/forward.hpp"
#include "pide/model.hpp"
#include "pide/quadrature.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace pide {

struct TestFunction {
  std::string id;
  std::function<double(const Point&)> phi;
};

struct SpaceTimeFunction {
  std::string id;
  std::function<double(double, const Point&)> psi;
};

/// Interval indicators, Gaussians, |x|^k e^{-x^2} for k = 0, 1, 2 and a signed step function.
/// Every discontinuity sits on an integer, so integer-aligned panels integrate them exactly.
std::vector<TestFunction> shipped_family();

/// Gauss-Legendre panels of unit width on [-R, R], `per_panel` nodes each.
QuadratureRule<double> unit_panel_rule(int R, int per_panel = 8);

struct NormRatioEntry {
  std::string id;
  double s = 0.0;
  double ratio = 0.0;
  double standard_error = 0.0;
  double ci_lo = 0.0;  // 95% bootstrap interval over path chunks
  double ci_hi = 0.0;
};

struct NormRatioReport {
  std::vector<NormRatioEntry> entries;
  double min = 0.0;
  double max = 0.0;
  double max_stderr = 0.0;

  double width() const { return max - min; }
};

struct NormcheckOptions {
  int M = 100000;
  std::uint64_t seed = 1;
  /// Euler steps from t to the last time; every requested time must be a node.
  int steps = 10;
  int threads = 0;
  int bootstrap = 200;
  std::uint64_t bootstrap_seed = 11;
};

/// r(phi, s) = int E|phi(X_{t,s}(x))| rho(x) dx / int |phi(x)| rho(x) dx, one deterministic
/// x-rule for both integrals, common noise across the x-nodes. d = 1.
/// E_QUAD if the rule leaves more than 1% of some denominator in the tails.
NormRatioReport norm_ratio(const ModelSpec& model, const WeightFunction& rho,
                           const std::vector<TestFunction>& family, double t, const std::vector<double>& s_list,
                           const QuadratureRule<double>& x_rule, const NormcheckOptions& options = {});

/// Space-time version on [t, T] with the trapezoid rule over the simulation grid. Entries carry s = T.
NormRatioReport spacetime_norm_ratio(const ModelSpec& model, const WeightFunction& rho,
                                     const std::vector<SpaceTimeFunction>& family, double t, double T,
                                     const QuadratureRule<double>& x_rule, const NormcheckOptions& options = {});

/// Columns phi_id, s, ratio, stderr, ci_lo, ci_hi.
void write_norm_csv(const NormRatioReport& report, const std::filesystem::path& file);
/// Family extremes and the largest standard error.
void write_norm_summary(const NormRatioReport& report, const std::filesystem::path& file);

}  // namespace pide
