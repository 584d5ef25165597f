#pragma once

#include "pide/forward.hpp"
#include "pide/model.hpp"
#include "pide/regression.hpp"

#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pide {

/// Penalty n (y - h)^- added to the driver. An infinite level reflects directly: Y = max(., L).
struct ObstacleTerm {
  ObstacleSpec obstacle;
  double level = 0.0;

  bool reflecting() const { return level == std::numeric_limits<double>::infinity(); }
};

enum class RegressionTarget {
  /// Regress the previous step's Y values.
  OneStep,
  /// Regress the pathwise sum g(X_N) + sum_j (dt f_j + dK_j) over the later steps.
  MultiStep,
};

struct BsdeOptions {
  int picard_iters = 3;
  /// |Y| <= clamp. Negative: derived from g, the obstacle and f0. Zero: no clamping.
  double clamp = -1.0;
  RegressionTarget target = RegressionTarget::MultiStep;
  /// Subtract the Brownian part sum_{j>k} Z_j . dW_j and the compensated jumps of the fitted
  /// continuation from the multistep target. Both have zero conditional mean.
  bool martingale_control = true;
  std::optional<ObstacleTerm> obstacle;
  /// Keep per-path Y, Z, V, L, dK arrays.
  bool keep_paths = true;
  int threads = 0;
};

/// Everything evaluate_u needs: fitted coefficients per step plus the frozen driver data.
struct BsdeField {
  TimeGrid grid;
  int dim = 1;
  int q = 0;
  DriverSpec driver;
  TerminalSpec terminal;
  std::optional<ObstacleTerm> obstacle;
  int picard_iters = 3;
  double clamp = 0.0;
  Box domain;
  /// steps[k]: outputs 0 = continuation, 1..d = Z, d+1..d+q = vbar.
  std::vector<StepRegression> steps;
};

struct BsdeDiagnostics {
  std::vector<double> residual;    // per step, RMS regression residual of the continuation
  std::vector<double> condition;   // per step, worst normal-system condition number
  std::vector<long> clamped;       // per step, number of paths hitting the clamp
  long clamp_total = 0;
  double clamp_bound = 0.0;
};

struct BsdeSolution {
  BsdeField field;
  std::vector<VectorXd> Y;   // N + 1 entries of size M
  std::vector<MatrixXd> Z;   // N entries of size d x M
  std::vector<MatrixXd> V;   // N entries of size q x M
  std::vector<VectorXd> L;   // obstacle values, N + 1 entries (only with an obstacle)
  std::vector<VectorXd> dK;  // N entries, dK[k] acts on step k (only with an obstacle)
  BsdeDiagnostics diagnostics;
  Point x0;                  // starting point of the bundle
  double y0 = 0.0;           // mean of Y_0 over paths
  double y0_stderr = 0.0;    // from the pathwise representation of Y_0
  VectorXd pathwise0;        // g(X_N) + sum_k (dt f_k + dK_k - Z_k . dW_k) per path

  int steps() const { return field.grid.N; }
  int paths() const { return Y.empty() ? 0 : static_cast<int>(Y[0].size()); }
};

/// Least-squares backward induction for the BSDE with jumps on a fixed path bundle.
BsdeSolution solve_bsde(const ModelSpec& model, const DriverSpec& driver, const TerminalSpec& terminal,
                        const PathBundle& paths, const RegressionBasis& basis,
                        const BsdeOptions& options = {});

/// u(t_k, x) from the fitted coefficients and one implicit driver step. Throws E_DOMAIN outside
/// the basis domain, and off the support point of a step with a single sample location.
double evaluate_u(const BsdeField& field, int k, const Point& x);
inline double evaluate_u(const BsdeSolution& sol, int k, const Point& x) {
  return evaluate_u(sol.field, k, x);
}

/// Penalty or reflection applied to an implicit-step candidate `a`: returns the new Y.
double project_obstacle(const ObstacleTerm& term, double dt, double a, double h);

struct ZCheckOptions {
  double fd_step = 1e-3;
  WeightFunction rho{4.0};
  int max_paths = 20000;
  double negligible = 1e-8;  // rms below which a side counts as zero
};

/// rho-weighted relative L2 distance between the regressed Z and sigma^* grad u along the paths,
/// skipping single-location steps and stencils leaving the domain. 0 when both sides vanish.
double check_z_representation(const BsdeSolution& sol, const PathBundle& paths, const ModelSpec& model,
                              const ZCheckOptions& options = {});

/// Per-x0 ingredients of the a priori estimate.
struct AprioriTerms {
  Point x0;
  std::vector<double> y_sq;   // E|Y_k|^2, k = 0..N
  double zv_sq = 0.0;         // sum_k dt (E|Z_k|^2 + E|vbar_k|^2)
  double g_sq = 0.0;          // g(x0)^2
  double f0_sq = 0.0;         // sum_k dt f0(t_k, x0)^2
};

AprioriTerms apriori_terms(const BsdeSolution& sol);

struct AprioriReport {
  double ratio = 0.0;
  double numerator = 0.0;
  double denominator = 0.0;
};

/// [sup_k |Y_k|_rho^2 + sum_k dt (|Z_k|_rho^2 + |vbar_k|_rho^2)] / [|g|_rho^2 + sum_k dt |f0|_rho^2]
/// with the x-integrals replaced by sum_j weights[j] rho(x_j) (.). E_DIVZERO when only the
/// denominator vanishes.
AprioriReport check_apriori_estimate(std::span<const AprioriTerms> terms, std::span<const double> weights,
                                     const WeightFunction& rho);

/// CSV columns step, time, x0..x{d-1}, u, z0.., vbar1.. over `points` at every step.
void write_solution_csv(const BsdeSolution& sol, const std::vector<Point>& points,
                        const std::filesystem::path& file);
/// Residuals, condition numbers and clamp counts.
void write_diagnostics_json(const BsdeSolution& sol, const std::filesystem::path& file);

}  // namespace pide
