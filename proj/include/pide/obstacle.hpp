#pragma once

#include "pide/bsde.hpp"

#include <filesystem>
#include <vector>

namespace pide {

/// solve_bsde with the driver f + n (y - h)^-, resolved exactly inside each implicit step.
/// dK_k = n (Y_k - L_k)^- dt per path.
BsdeSolution solve_penalized(const ModelSpec& model, const DriverSpec& driver, const TerminalSpec& terminal,
                             const ObstacleSpec& obstacle, const PathBundle& paths,
                             const RegressionBasis& basis, double n, BsdeOptions options = {});

struct NormEstimate {
  double value = 0.0;
  double standard_error = 0.0;
};

/// sqrt(sum_k dt E[rho(X_k) ((Y_k - L_k)^-)^2]) along the paths, standard error by the delta method.
NormEstimate penalty_norm(const BsdeSolution& sol, const PathBundle& paths, const WeightFunction& rho);
/// Same norm of the obstacle itself: the scale the penalty norm is compared against.
NormEstimate obstacle_norm(const BsdeSolution& sol, const PathBundle& paths, const WeightFunction& rho);

struct SkorokhodDefect {
  double defect = 0.0;      // (1/M) sum_p sum_k |Y_k - L_k| dK_k
  double normalized = 0.0;  // defect / (mean K_T * sup |Y - L|)
};

SkorokhodDefect skorokhod_gap(const BsdeSolution& sol);

struct MeasureBins {
  int t_bins = 10;
  int x_bins = 40;  // per axis
  /// Spatial range; empty takes the solution's domain.
  Box box;
};

/// Histogram of nu_n = n (u_n - h)^- dt dx over (t-bin, x-cell), averaged over the sampled states
/// falling in each cell.
struct ReflectionMeasureEstimate {
  double level = 0.0;
  int dim = 1;
  std::vector<double> t_edges;
  std::vector<std::vector<double>> x_edges;  // per axis
  std::vector<double> density;               // t-bin major, then x-cell
  std::vector<double> mean_gap;              // average u - h per cell
  std::vector<long> samples;                 // 0 marks an unobserved cell (density 0)
  double mass = 0.0;                         // pi_n = sum rho(center) density volume

  int x_cells() const;
  double volume(std::size_t cell) const;
  Point center(std::size_t cell) const;
};

ReflectionMeasureEstimate estimate_reflection_measure(const BsdeSolution& sol, const PathBundle& paths,
                                                      const WeightFunction& rho, const MeasureBins& bins);

struct SupportReport {
  double fraction = 0.0;
  bool trivial = false;  // pi_n = 0: nothing to locate
};

/// Share of the weighted nu mass sitting on cells whose average u - h exceeds delta.
SupportReport support_check(const ReflectionMeasureEstimate& measure, const WeightFunction& rho, double delta);

struct PenaltyLevel {
  double n = 0.0;
  NormEstimate penalty;
  SkorokhodDefect skorokhod;
  double y0 = 0.0;
  double y0_stderr = 0.0;
  double mass = 0.0;   // pi_n
  double mean_kt = 0.0;
  BsdeField field;
};

struct ReflectedOptions {
  std::vector<double> schedule;  // empty: 1, 2, 4, ..., 4096
  /// Absolute tolerance on the penalty norm. Negative: 1e-3 times the obstacle norm.
  double tol = -1.0;
  /// Stop at the first level below tol; otherwise the whole schedule runs.
  bool stop_early = true;
  /// Exact resolution of the penalty inside each step. Off: levels with n dt > 0.5 are dropped.
  bool implicit = true;
  WeightFunction rho{4.0};
  MeasureBins bins;
  BsdeOptions bsde;
};

struct ReflectedSolution {
  BsdeSolution solution;           // last level run
  std::vector<PenaltyLevel> trace;
  ReflectionMeasureEstimate measure;  // at the last level
  double tol = 0.0;
  double obstacle_scale = 0.0;
  bool converged = false;
  // direct reflection Y = max(., L) on the same paths
  BsdeField reflected;
  double reflected_y0 = 0.0;
  double reflected_y0_stderr = 0.0;
  double reflection_gap = 0.0;     // rho-weighted L2 distance between the two Y processes
};

std::vector<double> default_schedule();

/// Penalization along the schedule plus the direct-reflection cross-check. Throws
/// NoConvergenceError (E_NOCONVERGE) when the last level misses tol; the error carries the trace.
ReflectedSolution solve_reflected(const ModelSpec& model, const DriverSpec& driver, const TerminalSpec& terminal,
                                  const ObstacleSpec& obstacle, const PathBundle& paths,
                                  const RegressionBasis& basis, const ReflectedOptions& options = {});

class NoConvergenceError : public Error {
 public:
  NoConvergenceError(const std::string& what, std::vector<PenaltyLevel> trace)
      : Error(ErrorCode::NoConverge, what), trace_(std::move(trace)) {}
  const std::vector<PenaltyLevel>& trace() const { return trace_; }

 private:
  std::vector<PenaltyLevel> trace_;
};

/// u on `points` at every step, one file per level: u_level_<i>.csv with columns step, time, x.., u.
void write_level_grids(const ReflectedSolution& sol, const std::vector<Point>& points,
                       const std::filesystem::path& dir);
/// Columns t_bin, x_bin (flattened cell index), t, x.., density, mean_gap, samples.
void write_measure_csv(const ReflectionMeasureEstimate& measure, const std::filesystem::path& file);
/// n, penalty norm, its stderr, skorokhod defect, normalized defect, y0, pi_n per level.
void write_trace_json(const ReflectedSolution& sol, const std::filesystem::path& file);

}  // namespace pide
