#pragma once

#include "pide/model.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace pide {

/// Uniform grid t_k = t0 + k dt, k = 0..N.
struct TimeGrid {
  double t0 = 0.0;
  double T = 1.0;
  int N = 1;

  TimeGrid() = default;
  TimeGrid(double t0_, double T_, int N_);

  double dt() const { return (T - t0) / N; }
  double time(int k) const { return k == N ? T : t0 + k * dt(); }
  /// Index of `t` when it lies on the grid (relative tolerance 1e-10), else -1.
  int node_of(double t) const;
};

/// Per-path substream: deterministic function of (seed, path index) only.
Engine path_engine(std::uint64_t seed, std::uint64_t path);

/// Random inputs of one Euler step: the step is split at the jump times into sub-intervals,
/// each carrying its own Brownian increment; sub-interval j < n ends with the jump marks[j].
struct StepNoise {
  std::vector<double> durations;
  std::vector<Point> increments;
  std::vector<double> jump_times;  // offsets in (0, dt], sorted
  std::vector<Mark> marks;

  Point total_increment(int dim) const;
  int jump_count() const { return static_cast<int>(marks.size()); }
};

/// Draws Poisson(lambda dt) jump count, uniform sorted times, iid marks, Brownian increments.
void draw_step_noise(const ModelSpec& model, double dt, Engine& rng, StepNoise& out);

/// x <- x + (b - comp) d tau + sigma dW between events, x <- x + beta(x, e) at each jump.
Point apply_step(const ModelSpec& model, Point x, const StepNoise& noise);

/// Tangent propagation alongside apply_step; updates `jac` in place.
Point apply_tangent_step(const ModelSpec& model, Point x, const StepNoise& noise, SquareMatrix& jac);

struct StepJumps {
  std::vector<int> offsets;     // size M + 1, CSR over paths
  std::vector<double> times;    // absolute jump times
  std::vector<Mark> marks;
};

struct SimulationOptions {
  /// X_0 = x0 + U(-spread, spread)^d per path when positive; zero keeps X_0 = x0.
  double initial_spread = 0.0;
  int threads = 0;
};

/// Forward paths of the jump diffusion plus the noise the backward pass needs.
struct PathBundle {
  TimeGrid grid;
  int dim = 1;
  int paths = 0;
  std::uint64_t seed = 0;
  Point x0;
  std::vector<MatrixXd> states;  // N + 1 entries of size dim x M
  std::vector<MatrixXd> dW;      // N entries of size dim x M
  std::vector<StepJumps> jumps;  // N entries

  int steps() const { return grid.N; }
  Point state(int k, int p) const { return states[k].col(p); }
  int jump_count(int k, int p) const { return jumps[k].offsets[p + 1] - jumps[k].offsets[p]; }
  /// Smallest box containing every simulated state.
  Box bounding_box() const;
};

/// Euler scheme with exact jump insertion; bit-identical for identical (model, grid, x0, M, seed).
PathBundle simulate_paths(const ModelSpec& model, const TimeGrid& grid, const Point& x0, int M,
                          std::uint64_t seed, const SimulationOptions& options = {});

/// Compensated functional increments for step k: row i is
/// sum_{jumps in step} gamma_i(e) - dt sum_j w_j gamma_i(e_j). Size q x M.
MatrixXd compensated_increments(const PathBundle& paths, const ModelSpec& model,
                                const DriverSpec& driver, int k);

/// Direct simulation of X_{t,r}(x) against X_{s,r}(X_{t,s}(x)) with shared noise.
/// Returns the largest pathwise discrepancy; throws E_GRID unless s is a node of the grid.
double check_flow_property(const ModelSpec& model, double t, double s, double r, int steps,
                           const Point& x, int M, std::uint64_t seed);

struct MomentReport {
  double ratio = 0.0;
  double standard_error = 0.0;
};

/// E[sup_k |X_k - x0|^p] / ((T - t0)(1 + |x0|^p)) with a bootstrap standard error.
MomentReport moment_report(const PathBundle& paths, const Point& x0, double p,
                           int bootstrap = 100, std::uint64_t bootstrap_seed = 7);

struct TangentReport {
  double mean_det = 0.0;
  double standard_error = 0.0;
  double min_det = 0.0;
  double max_det = 0.0;
};

/// Linearised Euler scheme for the Jacobian of the flow; statistics of det grad X_{t0,T}(x0).
TangentReport tangent_flow(const ModelSpec& model, const TimeGrid& grid, const Point& x0, int M,
                           std::uint64_t seed);

/// CSV with columns path, step, time, x0..x{d-1}, n_jumps.
void write_paths_csv(const PathBundle& paths, const std::filesystem::path& file);

/// Little-endian binary dump: "PIDE1", u32 dim, u32 paths, u32 nodes, f64 t0, f64 T, then the
/// f64 states ordered path-major, then step, then coordinate. Increments and jumps are not stored.
void write_paths_binary(const PathBundle& paths, const std::filesystem::path& file);
PathBundle read_paths_binary(const std::filesystem::path& file);

}  // namespace pide
