#include "pide/obstacle.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace pide {

BsdeSolution solve_penalized(const ModelSpec& model, const DriverSpec& driver, const TerminalSpec& terminal,
                             const ObstacleSpec& obstacle, const PathBundle& paths,
                             const RegressionBasis& basis, double n, BsdeOptions options) {
  if (!(n >= 0.0)) throw Error(ErrorCode::Config, "penalty level must be nonnegative");
  options.obstacle = ObstacleTerm{obstacle, n};
  options.keep_paths = true;
  return solve_bsde(model, driver, terminal, paths, basis, options);
}

namespace {

void require_obstacle_paths(const BsdeSolution& sol) {
  if (sol.L.empty() || sol.dK.empty()) throw Error(ErrorCode::Config, "solution carries no obstacle data");
}

// sqrt of the mean over paths of sum_k dt rho(X_k) value(k, p)^2, delta-method standard error
template <typename Fn>
NormEstimate weighted_norm(const BsdeSolution& sol, const PathBundle& paths, const WeightFunction& rho, Fn&& value) {
  const int M = sol.paths();
  const int N = sol.steps();
  const double dt = sol.field.grid.dt();
  VectorXd per_path = VectorXd::Zero(M);
  for (int k = 0; k < N; ++k)
    for (int p = 0; p < M; ++p) {
      const double v = value(k, p);
      if (v != 0.0) per_path(p) += dt * rho(paths.state(k, p)) * v * v;
    }
  NormEstimate out;
  const double mean = per_path.mean();
  out.value = std::sqrt(mean);
  if (M > 1 && out.value > 0.0) {
    const double sd = std::sqrt((per_path.array() - mean).square().sum() / (M - 1));
    out.standard_error = sd / std::sqrt(static_cast<double>(M)) / (2.0 * out.value);
  }
  return out;
}

}  // namespace

NormEstimate penalty_norm(const BsdeSolution& sol, const PathBundle& paths, const WeightFunction& rho) {
  require_obstacle_paths(sol);
  return weighted_norm(sol, paths, rho, [&](int k, int p) { return negative_part(sol.Y[k](p) - sol.L[k](p)); });
}

NormEstimate obstacle_norm(const BsdeSolution& sol, const PathBundle& paths, const WeightFunction& rho) {
  require_obstacle_paths(sol);
  return weighted_norm(sol, paths, rho, [&](int k, int p) { return sol.L[k](p); });
}

SkorokhodDefect skorokhod_gap(const BsdeSolution& sol) {
  SkorokhodDefect out;
  if (sol.dK.empty()) return out;
  require_obstacle_paths(sol);
  const int M = sol.paths();
  double defect = 0.0;
  double total_k = 0.0;
  double sup_gap = 0.0;
  for (int k = 0; k < sol.steps(); ++k) {
    const VectorXd gap = (sol.Y[k] - sol.L[k]).cwiseAbs();
    defect += gap.dot(sol.dK[k]);
    total_k += sol.dK[k].sum();
    sup_gap = std::max(sup_gap, gap.maxCoeff());
  }
  out.defect = defect / M;
  const double mean_kt = total_k / M;
  if (mean_kt > 0.0 && sup_gap > 0.0) out.normalized = out.defect / (mean_kt * sup_gap);
  return out;
}

int ReflectionMeasureEstimate::x_cells() const {
  int cells = 1;
  for (const auto& e : x_edges) cells *= static_cast<int>(e.size()) - 1;
  return cells;
}

double ReflectionMeasureEstimate::volume(std::size_t) const {
  double v = t_edges[1] - t_edges[0];
  for (const auto& e : x_edges) v *= e[1] - e[0];
  return v;
}

Point ReflectionMeasureEstimate::center(std::size_t cell) const {
  auto xc = static_cast<int>(cell % static_cast<std::size_t>(x_cells()));
  Point c(dim);
  for (int i = dim - 1; i >= 0; --i) {
    const int bins = static_cast<int>(x_edges[i].size()) - 1;
    const int b = xc % bins;
    xc /= bins;
    c(i) = 0.5 * (x_edges[i][b] + x_edges[i][b + 1]);
  }
  return c;
}

ReflectionMeasureEstimate estimate_reflection_measure(const BsdeSolution& sol, const PathBundle& paths,
                                                      const WeightFunction& rho, const MeasureBins& bins) {
  require_obstacle_paths(sol);
  if (bins.t_bins < 1 || bins.x_bins < 1) throw Error(ErrorCode::Config, "histogram needs at least one bin");
  const auto& grid = sol.field.grid;
  const int d = sol.field.dim;
  const Box box = bins.box.lo.size() > 0 ? bins.box : sol.field.domain;
  const double n = sol.field.obstacle ? sol.field.obstacle->level : 0.0;

  ReflectionMeasureEstimate out;
  out.level = n;
  out.dim = d;
  for (int b = 0; b <= bins.t_bins; ++b) out.t_edges.push_back(grid.t0 + (grid.T - grid.t0) * b / bins.t_bins);
  out.x_edges.resize(d);
  for (int i = 0; i < d; ++i)
    for (int b = 0; b <= bins.x_bins; ++b)
      out.x_edges[i].push_back(box.lo(i) + (box.hi(i) - box.lo(i)) * b / bins.x_bins);
  const std::size_t xcells = static_cast<std::size_t>(out.x_cells());
  const std::size_t cells = xcells * bins.t_bins;
  out.density.assign(cells, 0.0);
  out.mean_gap.assign(cells, 0.0);
  out.samples.assign(cells, 0);
  if (n == std::numeric_limits<double>::infinity())
    throw Error(ErrorCode::Config, "the reflection measure is estimated from a finite penalty level");

  for (int k = 0; k <= grid.N; ++k) {
    const double t = grid.time(k);
    const int tb = std::min(bins.t_bins - 1, static_cast<int>((t - grid.t0) / (grid.T - grid.t0) * bins.t_bins));
    for (int p = 0; p < sol.paths(); ++p) {
      const Point x = paths.state(k, p);
      if (!box.contains(x)) continue;
      std::size_t xc = 0;
      for (int i = 0; i < d; ++i) {
        const double w = (box.hi(i) - box.lo(i)) / bins.x_bins;
        const int b = w > 0.0 ? std::min(bins.x_bins - 1, static_cast<int>((x(i) - box.lo(i)) / w)) : 0;
        xc = xc * bins.x_bins + b;
      }
      const std::size_t cell = tb * xcells + xc;
      const double gap = sol.Y[k](p) - sol.L[k](p);
      out.density[cell] += n * negative_part(gap);
      out.mean_gap[cell] += gap;
      ++out.samples[cell];
    }
  }
  for (std::size_t c = 0; c < cells; ++c) {
    if (out.samples[c] == 0) continue;
    out.density[c] /= out.samples[c];
    out.mean_gap[c] /= out.samples[c];
    out.mass += rho(out.center(c)) * out.density[c] * out.volume(c);
  }
  return out;
}

SupportReport support_check(const ReflectionMeasureEstimate& measure, const WeightFunction& rho, double delta) {
  if (!(delta > 0.0)) throw Error(ErrorCode::Config, "contact tolerance must be positive");
  SupportReport out;
  if (measure.mass == 0.0) {
    out.trivial = true;
    return out;
  }
  double off = 0.0;
  for (std::size_t c = 0; c < measure.density.size(); ++c)
    if (measure.samples[c] > 0 && measure.mean_gap[c] > delta)
      off += rho(measure.center(c)) * measure.density[c] * measure.volume(c);
  out.fraction = off / measure.mass;
  return out;
}

std::vector<double> default_schedule() {
  std::vector<double> s;
  for (int e = 0; e <= 12; ++e) s.push_back(std::ldexp(1.0, e));
  return s;
}

ReflectedSolution solve_reflected(const ModelSpec& model, const DriverSpec& driver, const TerminalSpec& terminal,
                                  const ObstacleSpec& obstacle, const PathBundle& paths,
                                  const RegressionBasis& basis, const ReflectedOptions& options) {
  const double dt = paths.grid.dt();
  std::vector<double> schedule = options.schedule.empty() ? default_schedule() : options.schedule;
  for (std::size_t i = 1; i < schedule.size(); ++i)
    if (!(schedule[i] > schedule[i - 1])) throw Error(ErrorCode::Config, "penalty schedule must increase");
  if (!options.implicit)
    std::erase_if(schedule, [dt](double n) { return n * dt > 0.5; });
  if (schedule.empty()) throw Error(ErrorCode::Config, "penalty schedule is empty");

  ReflectedSolution out;
  BsdeOptions bopt = options.bsde;
  bopt.keep_paths = true;

  bopt.obstacle = ObstacleTerm{obstacle, std::numeric_limits<double>::infinity()};
  std::vector<VectorXd> reflected_y;
  {
    BsdeSolution direct = solve_bsde(model, driver, terminal, paths, basis, bopt);
    out.obstacle_scale = obstacle_norm(direct, paths, options.rho).value;
    out.reflected_y0 = direct.y0;
    out.reflected_y0_stderr = direct.y0_stderr;
    out.reflected = std::move(direct.field);
    reflected_y = std::move(direct.Y);
  }
  out.tol = options.tol > 0.0 ? options.tol : 1e-3 * out.obstacle_scale;

  for (double n : schedule) {
    BsdeSolution sol = solve_penalized(model, driver, terminal, obstacle, paths, basis, n, bopt);
    PenaltyLevel level;
    level.n = n;
    level.penalty = penalty_norm(sol, paths, options.rho);
    level.skorokhod = skorokhod_gap(sol);
    level.y0 = sol.y0;
    level.y0_stderr = sol.y0_stderr;
    double total_k = 0.0;
    for (const auto& dk : sol.dK) total_k += dk.sum();
    level.mean_kt = total_k / sol.paths();
    out.measure = estimate_reflection_measure(sol, paths, options.rho, options.bins);
    level.mass = out.measure.mass;
    level.field = sol.field;
    out.trace.push_back(std::move(level));
    out.solution = std::move(sol);
    if (options.stop_early && out.trace.back().penalty.value < out.tol) break;
  }

  const BsdeSolution& last = out.solution;
  VectorXd per_path = VectorXd::Zero(last.paths());
  for (int k = 0; k < last.steps(); ++k)
    for (int p = 0; p < last.paths(); ++p) {
      const double diff = last.Y[k](p) - reflected_y[k](p);
      per_path(p) += dt * options.rho(paths.state(k, p)) * diff * diff;
    }
  out.reflection_gap = std::sqrt(per_path.mean());

  out.converged = out.trace.back().penalty.value < out.tol;
  if (!out.converged) {
    std::ostringstream os;
    os << "penalty norm " << out.trace.back().penalty.value << " at n = " << out.trace.back().n
       << " is above tol " << out.tol;
    throw NoConvergenceError(os.str(), out.trace);
  }
  return out;
}

void write_level_grids(const ReflectedSolution& sol, const std::vector<Point>& points,
                       const std::filesystem::path& dir) {
  for (std::size_t i = 0; i < sol.trace.size(); ++i) {
    const auto& level = sol.trace[i];
    const auto file = dir / ("u_level_" + std::to_string(i) + ".csv");
    std::ofstream os(file);
    if (!os) throw Error(ErrorCode::Io, "cannot write " + file.string());
    os.precision(17);
    os << "n,step,time";
    for (int j = 0; j < level.field.dim; ++j) os << ",x" << j;
    os << ",u\n";
    for (int k = 0; k <= level.field.grid.N; ++k)
      for (const auto& x : points) {
        double u = 0.0;
        try {
          u = evaluate_u(level.field, k, x);
        } catch (const Error& e) {
          if (e.code() == ErrorCode::Domain) continue;
          throw;
        }
        os << level.n << ',' << k << ',' << level.field.grid.time(k);
        for (int j = 0; j < level.field.dim; ++j) os << ',' << x(j);
        os << ',' << u << '\n';
      }
  }
}

void write_measure_csv(const ReflectionMeasureEstimate& measure, const std::filesystem::path& file) {
  std::ofstream os(file);
  if (!os) throw Error(ErrorCode::Io, "cannot write " + file.string());
  os.precision(17);
  os << "t_bin,x_bin,t";
  for (int i = 0; i < measure.dim; ++i) os << ",x" << i;
  os << ",density,mean_gap,samples\n";
  const auto xcells = static_cast<std::size_t>(measure.x_cells());
  for (std::size_t c = 0; c < measure.density.size(); ++c) {
    const std::size_t tb = c / xcells;
    const Point x = measure.center(c);
    os << tb << ',' << c % xcells << ',' << 0.5 * (measure.t_edges[tb] + measure.t_edges[tb + 1]);
    for (int i = 0; i < measure.dim; ++i) os << ',' << x(i);
    os << ',' << measure.density[c] << ',' << measure.mean_gap[c] << ',' << measure.samples[c] << '\n';
  }
}

void write_trace_json(const ReflectedSolution& sol, const std::filesystem::path& file) {
  nlohmann::json j;
  j["tol"] = sol.tol;
  j["obstacle_scale"] = sol.obstacle_scale;
  j["converged"] = sol.converged;
  j["reflected_y0"] = sol.reflected_y0;
  j["reflection_gap"] = sol.reflection_gap;
  auto& levels = j["levels"] = nlohmann::json::array();
  for (const auto& l : sol.trace)
    levels.push_back({{"n", l.n},
                      {"penalty_norm", l.penalty.value},
                      {"penalty_norm_stderr", l.penalty.standard_error},
                      {"skorokhod_defect", l.skorokhod.defect},
                      {"normalized_defect", l.skorokhod.normalized},
                      {"y0", l.y0},
                      {"y0_stderr", l.y0_stderr},
                      {"mean_kt", l.mean_kt},
                      {"pi_n", l.mass}});
  std::ofstream os(file);
  if (!os) throw Error(ErrorCode::Io, "cannot write " + file.string());
  os << j.dump(2) << '\n';
}

}  // namespace pide
