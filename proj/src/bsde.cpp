#include "pide/bsde.hpp"

#include "pide/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace pide {

namespace {

constexpr std::size_t kPathChunk = 4096;

struct StepResult {
  double y = 0.0;
  double drift = 0.0;  // dt f at the final iterate
  double dk = 0.0;
};

StepResult implicit_step(const BsdeField& field, double t, const Point& x, double c, const Point& z,
                         const Functionals& v) {
  const double dt = field.grid.dt();
  const double h = field.obstacle ? field.obstacle->obstacle(t, x) : 0.0;
  StepResult r;
  double y = c;
  double a = c;
  for (int it = 0; it < field.picard_iters; ++it) {
    a = c + dt * field.driver(t, x, y, z, v);
    y = field.obstacle ? project_obstacle(*field.obstacle, dt, a, h) : a;
  }
  r.drift = a - c;
  r.dk = y - a;
  if (field.clamp > 0.0) y = std::clamp(y, -field.clamp, field.clamp);
  r.y = y;
  return r;
}

double clamp_bound(const BsdeOptions& options, const DriverSpec& driver, const VectorXd& terminal,
                   const std::vector<VectorXd>& obstacle, double horizon) {
  if (options.clamp >= 0.0) return options.clamp;
  double scale = terminal.cwiseAbs().maxCoeff();
  for (const auto& l : obstacle) scale = std::max(scale, l.cwiseAbs().maxCoeff());
  scale += driver.growth * horizon;
  return 2.0 * scale * std::exp(driver.lipschitz * horizon) + 1e-8;
}

// Compensated jumps of the next step's fitted continuation phi:
// sum_{jumps in step k} [phi(X_k + beta) - phi(X_k)] - dt int [phi(X_k + beta) - phi(X_k)] lambda(de).
// Zero conditional mean given X_k for any fixed phi.
VectorXd jump_control(const ModelSpec& model, const BsdeField& field, const PathBundle& paths, int k) {
  const int M = paths.paths;
  const double dt = field.grid.dt();
  const bool last = k + 1 == field.grid.N;
  auto phi = [&](const Point& x) {
    return last ? field.terminal(x) : field.steps[k + 1].predict(x)(0);
  };
  const auto& nodes = model.jumps.nodes();
  const auto& weights = model.jumps.weights();
  auto compensator = [&](const Point& x) {
    const double base = phi(x);
    double acc = 0.0;
    for (std::size_t j = 0; j < nodes.size(); ++j) acc += weights(j) * (phi(x + model.beta(x, nodes[j])) - base);
    return acc;
  };
  const MatrixXd& X = paths.states[k];
  VectorXd out(M);
  std::function<double(const Point&)> integral = compensator;
  std::vector<double> table;
  double lo = 0.0, width = 0.0;
  constexpr int kTable = 512;
  if (field.dim == 1) {
    // tabulated on the step's support; linear interpolation error is far below the MC error
    lo = X.minCoeff();
    width = (X.maxCoeff() - lo) / kTable;
    if (width > 0.0) {
      table.resize(kTable + 1);
      for (int i = 0; i <= kTable; ++i) table[i] = compensator(Point::Constant(1, lo + i * width));
      integral = [&](const Point& x) {
        const double s = std::clamp((x(0) - lo) / width, 0.0, static_cast<double>(kTable));
        const int i = std::min(static_cast<int>(s), kTable - 1);
        return table[i] + (s - i) * (table[i + 1] - table[i]);
      };
    }
  }
  const auto& sj = paths.jumps[k];
  for (int p = 0; p < M; ++p) {
    const Point x = X.col(p);
    double acc = 0.0;
    if (sj.offsets[p + 1] > sj.offsets[p]) {
      const double base = phi(x);
      for (int j = sj.offsets[p]; j < sj.offsets[p + 1]; ++j) acc += phi(x + model.beta(x, sj.marks[j])) - base;
    }
    out(p) = acc - dt * integral(x);
  }
  return out;
}

}  // namespace

double project_obstacle(const ObstacleTerm& term, double dt, double a, double h) {
  if (a >= h) return a;
  if (term.reflecting()) return h;
  const double n = term.level;
  return (a + dt * n * h) / (1.0 + dt * n);
}

BsdeSolution solve_bsde(const ModelSpec& model, const DriverSpec& driver, const TerminalSpec& terminal,
                        const PathBundle& paths, const RegressionBasis& basis,
                        const BsdeOptions& options) {
  const int N = paths.steps();
  const int M = paths.paths;
  const int d = paths.dim;
  const int q = driver.q();
  const double dt = paths.grid.dt();
  if (options.picard_iters < 1) throw Error(ErrorCode::Config, "picard_iters must be at least 1");
  if (q > kMaxFunctionals) throw Error(ErrorCode::Config, "too many jump functionals");
  if (dt * driver.lipschitz >= 1.0) {
    std::ostringstream os;
    os << "dt * C_f = " << dt * driver.lipschitz << " >= 1: implicit step is not a contraction";
    throw Error(ErrorCode::Contraction, os.str());
  }
  if (options.obstacle && options.obstacle->level < 0.0)
    throw Error(ErrorCode::Config, "penalty level must be nonnegative");

  BsdeSolution sol;
  BsdeField& field = sol.field;
  field.grid = paths.grid;
  field.dim = d;
  field.q = q;
  field.driver = driver;
  field.terminal = terminal;
  field.obstacle = options.obstacle;
  field.picard_iters = options.picard_iters;
  field.domain = basis.has_domain() ? basis.domain : paths.bounding_box();
  field.steps.resize(N);
  sol.x0 = paths.x0;

  VectorXd y_next(M);
  for (int p = 0; p < M; ++p) y_next(p) = terminal(paths.state(N, p));
  if (!y_next.allFinite()) throw Error(ErrorCode::Numeric, "terminal condition is not finite");

  std::vector<VectorXd> obstacle_values;
  if (options.obstacle) {
    obstacle_values.resize(N + 1);
    for (int k = 0; k <= N; ++k) {
      obstacle_values[k].resize(M);
      for (int p = 0; p < M; ++p)
        obstacle_values[k](p) = options.obstacle->obstacle(paths.grid.time(k), paths.state(k, p));
    }
  }
  field.clamp = clamp_bound(options, driver, y_next, obstacle_values, paths.grid.T - paths.grid.t0);

  auto& diag = sol.diagnostics;
  diag.clamp_bound = field.clamp;
  diag.residual.assign(N, 0.0);
  diag.condition.assign(N, 1.0);
  diag.clamped.assign(N, 0);
  if (options.keep_paths) {
    sol.Y.resize(N + 1);
    sol.Z.resize(N);
    sol.V.resize(N);
    sol.Y[N] = y_next;
    if (options.obstacle) {
      sol.L = obstacle_values;
      sol.dK.resize(N);
    }
  }

  VectorXd pathwise = y_next;
  const Chunking chunks{static_cast<std::size_t>(M), kPathChunk};
  for (int k = N - 1; k >= 0; --k) {
    const double t = paths.grid.time(k);
    const MatrixXd& X = paths.states[k];
    StepRegression reg(basis, X);

    const VectorXd& target = options.target == RegressionTarget::OneStep ? y_next : pathwise;
    reg.fit(target, 0);
    const VectorXd c = reg.fitted(0, 1).col(0);
    const VectorXd resid = target - c;

    MatrixXd mart(M, d + q);
    for (int j = 0; j < d; ++j) mart.col(j) = resid.cwiseProduct(paths.dW[k].row(j).transpose()) / dt;
    if (q > 0) {
      const MatrixXd dmu = compensated_increments(paths, model, driver, k);
      for (int i = 0; i < q; ++i) mart.col(d + i) = resid.cwiseProduct(dmu.row(i).transpose()) / dt;
    }
    reg.fit(mart, 1);
    const MatrixXd zv = reg.fitted(1, d + q);

    VectorXd y(M), dk(M), drift(M);
    std::vector<long> clamped(chunks.count(), 0);
    parallel_chunks(
        chunks.count(),
        [&](std::size_t ch) {
          for (std::size_t pi = chunks.begin(ch); pi < chunks.end(ch); ++pi) {
            const auto p = static_cast<Eigen::Index>(pi);
            const Point x = X.col(p);
            const Point z = zv.row(p).head(d).transpose();
            const Functionals v = zv.row(p).tail(q).transpose();
            const StepResult r = implicit_step(field, t, x, c(p), z, v);
            if (field.clamp > 0.0 && std::abs(r.y) >= field.clamp) ++clamped[ch];
            y(p) = r.y;
            dk(p) = r.dk;
            drift(p) = r.drift;
          }
        },
        options.threads);
    if (!y.allFinite()) {
      std::ostringstream os;
      os << "non-finite Y at step " << k;
      throw Error(ErrorCode::Numeric, os.str());
    }
    for (long n : clamped) diag.clamped[k] += n;
    diag.clamp_total += diag.clamped[k];
    diag.residual[k] = reg.diagnostics().residual;
    diag.condition[k] = reg.diagnostics().condition;

    pathwise += drift;
    if (options.martingale_control) {
      for (int j = 0; j < d; ++j) pathwise -= zv.col(j).cwiseProduct(paths.dW[k].row(j).transpose());
      if (model.has_jumps()) pathwise -= jump_control(model, field, paths, k);
    }
    // where the obstacle acts, the path restarts from the fitted value (stopping-rule update)
    for (int p = 0; p < M; ++p)
      if (dk(p) > 0.0) pathwise(p) = y(p);
    if (options.keep_paths) {
      sol.Y[k] = y;
      sol.Z[k] = zv.leftCols(d).transpose();
      sol.V[k] = zv.rightCols(q).transpose();
      if (options.obstacle) sol.dK[k] = dk;
    }
    reg.compact();
    field.steps[k] = std::move(reg);
    y_next = std::move(y);
  }

  sol.y0 = y_next.mean();
  const double mean = pathwise.mean();
  sol.y0_stderr = M > 1 ? std::sqrt((pathwise.array() - mean).square().sum() / (M - 1) / M) : 0.0;
  sol.pathwise0 = std::move(pathwise);
  return sol;
}

double evaluate_u(const BsdeField& field, int k, const Point& x) {
  if (k < 0 || k > field.grid.N) throw Error(ErrorCode::Domain, "step index outside the grid");
  if (x.size() != field.dim) throw Error(ErrorCode::Domain, "point has the wrong dimension");
  if (!field.domain.contains(x, 1e-12)) {
    std::ostringstream os;
    os << "x = " << x.transpose() << " lies outside the regression domain";
    throw Error(ErrorCode::Domain, os.str());
  }
  if (k == field.grid.N) return field.terminal(x);
  const StepRegression& reg = field.steps[k];
  if (reg.degenerate()) {
    const Point& at = reg.support().lo;
    if ((x - at).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + at.norm()))
      throw Error(ErrorCode::Domain, "step has a single sample location; u is known only there");
  }
  const VectorXd out = reg.predict(x);
  const Point z = out.segment(1, field.dim);
  const Functionals v = out.segment(1 + field.dim, field.q);
  return implicit_step(field, field.grid.time(k), x, out(0), z, v).y;
}

double check_z_representation(const BsdeSolution& sol, const PathBundle& paths, const ModelSpec& model,
                              const ZCheckOptions& options) {
  if (sol.Z.empty()) throw Error(ErrorCode::Config, "solution was computed without path storage");
  const BsdeField& field = sol.field;
  const int M = sol.paths();
  const int d = field.dim;
  if (paths.paths != M || paths.steps() != field.grid.N)
    throw Error(ErrorCode::Config, "path bundle does not match the solution");
  const int stride = std::max(1, (M + options.max_paths - 1) / options.max_paths);
  double num = 0.0;
  double den = 0.0;
  double ref_sq = 0.0;
  double weight = 0.0;
  for (int k = 0; k < field.grid.N; ++k) {
    if (field.steps[k].degenerate()) continue;
    for (int p = 0; p < M; p += stride) {
      const Point x = paths.state(k, p);
      const double h = options.fd_step * (1.0 + x.norm());
      Point grad(d);
      bool inside = true;
      for (int i = 0; i < d && inside; ++i) {
        Point up = x, down = x;
        up(i) += h;
        down(i) -= h;
        if (!field.domain.contains(up) || !field.domain.contains(down)) {
          inside = false;
          break;
        }
        grad(i) = (evaluate_u(field, k, up) - evaluate_u(field, k, down)) / (2.0 * h);
      }
      if (!inside) continue;
      const Point ref = model.sigma(x).transpose() * grad;
      const Point z = sol.Z[k].col(p);
      const double w = options.rho(x);
      num += w * (z - ref).squaredNorm();
      den += w * z.squaredNorm();
      ref_sq += w * ref.squaredNorm();
      weight += w;
    }
  }
  // both sides below round-off: zero by convention
  const double floor = options.negligible * options.negligible * weight;
  if (den <= floor && ref_sq <= floor) return 0.0;
  if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::sqrt(num / den);
}

AprioriTerms apriori_terms(const BsdeSolution& sol) {
  if (sol.Y.empty()) throw Error(ErrorCode::Config, "solution was computed without path storage");
  const BsdeField& field = sol.field;
  const double dt = field.grid.dt();
  AprioriTerms out;
  out.x0 = sol.x0;
  for (const auto& y : sol.Y) out.y_sq.push_back(y.squaredNorm() / static_cast<double>(y.size()));
  for (int k = 0; k < field.grid.N; ++k) {
    const double m = static_cast<double>(sol.Z[k].cols());
    out.zv_sq += dt * (sol.Z[k].squaredNorm() + sol.V[k].squaredNorm()) / m;
    const double f0 = field.driver.f0(field.grid.time(k), out.x0, field.dim);
    out.f0_sq += dt * f0 * f0;
  }
  const double g = field.terminal(out.x0);
  out.g_sq = g * g;
  return out;
}

AprioriReport check_apriori_estimate(std::span<const AprioriTerms> terms, std::span<const double> weights,
                                     const WeightFunction& rho) {
  if (terms.size() != weights.size() || terms.empty())
    throw Error(ErrorCode::Config, "a priori check needs one weight per x0");
  AprioriReport r;
  const std::size_t steps = terms[0].y_sq.size();
  double sup_y = 0.0;
  for (std::size_t k = 0; k < steps; ++k) {
    double acc = 0.0;
    for (std::size_t j = 0; j < terms.size(); ++j) acc += weights[j] * rho(terms[j].x0) * terms[j].y_sq.at(k);
    sup_y = std::max(sup_y, acc);
  }
  double zv = 0.0;
  for (std::size_t j = 0; j < terms.size(); ++j) {
    const double w = weights[j] * rho(terms[j].x0);
    zv += w * terms[j].zv_sq;
    r.denominator += w * (terms[j].g_sq + terms[j].f0_sq);
  }
  r.numerator = sup_y + zv;
  if (r.denominator == 0.0) {
    if (r.numerator != 0.0)
      throw Error(ErrorCode::DivZero, "a priori denominator vanishes while the solution does not");
    return r;
  }
  r.ratio = r.numerator / r.denominator;
  return r;
}

void write_solution_csv(const BsdeSolution& sol, const std::vector<Point>& points,
                        const std::filesystem::path& file) {
  std::ofstream os(file);
  if (!os) throw Error(ErrorCode::Io, "cannot write " + file.string());
  const BsdeField& field = sol.field;
  const int d = field.dim;
  const int q = field.q;
  os << "step,time";
  for (int i = 0; i < d; ++i) os << ",x" << i;
  os << ",u";
  for (int i = 0; i < d; ++i) os << ",z" << i;
  for (int i = 0; i < q; ++i) os << ",vbar" << i + 1;
  os << '\n';
  os.precision(17);
  for (int k = 0; k <= field.grid.N; ++k) {
    for (const auto& x : points) {
      double u = 0.0;
      try {
        u = evaluate_u(field, k, x);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::Domain) continue;
        throw;
      }
      os << k << ',' << field.grid.time(k);
      for (int i = 0; i < d; ++i) os << ',' << x(i);
      os << ',' << u;
      if (k < field.grid.N) {
        const VectorXd out = field.steps[k].predict(x);
        for (int i = 0; i < d + q; ++i) os << ',' << out(1 + i);
      } else {
        for (int i = 0; i < d + q; ++i) os << ",nan";
      }
      os << '\n';
    }
  }
}

void write_diagnostics_json(const BsdeSolution& sol, const std::filesystem::path& file) {
  nlohmann::json j;
  j["y0"] = sol.y0;
  j["y0_stderr"] = sol.y0_stderr;
  j["residual"] = sol.diagnostics.residual;
  j["condition"] = sol.diagnostics.condition;
  j["clamped"] = sol.diagnostics.clamped;
  j["clamp_total"] = sol.diagnostics.clamp_total;
  j["clamp_bound"] = sol.diagnostics.clamp_bound;
  std::ofstream os(file);
  if (!os) throw Error(ErrorCode::Io, "cannot write " + file.string());
  os << j.dump(2) << '\n';
}

}  // namespace pide
