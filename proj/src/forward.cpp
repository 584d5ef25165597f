#include "pide/forward.hpp"

#include "pide/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace pide {

TimeGrid::TimeGrid(double t0_, double T_, int N_) : t0(t0_), T(T_), N(N_) {
  if (N < 1) throw Error(ErrorCode::Grid, "time grid needs N >= 1");
  if (!(T > t0)) throw Error(ErrorCode::Grid, "time grid needs T > t0");
}

int TimeGrid::node_of(double t) const {
  const double pos = (t - t0) / dt();
  const double k = std::round(pos);
  if (k < 0 || k > N) return -1;
  if (std::abs(pos - k) > 1e-10 * std::max(1.0, static_cast<double>(N))) return -1;
  return static_cast<int>(k);
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::size_t kPathChunk = 1024;

}  // namespace

Engine path_engine(std::uint64_t seed, std::uint64_t path) {
  return Engine(splitmix64(splitmix64(seed) ^ splitmix64(path ^ 0xD1B54A32D192ED03ULL)));
}

Point StepNoise::total_increment(int dim) const {
  Point acc = Point::Zero(dim);
  for (const auto& inc : increments) acc += inc;
  return acc;
}

void draw_step_noise(const ModelSpec& model, double dt, Engine& rng, StepNoise& out) {
  out.durations.clear();
  out.increments.clear();
  out.jump_times.clear();
  out.marks.clear();
  if (model.has_jumps()) {
    std::poisson_distribution<int> count(model.jumps.intensity() * dt);
    const int n = count(rng);
    std::uniform_real_distribution<double> when(0.0, dt);
    for (int i = 0; i < n; ++i) out.jump_times.push_back(dt - when(rng));  // in (0, dt]
    std::sort(out.jump_times.begin(), out.jump_times.end());
    for (int i = 0; i < n; ++i) out.marks.push_back(model.jumps.sample(rng));
  }
  double last = 0.0;
  for (double t : out.jump_times) {
    out.durations.push_back(t - last);
    last = t;
  }
  out.durations.push_back(dt - last);
  std::normal_distribution<double> z(0.0, 1.0);
  for (double dur : out.durations) {
    const double scale = std::sqrt(dur);
    Point inc(model.dim);
    for (int i = 0; i < model.dim; ++i) inc(i) = scale * z(rng);
    out.increments.push_back(inc);
  }
}

Point apply_step(const ModelSpec& model, Point x, const StepNoise& noise) {
  const bool jumps = model.has_jumps();
  const std::size_t n = noise.durations.size();
  for (std::size_t j = 0; j < n; ++j) {
    const double dur = noise.durations[j];
    if (jumps) {
      x = x + (model.b(x) - model.compensator_drift(x)) * dur + model.sigma(x) * noise.increments[j];
    } else {
      x = x + model.b(x) * dur + model.sigma(x) * noise.increments[j];
    }
    if (j < noise.marks.size()) x = x + model.beta(x, noise.marks[j]);
  }
  return x;
}

Point apply_tangent_step(const ModelSpec& model, Point x, const StepNoise& noise, SquareMatrix& jac) {
  const int d = model.dim;
  const bool jumps = model.has_jumps();
  const SquareMatrix eye = SquareMatrix::Identity(d, d);
  auto drift_fn = [&model](const Point& y) { return model.b(y); };
  auto comp_fn = [&model](const Point& y) { return model.compensator_drift(y); };
  const std::size_t n = noise.durations.size();
  for (std::size_t j = 0; j < n; ++j) {
    const double dur = noise.durations[j];
    SquareMatrix grad_b = model.drift_jacobian ? SquareMatrix(model.drift_jacobian(x)) : fd_jacobian(drift_fn, x);
    if (jumps) grad_b -= fd_jacobian(comp_fn, x);
    SquareMatrix step = eye + grad_b * dur;
    for (int c = 0; c < d; ++c) {
      auto column = [&model, c](const Point& y) -> Point { return model.sigma(y).col(c); };
      step += fd_jacobian(column, x) * noise.increments[j](c);
    }
    if (jumps) {
      x = x + (model.b(x) - model.compensator_drift(x)) * dur + model.sigma(x) * noise.increments[j];
    } else {
      x = x + model.b(x) * dur + model.sigma(x) * noise.increments[j];
    }
    jac = step * jac;
    if (j < noise.marks.size()) {
      const Mark& e = noise.marks[j];
      auto shift = [&model, &e](const Point& y) { return model.beta(y, e); };
      const SquareMatrix grad_beta =
          model.jump_jacobian ? SquareMatrix(model.jump_jacobian(x, e)) : fd_jacobian(shift, x);
      jac = (eye + grad_beta) * jac;
      x = x + model.beta(x, e);
    }
  }
  return x;
}

Box PathBundle::bounding_box() const {
  Box box{Point::Constant(dim, std::numeric_limits<double>::infinity()),
          Point::Constant(dim, -std::numeric_limits<double>::infinity())};
  for (const auto& s : states) {
    box.lo = box.lo.cwiseMin(Point(s.rowwise().minCoeff()));
    box.hi = box.hi.cwiseMax(Point(s.rowwise().maxCoeff()));
  }
  return box;
}

PathBundle simulate_paths(const ModelSpec& model, const TimeGrid& grid, const Point& x0, int M,
                          std::uint64_t seed, const SimulationOptions& options) {
  if (M < 1) throw Error(ErrorCode::Config, "simulate_paths needs M >= 1");
  if (x0.size() != model.dim) throw Error(ErrorCode::Config, "x0 dimension differs from model");
  const int d = model.dim;
  const int N = grid.N;
  const double dt = grid.dt();

  PathBundle out;
  out.grid = grid;
  out.dim = d;
  out.paths = M;
  out.seed = seed;
  out.x0 = x0;
  out.states.assign(N + 1, MatrixXd(d, M));
  out.dW.assign(N, MatrixXd(d, M));

  struct LocalJump {
    int path;
    double time;
    Mark mark;
  };
  const Chunking chunks{static_cast<std::size_t>(M), kPathChunk};
  std::vector<std::vector<std::vector<LocalJump>>> local(chunks.count(),
                                                          std::vector<std::vector<LocalJump>>(N));

  parallel_chunks(
      chunks.count(),
      [&](std::size_t c) {
        StepNoise noise;
        for (std::size_t pi = chunks.begin(c); pi < chunks.end(c); ++pi) {
          const int p = static_cast<int>(pi);
          Engine rng = path_engine(seed, pi);
          Point x = x0;
          if (options.initial_spread > 0.0) {
            std::uniform_real_distribution<double> u(-options.initial_spread, options.initial_spread);
            for (int i = 0; i < d; ++i) x(i) += u(rng);
          }
          out.states[0].col(p) = x;
          for (int k = 0; k < N; ++k) {
            draw_step_noise(model, dt, rng, noise);
            out.dW[k].col(p) = noise.total_increment(d);
            for (int j = 0; j < noise.jump_count(); ++j)
              local[c][k].push_back({p, grid.time(k) + noise.jump_times[j], noise.marks[j]});
            x = apply_step(model, x, noise);
            if (!x.allFinite()) {
              std::ostringstream os;
              os << "state became non-finite on path " << p << " at step " << k + 1;
              throw Error(ErrorCode::Numeric, os.str());
            }
            out.states[k + 1].col(p) = x;
          }
        }
      },
      options.threads);

  out.jumps.resize(N);
  for (int k = 0; k < N; ++k) {
    auto& sj = out.jumps[k];
    sj.offsets.assign(M + 1, 0);
    for (const auto& chunk : local)
      for (const auto& j : chunk[k]) ++sj.offsets[j.path + 1];
    for (int p = 0; p < M; ++p) sj.offsets[p + 1] += sj.offsets[p];
    sj.times.resize(sj.offsets[M]);
    sj.marks.resize(sj.offsets[M]);
    // chunks hold paths in increasing order, and jumps of a path in time order
    std::size_t pos = 0;
    for (const auto& chunk : local)
      for (const auto& j : chunk[k]) {
        sj.times[pos] = j.time;
        sj.marks[pos] = j.mark;
        ++pos;
      }
  }
  return out;
}

MatrixXd compensated_increments(const PathBundle& paths, const ModelSpec& model,
                                const DriverSpec& driver, int k) {
  const int q = driver.q();
  MatrixXd out = MatrixXd::Zero(q, paths.paths);
  if (q == 0 || !model.has_jumps()) return out;
  const double dt = paths.grid.dt();
  VectorXd compensator(q);
  for (int i = 0; i < q; ++i) compensator(i) = dt * model.jumps.integrate(driver.functionals[i]);
  const auto& sj = paths.jumps[k];
  for (int p = 0; p < paths.paths; ++p) {
    for (int i = 0; i < q; ++i) {
      double acc = 0.0;
      for (int j = sj.offsets[p]; j < sj.offsets[p + 1]; ++j) acc += driver.functionals[i](sj.marks[j]);
      out(i, p) = acc - compensator(i);
    }
  }
  return out;
}

double check_flow_property(const ModelSpec& model, double t, double s, double r, int steps,
                           const Point& x, int M, std::uint64_t seed) {
  if (!(t < s && s < r)) throw Error(ErrorCode::Grid, "flow check needs t < s < r");
  const TimeGrid grid(t, r, steps);
  const int ks = grid.node_of(s);
  if (ks <= 0 || ks >= steps) throw Error(ErrorCode::Grid, "s is not an interior node of the grid");
  const double dt = grid.dt();
  double worst = 0.0;
  std::vector<StepNoise> noise(steps);
  for (int p = 0; p < M; ++p) {
    Engine rng = path_engine(seed, static_cast<std::uint64_t>(p));
    for (int k = 0; k < steps; ++k) draw_step_noise(model, dt, rng, noise[k]);

    Point direct = x;
    for (int k = 0; k < steps; ++k) direct = apply_step(model, direct, noise[k]);

    Point first = x;  // X_{t,s}(x)
    for (int k = 0; k < ks; ++k) first = apply_step(model, first, noise[k]);
    Point composed = first;  // X_{s,r} started afresh from X_{t,s}(x)
    for (int k = ks; k < steps; ++k) composed = apply_step(model, composed, noise[k]);

    worst = std::max(worst, (direct - composed).cwiseAbs().maxCoeff());
  }
  return worst;
}

MomentReport moment_report(const PathBundle& paths, const Point& x0, double p, int bootstrap,
                           std::uint64_t bootstrap_seed) {
  const int M = paths.paths;
  VectorXd sup = VectorXd::Zero(M);
  for (const auto& s : paths.states)
    for (int i = 0; i < M; ++i) sup(i) = std::max(sup(i), std::pow((s.col(i) - x0).norm(), p));
  const double denom = (paths.grid.T - paths.grid.t0) * (1.0 + std::pow(x0.norm(), p));
  MomentReport out;
  out.ratio = sup.mean() / denom;
  if (bootstrap > 1) {
    Engine rng(bootstrap_seed);
    std::uniform_int_distribution<int> pick(0, M - 1);
    VectorXd means(bootstrap);
    for (int b = 0; b < bootstrap; ++b) {
      double acc = 0.0;
      for (int i = 0; i < M; ++i) acc += sup(pick(rng));
      means(b) = acc / M / denom;
    }
    const double mu = means.mean();
    out.standard_error = std::sqrt((means.array() - mu).square().sum() / (bootstrap - 1));
  }
  return out;
}

TangentReport tangent_flow(const ModelSpec& model, const TimeGrid& grid, const Point& x0, int M,
                           std::uint64_t seed) {
  const int d = model.dim;
  VectorXd dets(M);
  StepNoise noise;
  for (int p = 0; p < M; ++p) {
    Engine rng = path_engine(seed, static_cast<std::uint64_t>(p));
    Point x = x0;
    SquareMatrix jac = SquareMatrix::Identity(d, d);
    for (int k = 0; k < grid.N; ++k) {
      draw_step_noise(model, grid.dt(), rng, noise);
      x = apply_tangent_step(model, x, noise, jac);
    }
    if (!jac.allFinite()) throw Error(ErrorCode::Numeric, "tangent flow became non-finite");
    dets(p) = jac.determinant();
  }
  TangentReport out;
  out.mean_det = dets.mean();
  out.min_det = dets.minCoeff();
  out.max_det = dets.maxCoeff();
  if (M > 1)
    out.standard_error = std::sqrt((dets.array() - out.mean_det).square().sum() / (M - 1) / M);
  return out;
}

void write_paths_csv(const PathBundle& paths, const std::filesystem::path& file) {
  std::ofstream os(file);
  if (!os) throw Error(ErrorCode::Io, "cannot write " + file.string());
  os.precision(17);
  os << "path,step,time";
  for (int i = 0; i < paths.dim; ++i) os << ",x" << i;
  os << ",n_jumps\n";
  for (int p = 0; p < paths.paths; ++p) {
    for (int k = 0; k <= paths.steps(); ++k) {
      os << p << ',' << k << ',' << paths.grid.time(k);
      for (int i = 0; i < paths.dim; ++i) os << ',' << paths.states[k](i, p);
      os << ',' << (k == 0 ? 0 : paths.jump_count(k - 1, p)) << '\n';
    }
  }
}

namespace {

template <typename T>
void put_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T)))
    throw Error(ErrorCode::Io, "truncated binary path dump");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

constexpr char kMagic[5] = {'P', 'I', 'D', 'E', '1'};

}  // namespace

void write_paths_binary(const PathBundle& paths, const std::filesystem::path& file) {
  std::ofstream os(file, std::ios::binary);
  if (!os) throw Error(ErrorCode::Io, "cannot write " + file.string());
  os.write(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(paths.dim));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(paths.paths));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(paths.steps() + 1));
  put_le<double>(os, paths.grid.t0);
  put_le<double>(os, paths.grid.T);
  for (int p = 0; p < paths.paths; ++p)
    for (int k = 0; k <= paths.steps(); ++k)
      for (int i = 0; i < paths.dim; ++i) put_le<double>(os, paths.states[k](i, p));
}

PathBundle read_paths_binary(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw Error(ErrorCode::Io, "cannot read " + file.string());
  char magic[5];
  if (!is.read(magic, 5) || std::memcmp(magic, kMagic, 5) != 0)
    throw Error(ErrorCode::Io, "bad magic in binary path dump");
  PathBundle out;
  out.dim = static_cast<int>(get_le<std::uint32_t>(is));
  out.paths = static_cast<int>(get_le<std::uint32_t>(is));
  const int nodes = static_cast<int>(get_le<std::uint32_t>(is));
  const double t0 = get_le<double>(is);
  const double T = get_le<double>(is);
  out.grid = TimeGrid(t0, T, nodes - 1);
  out.states.assign(nodes, MatrixXd(out.dim, out.paths));
  for (int p = 0; p < out.paths; ++p)
    for (int k = 0; k < nodes; ++k)
      for (int i = 0; i < out.dim; ++i) out.states[k](i, p) = get_le<double>(is);
  out.x0 = out.states[0].col(0);
  return out;
}

}  // namespace pide
