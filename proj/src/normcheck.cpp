#include "pide/normcheck.hpp"

#include "pide/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

namespace pide {

std::vector<TestFunction> shipped_family() {
  auto scalar = [](auto fn) { return [fn](const Point& x) { return fn(x(0)); }; };
  std::vector<TestFunction> family;
  family.push_back({"indicator[-1:1]", scalar([](double x) { return std::abs(x) <= 1.0 ? 1.0 : 0.0; })});
  family.push_back({"indicator[0:2]", scalar([](double x) { return x >= 0.0 && x <= 2.0 ? 1.0 : 0.0; })});
  family.push_back({"gauss(0:1)", scalar([](double x) { return std::exp(-0.5 * x * x); })});
  family.push_back({"gauss(1:0.5)", scalar([](double x) { return std::exp(-2.0 * (x - 1.0) * (x - 1.0)); })});
  for (int k = 0; k <= 2; ++k) {
    family.push_back({"|x|^" + std::to_string(k) + "exp(-x^2)",
                      scalar([k](double x) { return std::pow(std::abs(x), k) * std::exp(-x * x); })});
  }
  family.push_back({"sign(x-0.5)1[-3:3]", scalar([](double x) {
                      if (std::abs(x) > 3.0) return 0.0;
                      return x >= 0.5 ? 1.0 : -1.0;
                    })});
  return family;
}

QuadratureRule<double> unit_panel_rule(int R, int per_panel) {
  if (R < 1 || per_panel < 1) throw Error(ErrorCode::Quad, "unit_panel_rule needs R >= 1 and per_panel >= 1");
  return composite_gauss_legendre<double>(2 * R, per_panel, -R, R);
}

namespace {

struct Welford {
  double n = 0.0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double v) {
    n += 1.0;
    const double delta = v - mean;
    mean += delta / n;
    m2 += delta * (v - mean);
  }
  void merge(const Welford& o) {
    if (o.n == 0.0) return;
    if (n == 0.0) {
      *this = o;
      return;
    }
    const double total = n + o.n;
    const double delta = o.mean - mean;
    mean += delta * (o.n / total);
    m2 += o.m2 + delta * delta * n * o.n / total;
    n = total;
  }
  double variance() const { return n > 1.0 ? m2 / (n - 1.0) : 0.0; }
};

// One ratio: |f(k, x)| integrated against node weights over k and the x-rule.
struct Measurement {
  std::string id;
  double s = 0.0;
  std::function<double(int, const Point&)> f;
  std::vector<double> time_weight;  // N + 1
};

double outer_integral(const Measurement& m, int k, const QuadratureRule<double>& rule, const WeightFunction& rho) {
  double acc = 0.0;
  Point x(1);
  for (Eigen::Index q = 0; q < rule.size(); ++q) {
    x(0) = rule.nodes(q);
    acc += rule.weights(q) * rho(x(0)) * std::abs(m.f(k, x));
  }
  return acc;
}

void check_tails(const std::vector<Measurement>& measurements, const std::vector<double>& denominators,
                 const QuadratureRule<double>& rule, const WeightFunction& rho) {
  const double lo = rule.nodes.minCoeff();
  const double hi = rule.nodes.maxCoeff();
  const double reach = 10.0 * (1.0 + std::max(std::abs(lo), std::abs(hi)));
  const auto right = composite_gauss_legendre<double>(64, 8, hi, hi + reach);
  const auto left = composite_gauss_legendre<double>(64, 8, lo - reach, lo);
  for (std::size_t i = 0; i < measurements.size(); ++i) {
    const auto& m = measurements[i];
    double tail = 0.0;
    for (std::size_t k = 0; k < m.time_weight.size(); ++k) {
      if (m.time_weight[k] == 0.0) continue;
      const int kk = static_cast<int>(k);
      tail += m.time_weight[k] * (outer_integral(m, kk, right, rho) + outer_integral(m, kk, left, rho));
    }
    if (!(tail <= 0.01 * denominators[i])) {
      throw Error(ErrorCode::Quad, "x-rule misses " + std::to_string(tail) + " of " +
                                       std::to_string(denominators[i]) + " for " + m.id);
    }
  }
}

NormRatioReport estimate(const ModelSpec& model, const WeightFunction& rho, const TimeGrid& grid,
                         std::vector<Measurement> measurements, const QuadratureRule<double>& rule,
                         const NormcheckOptions& options) {
  if (model.dim != 1) throw Error(ErrorCode::Config, "norm ratios are implemented for d = 1");
  if (options.M < 2) throw Error(ErrorCode::Config, "norm ratios need M >= 2");
  if (rule.size() == 0) throw Error(ErrorCode::Quad, "empty x-rule");

  const std::size_t nm = measurements.size();
  const int N = grid.N;
  const Eigen::Index nq = rule.size();

  std::vector<double> denominators(nm, 0.0);
  for (std::size_t i = 0; i < nm; ++i) {
    for (int k = 0; k <= N; ++k) {
      if (measurements[i].time_weight[k] != 0.0)
        denominators[i] += measurements[i].time_weight[k] * outer_integral(measurements[i], k, rule, rho);
    }
    if (!(denominators[i] > 0.0) || !std::isfinite(denominators[i]))
      throw Error(ErrorCode::DivZero, "test function " + measurements[i].id + " vanishes on the x-rule");
  }
  check_tails(measurements, denominators, rule, rho);

  // active[k] lists the measurements read at node k
  std::vector<std::vector<std::size_t>> active(N + 1);
  for (std::size_t i = 0; i < nm; ++i)
    for (int k = 0; k <= N; ++k)
      if (measurements[i].time_weight[k] != 0.0) active[k].push_back(i);

  std::vector<double> wq(nq);
  for (Eigen::Index q = 0; q < nq; ++q) wq[q] = rule.weights(q) * rho(rule.nodes(q));

  const Chunking chunks{static_cast<std::size_t>(options.M), 2048};
  std::vector<std::vector<Welford>> stats(chunks.count(), std::vector<Welford>(nm));
  const double dt = grid.dt();

  parallel_chunks(
      chunks.count(),
      [&](std::size_t c) {
        StepNoise noise;
        std::vector<Point> state(nq, Point::Zero(1));
        std::vector<double> acc(nm);
        for (std::size_t p = chunks.begin(c); p < chunks.end(c); ++p) {
          Engine rng = path_engine(options.seed, p);
          for (Eigen::Index q = 0; q < nq; ++q) state[q](0) = rule.nodes(q);
          std::fill(acc.begin(), acc.end(), 0.0);
          for (int k = 0; k <= N; ++k) {
            if (k > 0) {
              draw_step_noise(model, dt, rng, noise);
              for (Eigen::Index q = 0; q < nq; ++q) state[q] = apply_step(model, state[q], noise);
            }
            for (std::size_t i : active[k]) {
              const auto& m = measurements[i];
              double sum = 0.0;
              for (Eigen::Index q = 0; q < nq; ++q) sum += wq[q] * std::abs(m.f(k, state[q]));
              acc[i] += m.time_weight[k] * sum;
            }
          }
          for (std::size_t i = 0; i < nm; ++i) stats[c][i].add(acc[i]);
        }
      },
      options.threads);

  NormRatioReport report;
  report.min = std::numeric_limits<double>::infinity();
  report.max = -std::numeric_limits<double>::infinity();
  std::mt19937_64 boot_rng(options.bootstrap_seed);
  std::uniform_int_distribution<std::size_t> pick(0, chunks.count() - 1);
  std::vector<double> resampled(std::max(options.bootstrap, 0));

  for (std::size_t i = 0; i < nm; ++i) {
    Welford total;
    for (std::size_t c = 0; c < chunks.count(); ++c) total.merge(stats[c][i]);
    NormRatioEntry entry;
    entry.id = measurements[i].id;
    entry.s = measurements[i].s;
    entry.ratio = total.mean / denominators[i];
    entry.standard_error = std::sqrt(total.variance() / total.n) / denominators[i];
    if (!std::isfinite(entry.ratio) || !(entry.ratio > 0.0))
      throw Error(ErrorCode::Numeric, "non-positive or non-finite ratio for " + entry.id);

    for (auto& r : resampled) {
      double num = 0.0, den = 0.0;
      for (std::size_t c = 0; c < chunks.count(); ++c) {
        const auto& w = stats[pick(boot_rng)][i];
        num += w.mean * w.n;
        den += w.n;
      }
      r = num / den / denominators[i];
    }
    if (!resampled.empty()) {
      std::sort(resampled.begin(), resampled.end());
      const auto at = [&](double q) {
        return resampled[static_cast<std::size_t>(q * static_cast<double>(resampled.size() - 1))];
      };
      entry.ci_lo = at(0.025);
      entry.ci_hi = at(0.975);
    } else {
      entry.ci_lo = entry.ci_hi = entry.ratio;
    }

    report.min = std::min(report.min, entry.ratio);
    report.max = std::max(report.max, entry.ratio);
    report.max_stderr = std::max(report.max_stderr, entry.standard_error);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace

NormRatioReport norm_ratio(const ModelSpec& model, const WeightFunction& rho, const std::vector<TestFunction>& family,
                           double t, const std::vector<double>& s_list, const QuadratureRule<double>& x_rule,
                           const NormcheckOptions& options) {
  if (family.empty() || s_list.empty()) throw Error(ErrorCode::Config, "empty test family or time list");
  const double last = *std::max_element(s_list.begin(), s_list.end());
  if (!(last > t)) throw Error(ErrorCode::Grid, "every s must exceed t");
  const TimeGrid grid(t, last, options.steps);

  std::vector<Measurement> measurements;
  for (const auto& phi : family) {
    for (double s : s_list) {
      const int node = grid.node_of(s);
      if (node < 0) throw Error(ErrorCode::Grid, "s = " + std::to_string(s) + " is not a grid node");
      Measurement m;
      m.id = phi.id;
      m.s = s;
      m.f = [fn = phi.phi](int, const Point& x) { return fn(x); };
      m.time_weight.assign(grid.N + 1, 0.0);
      m.time_weight[node] = 1.0;
      measurements.push_back(std::move(m));
    }
  }
  return estimate(model, rho, grid, std::move(measurements), x_rule, options);
}

NormRatioReport spacetime_norm_ratio(const ModelSpec& model, const WeightFunction& rho,
                                     const std::vector<SpaceTimeFunction>& family, double t, double T,
                                     const QuadratureRule<double>& x_rule, const NormcheckOptions& options) {
  if (family.empty()) throw Error(ErrorCode::Config, "empty test family");
  if (!(T > t)) throw Error(ErrorCode::Grid, "T must exceed t");
  const TimeGrid grid(t, T, options.steps);

  std::vector<double> trapezoid(grid.N + 1, grid.dt());
  trapezoid.front() *= 0.5;
  trapezoid.back() *= 0.5;

  std::vector<Measurement> measurements;
  for (const auto& psi : family) {
    Measurement m;
    m.id = psi.id;
    m.s = T;
    m.f = [fn = psi.psi, grid](int k, const Point& x) { return fn(grid.time(k), x); };
    m.time_weight = trapezoid;
    measurements.push_back(std::move(m));
  }
  return estimate(model, rho, grid, std::move(measurements), x_rule, options);
}

void write_norm_csv(const NormRatioReport& report, const std::filesystem::path& file) {
  std::ofstream os(file);
  if (!os) throw Error(ErrorCode::Io, "cannot write " + file.string());
  os.precision(17);
  os << "phi_id,s,ratio,stderr,ci_lo,ci_hi\n";
  for (const auto& e : report.entries)
    os << e.id << ',' << e.s << ',' << e.ratio << ',' << e.standard_error << ',' << e.ci_lo << ',' << e.ci_hi << '\n';
}

void write_norm_summary(const NormRatioReport& report, const std::filesystem::path& file) {
  std::ofstream os(file);
  if (!os) throw Error(ErrorCode::Io, "cannot write " + file.string());
  os << nlohmann::json{{"min", report.min},
                       {"max", report.max},
                       {"width", report.width()},
                       {"max_stderr", report.max_stderr},
                       {"entries", report.entries.size()}}
            .dump(2)
     << '\n';
}

}  // namespace pide
