#include "pide/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace pide {

// -- JumpMeasure ----------------------------------------------------------------------------

JumpMeasure::JumpMeasure(double intensity, int mark_dim, Sampler sampler, std::vector<Mark> nodes,
                         VectorXd weights)
    : intensity_(intensity),
      mark_dim_(mark_dim),
      sampler_(std::move(sampler)),
      nodes_(std::move(nodes)),
      weights_(std::move(weights)) {
  if (!std::isfinite(intensity_) || intensity_ < 0.0)
    throw Error(ErrorCode::Config, "jump intensity must be finite and >= 0");
  if (mark_dim_ < 1 || mark_dim_ > kMaxDim)
    throw Error(ErrorCode::Config, "mark dimension out of range");
  if (static_cast<Eigen::Index>(nodes_.size()) != weights_.size())
    throw Error(ErrorCode::Config, "quadrature nodes and weights differ in length");
  if ((weights_.array() < 0.0).any())
    throw Error(ErrorCode::Config, "quadrature weights must be nonnegative");
  if (intensity_ > 0.0) {
    if (nodes_.empty()) throw Error(ErrorCode::Config, "positive intensity needs quadrature nodes");
    if (!sampler_) throw Error(ErrorCode::Config, "positive intensity needs a mark sampler");
    const double total = weights_.sum();
    if (std::abs(total - intensity_) > 1e-10 * std::max(1.0, intensity_))
      throw Error(ErrorCode::Config, "quadrature weights must sum to the intensity");
  }
  for (const auto& e : nodes_) {
    if (e.size() != mark_dim_) throw Error(ErrorCode::Config, "quadrature node has wrong dimension");
  }
  if (!std::isfinite(small_jump_moment()))
    throw Error(ErrorCode::Config, "integral of (1 ^ |e|^2) is not finite");
}

JumpMeasure JumpMeasure::uniform(double lo, double hi, double intensity, int n) {
  if (!(hi > lo)) throw Error(ErrorCode::Config, "uniform marks need lo < hi");
  const auto rule = gauss_legendre<double>(n, lo, hi);
  std::vector<Mark> nodes;
  nodes.reserve(n);
  for (int i = 0; i < n; ++i) nodes.push_back(Mark::Constant(1, rule.nodes(i)));
  VectorXd weights = rule.weights * (intensity / (hi - lo));
  auto sampler = [lo, hi](Engine& rng) {
    std::uniform_real_distribution<double> u(lo, hi);
    return Mark::Constant(1, u(rng));
  };
  return JumpMeasure(intensity, 1, sampler, std::move(nodes), std::move(weights));
}

JumpMeasure JumpMeasure::two_point(double up, double down, double p_up, double intensity) {
  if (!(p_up >= 0.0 && p_up <= 1.0)) throw Error(ErrorCode::Config, "p_up must lie in [0, 1]");
  std::vector<Mark> nodes{Mark::Constant(1, up), Mark::Constant(1, down)};
  VectorXd weights(2);
  weights << intensity * p_up, intensity * (1.0 - p_up);
  auto sampler = [up, down, p_up](Engine& rng) {
    std::bernoulli_distribution coin(p_up);
    return Mark::Constant(1, coin(rng) ? up : down);
  };
  return JumpMeasure(intensity, 1, sampler, std::move(nodes), std::move(weights));
}

JumpMeasure JumpMeasure::normal(double mean, double sd, double intensity, int n) {
  if (!(sd > 0.0)) throw Error(ErrorCode::Config, "normal marks need sd > 0");
  const auto rule = gauss_hermite_normal<double>(n);
  std::vector<Mark> nodes;
  nodes.reserve(n);
  for (int i = 0; i < n; ++i) nodes.push_back(Mark::Constant(1, mean + sd * rule.nodes(i)));
  // renormalise so the weights sum to the intensity exactly
  VectorXd weights = rule.weights * (intensity / rule.weights.sum());
  auto sampler = [mean, sd](Engine& rng) {
    std::normal_distribution<double> z(mean, sd);
    return Mark::Constant(1, z(rng));
  };
  return JumpMeasure(intensity, 1, sampler, std::move(nodes), std::move(weights));
}

double JumpMeasure::small_jump_moment() const {
  return integrate([](const Mark& e) { return std::min(1.0, e.squaredNorm()); });
}

// -- ModelSpec ------------------------------------------------------------------------------

Point ModelSpec::b(const Point& x) const {
  return drift ? drift(x) : Point::Zero(dim);
}

SquareMatrix ModelSpec::sigma(const Point& x) const {
  return diffusion ? diffusion(x) : SquareMatrix::Zero(dim, dim);
}

Point ModelSpec::beta(const Point& x, const Mark& e) const {
  return jump ? jump(x, e) : Point::Zero(dim);
}

Point ModelSpec::compensator_drift(const Point& x) const {
  if (!has_jumps()) return Point::Zero(dim);
  if (compensator) return compensator(x);
  Point acc = Point::Zero(dim);
  const auto& nodes = jumps.nodes();
  for (std::size_t j = 0; j < nodes.size(); ++j)
    acc += jumps.weights()(static_cast<Eigen::Index>(j)) * jump(x, nodes[j]);
  return acc;
}

double DriverSpec::f0(double t, const Point& x, int dim) const {
  return f(t, x, 0.0, Point::Zero(dim), Functionals::Zero(q()));
}

// -- finite differences ---------------------------------------------------------------------

double fd_step(const Point& x) { return 1e-4 * (1.0 + x.norm()); }

Point fd_gradient(const std::function<double(const Point&)>& f, const Point& x) {
  const double h = fd_step(x);
  Point g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Point xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    g(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

SquareMatrix fd_hessian(const std::function<double(const Point&)>& f, const Point& x) {
  const double h = fd_step(x);
  const auto d = x.size();
  SquareMatrix H(d, d);
  const double fx = f(x);
  for (Eigen::Index i = 0; i < d; ++i) {
    Point xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    H(i, i) = (f(xp) - 2.0 * fx + f(xm)) / (h * h);
    for (Eigen::Index j = i + 1; j < d; ++j) {
      Point pp = x, pm = x, mp = x, mm = x;
      pp(i) += h; pp(j) += h;
      pm(i) += h; pm(j) -= h;
      mp(i) -= h; mp(j) += h;
      mm(i) -= h; mm(j) -= h;
      H(i, j) = H(j, i) = (f(pp) - f(pm) - f(mp) + f(mm)) / (4.0 * h * h);
    }
  }
  return H;
}

SquareMatrix fd_jacobian(const std::function<Point(const Point&)>& f, const Point& x) {
  const double h = fd_step(x);
  const auto d = x.size();
  SquareMatrix J(d, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    Point xp = x, xm = x;
    xp(j) += h;
    xm(j) -= h;
    J.col(j) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return J;
}

Point ScalarField::grad(const Point& x) const {
  return gradient ? gradient(x) : fd_gradient(value, x);
}

SquareMatrix ScalarField::hess(const Point& x) const {
  return hessian ? hessian(x) : fd_hessian(value, x);
}

ScalarField TimeSpaceField::at(double t) const {
  ScalarField out;
  auto v = value;
  out.value = [v, t](const Point& x) { return v(t, x); };
  if (gradient) {
    auto g = gradient;
    out.gradient = [g, t](const Point& x) { return g(t, x); };
  }
  if (hessian) {
    auto hs = hessian;
    out.hessian = [hs, t](const Point& x) { return hs(t, x); };
  }
  return out;
}

double TimeSpaceField::dt(double t, const Point& x) const {
  if (time_derivative) return time_derivative(t, x);
  // second-order one-sided difference looking forward in time
  const double h = 1e-5 * (1.0 + std::abs(t));
  return (-3.0 * value(t, x) + 4.0 * value(t + h, x) - value(t + 2.0 * h, x)) / (2.0 * h);
}

// -- operators ------------------------------------------------------------------------------

namespace {

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw Error(ErrorCode::Numeric, std::string("non-finite ") + what);
}

}  // namespace

double apply_k1(const ModelSpec& model, const ScalarField& phi, const Point& x) {
  const Point b = model.b(x);
  const SquareMatrix s = model.sigma(x);
  const Point g = phi.grad(x);
  const SquareMatrix H = phi.hess(x);
  if (!b.allFinite() || !s.allFinite()) throw Error(ErrorCode::Numeric, "non-finite coefficient");
  if (!g.allFinite() || !H.allFinite()) throw Error(ErrorCode::Numeric, "non-finite derivative");
  const SquareMatrix a = s * s.transpose();
  const double out = b.dot(g) + 0.5 * (a.array() * H.array()).sum();
  require_finite(out, "K1 value");
  return out;
}

double apply_k2(const ModelSpec& model, const ScalarField& phi, const Point& x) {
  if (!model.has_jumps()) return 0.0;
  const double fx = phi(x);
  const Point g = phi.grad(x);
  require_finite(fx, "field value");
  const auto& nodes = model.jumps.nodes();
  const auto& w = model.jumps.weights();
  double acc = 0.0;
  for (std::size_t j = 0; j < nodes.size(); ++j) {
    const Point shift = model.beta(x, nodes[j]);
    const double shifted = phi(x + shift);
    require_finite(shifted, "field value at shifted point");
    acc += w(static_cast<Eigen::Index>(j)) * (shifted - fx - shift.dot(g));
  }
  return acc;
}

LinkageReport check_linkage_diffeo(const ModelSpec& model, const Mark& e, const Box& box,
                                   int grid_pts) {
  if (grid_pts < 2) throw Error(ErrorCode::Grid, "linkage check needs >= 2 points per axis");
  const int d = model.dim;
  long total = 1;
  for (int i = 0; i < d; ++i) total *= grid_pts;

  std::vector<Point> points, images;
  points.reserve(total);
  images.reserve(total);
  for (long idx = 0; idx < total; ++idx) {
    Point x(d);
    long rem = idx;
    for (int i = 0; i < d; ++i) {
      const int k = static_cast<int>(rem % grid_pts);
      rem /= grid_pts;
      x(i) = box.lo(i) + (box.hi(i) - box.lo(i)) * k / (grid_pts - 1);
    }
    points.push_back(x);
    images.push_back(x + model.beta(x, e));
  }

  LinkageReport report;
  report.min_jacobian = std::numeric_limits<double>::infinity();
  auto H = [&](const Point& x) -> Point { return x + model.beta(x, e); };
  for (const auto& x : points) {
    SquareMatrix J = model.jump_jacobian ? SquareMatrix(SquareMatrix::Identity(d, d) + model.jump_jacobian(x, e))
                                         : fd_jacobian(H, x);
    const double det = J.determinant();
    report.min_jacobian = std::min(report.min_jacobian, det);
    if (!(det > 0.0)) ++report.violations;
  }

  if (d == 1) {
    // a continuous map of the line is injective iff strictly monotone
    for (long i = 0; i + 1 < total; ++i)
      if (!(images[i + 1](0) > images[i](0))) ++report.violations;
  } else {
    const double scale = (box.hi - box.lo).norm() / grid_pts;
    for (long i = 0; i < total; ++i)
      for (long j = i + 1; j < total; ++j)
        if ((images[i] - images[j]).norm() <= 1e-12 * scale) ++report.violations;
  }
  report.injective = report.violations == 0;
  return report;
}

Functionals jump_functionals(const ModelSpec& model, const DriverSpec& driver,
                             const std::function<double(const Point&)>& u, const Point& x) {
  const int q = driver.q();
  Functionals v = Functionals::Zero(q);
  if (q == 0 || !model.has_jumps()) return v;
  const double ux = u(x);
  const auto& nodes = model.jumps.nodes();
  const auto& w = model.jumps.weights();
  for (std::size_t j = 0; j < nodes.size(); ++j) {
    const double jump = u(x + model.beta(x, nodes[j])) - ux;
    require_finite(jump, "stencil value");
    for (int i = 0; i < q; ++i)
      v(i) += w(static_cast<Eigen::Index>(j)) * driver.functionals[i](nodes[j]) * jump;
  }
  return v;
}

double pide_residual(const ModelSpec& model, const DriverSpec& driver, const TimeSpaceField& u,
                     double t, const Point& x) {
  const ScalarField field = u.at(t);
  const double value = field(x);
  const double ut = u.dt(t, x);
  require_finite(value, "stencil value");
  require_finite(ut, "time derivative");
  const double gen = apply_generator(model, field, x);
  const Point z = model.sigma(x).transpose() * field.grad(x);
  const Functionals v = jump_functionals(model, driver, field.value, x);
  const double f = driver.f ? driver(t, x, value, z, v) : 0.0;
  const double out = ut + gen + f;
  require_finite(out, "residual");
  return out;
}

// -- assumption checks ----------------------------------------------------------------------

namespace {

Point uniform_in_box(const Box& box, Engine& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Point x(box.lo.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = box.lo(i) + (box.hi(i) - box.lo(i)) * u(rng);
  return x;
}

}  // namespace

AssumptionReport check_jump_growth(const ModelSpec& model, const Box& box, int samples,
                                   std::uint64_t seed) {
  AssumptionReport report;
  if (!(model.jump_bound > 0.0) || !(model.coef_bound > 0.0)) {
    report.ok = false;
    report.detail = "declared constants must be positive";
    return report;
  }
  if (!model.has_jumps()) return report;
  Engine rng(seed);
  for (int s = 0; s < samples; ++s) {
    const Point x = uniform_in_box(box, rng);
    const Mark e = model.jumps.sample(rng);
    const double bound = model.jump_bound * std::min(1.0, e.norm());
    const double lhs = model.beta(x, e).norm();
    if (lhs == 0.0) continue;
    const double ratio = bound > 0.0 ? lhs / bound : std::numeric_limits<double>::infinity();
    report.worst_ratio = std::max(report.worst_ratio, ratio);
  }
  report.ok = report.worst_ratio <= 1.0 + 1e-12;
  if (!report.ok) report.detail = "|beta(x,e)| exceeds K_beta (1 ^ |e|)";
  return report;
}

AssumptionReport check_driver_lipschitz(const DriverSpec& driver, int dim, const Box& box,
                                        int samples, std::uint64_t seed) {
  AssumptionReport report;
  Engine rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  const int q = driver.q();
  std::uniform_real_distribution<double> ut(0.0, 1.0);
  for (int s = 0; s < samples; ++s) {
    const double t = ut(rng);
    const Point x = uniform_in_box(box, rng);
    const double scale = std::pow(10.0, 2.0 * ut(rng) - 1.0);
    auto draw_point = [&](int n) {
      Point p(n);
      for (int i = 0; i < n; ++i) p(i) = scale * z(rng);
      return p;
    };
    const double y1 = scale * z(rng), y2 = scale * z(rng);
    const Point z1 = draw_point(dim), z2 = draw_point(dim);
    Functionals v1(q), v2(q);
    for (int i = 0; i < q; ++i) {
      v1(i) = scale * z(rng);
      v2(i) = scale * z(rng);
    }
    const double dist = std::abs(y1 - y2) + (z1 - z2).norm() + (v1 - v2).norm();
    if (dist == 0.0) continue;
    const double ratio = std::abs(driver(t, x, y1, z1, v1) - driver(t, x, y2, z2, v2)) / dist;
    report.worst_ratio = std::max(report.worst_ratio, ratio);
  }
  report.ok = report.worst_ratio <= driver.lipschitz * (1.0 + 1e-9) + 1e-12;
  if (!report.ok) {
    std::ostringstream os;
    os << "secant ratio " << report.worst_ratio << " exceeds C_f = " << driver.lipschitz;
    report.detail = os.str();
  }
  return report;
}

AssumptionReport check_obstacle_growth(const ObstacleSpec& obstacle, double T, const Box& box,
                                       int grid_pts) {
  AssumptionReport report;
  if (!(obstacle.iota > 0.0) || !(obstacle.kappa > 0.0)) {
    report.ok = false;
    report.detail = "iota and kappa must be positive";
    return report;
  }
  const int d = static_cast<int>(box.lo.size());
  long total = 1;
  for (int i = 0; i < d; ++i) total *= grid_pts;
  for (int k = 0; k < grid_pts; ++k) {
    const double t = T * k / std::max(grid_pts - 1, 1);
    for (long idx = 0; idx < total; ++idx) {
      Point x(d);
      long rem = idx;
      for (int i = 0; i < d; ++i) {
        const int m = static_cast<int>(rem % grid_pts);
        rem /= grid_pts;
        x(i) = box.lo(i) + (box.hi(i) - box.lo(i)) * m / std::max(grid_pts - 1, 1);
      }
      const double bound = obstacle.iota * (1.0 + std::pow(x.norm(), obstacle.kappa));
      report.worst_ratio = std::max(report.worst_ratio, std::abs(obstacle(t, x)) / bound);
    }
  }
  report.ok = report.worst_ratio <= 1.0 + 1e-12;
  if (!report.ok) report.detail = "|h(t,x)| exceeds iota (1 + |x|^kappa)";
  return report;
}

AssumptionReport check_terminal_integrability(const TerminalSpec& terminal,
                                              const WeightFunction& rho) {
  AssumptionReport report;
  auto integral = [&](double R) {
    const auto rule = composite_gauss_legendre<double>(64, 8, -R, R);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < rule.size(); ++i) {
      const double x = rule.nodes(i);
      const double g = terminal(Point::Constant(1, x));
      acc += rule.weights(i) * g * g * rho(x);
    }
    return acc;
  };
  const double a = integral(50.0), b = integral(100.0), c = integral(200.0);
  report.worst_ratio = c;
  const bool finite = std::isfinite(a) && std::isfinite(b) && std::isfinite(c);
  // tail increments must shrink when the radius doubles
  report.ok = finite && (c - b) <= 0.5 * (b - a) + 1e-12 * std::max(1.0, c) &&
              (c - b) <= 1e-2 * std::max(c, 1e-300) + 1e-12;
  if (!report.ok) report.detail = "integral of g^2 rho does not stabilise; g not in L^2_rho";
  return report;
}

AssumptionReport check_mark_sampler(const JumpMeasure& measure, int samples, std::uint64_t seed) {
  AssumptionReport report;
  if (measure.empty()) return report;
  const double lam = measure.intensity();
  const int l = measure.mark_dim();
  Engine rng(seed);
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(l), s2 = Eigen::VectorXd::Zero(l),
                  s4 = Eigen::VectorXd::Zero(l);
  for (int s = 0; s < samples; ++s) {
    const Mark e = measure.sample(rng);
    for (int i = 0; i < l; ++i) {
      s1(i) += e(i);
      s2(i) += e(i) * e(i);
      s4(i) += std::pow(e(i), 4);
    }
  }
  const double n = samples;
  for (int i = 0; i < l; ++i) {
    const double q1 = measure.integrate([i](const Mark& e) { return e(i); }) / lam;
    const double q2 = measure.integrate([i](const Mark& e) { return e(i) * e(i); }) / lam;
    const double m1 = s1(i) / n, m2 = s2(i) / n;
    const double se1 = std::sqrt(std::max(m2 - m1 * m1, 0.0) / n);
    const double se2 = std::sqrt(std::max(s4(i) / n - m2 * m2, 0.0) / n);
    const double r1 = se1 > 0 ? std::abs(m1 - q1) / se1 : (m1 == q1 ? 0.0 : 1e300);
    const double r2 = se2 > 0 ? std::abs(m2 - q2) / se2 : (std::abs(m2 - q2) < 1e-12 ? 0.0 : 1e300);
    report.worst_ratio = std::max({report.worst_ratio, r1, r2});
  }
  report.ok = report.worst_ratio <= 4.0;
  if (!report.ok) report.detail = "sampler moments disagree with quadrature beyond 4 sigma";
  return report;
}

// -- built-ins ------------------------------------------------------------------------------

ModelSpec zero_model(int dim) {
  ModelSpec m;
  m.name = "zero";
  m.dim = dim;
  m.drift = [dim](const Point&) { return Point::Zero(dim); };
  m.diffusion = [dim](const Point&) { return SquareMatrix::Zero(dim, dim); };
  m.drift_jacobian = [dim](const Point&) { return SquareMatrix::Zero(dim, dim); };
  return m;
}

ModelSpec heat_model(int dim) {
  ModelSpec m = zero_model(dim);
  m.name = "heat";
  m.diffusion = [dim](const Point&) { return SquareMatrix::Identity(dim, dim); };
  return m;
}

ModelSpec toy_uniform_model() {
  ModelSpec m = heat_model(1);
  m.name = "toy-uniform";
  m.jump = [](const Point&, const Mark& e) { return Point(e); };
  m.jump_jacobian = [](const Point&, const Mark&) { return SquareMatrix::Zero(1, 1); };
  m.jumps = JumpMeasure::uniform(-1.0, 1.0, 1.0);
  const double comp = m.jumps.integrate([](const Mark& e) { return e(0); });
  m.compensator = [comp](const Point&) { return Point::Constant(1, comp); };
  m.jump_bound = 1.0;
  return m;
}

namespace {

ModelSpec log_moneyness_model(const MarketParams& market, JumpMeasure jumps, double mean_rel_jump,
                              double mean_log_jump, double jump_bound) {
  ModelSpec m;
  m.dim = 1;
  const double lam = jumps.intensity();
  // compensated form: b = r - vol^2/2 - lam E[e^Y - 1] + lam E[Y]
  const double drift = market.rate - 0.5 * market.vol * market.vol - lam * mean_rel_jump +
                       lam * mean_log_jump;
  const double vol = market.vol;
  m.drift = [drift](const Point&) { return Point::Constant(1, drift); };
  m.diffusion = [vol](const Point&) { return SquareMatrix::Constant(1, 1, vol); };
  m.drift_jacobian = [](const Point&) { return SquareMatrix::Zero(1, 1); };
  if (lam > 0.0) {
    m.jump = [](const Point&, const Mark& e) { return Point(e); };
    m.jump_jacobian = [](const Point&, const Mark&) { return SquareMatrix::Zero(1, 1); };
    const double comp = jumps.integrate([](const Mark& e) { return e(0); });
    m.compensator = [comp](const Point&) { return Point::Constant(1, comp); };
  }
  m.jumps = std::move(jumps);
  m.coef_bound = std::max(std::abs(drift), vol);
  m.jump_bound = jump_bound;
  return m;
}

}  // namespace

ModelSpec black_scholes_model(const MarketParams& market) {
  ModelSpec m = log_moneyness_model(market, JumpMeasure(), 0.0, 0.0, 1.0);
  m.name = "bs";
  return m;
}

ModelSpec merton_model(const MarketParams& market, const MertonJumps& j) {
  const double kappa = std::exp(j.mark_mean + 0.5 * j.mark_sd * j.mark_sd) - 1.0;
  // marks beyond 10 sd are never drawn in practice; K_beta covers |e| up to that range
  const double bound = std::max(1.0, std::abs(j.mark_mean) + 10.0 * j.mark_sd);
  ModelSpec m = log_moneyness_model(market, JumpMeasure::normal(j.mark_mean, j.mark_sd, j.intensity),
                                    kappa, j.mark_mean, bound);
  m.name = "merton";
  return m;
}

ModelSpec kou_model(const MarketParams& market, const KouJumps& j) {
  const double mean_rel = j.p_up * (std::exp(j.up) - 1.0) + (1.0 - j.p_up) * (std::exp(j.down) - 1.0);
  const double mean_log = j.p_up * j.up + (1.0 - j.p_up) * j.down;
  const double bound = std::max({1.0, std::abs(j.up), std::abs(j.down)});
  ModelSpec m = log_moneyness_model(market, JumpMeasure::two_point(j.up, j.down, j.p_up, j.intensity),
                                    mean_rel, mean_log, bound);
  m.name = "kou";
  return m;
}

DriverSpec zero_driver() {
  DriverSpec d;
  d.name = "zero";
  d.f = [](double, const Point&, double, const Point&, const Functionals&) { return 0.0; };
  return d;
}

DriverSpec discount_driver(double rate) {
  DriverSpec d;
  d.name = "discount";
  d.f = [rate](double, const Point&, double y, const Point&, const Functionals&) { return -rate * y; };
  d.lipschitz = std::abs(rate);
  return d;
}

DriverSpec linear_driver(double a, const Point& b, const Functionals& c, double f0,
                         std::vector<DriverSpec::Functional> functionals) {
  if (static_cast<int>(functionals.size()) != c.size())
    throw Error(ErrorCode::Config, "linear driver: one coefficient per functional");
  if (functionals.size() > static_cast<std::size_t>(kMaxFunctionals))
    throw Error(ErrorCode::Config, "at most 8 jump functionals");
  DriverSpec d;
  d.name = "linear";
  d.functionals = std::move(functionals);
  d.f = [a, b, c, f0](double, const Point&, double y, const Point& z, const Functionals& v) {
    double out = a * y + f0;
    if (b.size() > 0) out += b.dot(z);
    if (c.size() > 0) out += c.dot(v);
    return out;
  };
  d.lipschitz = std::max({std::abs(a), b.size() > 0 ? b.norm() : 0.0, c.size() > 0 ? c.norm() : 0.0});
  d.growth = std::abs(f0);
  return d;
}

DriverSpec borrowing_driver(double rate, double borrow_rate, double vol) {
  if (borrow_rate < rate) throw Error(ErrorCode::Config, "borrowing rate must be >= lending rate");
  if (!(vol > 0.0)) throw Error(ErrorCode::Config, "borrowing driver needs vol > 0");
  DriverSpec d;
  d.name = "borrowing";
  const double spread = borrow_rate - rate;
  d.f = [rate, spread, vol](double, const Point&, double y, const Point& z, const Functionals&) {
    return -rate * y + spread * negative_part(y - z(0) / vol);
  };
  d.lipschitz = std::abs(rate) + spread * std::max(1.0, 1.0 / vol);
  return d;
}

DriverSpec penalized_driver(const DriverSpec& base, const ObstacleSpec& obstacle, double n) {
  if (n < 0.0) throw Error(ErrorCode::Config, "penalty level must be >= 0");
  DriverSpec d = base;
  d.name = base.name + "+penalty";
  auto f = base.f;
  auto h = obstacle.h;
  d.f = [f, h, n](double t, const Point& x, double y, const Point& z, const Functionals& v) {
    return f(t, x, y, z, v) + n * negative_part(y - h(t, x));
  };
  d.lipschitz = base.lipschitz + n;
  return d;
}

TerminalSpec constant_terminal(double c) {
  return {"constant", [c](const Point&) { return c; }, std::abs(c)};
}

TerminalSpec square_terminal() {
  return {"square", [](const Point& x) { return x.squaredNorm(); }, 1.0};
}

TerminalSpec call_terminal(double strike) {
  return {"call", [strike](const Point& x) { return strike * positive_part(std::exp(x(0)) - 1.0); },
          strike};
}

TerminalSpec put_terminal(double strike) {
  return {"put", [strike](const Point& x) { return strike * positive_part(1.0 - std::exp(x(0))); },
          strike};
}

ObstacleSpec put_obstacle(double strike) {
  ObstacleSpec o;
  o.name = "put";
  o.h = [strike](double, const Point& x) { return strike * positive_part(1.0 - std::exp(x(0))); };
  o.iota = strike;
  o.kappa = 1.0;
  return o;
}

ObstacleSpec constant_obstacle(double c) {
  ObstacleSpec o;
  o.name = "constant";
  o.h = [c](double, const Point&) { return c; };
  o.iota = std::max(std::abs(c), 1e-300);
  o.kappa = 1.0;
  return o;
}

}  // namespace pide
