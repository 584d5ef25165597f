#pragma once

#include "pide/common.hpp"
#include "pide/quadrature.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace pide {

using Engine = std::mt19937_64;

/// At most this many jump functionals may enter a driver.
inline constexpr int kMaxFunctionals = 8;
using Functionals = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxFunctionals, 1>;

/// Finite-activity Levy measure: total intensity, an exact mark sampler for simulation and a
/// positive quadrature (nodes, weights summing to the intensity) for every integral against it.
class JumpMeasure {
 public:
  using Sampler = std::function<Mark(Engine&)>;

  /// No jumps.
  JumpMeasure() = default;
  JumpMeasure(double intensity, int mark_dim, Sampler sampler, std::vector<Mark> nodes,
              VectorXd weights);

  static JumpMeasure uniform(double lo, double hi, double intensity, int nodes = 32);
  static JumpMeasure two_point(double up, double down, double p_up, double intensity);
  static JumpMeasure normal(double mean, double sd, double intensity, int nodes = 32);

  double intensity() const { return intensity_; }
  int mark_dim() const { return mark_dim_; }
  bool empty() const { return intensity_ == 0.0 || nodes_.empty(); }
  const std::vector<Mark>& nodes() const { return nodes_; }
  const VectorXd& weights() const { return weights_; }
  Mark sample(Engine& rng) const { return sampler_(rng); }

  /// Quadrature approximation of the integral of (1 ^ |e|^2).
  double small_jump_moment() const;

  /// Quadrature approximation of the integral of `fn` against the measure.
  template <typename Fn>
  double integrate(Fn&& fn) const {
    double acc = 0.0;
    for (std::size_t j = 0; j < nodes_.size(); ++j) acc += weights_(static_cast<Eigen::Index>(j)) * fn(nodes_[j]);
    return acc;
  }

 private:
  double intensity_ = 0.0;
  int mark_dim_ = 1;
  Sampler sampler_;
  std::vector<Mark> nodes_;
  VectorXd weights_;
};

/// Coefficients of the forward jump diffusion dX = b dt + sigma dW + int beta dmu~.
/// Jacobians are optional; finite differences are used when absent.
struct ModelSpec {
  std::string name = "custom";
  int dim = 1;
  std::function<Point(const Point&)> drift;
  std::function<SquareMatrix(const Point&)> diffusion;
  std::function<Point(const Point&, const Mark&)> jump;  // empty means beta == 0
  JumpMeasure jumps;
  double jump_bound = 1.0;   // K_beta in |beta(x,e)| <= K_beta (1 ^ |e|)
  double coef_bound = 1.0;   // Lipschitz / growth constant of b and sigma

  std::function<SquareMatrix(const Point&)> drift_jacobian;
  std::function<SquareMatrix(const Point&, const Mark&)> jump_jacobian;
  /// Closed form of sum_j w_j beta(x, e_j); computed by quadrature when empty.
  std::function<Point(const Point&)> compensator;

  Point b(const Point& x) const;
  /// Drift removed between jumps by the compensated Poisson integral.
  Point compensator_drift(const Point& x) const;
  SquareMatrix sigma(const Point& x) const;
  Point beta(const Point& x, const Mark& e) const;
  bool has_jumps() const { return static_cast<bool>(jump) && !jumps.empty(); }
};

/// Scalar driver f(t, x, y, z, vbar). z = sigma^* grad u, vbar_i = int v(e) gamma_i(e) lambda(de).
struct DriverSpec {
  using Fn = std::function<double(double, const Point&, double, const Point&, const Functionals&)>;
  using Functional = std::function<double(const Mark&)>;

  std::string name = "custom";
  Fn f;
  std::vector<Functional> functionals;
  double lipschitz = 0.0;   // C_f
  double growth = 0.0;      // bound on |f(t, x, 0, 0, 0)|

  int q() const { return static_cast<int>(functionals.size()); }
  double operator()(double t, const Point& x, double y, const Point& z, const Functionals& v) const {
    return f(t, x, y, z, v);
  }
  double f0(double t, const Point& x, int dim) const;
};

struct TerminalSpec {
  std::string name = "custom";
  std::function<double(const Point&)> g;
  double growth = 0.0;
  double operator()(const Point& x) const { return g(x); }
};

struct ObstacleSpec {
  std::string name = "custom";
  std::function<double(double, const Point&)> h;
  double iota = 1.0;
  double kappa = 1.0;
  double operator()(double t, const Point& x) const { return h(t, x); }
};

/// rho(x) = (1 + |x|)^{-p}
struct WeightFunction {
  double p = 2.0;
  double operator()(const Point& x) const { return std::pow(1.0 + x.norm(), -p); }
  double operator()(double x) const { return std::pow(1.0 + std::abs(x), -p); }
};

/// Smallest admissible weight exponent when an obstacle with growth kappa is present.
inline double min_weight_exponent(double kappa, int dim) { return kappa + dim + 1.0; }

/// A twice differentiable scalar field. Missing derivatives fall back to central differences.
struct ScalarField {
  std::function<double(const Point&)> value;
  std::function<Point(const Point&)> gradient;
  std::function<SquareMatrix(const Point&)> hessian;

  double operator()(const Point& x) const { return value(x); }
  Point grad(const Point& x) const;
  SquareMatrix hess(const Point& x) const;
};

/// u(t, x) together with optional derivatives.
struct TimeSpaceField {
  std::function<double(double, const Point&)> value;
  std::function<double(double, const Point&)> time_derivative;
  std::function<Point(double, const Point&)> gradient;
  std::function<SquareMatrix(double, const Point&)> hessian;

  ScalarField at(double t) const;
  double dt(double t, const Point& x) const;
};

/// Central finite-difference step 1e-4 (1 + |x|).
double fd_step(const Point& x);
Point fd_gradient(const std::function<double(const Point&)>& f, const Point& x);
SquareMatrix fd_hessian(const std::function<double(const Point&)>& f, const Point& x);
/// Jacobian of a vector field by central differences, column j = d/dx_j.
SquareMatrix fd_jacobian(const std::function<Point(const Point&)>& f, const Point& x);

/// sum_i b^i d_i phi + 1/2 sum_ij a^ij d_ij phi, a = sigma sigma^*.
double apply_k1(const ModelSpec& model, const ScalarField& phi, const Point& x);

/// sum_j w_j [phi(x + beta(x, e_j)) - phi(x) - beta(x, e_j) . grad phi(x)]
double apply_k2(const ModelSpec& model, const ScalarField& phi, const Point& x);

/// Full generator K1 + K2.
inline double apply_generator(const ModelSpec& model, const ScalarField& phi, const Point& x) {
  return apply_k1(model, phi, x) + apply_k2(model, phi, x);
}

struct Box {
  Point lo;
  Point hi;
  bool contains(const Point& x, double slack = 0.0) const {
    return ((x - lo).array() >= -slack).all() && ((hi - x).array() >= -slack).all();
  }
};

struct LinkageReport {
  bool injective = true;
  double min_jacobian = 0.0;
  int violations = 0;
};

/// Scans H_e(x) = x + beta(x, e) on a tensor grid over `box`.
LinkageReport check_linkage_diffeo(const ModelSpec& model, const Mark& e, const Box& box,
                                   int grid_pts);

/// Jump functionals of a field: vbar_i = sum_j w_j gamma_i(e_j) (u(x + beta(x,e_j)) - u(x)).
Functionals jump_functionals(const ModelSpec& model, const DriverSpec& driver,
                             const std::function<double(const Point&)>& u, const Point& x);

/// d_t u + K1 u + K2 u + f(t, x, u, sigma^* grad u, vbar[u]).
double pide_residual(const ModelSpec& model, const DriverSpec& driver, const TimeSpaceField& u,
                     double t, const Point& x);

// -- assumption spot checks ---------------------------------------------------------------

struct AssumptionReport {
  bool ok = true;
  double worst_ratio = 0.0;  // largest observed |lhs| / bound
  std::string detail;
};

/// |beta(x,e)| <= K_beta (1 ^ |e|) on sampled states (uniform in box) and sampled marks.
AssumptionReport check_jump_growth(const ModelSpec& model, const Box& box, int samples,
                                   std::uint64_t seed);
/// Random secant ratios |f(.,y,z,v) - f(.,y',z',v')| / (|dy| + |dz| + |dv|) against C_f.
AssumptionReport check_driver_lipschitz(const DriverSpec& driver, int dim, const Box& box,
                                        int samples, std::uint64_t seed);
/// |h(t,x)| <= iota (1 + |x|^kappa) on a grid over [0,T] x box.
AssumptionReport check_obstacle_growth(const ObstacleSpec& obstacle, double T, const Box& box,
                                       int grid_pts);
/// 1-D: integral of g^2 rho stabilises as the truncation radius doubles.
AssumptionReport check_terminal_integrability(const TerminalSpec& terminal,
                                              const WeightFunction& rho);
/// Monte Carlo moments of the mark sampler against the quadrature (first two moments, 4 sigma).
AssumptionReport check_mark_sampler(const JumpMeasure& measure, int samples, std::uint64_t seed);

// -- built-in coefficients, drivers, payoffs ----------------------------------------------

ModelSpec zero_model(int dim = 1);
/// b = 0, sigma = I.
ModelSpec heat_model(int dim = 1);
/// Heat model plus beta(x,e) = e, lambda = uniform density 1/2 on [-1, 1].
ModelSpec toy_uniform_model();

struct MarketParams {
  double rate = 0.05;
  double vol = 0.2;
  double strike = 100.0;
};

struct MertonJumps {
  double intensity = 1.0;
  double mark_mean = -0.1;   // mean of log jump size
  double mark_sd = 0.15;
};

struct KouJumps {
  double intensity = 1.0;
  double up = 0.1;      // log jump size of an up move
  double down = -0.15;  // log jump size of a down move
  double p_up = 0.4;
};

/// Log-moneyness x = log(S / K) under the pricing measure, no jumps.
ModelSpec black_scholes_model(const MarketParams& market);
/// Log-moneyness with log-normal jumps; drift carries the compensator so that e^x is a
/// discounted martingale up to the rate.
ModelSpec merton_model(const MarketParams& market, const MertonJumps& jumps);
ModelSpec kou_model(const MarketParams& market, const KouJumps& jumps);

DriverSpec zero_driver();
/// f = -r y.
DriverSpec discount_driver(double rate);
/// f = a y + b . z + c . vbar + f0.
DriverSpec linear_driver(double a, const Point& b, const Functionals& c, double f0,
                         std::vector<DriverSpec::Functional> functionals);
/// Wealth equation with a higher borrowing rate R >= r in log-moneyness coordinates:
/// f = -r y + (R - r) (y - z / vol)^-.
DriverSpec borrowing_driver(double rate, double borrow_rate, double vol);
/// Adds the penalty n (y - h(t,x))^- to a driver.
DriverSpec penalized_driver(const DriverSpec& base, const ObstacleSpec& obstacle, double n);

TerminalSpec constant_terminal(double c);
TerminalSpec square_terminal();  // |x|^2
/// K (e^x - 1)^+ and K (1 - e^x)^+ in log-moneyness.
TerminalSpec call_terminal(double strike);
TerminalSpec put_terminal(double strike);

ObstacleSpec put_obstacle(double strike);
ObstacleSpec constant_obstacle(double c);

}  // namespace pide
