#include "pide/oracle.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace pide {

namespace {

// Thomas algorithm; lower[0] and upper[n-1] are ignored.
void solve_tridiagonal(const std::vector<double>& lower, std::vector<double> diag, std::vector<double> upper,
                       std::vector<double>& rhs) {
  const std::size_t n = diag.size();
  for (std::size_t i = 1; i < n; ++i) {
    const double m = lower[i] / diag[i - 1];
    diag[i] -= m * upper[i - 1];
    rhs[i] -= m * rhs[i - 1];
  }
  rhs[n - 1] /= diag[n - 1];
  for (std::size_t i = n - 1; i-- > 0;) rhs[i] = (rhs[i] - upper[i] * rhs[i + 1]) / diag[i];
}

struct Grid1d {
  std::vector<double> x;
  double dx = 0.0;
  BoundaryKind kind = BoundaryKind::Dirichlet;
  std::function<double(double, double)> boundary;

  // linear interpolation; beyond the ends the boundary rule applies
  double sample(const std::vector<double>& u, double t, double at) const {
    const double s = (at - x.front()) / dx;
    const auto last = static_cast<long>(x.size()) - 1;
    if (s < 0.0 || s > static_cast<double>(last)) {
      if (kind == BoundaryKind::Dirichlet) return boundary(t, at);
      if (s < 0.0) return u[0] + (u[0] - u[1]) * (-s);
      return u[last] + (u[last] - u[last - 1]) * (s - static_cast<double>(last));
    }
    const long i = std::min(static_cast<long>(s), last - 1);
    const double frac = s - static_cast<double>(i);
    return (1.0 - frac) * u[i] + frac * u[i + 1];
  }
};

}  // namespace

double FdSolution::value_at(const std::vector<double>& slice, double at) const {
  const double dx = x[1] - x[0];
  const double s = (at - x.front()) / dx;
  if (s < 0.0 || s > static_cast<double>(x.size() - 1)) throw Error(ErrorCode::Domain, "point outside the FD grid");
  const auto i = std::min(static_cast<std::size_t>(s), x.size() - 2);
  const double frac = s - static_cast<double>(i);
  return (1.0 - frac) * slice[i] + frac * slice[i + 1];
}

FdSolution fd_solve_pide(const ModelSpec& model, const DriverSpec& driver, const TerminalSpec& terminal,
                         const std::optional<ObstacleSpec>& obstacle, const FdGrid& grid) {
  if (model.dim != 1) throw Error(ErrorCode::Config, "the FD oracle is one-dimensional");
  if (grid.J < 3 || grid.N < 1 || !(grid.x_hi > grid.x_lo) || !(grid.T > grid.t0))
    throw Error(ErrorCode::Config, "FD grid needs J >= 3, N >= 1 and nonempty intervals");
  const double dx = (grid.x_hi - grid.x_lo) / (grid.J - 1);
  const double dt = (grid.T - grid.t0) / grid.N;
  const bool jumps = model.has_jumps();
  const auto& nodes = model.jumps.nodes();
  const auto& weights = model.jumps.weights();
  const std::size_t nq = jumps ? nodes.size() : 0;
  const int q = driver.q();

  auto pt = [](double v) { return Point::Constant(1, v); };

  int pad = grid.padding;
  if (pad < 0) {
    double reach = 0.0;
    for (int i = 0; i < grid.J; ++i)
      for (std::size_t j = 0; j < nq; ++j)
        reach = std::max(reach, std::abs(model.beta(pt(grid.x_lo + i * dx), nodes[j])(0)));
    pad = static_cast<int>(std::ceil(reach / dx)) + 2;
  }

  Grid1d g1;
  g1.dx = dx;
  g1.kind = grid.boundary;
  if (grid.dirichlet)
    g1.boundary = grid.dirichlet;
  else
    g1.boundary = [&terminal, pt](double, double x) { return terminal(pt(x)); };
  const int n = grid.J + 2 * pad;
  g1.x.resize(n);
  for (int i = 0; i < n; ++i) g1.x[i] = grid.x_lo + (i - pad) * dx;

  // shifted abscissae and local coefficients per node
  std::vector<double> shifted(static_cast<std::size_t>(n) * nq);
  std::vector<double> a(n), b(n), sig(n);
  for (int i = 0; i < n; ++i) {
    const Point x = pt(g1.x[i]);
    for (std::size_t j = 0; j < nq; ++j) {
      const double s = g1.x[i] + model.beta(x, nodes[j])(0);
      if (i >= pad && i < pad + grid.J && (s < g1.x.front() - 1e-12 || s > g1.x.back() + 1e-12)) {
        std::ostringstream os;
        os << "jump shift from x = " << g1.x[i] << " leaves the padded grid";
        throw Error(ErrorCode::Boundary, os.str());
      }
      shifted[i * nq + j] = s;
    }
    sig[i] = model.sigma(x)(0, 0);
    a[i] = sig[i] * sig[i];
    b[i] = model.b(x)(0) - (jumps ? model.compensator_drift(x)(0) : 0.0);
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) throw Error(ErrorCode::Numeric, "non-finite FD coefficient");
  }

  FdSolution out;
  out.x = g1.x;
  const double intensity = jumps ? model.jumps.intensity() : 0.0;
  out.explicit_bound = dt * intensity;
  out.cfl = dt * (intensity + *std::max_element(a.begin(), a.end()) / (dx * dx));
  if (out.explicit_bound > 1.0) {
    std::ostringstream os;
    os << "explicit jump step dt * Lambda = " << out.explicit_bound << " exceeds 1";
    throw Error(ErrorCode::Stability, os.str());
  }

  std::vector<double> lower(n, 0.0), diag(n, 1.0), upper(n, 0.0);
  for (int i = 1; i < n - 1; ++i) {
    const double diff = a[i] / (2.0 * dx * dx);
    if (a[i] >= std::abs(b[i]) * dx) {
      lower[i] = -dt * (diff - b[i] / (2.0 * dx));
      upper[i] = -dt * (diff + b[i] / (2.0 * dx));
    } else {  // upwind when convection dominates
      lower[i] = -dt * (diff + std::max(-b[i], 0.0) / dx);
      upper[i] = -dt * (diff + std::max(b[i], 0.0) / dx);
    }
    diag[i] = 1.0 - lower[i] - upper[i];
  }
  if (grid.boundary == BoundaryKind::Linear) {
    // u_0 = 2 u_1 - u_2 and its mirror, folded into the first and last interior rows
    diag[1] += 2.0 * lower[1];
    upper[1] -= lower[1];
    diag[n - 2] += 2.0 * upper[n - 2];
    lower[n - 2] -= upper[n - 2];
  }

  std::vector<double> u(n), guess(n), rhs(n);
  for (int i = 0; i < n; ++i) u[i] = terminal(pt(g1.x[i]));
  if (obstacle)
    for (int i = 0; i < n; ++i) u[i] = std::max(u[i], (*obstacle)(grid.T, pt(g1.x[i])));
  auto store = [&](double t, const std::vector<double>& v) {
    out.times.push_back(t);
    out.slices.push_back(v);
  };
  store(grid.T, u);

  std::vector<double> jump_part(n, 0.0);
  for (int step = grid.N - 1; step >= 0; --step) {
    const double t_next = grid.t0 + (step + 1) * dt;
    const double t = step == 0 ? grid.t0 : grid.t0 + step * dt;
    for (int i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < nq; ++j) acc += weights(j) * (g1.sample(u, t_next, shifted[i * nq + j]) - u[i]);
      jump_part[i] = acc;
    }
    guess = u;
    for (int sweep = 0; sweep < 2; ++sweep) {
      for (int i = 0; i < n; ++i) {
        const Point x = pt(g1.x[i]);
        const int il = std::max(i - 1, 0), ir = std::min(i + 1, n - 1);
        const Point z = pt(sig[i] * (guess[ir] - guess[il]) / (g1.x[ir] - g1.x[il]));
        Functionals v = Functionals::Zero(q);
        for (int k = 0; k < q; ++k)
          for (std::size_t j = 0; j < nq; ++j)
            v(k) += weights(j) * driver.functionals[k](nodes[j]) *
                    (g1.sample(guess, t, shifted[i * nq + j]) - guess[i]);
        rhs[i] = u[i] + dt * (jump_part[i] + driver(t, x, guess[i], z, v));
      }
      if (grid.boundary == BoundaryKind::Dirichlet) {
        rhs[0] = g1.boundary(t, g1.x[0]);
        rhs[n - 1] = g1.boundary(t, g1.x[n - 1]);
        rhs[1] -= lower[1] * rhs[0];
        rhs[n - 2] -= upper[n - 2] * rhs[n - 1];
      }
      std::vector<double> l(lower.begin() + 1, lower.end() - 1), dg(diag.begin() + 1, diag.end() - 1),
          up(upper.begin() + 1, upper.end() - 1), r(rhs.begin() + 1, rhs.end() - 1);
      solve_tridiagonal(l, dg, up, r);
      std::copy(r.begin(), r.end(), guess.begin() + 1);
      if (grid.boundary == BoundaryKind::Dirichlet) {
        guess[0] = rhs[0];
        guess[n - 1] = rhs[n - 1];
      } else {
        guess[0] = 2.0 * guess[1] - guess[2];
        guess[n - 1] = 2.0 * guess[n - 2] - guess[n - 3];
      }
    }
    u = guess;
    if (obstacle)
      for (int i = 0; i < n; ++i) u[i] = std::max(u[i], (*obstacle)(t, pt(g1.x[i])));
    for (double v : u)
      if (!std::isfinite(v)) throw Error(ErrorCode::Numeric, "FD solution became non-finite");
    if (step == 0 || (grid.store_every > 0 && (grid.N - step) % grid.store_every == 0)) store(t, u);
  }
  return out;
}

OraclePrice fd_price(const ModelSpec& model, const DriverSpec& driver, const TerminalSpec& terminal,
                     const std::optional<ObstacleSpec>& obstacle, const FdGrid& grid, double x) {
  OraclePrice out;
  out.price = fd_solve_pide(model, driver, terminal, obstacle, grid).value(x);
  FdGrid coarse = grid;
  coarse.J = (grid.J + 1) / 2;
  coarse.N = std::max(1, grid.N / 2);
  coarse.padding = -1;
  out.error_estimate = std::abs(out.price - fd_solve_pide(model, driver, terminal, obstacle, coarse).value(x));
  return out;
}

double merton_price(const MertonParams& p, int n_terms) {
  if (n_terms < 1) throw Error(ErrorCode::Config, "merton_price needs n_terms >= 1");
  const double kappa = std::exp(p.mark_mean + 0.5 * p.mark_sd * p.mark_sd) - 1.0;
  const double lam = p.intensity * (1.0 + kappa);
  const double mean = lam * p.T;
  double price = 0.0;
  double mass = 0.0;
  for (int n = 0; n < n_terms; ++n) {
    const double w = std::exp(-mean + n * std::log(std::max(mean, 1e-300)) - std::lgamma(n + 1.0));
    const double weight = mean == 0.0 ? (n == 0 ? 1.0 : 0.0) : w;
    const double rn = p.r - p.intensity * kappa + n * std::log1p(kappa) / p.T;
    const double vn = std::sqrt(p.vol * p.vol + n * p.mark_sd * p.mark_sd / p.T);
    price += weight * black_scholes(p.S0, p.K, rn, vn, p.T, OptionKind::Call);
    mass += weight;
  }
  const double tail = p.S0 * std::max(0.0, 1.0 - mass);
  if (tail > 1e-12 * std::max(1.0, price)) {
    std::ostringstream os;
    os << "Merton series tail " << tail << " after " << n_terms << " terms";
    throw Error(ErrorCode::Tail, os.str());
  }
  return price;
}

double merton_put(const MertonParams& p, int n_terms) {
  return merton_price(p, n_terms) - p.S0 + p.K * std::exp(-p.r * p.T);
}

double binomial_price(double S0, double K, double r, double vol, double T, int steps, OptionKind kind,
                      bool american) {
  if (steps < 1) throw Error(ErrorCode::Config, "binomial tree needs at least one step");
  const double dt = T / steps;
  const double up = std::exp(vol * std::sqrt(dt));
  const double down = 1.0 / up;
  const double growth = std::exp(r * dt);
  const double p = up == down ? 0.5 : (growth - down) / (up - down);
  if (p < 0.0 || p > 1.0) throw Error(ErrorCode::Domain, "binomial probability outside [0, 1]");
  const double disc = 1.0 / growth;
  auto payoff = [&](double s) { return kind == OptionKind::Call ? std::max(s - K, 0.0) : std::max(K - s, 0.0); };
  std::vector<double> v(steps + 1);
  for (int j = 0; j <= steps; ++j) v[j] = payoff(S0 * std::pow(up, j) * std::pow(down, steps - j));
  for (int i = steps - 1; i >= 0; --i)
    for (int j = 0; j <= i; ++j) {
      v[j] = disc * (p * v[j + 1] + (1.0 - p) * v[j]);
      if (american) v[j] = std::max(v[j], payoff(S0 * std::pow(up, j) * std::pow(down, i - j)));
    }
  return v[0];
}

RichardsonPair binomial_richardson(double S0, double K, double r, double vol, double T, int steps,
                                   OptionKind kind) {
  RichardsonPair out;
  out.coarse = binomial_american(S0, K, r, vol, T, steps, kind);
  out.fine = binomial_american(S0, K, r, vol, T, 2 * steps, kind);
  out.extrapolated = 2.0 * out.fine - out.coarse;
  return out;
}

void write_fd_csv(const FdSolution& sol, const FdGrid& grid, const std::filesystem::path& file) {
  std::ofstream os(file);
  if (!os) throw Error(ErrorCode::Io, "cannot write " + file.string());
  os.precision(17);
  os << "t,x,u\n";
  const double eps = 1e-9 * (grid.x_hi - grid.x_lo);
  for (std::size_t s = 0; s < sol.slices.size(); ++s)
    for (std::size_t i = 0; i < sol.x.size(); ++i)
      if (sol.x[i] >= grid.x_lo - eps && sol.x[i] <= grid.x_hi + eps)
        os << sol.times[s] << ',' << sol.x[i] << ',' << sol.slices[s][i] << '\n';
}

void write_price_json(const OraclePrice& price, const std::filesystem::path& file) {
  std::ofstream os(file);
  if (!os) throw Error(ErrorCode::Io, "cannot write " + file.string());
  os << nlohmann::json{{"price", price.price}, {"error_estimate", price.error_estimate}}.dump(2) << '\n';
}

}  // namespace pide
