#pragma once

#include "pide/model.hpp"

#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

namespace pide {

enum class BoundaryKind {
  /// Boundary nodes and shifted points beyond the grid take `dirichlet(t, x)`, or g(x) when unset.
  Dirichlet,
  /// u'' = 0 at the ends; shifted points beyond the grid extrapolate linearly.
  Linear,
};

struct FdGrid {
  double x_lo = -5.0;
  double x_hi = 5.0;
  int J = 401;         // nodes on [x_lo, x_hi]
  int N = 400;         // time steps
  double t0 = 0.0;
  double T = 1.0;
  BoundaryKind boundary = BoundaryKind::Dirichlet;
  std::function<double(double, double)> dirichlet;
  /// Extra nodes beyond each end, in units of dx. Negative: enough to hold every jump shift from
  /// [x_lo, x_hi] plus two nodes.
  int padding = -1;
  /// Keep every k-th time slice besides t0 and T; 0 keeps only those two.
  int store_every = 0;
};

struct FdSolution {
  std::vector<double> x;       // padded node coordinates
  std::vector<double> times;   // stored slices, descending from T to t0
  std::vector<std::vector<double>> slices;
  double cfl = 0.0;            // dt (Lambda + max a / dx^2)
  double explicit_bound = 0.0; // dt Lambda, must stay <= 1

  /// Linear interpolation of the slice at t0.
  double value(double x) const { return value_at(slices.back(), x); }
  double value_at(const std::vector<double>& slice, double x) const;
};

/// Backward IMEX scheme for d_t u + K1 u + K2 u + f = 0 on a 1-D grid, implicit in the local part
/// (tridiagonal), explicit in the jump integral, two Picard sweeps for the driver, optional
/// projection u <- max(u, h) after each step.
FdSolution fd_solve_pide(const ModelSpec& model, const DriverSpec& driver, const TerminalSpec& terminal,
                         const std::optional<ObstacleSpec>& obstacle, const FdGrid& grid);

struct OraclePrice {
  double price = 0.0;
  double error_estimate = 0.0;
};

/// Value at x together with the difference to a run at half the resolution in x and t.
OraclePrice fd_price(const ModelSpec& model, const DriverSpec& driver, const TerminalSpec& terminal,
                     const std::optional<ObstacleSpec>& obstacle, const FdGrid& grid, double x);

/// Standard normal CDF.
template <typename Scalar>
Scalar normal_cdf(Scalar x) {
  using std::erfc;
  using std::sqrt;
  return Scalar(0.5) * erfc(-x / sqrt(Scalar(2)));
}

enum class OptionKind { Call, Put };

template <typename Scalar>
Scalar black_scholes(Scalar S, Scalar K, Scalar r, Scalar vol, Scalar T, OptionKind kind = OptionKind::Call) {
  using std::exp;
  using std::log;
  using std::sqrt;
  const Scalar disc = K * exp(-r * T);
  if (vol * sqrt(T) <= Scalar(0)) {
    const Scalar fwd = S - disc;
    return kind == OptionKind::Call ? (fwd > 0 ? fwd : Scalar(0)) : (fwd < 0 ? -fwd : Scalar(0));
  }
  const Scalar sd = vol * sqrt(T);
  const Scalar d1 = (log(S / K) + (r + vol * vol / 2) * T) / sd;
  const Scalar d2 = d1 - sd;
  if (kind == OptionKind::Call) return S * normal_cdf(d1) - disc * normal_cdf(d2);
  return disc * normal_cdf(-d2) - S * normal_cdf(-d1);
}

struct MertonParams {
  double S0 = 100.0;
  double K = 100.0;
  double r = 0.05;
  double vol = 0.2;
  double T = 1.0;
  double intensity = 1.0;
  double mark_mean = -0.1;
  double mark_sd = 0.15;
};

/// Merton series for the European call; E_TAIL when S0 P(Poisson >= n_terms) exceeds 1e-12.
double merton_price(const MertonParams& p, int n_terms = 60);
/// Put by parity.
double merton_put(const MertonParams& p, int n_terms = 60);

/// CRR tree. `american` false gives the European value on the same tree.
double binomial_price(double S0, double K, double r, double vol, double T, int steps, OptionKind kind,
                      bool american);
inline double binomial_american(double S0, double K, double r, double vol, double T, int steps,
                                OptionKind kind) {
  return binomial_price(S0, K, r, vol, T, steps, kind, true);
}

struct RichardsonPair {
  double coarse = 0.0;
  double fine = 0.0;
  double extrapolated = 0.0;  // 2 fine - coarse
};

RichardsonPair binomial_richardson(double S0, double K, double r, double vol, double T, int steps,
                                   OptionKind kind);

/// Columns t, x, u for every stored slice, restricted to [x_lo, x_hi] of the grid.
void write_fd_csv(const FdSolution& sol, const FdGrid& grid, const std::filesystem::path& file);
/// {"price": ..., "error_estimate": ...}
void write_price_json(const OraclePrice& price, const std::filesystem::path& file);

}  // namespace pide
