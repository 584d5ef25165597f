#pragma once

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <utility>

namespace pide {

template <typename Scalar>
struct QuadratureRule {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> nodes;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> weights;

  Eigen::Index size() const { return nodes.size(); }
};

namespace detail {

// Golub-Welsch: nodes are the eigenvalues of the symmetric Jacobi matrix, weights are
// mu0 times the squared first eigenvector components.
template <typename Scalar>
QuadratureRule<Scalar> golub_welsch(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& off_diagonal,
                                    int n, Scalar mu0) {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Mat jacobi = Mat::Zero(n, n);
  for (int i = 0; i + 1 < n; ++i) {
    jacobi(i, i + 1) = off_diagonal(i);
    jacobi(i + 1, i) = off_diagonal(i);
  }
  Eigen::SelfAdjointEigenSolver<Mat> solver(jacobi);
  QuadratureRule<Scalar> rule;
  rule.nodes = solver.eigenvalues();
  rule.weights = mu0 * solver.eigenvectors().row(0).transpose().array().square();
  return rule;
}

}  // namespace detail

/// Gauss-Legendre rule on [-1, 1].
template <typename Scalar = double>
QuadratureRule<Scalar> gauss_legendre(int n) {
  if (n < 1) throw std::invalid_argument("gauss_legendre: n must be >= 1");
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> beta(std::max(n - 1, 0));
  for (int k = 1; k < n; ++k) {
    const Scalar kk = static_cast<Scalar>(k);
    beta(k - 1) = kk / std::sqrt(Scalar(4) * kk * kk - Scalar(1));
  }
  return detail::golub_welsch<Scalar>(beta, n, Scalar(2));
}

/// Gauss-Legendre rule mapped to [a, b].
template <typename Scalar = double>
QuadratureRule<Scalar> gauss_legendre(int n, Scalar a, Scalar b) {
  auto rule = gauss_legendre<Scalar>(n);
  const Scalar half = (b - a) / Scalar(2);
  const Scalar mid = (a + b) / Scalar(2);
  rule.nodes = (rule.nodes.array() * half + mid).matrix();
  rule.weights *= half;
  return rule;
}

/// Composite Gauss-Legendre: `panels` equal panels on [a, b], `per_panel` nodes each.
template <typename Scalar = double>
QuadratureRule<Scalar> composite_gauss_legendre(int panels, int per_panel, Scalar a, Scalar b) {
  const auto base = gauss_legendre<Scalar>(per_panel);
  QuadratureRule<Scalar> rule;
  rule.nodes.resize(panels * per_panel);
  rule.weights.resize(panels * per_panel);
  const Scalar width = (b - a) / static_cast<Scalar>(panels);
  for (int p = 0; p < panels; ++p) {
    const Scalar lo = a + width * static_cast<Scalar>(p);
    for (int i = 0; i < per_panel; ++i) {
      rule.nodes(p * per_panel + i) = lo + (base.nodes(i) + Scalar(1)) * width / Scalar(2);
      rule.weights(p * per_panel + i) = base.weights(i) * width / Scalar(2);
    }
  }
  return rule;
}

/// Probabilists' Gauss-Hermite rule: integrates against the standard normal density,
/// so the weights sum to one.
template <typename Scalar = double>
QuadratureRule<Scalar> gauss_hermite_normal(int n) {
  if (n < 1) throw std::invalid_argument("gauss_hermite_normal: n must be >= 1");
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> beta(std::max(n - 1, 0));
  for (int k = 1; k < n; ++k) beta(k - 1) = std::sqrt(static_cast<Scalar>(k));
  return detail::golub_welsch<Scalar>(beta, n, Scalar(1));
}

}  // namespace pide
