#pragma once

#include "pide/common.hpp"
#include "pide/model.hpp"

#include <vector>

namespace pide {

/// Legendre polynomials P_0..P_n at xi, by the three-term recurrence.
template <typename Scalar>
void legendre_values(Scalar xi, int n, Scalar* out) {
  out[0] = Scalar(1);
  if (n >= 1) out[1] = xi;
  for (int k = 1; k < n; ++k)
    out[k + 1] = ((Scalar(2 * k + 1)) * xi * out[k] - Scalar(k) * out[k - 1]) / Scalar(k + 1);
}

enum class BasisKind { Polynomial, Local };

/// Conditional-expectation estimator family.
///  - Polynomial: tensor Legendre polynomials of total degree <= degree, in coordinates scaled
///    to the sample range of the regressed step.
///  - Local: per-axis cells cut at the step's sample quantiles and at equal spacing (so no cell is
///    wider than range / cells), affine in each cell.
struct RegressionBasis {
  BasisKind kind = BasisKind::Polynomial;
  int degree = 4;
  int cells = 16;
  /// Ridge parameter; negative selects 1e-8 trace(A) / size(A).
  double ridge = -1.0;
  /// Evaluation outside this box is refused. Empty box means "take it from the paths".
  Box domain;

  static RegressionBasis polynomial(int degree);
  static RegressionBasis local(int cells);

  /// Number of regressors for a state of dimension `dim`.
  int size(int dim) const;
  bool has_domain() const { return domain.lo.size() > 0; }
};

struct FitDiagnostics {
  double condition = 1.0;      // worst condition number among the solved normal systems
  double residual = 0.0;       // RMS residual of the first target
  bool degenerate = false;     // all samples at one point: only the sample mean is identified
};

/// Fitted conditional expectations of several targets at one time step.
class StepRegression {
 public:
  StepRegression() = default;

  /// Regressor for samples `states` (dim x M). Builds and factorises the normal systems once.
  StepRegression(const RegressionBasis& basis, const MatrixXd& states);

  /// Least-squares coefficients for the columns of `targets` (M x T), stored as outputs
  /// [first, first + T).
  void fit(const MatrixXd& targets, int first);
  /// Number of outputs stored so far.
  int outputs() const { return outputs_; }

  /// Fitted values at the training samples for outputs [first, first + count): M x count.
  MatrixXd fitted(int first, int count) const;
  /// All outputs at x.
  VectorXd predict(const Point& x) const;

  /// Drops training-time storage; prediction keeps working, fit/fitted do not.
  void compact();

  const FitDiagnostics& diagnostics() const { return diag_; }
  bool degenerate() const { return diag_.degenerate; }
  /// Smallest box holding the training samples.
  const Box& support() const { return support_; }
  int dim() const { return dim_; }

 private:
  struct Cell {
    Eigen::LDLT<MatrixXd> solver;
    std::vector<int> members;
    MatrixXd design;      // members x (1 + active dims) or members x 1
    Point center;
    int order = 0;        // 0: constant, 1: affine
    int alias = -1;       // cell answering predictions here (itself unless empty)
    MatrixXd coef;        // regressors x outputs
  };

  void design_row(const Point& x, double* row) const;
  int cell_of(const Point& x) const;
  Eigen::RowVectorXd local_features(const Cell& cell, const Point& x) const;

  BasisKind kind_ = BasisKind::Polynomial;
  int dim_ = 1;
  int samples_ = 0;
  int outputs_ = 0;
  Box support_;
  FitDiagnostics diag_;
  std::vector<int> active_;   // dimensions with spread

  // polynomial
  std::vector<std::vector<int>> exponents_;
  Point center_, half_width_;
  MatrixXd design_;
  Eigen::LDLT<MatrixXd> solver_;
  MatrixXd coef_;

  // local
  std::vector<std::vector<double>> edges_;  // per active dim, interior cut points
  std::vector<int> cells_per_axis_;
  std::vector<Cell> cells_;
  std::vector<int> cell_index_;             // per sample
  VectorXd fallback_;                       // global mean per output
};

}  // namespace pide
