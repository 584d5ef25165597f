#include "pide/regression.hpp"

#include "pide/parallel.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace pide {

RegressionBasis RegressionBasis::polynomial(int degree) {
  RegressionBasis b;
  b.kind = BasisKind::Polynomial;
  b.degree = degree;
  return b;
}

RegressionBasis RegressionBasis::local(int cells) {
  RegressionBasis b;
  b.kind = BasisKind::Local;
  b.cells = cells;
  return b;
}

namespace {

long binomial(int n, int k) {
  long r = 1;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

void total_degree_exponents(int dims, int degree, std::vector<int>& current,
                            std::vector<std::vector<int>>& out) {
  if (static_cast<int>(current.size()) == dims) {
    out.push_back(current);
    return;
  }
  const int used = std::accumulate(current.begin(), current.end(), 0);
  for (int e = 0; e + used <= degree; ++e) {
    current.push_back(e);
    total_degree_exponents(dims, degree, current, out);
    current.pop_back();
  }
}

constexpr double kMaxCondition = 1e14;
constexpr std::size_t kRowChunk = 8192;

double default_ridge(const MatrixXd& normal) {
  return 1e-8 * normal.trace() / static_cast<double>(normal.rows());
}

// Factorises normal + ridge I, leaving the intercept (column 0) unpenalised so constants are
// reproduced exactly. Returns the condition number of the repaired matrix.
double factorise(MatrixXd normal, double ridge, Eigen::LDLT<MatrixXd>& solver) {
  const double kappa = ridge >= 0.0 ? ridge : default_ridge(normal);
  normal.diagonal().tail(normal.rows() - 1).array() += kappa;
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(normal, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  solver.compute(normal);
  if (solver.info() != Eigen::Success || !(lo > 0.0)) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

// Phi^T Phi accumulated over fixed row chunks, combined in chunk order.
MatrixXd gram(const MatrixXd& design) {
  const Chunking chunks{static_cast<std::size_t>(design.rows()), kRowChunk};
  std::vector<MatrixXd> partial(chunks.count());
  parallel_chunks(chunks.count(), [&](std::size_t c) {
    const auto rows = design.middleRows(chunks.begin(c), chunks.end(c) - chunks.begin(c));
    partial[c].noalias() = rows.transpose() * rows;
  });
  MatrixXd out = MatrixXd::Zero(design.cols(), design.cols());
  for (const auto& p : partial) out += p;
  return out;
}

MatrixXd cross(const MatrixXd& design, const MatrixXd& targets) {
  const Chunking chunks{static_cast<std::size_t>(design.rows()), kRowChunk};
  std::vector<MatrixXd> partial(chunks.count());
  parallel_chunks(chunks.count(), [&](std::size_t c) {
    const auto n = chunks.end(c) - chunks.begin(c);
    partial[c].noalias() =
        design.middleRows(chunks.begin(c), n).transpose() * targets.middleRows(chunks.begin(c), n);
  });
  MatrixXd out = MatrixXd::Zero(design.cols(), targets.cols());
  for (const auto& p : partial) out += p;
  return out;
}

}  // namespace

int RegressionBasis::size(int dim) const {
  if (kind == BasisKind::Polynomial) return static_cast<int>(binomial(degree + dim, dim));
  long total = 1;
  for (int i = 0; i < dim; ++i) total *= cells;
  return static_cast<int>(total * (dim + 1));
}

StepRegression::StepRegression(const RegressionBasis& basis, const MatrixXd& states)
    : kind_(basis.kind), dim_(static_cast<int>(states.rows())), samples_(static_cast<int>(states.cols())) {
  if (samples_ < 1) throw Error(ErrorCode::Config, "regression needs at least one sample");
  support_.lo = states.rowwise().minCoeff();
  support_.hi = states.rowwise().maxCoeff();
  center_ = (support_.lo + support_.hi) / 2.0;
  half_width_ = (support_.hi - support_.lo) / 2.0;
  for (int i = 0; i < dim_; ++i)
    if (half_width_(i) > 1e-12 * (1.0 + std::abs(center_(i)))) active_.push_back(i);

  if (active_.empty()) {
    diag_.degenerate = true;
    return;
  }
  const int a = static_cast<int>(active_.size());

  if (kind_ == BasisKind::Polynomial) {
    std::vector<int> current;
    total_degree_exponents(a, basis.degree, current, exponents_);
    const int P = static_cast<int>(exponents_.size());
    if (static_cast<long>(P) * 10 > samples_) {
      std::ostringstream os;
      os << "basis of " << P << " functions needs at least " << 10 * P << " paths";
      throw Error(ErrorCode::Config, os.str());
    }
    design_.resize(samples_, P);
    std::vector<double> row(P);
    for (int m = 0; m < samples_; ++m) {
      design_row(states.col(m), row.data());
      for (int j = 0; j < P; ++j) design_(m, j) = row[j];
    }
    diag_.condition = factorise(gram(design_), basis.ridge, solver_);
    if (!(diag_.condition < kMaxCondition)) {
      std::ostringstream os;
      os << "normal system condition number " << diag_.condition << " beyond ridge repair";
      throw Error(ErrorCode::Singular, os.str());
    }
    return;
  }

  // local affine basis on quantile cells
  long total = 1;
  for (int i = 0; i < a; ++i) total *= basis.cells;
  if (total * (a + 1) * 10 > samples_) {
    std::ostringstream os;
    os << "local basis of " << total * (a + 1) << " regressors needs at least "
       << total * (a + 1) * 10 << " paths";
    throw Error(ErrorCode::Config, os.str());
  }
  // equal-count cut points, refined toward range / cells width where the samples allow it
  edges_.resize(a);
  cells_per_axis_.resize(a);
  std::vector<double> coord(samples_);
  total = 1;
  for (int ai = 0; ai < a; ++ai) {
    for (int m = 0; m < samples_; ++m) coord[m] = states(active_[ai], m);
    std::sort(coord.begin(), coord.end());
    auto& e = edges_[ai];
    const double lo = coord.front(), hi = coord.back();
    for (int c = 1; c < basis.cells; ++c) {
      e.push_back(coord[static_cast<std::size_t>(c) * samples_ / basis.cells]);
      e.push_back(lo + (hi - lo) * c / basis.cells);
    }
    std::sort(e.begin(), e.end());
    // keep a cut only if the slab it closes holds enough samples
    const auto min_count = static_cast<std::ptrdiff_t>(samples_ / (4 * basis.cells));
    std::vector<double> kept;
    auto count_below = [&coord](double v) { return std::lower_bound(coord.begin(), coord.end(), v) - coord.begin(); };
    std::ptrdiff_t start = 0;
    for (double cut : e) {
      const auto below = count_below(cut);
      if (below - start >= min_count && samples_ - below >= min_count) {
        kept.push_back(cut);
        start = below;
      }
    }
    e = std::move(kept);
    cells_per_axis_[ai] = static_cast<int>(e.size()) + 1;
    total *= cells_per_axis_[ai];
  }
  cells_.resize(total);
  cell_index_.resize(samples_);
  for (int m = 0; m < samples_; ++m) {
    const int c = cell_of(states.col(m));
    cell_index_[m] = c;
    cells_[c].members.push_back(m);
  }
  for (auto& cell : cells_) {
    const int n = static_cast<int>(cell.members.size());
    if (n == 0) continue;
    Point lo = Point::Constant(dim_, std::numeric_limits<double>::infinity());
    Point hi = -lo;
    for (int m : cell.members) {
      lo = lo.cwiseMin(Point(states.col(m)));
      hi = hi.cwiseMax(Point(states.col(m)));
    }
    cell.center = (lo + hi) / 2.0;
    cell.order = n >= 4 * (a + 1) ? 1 : 0;
    while (true) {
      cell.design.resize(n, cell.order == 1 ? a + 1 : 1);
      for (int r = 0; r < n; ++r) cell.design.row(r) = local_features(cell, states.col(cell.members[r]));
      const double cond = factorise(cell.design.transpose() * cell.design, basis.ridge, cell.solver);
      if (cond < kMaxCondition) {
        diag_.condition = std::max(diag_.condition, cond);
        break;
      }
      if (cell.order == 0) throw Error(ErrorCode::Singular, "local cell normal system singular");
      cell.order = 0;  // repair: fall back to the cell mean
    }
  }
  // empty cells answer with the nearest occupied cell (in cell-index distance)
  auto index_of = [this](long c) {
    std::vector<long> idx(cells_per_axis_.size());
    for (std::size_t ai = cells_per_axis_.size(); ai-- > 0;) {
      idx[ai] = c % cells_per_axis_[ai];
      c /= cells_per_axis_[ai];
    }
    return idx;
  };
  for (long c = 0; c < total; ++c) {
    if (!cells_[c].members.empty()) {
      cells_[c].alias = static_cast<int>(c);
      continue;
    }
    const auto ic = index_of(c);
    long best = std::numeric_limits<long>::max();
    for (long o = 0; o < total; ++o) {
      if (cells_[o].members.empty()) continue;
      const auto io = index_of(o);
      long dist = 0;
      for (std::size_t ai = 0; ai < ic.size(); ++ai) dist += (ic[ai] - io[ai]) * (ic[ai] - io[ai]);
      if (dist < best) {
        best = dist;
        cells_[c].alias = static_cast<int>(o);
      }
    }
  }
}

void StepRegression::design_row(const Point& x, double* row) const {
  const int a = static_cast<int>(active_.size());
  int max_degree = 0;
  for (const auto& e : exponents_) max_degree = std::max(max_degree, *std::max_element(e.begin(), e.end()));
  double values[kMaxDim][32];
  for (int ai = 0; ai < a; ++ai) {
    const int i = active_[ai];
    legendre_values((x(i) - center_(i)) / half_width_(i), max_degree, values[ai]);
  }
  for (std::size_t j = 0; j < exponents_.size(); ++j) {
    double v = 1.0;
    for (int ai = 0; ai < a; ++ai) v *= values[ai][exponents_[j][ai]];
    row[j] = v;
  }
}

int StepRegression::cell_of(const Point& x) const {
  int index = 0;
  for (std::size_t ai = 0; ai < edges_.size(); ++ai) {
    const auto& e = edges_[ai];
    const int c = static_cast<int>(std::upper_bound(e.begin(), e.end(), x(active_[ai])) - e.begin());
    index = index * cells_per_axis_[ai] + c;
  }
  return index;
}

Eigen::RowVectorXd StepRegression::local_features(const Cell& cell, const Point& x) const {
  const int a = static_cast<int>(active_.size());
  Eigen::RowVectorXd out(cell.order == 1 ? a + 1 : 1);
  out(0) = 1.0;
  if (cell.order == 1)
    for (int ai = 0; ai < a; ++ai) {
      const int i = active_[ai];
      out(ai + 1) = (x(i) - cell.center(i)) / half_width_(i);
    }
  return out;
}

void StepRegression::fit(const MatrixXd& targets, int first) {
  if (targets.rows() != samples_) throw Error(ErrorCode::Config, "regression targets have wrong length");
  const int T = static_cast<int>(targets.cols());
  const int needed = first + T;
  auto grow = [needed](MatrixXd& coef, Eigen::Index rows) {
    if (coef.cols() < needed) {
      MatrixXd bigger = MatrixXd::Zero(rows, needed);
      if (coef.size() > 0) bigger.leftCols(coef.cols()) = coef;
      coef = std::move(bigger);
    }
  };
  outputs_ = std::max(outputs_, needed);
  if (fallback_.size() < needed) fallback_.conservativeResize(needed);
  fallback_.segment(first, T) = targets.colwise().mean().transpose();

  if (diag_.degenerate) {
    // only the sample mean is identified
  } else if (kind_ == BasisKind::Polynomial) {
    grow(coef_, design_.cols());
    coef_.middleCols(first, T) = solver_.solve(cross(design_, targets));
  } else {
    for (auto& cell : cells_) {
      if (cell.members.empty()) continue;
      const auto n = static_cast<Eigen::Index>(cell.members.size());
      grow(cell.coef, cell.design.cols());
      MatrixXd rhs(n, T);
      for (Eigen::Index r = 0; r < n; ++r) rhs.row(r) = targets.row(cell.members[r]);
      cell.coef.middleCols(first, T) = cell.solver.solve(cell.design.transpose() * rhs);
      if (!cell.coef.allFinite()) throw Error(ErrorCode::Singular, "non-finite local coefficients");
    }
  }
  if (kind_ == BasisKind::Polynomial && !diag_.degenerate && !coef_.allFinite())
    throw Error(ErrorCode::Singular, "non-finite regression coefficients");

  if (first == 0) {
    const VectorXd resid = targets.col(0) - fitted(0, 1).col(0);
    diag_.residual = std::sqrt(resid.squaredNorm() / samples_);
  }
}

MatrixXd StepRegression::fitted(int first, int count) const {
  MatrixXd out(samples_, count);
  if (diag_.degenerate) {
    out.rowwise() = fallback_.segment(first, count).transpose();
  } else if (kind_ == BasisKind::Polynomial) {
    if (design_.size() == 0) throw Error(ErrorCode::Config, "regression was compacted");
    out.noalias() = design_ * coef_.middleCols(first, count);
  } else {
    for (const auto& cell : cells_) {
      if (cell.members.empty()) continue;
      if (cell.design.size() == 0) throw Error(ErrorCode::Config, "regression was compacted");
      const MatrixXd local = cell.design * cell.coef.middleCols(first, count);
      for (std::size_t r = 0; r < cell.members.size(); ++r) out.row(cell.members[r]) = local.row(r);
    }
  }
  return out;
}

VectorXd StepRegression::predict(const Point& x) const {
  if (diag_.degenerate) return fallback_.head(outputs_);
  if (kind_ == BasisKind::Polynomial) {
    Eigen::RowVectorXd row(static_cast<Eigen::Index>(exponents_.size()));
    design_row(x, row.data());
    return (row * coef_).transpose();
  }
  const Cell& cell = cells_[cells_[cell_of(x)].alias];
  if (cell.coef.size() == 0) return fallback_.head(outputs_);
  return (local_features(cell, x) * cell.coef).transpose();
}

void StepRegression::compact() {
  design_.resize(0, 0);
  for (auto& cell : cells_) {
    cell.design.resize(0, 0);
    cell.solver = Eigen::LDLT<MatrixXd>();
    cell.members.clear();
    cell.members.shrink_to_fit();
  }
  solver_ = Eigen::LDLT<MatrixXd>();
  cell_index_.clear();
  cell_index_.shrink_to_fit();
}

}  // namespace pide
