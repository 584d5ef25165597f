#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pide {

/// Largest state / mark dimension supported. Points live on the stack.
inline constexpr int kMaxDim = 4;

using Point = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;
using Mark = Point;
using SquareMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxDim, kMaxDim>;

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class ErrorCode {
  Numeric,
  Grid,
  Contraction,
  Singular,
  Domain,
  DivZero,
  NoConverge,
  Stability,
  Boundary,
  Tail,
  Quad,
  Config,
  Schema,
  GridMismatch,
  Io,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::Numeric: return "E_NUMERIC";
    case ErrorCode::Grid: return "E_GRID";
    case ErrorCode::Contraction: return "E_CONTRACTION";
    case ErrorCode::Singular: return "E_SINGULAR";
    case ErrorCode::Domain: return "E_DOMAIN";
    case ErrorCode::DivZero: return "E_DIVZERO";
    case ErrorCode::NoConverge: return "E_NOCONVERGE";
    case ErrorCode::Stability: return "E_STABILITY";
    case ErrorCode::Boundary: return "E_BOUNDARY";
    case ErrorCode::Tail: return "E_TAIL";
    case ErrorCode::Quad: return "E_QUAD";
    case ErrorCode::Config: return "E_CONFIG";
    case ErrorCode::Schema: return "E_SCHEMA";
    case ErrorCode::GridMismatch: return "E_GRIDMISMATCH";
    case ErrorCode::Io: return "E_IO";
  }
  return "E_UNKNOWN";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

inline bool is_finite(double v) { return std::isfinite(v); }

inline double negative_part(double v) { return v < 0.0 ? -v : 0.0; }
inline double positive_part(double v) { return v > 0.0 ? v : 0.0; }

}  // namespace pide
