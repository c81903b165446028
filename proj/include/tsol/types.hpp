#pragma once

#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace tsol {

using Scalar = double;
using Complex = std::complex<double>;

using CVec = Eigen::VectorXcd;  // point or tangent vector in C^m
using CMat = Eigen::MatrixXcd;  // m complex columns
using RVec = Eigen::VectorXd;
using RMat = Eigen::MatrixXd;

inline constexpr double kPi = 3.14159265358979323846264338327950288;

// Real inner product on C^m viewed as R^{2m}.
template <typename DA, typename DB>
double real_inner(const Eigen::MatrixBase<DA>& u, const Eigen::MatrixBase<DB>& v) {
  return u.dot(v).real();
}

// Standard symplectic form omega0(u, v) = <Ju, v>.
template <typename DA, typename DB>
double symplectic(const Eigen::MatrixBase<DA>& u, const Eigen::MatrixBase<DB>& v) {
  return u.dot(v).imag();
}

// Complex-structure action J(u) = i u.
template <typename D>
auto apply_J(const Eigen::MatrixBase<D>& u) {
  return Complex(0.0, 1.0) * u;
}

// Wrap an angle into (-pi, pi].
inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

struct ComputationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateFrame : ComputationError {
  using ComputationError::ComputationError;
};
struct NotLagrangian : ComputationError {
  using ComputationError::ComputationError;
};
struct OutOfDomain : ComputationError {
  using ComputationError::ComputationError;
};
struct NoIntersection : ComputationError {
  using ComputationError::ComputationError;
};
struct AngleConditionViolated : ComputationError {
  using ComputationError::ComputationError;
};
struct QuadratureFailure : ComputationError {
  using ComputationError::ComputationError;
};
struct InversionFailure : ComputationError {
  InversionFailure(const std::string& msg, RVec best, double res)
      : ComputationError(msg), best_iterate(std::move(best)), residual(res) {}
  RVec best_iterate;
  double residual = 0.0;
};
struct ProjectionFailure : ComputationError {
  ProjectionFailure(const std::string& msg, RVec last, double res)
      : ComputationError(msg), last_iterate(std::move(last)), residual(res) {}
  RVec last_iterate;
  double residual = 0.0;
};
struct IncompleteField : ComputationError {
  using ComputationError::ComputationError;
};
struct SymmetryRequired : ComputationError {
  using ComputationError::ComputationError;
};
struct SpectralFailure : ComputationError {
  using ComputationError::ComputationError;
};
struct IterationDiverged : ComputationError {
  IterationDiverged(const std::string& msg, std::vector<double> hist)
      : ComputationError(msg), history(std::move(hist)) {}
  std::vector<double> history;
};
struct ChartOverflow : ComputationError {
  using ComputationError::ComputationError;
};
struct ConfigError : ComputationError {
  using ComputationError::ComputationError;
};

// Compensated (Neumaier) accumulator; gives a deterministic, order-fixed sum.
class StableSum {
 public:
  void add(double x) {
    double t = s_ + x;
    if (std::abs(s_) >= std::abs(x))
      c_ += (s_ - t) + x;
    else
      c_ += (x - t) + s_;
    s_ = t;
  }
  double value() const { return s_ + c_; }

 private:
  double s_ = 0.0;
  double c_ = 0.0;
};

// Deterministic uniform double in [0, 1) from a raw 64-bit draw
// (std::uniform_real_distribution is implementation-defined).
template <typename Rng>
double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

template <typename Rng>
double uniform_in(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

}  // namespace tsol
