#include "tsol/ambient.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>

namespace tsol {

KahlerBackground KahlerBackground::standard(int m) {
  KahlerBackground bg;
  bg.m = m;
  bg.T = CVec::Zero(m);
  bg.T[m - 1] = Complex(-1.0, 0.0);
  bg.phase_ref = 0.0;
  bg.validate();
  return bg;
}

void KahlerBackground::validate() const {
  if (m < 2) throw ConfigError("KahlerBackground: need m >= 2");
  if (T.size() != m) throw ConfigError("KahlerBackground: T has wrong dimension");
  if (T.norm() <= 0.0) throw ConfigError("KahlerBackground: |T| must be positive");
}

std::pair<RMat, double> induced_metric_and_defect(const Frame& frame) {
  const CMat& J = frame.jacobian;
  const CMat gram = J.adjoint() * J;
  RMat metric = gram.real();
  double defect = 0.0;
  const int m = frame.dim();
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j)
      defect = std::max(defect, std::abs(gram(i, j).imag()));
  Eigen::LLT<RMat> llt(metric);
  if (llt.info() != Eigen::Success)
    throw DegenerateFrame("induced_metric_and_defect: jacobian is rank-deficient");
  return {metric, defect};
}

AngleReport lagrangian_angles(const Frame& frame, const KahlerBackground& bg,
                              double lagrangian_tol) {
  auto [metric, defect] = induced_metric_and_defect(frame);
  const Complex detc = frame.jacobian.determinant();
  if (std::abs(detc) == 0.0 || !std::isfinite(std::abs(detc)))
    throw DegenerateFrame("lagrangian_angles: det_C(DF) vanishes");
  AngleReport rep;
  rep.defect = defect;
  rep.approximate = defect > lagrangian_tol;
  rep.theta_L = std::arg(detc);
  const double sqrt_det_g = std::sqrt(metric.determinant());
  rep.det_ratio = std::abs(detc) / sqrt_det_g;
  rep.theta_f = wrap_angle(rep.theta_L - bg.pairing_JT(frame.point));
  rep.residual = std::exp(-0.5 * bg.f(frame.point)) *
                 std::sin(rep.theta_f - bg.phase_ref);
  return rep;
}

namespace {

// Real-orthonormalize the columns; for a Lagrangian span the result is a
// unitary matrix, which is checked against the tolerance.
CMat orthonormalize_lagrangian(const CMat& plane, double tol, const char* who) {
  const CMat gram = plane.adjoint() * plane;
  RMat G = gram.real();
  Eigen::SelfAdjointEigenSolver<RMat> es(G);
  if (es.eigenvalues().minCoeff() <= 1e-12 * es.eigenvalues().maxCoeff())
    throw DegenerateFrame(std::string(who) + ": columns do not span an m-plane");
  RMat inv_sqrt = es.operatorInverseSqrt();
  CMat B = plane * inv_sqrt;
  const CMat check = B.adjoint() * B;
  const double defect = check.imag().cwiseAbs().maxCoeff();
  if (defect > tol)
    throw NotLagrangian(std::string(who) + ": symplectic defect " +
                        std::to_string(defect) + " above tolerance");
  return B;
}

}  // namespace

RVec principal_angles(const CMat& plane_a, const CMat& plane_b,
                      double lagrangian_tol) {
  if (plane_a.rows() != plane_b.rows() || plane_a.cols() != plane_b.cols())
    throw ConfigError("principal_angles: mismatched plane dimensions");
  const CMat A = orthonormalize_lagrangian(plane_a, lagrangian_tol, "principal_angles(a)");
  const CMat B = orthonormalize_lagrangian(plane_b, lagrangian_tol, "principal_angles(b)");
  const CMat W = A.adjoint() * B;  // unitary
  const CMat S = W * W.transpose();  // symmetric unitary; invariant under W -> WO
  Eigen::ComplexEigenSolver<CMat> es(S);
  if (es.info() != Eigen::Success)
    throw ComputationError("principal_angles: eigen decomposition failed");
  const int m = static_cast<int>(plane_a.cols());
  std::vector<double> ang(m), flip(m);
  constexpr double snap = 1e-9;  // branch noise at the angle-0 eigenvalue
  for (int j = 0; j < m; ++j) {
    double phi = 0.5 * std::arg(es.eigenvalues()[j]);  // residue in (-pi/2, pi/2]
    if (phi <= -snap)
      phi += kPi;  // genuine obtuse representative in [0, pi)
    else if (phi < 0.0)
      phi = 0.0;
    ang[j] = phi;
    flip[j] = (phi < snap) ? 0.0 : kPi - phi;
  }
  std::sort(ang.begin(), ang.end());
  std::sort(flip.begin(), flip.end());
  const std::vector<double>& pick =
      std::lexicographical_compare(flip.begin(), flip.end(), ang.begin(), ang.end())
          ? flip
          : ang;
  RVec out(m);
  for (int j = 0; j < m; ++j) out[j] = pick[j];
  return out;
}

double plane_distance(const CMat& plane_a, const CMat& plane_b,
                      double lagrangian_tol) {
  const RVec ang = principal_angles(plane_a, plane_b, lagrangian_tol);
  double worst = 0.0;
  for (int j = 0; j < ang.size(); ++j)
    worst = std::max(worst, std::min(ang[j], kPi - ang[j]));
  return worst;
}

std::vector<double> unwrap_angles(const std::vector<double>& raw) {
  std::vector<double> out(raw.size());
  if (raw.empty()) return out;
  out[0] = raw[0];
  for (std::size_t i = 1; i < raw.size(); ++i)
    out[i] = out[i - 1] + wrap_angle(raw[i] - raw[i - 1]);
  return out;
}

double angle_spread(const std::vector<double>& angles) {
  if (angles.empty()) return 0.0;
  double worst = 0.0;
  for (double a : angles)
    worst = std::max(worst, std::abs(wrap_angle(a - angles[0])));
  return worst;
}

double angle_std(const std::vector<double>& angles) {
  if (angles.size() < 2) return 0.0;
  StableSum sum, sq;
  for (double a : angles) {
    const double d = wrap_angle(a - angles[0]);
    sum.add(d);
    sq.add(d * d);
  }
  const double n = static_cast<double>(angles.size());
  const double mean = sum.value() / n;
  const double var = std::max(0.0, sq.value() / n - mean * mean);
  return std::sqrt(var);
}

}  // namespace tsol
