#pragma once

#include <optional>
#include <vector>

#include "tsol/types.hpp"

namespace tsol {

// Ambient data on C^m: soliton direction T, the weight f(z) = 2<z,T>, and the
// phase reference theta_0. All residuals and angles are computed against the
// weighted form e^{-f/2 - i<z,JT>} dz_1 ^ ... ^ dz_m.
struct KahlerBackground {
  int m = 3;
  CVec T;              // soliton direction, |T| > 0
  double phase_ref = 0.0;

  static KahlerBackground standard(int m);

  double f(const CVec& z) const { return 2.0 * real_inner(z, T); }
  // <z, JT>
  double pairing_JT(const CVec& z) const { return real_inner(z, apply_J(T).eval()); }
  void validate() const;
};

// Point data of an immersion: position, the m complex columns of DF, and
// optionally the second derivatives (hessian[i].col(j) = d_i d_j F).
struct Frame {
  CVec point;
  CMat jacobian;
  std::vector<CMat> hessian;

  int dim() const { return static_cast<int>(jacobian.cols()); }
  bool has_hessian() const { return !hessian.empty(); }
};

struct AngleReport {
  double theta_L = 0.0;    // arg det_C(DF) in (-pi, pi]
  double theta_f = 0.0;    // theta_L - <F, JT>, wrapped to (-pi, pi]
  double residual = 0.0;   // e^{-f/2} sin(theta_f - theta_0)
  double defect = 0.0;     // max |omega0(d_iF, d_jF)|
  double det_ratio = 1.0;  // |det_C DF| / sqrt(det g)
  bool approximate = false;
};

// Induced metric g_ij = <d_iF, d_jF> and the symplectic defect.
std::pair<RMat, double> induced_metric_and_defect(const Frame& frame);

AngleReport lagrangian_angles(const Frame& frame, const KahlerBackground& bg,
                              double lagrangian_tol = 1e-6);

// Characterizing angles in [0, pi)^m between the Lagrangian planes spanned by
// the real spans of the two column sets; sorted ascending. The labeling
// ambiguity {phi} vs {pi - phi} is resolved to the lexicographically smaller
// sorted tuple, which makes the result symmetric in its arguments.
RVec principal_angles(const CMat& plane_a, const CMat& plane_b,
                      double lagrangian_tol = 1e-8);

// Largest folded principal angle min(phi, pi - phi): how far the two
// Lagrangian planes are from coinciding as subspaces.
double plane_distance(const CMat& plane_a, const CMat& plane_b,
                      double lagrangian_tol = 1e-8);

// Continuous lift of a sequence of raw angles along a path: consecutive
// differences are wrapped into (-pi, pi] and accumulated.
std::vector<double> unwrap_angles(const std::vector<double>& raw);

// Largest wrapped deviation from the first entry; robust near the branch cut.
double angle_spread(const std::vector<double>& angles);

// Standard deviation of the angles unwrapped relative to the first entry.
double angle_std(const std::vector<double>& angles);

}  // namespace tsol
