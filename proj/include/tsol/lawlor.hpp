#pragma once

#include <string>
#include <vector>

#include "tsol/ambient.hpp"
#include "tsol/types.hpp"

namespace tsol {

// Parameters a_1..a_m > 0 of the neck family, m > 2.
struct LawlorParams {
  RVec a;

  int dim() const { return static_cast<int>(a.size()); }
  void validate() const;
};

// Even polynomial P(x) = sum_{k=1}^m e_k x^{2(k-1)}, where the e_k are the
// elementary symmetric functions of the a_j. Equals (prod(1 + a_j x^2) - 1)/x^2.
struct ProfilePoly {
  RVec e;  // e_1..e_m

  static ProfilePoly from_params(const LawlorParams& p);
  double eval(double x) const;
  double deriv(double x) const;
  // Q(s) = s^{2(m-1)} P(1/s); used for the tail integrals.
  double eval_reciprocal(double s) const;
};

struct AngleData {
  RVec phi;       // m angles in (0, pi)
  double A = 0.0; // area invariant; scales as (neck scale)^2

  int dim() const { return static_cast<int>(phi.size()); }
  double angle_sum_defect() const { return phi.sum() - kPi; }
  void validate() const;
};

// phi_j = a_j Int dx / ((1 + a_j x^2) sqrt(P)),  A = Int dx / (2 sqrt(P)),
// both over the whole line; evaluated by splitting at 0 and substituting
// x = tan(u) on (0, inf) with adaptive panels.
AngleData angles_from_params(const LawlorParams& params, double tol);

// Inverse map. Newton iteration on the log-ratios log(a_j/a_m) restricted to
// the exact A-level set (a -> a * A(a)/A_target leaves every phi_j fixed).
LawlorParams params_from_angles(const AngleData& target, double tol);

// Rescaling a -> a / c^2 rescales the neck pointwise by c and A by c^2.
LawlorParams scale_params(const LawlorParams& p, double c);

// Cached cumulative profiles psi_j on a symmetric grid, with exact slopes and
// power-law tails matched at the grid ends.
struct NeckProfile {
  LawlorParams params;
  AngleData angle_data;
  RVec y_grid;        // n ascending nodes on [-y_max, y_max]
  RMat psi_values;    // n x m
  RMat psi_slopes;    // exact integrand values, monotone-limited for eval
  RVec tail_coeff;    // psi_j(y) = phi_j - C_j y^-m as y -> +inf
  double y_max = 0.0;

  double psi(int j, double y) const;
  double psi_deriv(int j, double y) const;   // exact, no differencing
  double psi_deriv2(int j, double y) const;
  Complex z(int j, double y) const;          // e^{i psi_j} sqrt(1/a_j + y^2)
  Complex dz(int j, double y) const;
  Complex d2z(int j, double y) const;
};

// y beyond which the remaining tail integral is below tol.
double y_max_for_tail(const LawlorParams& params, double tol);

NeckProfile psi_profile(const LawlorParams& params, double y_max, int n,
                        double quad_tol = 1e-11);

// Immersion point/frame of t * N at x in S^{m-1}, profile coordinate y.
// Tangent basis of the sphere taken in geodesic normal coordinates at x;
// a caller-supplied basis (m x (m-1), columns orthonormal, orthogonal to x)
// may be passed instead.
Frame neck_eval(const NeckProfile& profile, const RVec& x, double y, double t,
                const RMat* sphere_basis = nullptr, bool with_hessian = false);

// Deterministic orthonormal basis of the tangent space of S^{m-1} at x.
RMat sphere_tangent_basis(const RVec& x);

// Profile cache (JSON, exact double round-trip).
std::string profile_to_json(const NeckProfile& profile);
NeckProfile profile_from_json(const std::string& text);
void save_profile(const NeckProfile& profile, const std::string& path);
NeckProfile load_profile(const std::string& path);

}  // namespace tsol
