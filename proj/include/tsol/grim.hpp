#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tsol/ambient.hpp"
#include "tsol/types.hpp"

namespace tsol {

// Affine motion z -> (e^{i phi_1} z_1, ..., e^{i phi_{m-1}} z_{m-1},
//                     z_m + lambda + i phi_m).
struct RigidMotionSpec {
  RVec phi;        // m entries in (0, pi)
  double lambda = 0.0;

  int dim() const { return static_cast<int>(phi.size()); }
  double angle_sum() const { return phi.sum(); }
  bool admissible(double tol = 1e-12) const {
    return std::abs(angle_sum() - kPi) <= tol;
  }
  void validate() const;
};

CVec apply_motion(const RigidMotionSpec& spec, const CVec& z);

// Composition of motions, kept as accumulated coordinate phases plus a shift
// of the last coordinate.
struct AffineMotion {
  RVec phases;    // m-1 accumulated rotation angles
  Complex shift;  // accumulated lambda + i phi_m

  static AffineMotion identity(int m);
  AffineMotion then(const RigidMotionSpec& next) const;
  CVec apply(const CVec& z) const;
  CVec rotate(const CVec& v) const;  // linear part only
};

enum class GrimParametrization { Angle, Arclength };

// Chart for a (moved) Grim Reaper cylinder. The identity chart has phase 0:
// last coordinate -log cos(x_m) - i (x_m - pi/2).
struct GrimChart {
  int m = 3;
  AffineMotion motion = AffineMotion::identity(3);
  GrimParametrization param = GrimParametrization::Angle;

  static GrimChart identity(int m, GrimParametrization p = GrimParametrization::Angle);
  static GrimChart moved(int m, const RigidMotionSpec& spec,
                         GrimParametrization p = GrimParametrization::Angle);
};

Frame chart_eval(const GrimChart& chart, const RVec& params);

// Gudermannian pair linking arclength and angle parameters of the curve.
inline double gudermann(double s) { return 2.0 * std::atan(std::exp(s)) - 0.5 * kPi; }
inline double gudermann_inv(double x) { return std::atanh(std::sin(x)); }

struct IntersectionRecord {
  CVec point;        // the singular point p
  double s0 = 0.0;   // curve parameter on the un-moved chart (angle units)
  double s1 = 0.0;   // on the moved chart; s1 - s0 = phi_m
  RVec cone_angles;  // sorted motion angles
  int rate = 3;      // conical rate mu
};

// Unique intersection of the identity chart with its image under `spec`:
// solves log cos(s0 + phi_m) - log cos(s0) = lambda.
IntersectionRecord intersect(const RigidMotionSpec& spec);

struct CsConfiguration {
  int m = 3;
  GrimParametrization param = GrimParametrization::Arclength;
  std::vector<RigidMotionSpec> motions;
  std::vector<GrimChart> charts;                 // motions.size() + 1 entries
  std::vector<IntersectionRecord> intersections; // one per consecutive pair
  std::vector<std::pair<int, int>> extra_intersections;  // flagged by sampling
  double t_finite_bound = 0.0;                   // sup over charts of f = 2<F,T>
};

CsConfiguration build_configuration(const std::vector<RigidMotionSpec>& motions,
                                    int m,
                                    GrimParametrization param =
                                        GrimParametrization::Arclength);

// JSON ingest: {"m":3, "parametrization":"angle"|"arclength",
//               "motions":[{"phi":[...], "lambda":0.0}, ...]}
CsConfiguration configuration_from_json(const std::string& json_text);

}  // namespace tsol
