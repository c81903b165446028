#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "tsol/ambient.hpp"
#include "tsol/grim.hpp"
#include "tsol/lawlor.hpp"
#include "tsol/types.hpp"

namespace tsol {

// Unitary chart centered at a singular point: zeta = U0^dag (z - p) maps the
// tangent-plane pair to the standard pair Pi_0 (real span) and
// Pi_phi = diag(e^{i phi_j}) Pi_0.
struct ConeChart {
  CVec vertex;            // p
  CVec rotation;          // diagonal of U0
  RVec phi;               // per-coordinate angles between the planes
  std::array<CMat, 2> plane_basis;  // bases in cone coordinates: I, diag(e^{i phi})
  std::array<CMat, 2> plane_ambient;  // U0 * basis, ambient orthonormal frames

  CVec to_cone(const CVec& z) const;
  CVec from_cone(const CVec& zeta) const;
  CVec rotate_out(const CVec& v) const;  // U0 * v (tangent vectors)
};

// Smooth monotone step: 0 on (0, 1], 1 on [2, inf), the exponential partition
// rescaled to [1, 2]; evaluated at t^{-tau} r with exact chain-rule derivatives.
struct CutoffSpec {
  double tau = 0.9;  // in (m/(m+1), 1)
};

struct CutoffEval {
  double value = 0.0;
  double d1 = 0.0;  // d/dr
  double d2 = 0.0;  // d^2/dr^2
};

CutoffEval cutoff_eval(const CutoffSpec& spec, double t, double r);

enum class Region { Wing, TransitionOuter, TransitionMix, TransitionInner, Neck };

const char* region_name(Region r);

// Radius field rho_t: 1 far out on the wings (min(1, r) through the collar),
// the cone radius r on the transition, t * rhat on the neck.
struct RadiusField {
  double t = 0.0;
  double eps = 0.5;
  double Rhat = 1.1;
  double tau = 0.9;
};

struct GluedSurface {
  CsConfiguration config;
  int intersection_index = 0;
  NeckProfile profile;  // standard-position neck; core radius normalized
  double t = 0.05;
  CutoffSpec cutoff;
  double eps = 0.5;
  double Rhat = 1.1;
  ConeChart cone;
  std::array<GrimChart, 2> wing_chart;  // arclength parametrization
  std::array<RVec, 2> wing_center;      // chart parameters of the vertex

  double r_inner() const { return t * Rhat; }
  double r_mix_lo() const { return std::pow(t, cutoff.tau); }
  double r_mix_hi() const { return 2.0 * std::pow(t, cutoff.tau); }
  RadiusField radius_field() const { return {t, eps, Rhat, cutoff.tau}; }

  mutable long projection_attempts = 0;
  mutable long projection_failures = 0;
};

// Core radius max_j a_j^{-1/2} of the profile's neck.
double neck_core_radius(const LawlorParams& params);

// Neck in standard position for the motion's angles, rescaled so the core
// radius equals `core`; A is then determined (recorded in the profile).
NeckProfile standard_neck(const RVec& motion_phi, double core = 0.8,
                          double y_max = 48.0, int grid_n = 4096,
                          double tol = 1e-9);

GluedSurface glue_build(const CsConfiguration& config, int intersection_index,
                        double t, double tau = 0.9, double eps = 0.5,
                        double Rhat = 1.1,
                        const NeckProfile* cached_profile = nullptr);

enum class GraphTarget { WingChart, ScaledNeck };

struct GraphPoint {
  RVec grad;          // nabla potential in the side's plane coordinates
  CVec displacement;  // ambient J-normal displacement from the cone point
  RVec surface_param; // wing chart parameters, or (sphere point..., y)
};

// Newton-solves for the surface parameter over the cone point (sigma, r); the
// gradient of the graph potential is the imaginary part in plane coordinates.
GraphPoint project_to_graph(const GluedSurface& surface, GraphTarget target,
                            int side, const RVec& sigma, double r,
                            double tol = 1e-12);

enum class PotentialKind { WingU, NeckV };

// Primitive of radial gradient samples along a fixed-sigma ray. Wing
// potentials are anchored by u -> 0 as r -> 0 (rate 3 leading term), neck
// potentials by v -> 0 as r -> inf (rate 2-m leading term).
RVec recover_potential(const RVec& r_nodes, const RVec& radial_grads,
                       PotentialKind kind, int m);

// Cached cumulative potentials u, v_t along one ray.
struct RayPotentials {
  RVec u_nodes, u_vals, u_slopes;
  RVec v_nodes, v_vals, v_slopes;
  double u_at(double r) const;
  double v_at(double r) const;
};

RayPotentials build_ray_potentials(const GluedSurface& surface, int side,
                                   const RVec& sigma);

struct GluedPoint {
  Region region = Region::Wing;
  int side = 0;        // 0/1; ignored for Region::Neck
  RVec sigma;          // unit vector in plane coordinates (non-neck regions)
  double r = 0.0;      // cone radius (non-neck regions)
  RVec neck_x;         // sphere point (neck region)
  double neck_y = 0.0;
  RVec wing_param;     // optional explicit wing chart parameters
};

// Frame of the piecewise immersion. Wing and outer-transition parameters
// evaluate through the exact wing chart, inner transition and neck through
// the exact scaled neck, the mixing annulus through the graph of nabla w_t.
// A precomputed ray cache may be supplied for mixing-region evaluations.
Frame glued_eval(const GluedSurface& surface, const GluedPoint& point,
                 const RayPotentials* ray = nullptr);

double rho_eval(const RadiusField& field, const GluedPoint& point,
                const GluedSurface& surface);

// Region of a cone radius r (non-neck entry is by construction r >= t Rhat).
Region classify_radius(const GluedSurface& surface, double r);

struct MeshResolution {
  int sphere_polar = 6;
  int sphere_azimuth = 12;
  int radial_per_dyadic = 8;
  int neck_rows = 25;
  double wing_out = 4.0;  // wing truncation radius in chart coordinates
  void validate(int m) const;
};

struct MeshNode {
  Region region;
  int side;             // -1 for neck
  RVec sigma;           // plane coords direction / wing chart direction
  double r;             // cone radius (transition), chart radius (wing)
  RVec neck_x;
  double neck_y;
  CVec position;
  double weight;        // quadrature weight including the area element
  double rho;
  double f;             // 2<F, T>
  double theta_f;
  double theta;         // translator residual
  double dtheta_norm;   // |d Theta|_g from grid differencing
};

struct SampleMesh {
  std::vector<MeshNode> nodes;
  double lemma_metric_sup = 0.0;  // sup over mix annulus of r |g_t - g_C|
  long projection_failures = 0;
  double t = 0.0;
  int m = 0;
};

SampleMesh sample_mesh(const GluedSurface& surface, const MeshResolution& res);

// CSV: node params, region, ambient coordinates, rho_t, Theta.
void export_mesh_csv(const SampleMesh& mesh, const std::string& path);
// OBJ point cloud of a chosen real 3-plane projection; coords index the
// 2m real coordinates (Re z_1, Im z_1, ..., Re z_m, Im z_m).
void export_mesh_obj(const SampleMesh& mesh, const std::array<int, 3>& coords,
                     const std::string& path);

}  // namespace tsol
