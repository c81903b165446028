#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Sparse>

#include "tsol/cone_graph.hpp"
#include "tsol/weighted.hpp"

namespace tsol {

// Node of the SO(m-1)-invariant 2D slice discretization. Logical coordinates
// are (i = latitude, k = longitudinal along wing/transition/neck/transition/
// wing); all geometric data is stored per node.
struct ReducedNode {
  Region region = Region::Wing;
  int side = -1;
  RVec sigma;        // construction direction (plane/wing/sphere coords)
  double rpar = 0.0; // radius (wing/transition) or the neck coordinate y
  CVec position;     // slice point; coordinates 2..m-1 vanish
  CVec tan_i, tan_k; // logical tangents from centered position differences
  RMat g2;           // 2x2 slice metric in logical coordinates
  double orbit_radius = 0.0;  // |z_1|
  double J = 0.0;             // vol(S^{m-2}) |z_1|^{m-2}
  double f = 0.0;
  double theta_f = 0.0;
  double rho = 1.0;
  double theta_exact = 0.0;   // residual from the exact region evaluators
  double measure = 0.0;       // J sqrt(det g2) x logical cell factor
  bool axis = false;
  bool boundary = false;      // Dirichlet truncation row
  bool seam = false;          // shared row between two parametrization blocks
};

struct ReducedResolution {
  int latitudes = 25;          // including both axis rows
  int radial_per_dyadic = 8;   // transition-block density
  int neck_rows = 0;           // 0: derived so seam spacing stays continuous
  int wing_rows = 0;           // 0: derived likewise
  double R_prime = 5.0;        // |x'| truncation in the flat directions
  double R_out = 5.0;          // arclength truncation along the curve
};

struct ReducedMesh {
  int m = 3;
  int ni = 0, nk = 0;
  std::vector<ReducedNode> nodes;  // ni * nk
  double t = 0.0, tau = 0.9, eps = 0.5, Rhat = 1.1;
  bool synthetic = false;          // flat test meshes bypass surface geometry
  bool has_orbit = true;           // orbit factor enters frames and norms
  int idx(int i, int k) const { return i * nk + k; }
  int size() const { return ni * nk; }
};

ReducedMesh build_reduced_mesh(const GluedSurface& surface,
                               const ReducedResolution& res);

// Flat rectangle [0,Lx] x [0,Ly], J = 1, theta_f = 0, Dirichlet all around;
// f is given as a field of the two coordinates.
ReducedMesh flat_rectangle_mesh(int nx, int ny, double Lx, double Ly,
                                const std::function<double(double, double)>& f_field);

// Flat axisymmetric patch (radius, height) in R^3 with the axis at i = 0;
// exercises the J -> 0 limit rows.
ReducedMesh flat_axisymmetric_patch(int nr, int nz, double R, double H);

struct DiscreteOperator {
  Eigen::SparseMatrix<double> raw;         // full grid; Dirichlet rows identity
  Eigen::SparseMatrix<double> conjugated;  // interior W_out L W_in^{-1}
  RVec w_in, w_out;                        // weight diagonals (interior)
  std::vector<int> interior;               // node index per interior row
  std::vector<int> interior_of_node;       // -1 on Dirichlet rows
};

// Finite-volume discretization of
//   L u = e^{-f/2} ( cos(theta_f) (Delta u - <grad f, grad u>/2)
//                    - sin(theta_f) <grad theta_f, grad u> ),
// conjugated by the W^{0,2}_{beta,gamma,t} -> W^{0,2}_{beta+1,gamma-2,t}
// weight diagonals. With chart_drift the first-order coefficient is
// + sin(theta_f) <grad <F,JT>, grad u> instead: the exact differential of the
// residual in the first-order Hamiltonian chart. The two coincide wherever
// sin(theta_f) = 0, in particular on exact translators.
DiscreteOperator assemble_L(const ReducedMesh& mesh, const WeightSpec& spec,
                            bool chart_drift = false);

// Smallest singular value of the conjugated operator by inverse iteration on
// the normal equations.
double smallest_singular_value(const DiscreteOperator& op, int max_iter = 2000,
                               double tol = 1e-9);

// Smallest eigenvalue of -raw (interior), for the flat Laplacian validation.
double smallest_laplace_eigenvalue(const DiscreteOperator& op,
                                   int max_iter = 2000, double tol = 1e-10);

struct SigmaScanRow {
  double t = 0.0;
  double sigma_min = 0.0;
  long interior_nodes = 0;
};

std::vector<SigmaScanRow> sigma_min_scan(const CsConfiguration& config,
                                         int intersection_index,
                                         const std::vector<double>& ts,
                                         double tau, double eps, double Rhat,
                                         const NeckProfile* profile,
                                         const WeightSpec& spec,
                                         const ReducedResolution& res);

// Discretized residual of the perturbed immersion F_u = F + J F_* grad u,
// frames by logical differencing of the perturbed slice positions.
struct PerturbedTheta {
  RVec theta;   // per node
  RVec defect;  // per node symplectic defect of the differenced frame
};

PerturbedTheta perturbed_theta(const ReducedMesh& mesh, const RVec& u,
                               double chart_bound_factor = 0.1);

// Matrix of the discrete differential of u -> Theta(u) at u0 (comb probing
// with centered steps). This is the frozen operator of the fixed-point map.
Eigen::SparseMatrix<double> linearization_matrix(const ReducedMesh& mesh,
                                                 const RVec& u0);

// W^{k,p}_{beta,gamma,t} norm of a node field with grid-differenced
// derivative magnitudes (diagnostics-grade for k >= 2: coordinate Hessians in
// the orthonormal slice frame plus the orbit curvature term, no slice
// Christoffel correction).
double mesh_field_norm(const ReducedMesh& mesh, const RVec& field,
                       const WeightSpec& spec);

struct PicardHistory {
  std::vector<double> residual;       // W^{1,p} target-space norms
  std::vector<double> residual_l0;    // value-only norms
  std::vector<double> defect_max;
  std::vector<double> iterate_norm;   // W^{3,p} domain norms of u_k
  bool converged = false;
  bool hit_floor = false;
};

PicardHistory picard_iterate(const ReducedMesh& mesh, const WeightSpec& spec,
                             int max_iter, double tol, double floor = 0.0,
                             bool relinearize = false,
                             double chart_bound_factor = 1.0);

struct QuadraticCheck {
  std::vector<double> ratios;       // per trial
  double max_ratio = 0.0;
  double median_ratio = 0.0;
  double homogeneity_slope = 0.0;   // fit of ||Q(s du)|| vs s
};

QuadraticCheck quadratic_scaling_check(const ReducedMesh& mesh,
                                       const WeightSpec& spec, int trials,
                                       std::uint64_t seed);

// Smooth random test field respecting the axis symmetry and Dirichlet rows,
// scaled so max |grad u|_g = amplitude * min rho.
RVec random_smooth_field(const ReducedMesh& mesh, std::uint64_t seed,
                         double amplitude);

}  // namespace tsol
