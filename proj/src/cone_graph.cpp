#include "tsol/cone_graph.hpp"

#include <algorithm>
#include <cmath>

#include "tsol/quadrature.hpp"
#include "tsol/report.hpp"

namespace tsol {

CVec ConeChart::to_cone(const CVec& z) const {
  return rotation.conjugate().cwiseProduct(z - vertex);
}

CVec ConeChart::from_cone(const CVec& zeta) const {
  return vertex + rotation.cwiseProduct(zeta);
}

CVec ConeChart::rotate_out(const CVec& v) const {
  return rotation.cwiseProduct(v);
}

const char* region_name(Region r) {
  switch (r) {
    case Region::Wing: return "wing";
    case Region::TransitionOuter: return "transition-outer";
    case Region::TransitionMix: return "transition-mix";
    case Region::TransitionInner: return "transition-inner";
    case Region::Neck: return "neck";
  }
  return "?";
}

namespace {

// Exponential step on [0, 1] with value, d/ds, d^2/ds^2.
std::array<double, 3> bump(double s) {
  if (s <= 1e-9) return {0.0, 0.0, 0.0};
  if (s >= 1.0 - 1e-9) return {1.0, 0.0, 0.0};
  const double iu = 1.0 / s, iv = 1.0 / (1.0 - s);
  const double u = std::exp(-iu), v = std::exp(-iv);
  const double B = u / (u + v);
  const double g = iu * iu + iv * iv;
  const double W = u * v / ((u + v) * (u + v));
  const double d1 = W * g;
  const double h = iu * iu - iv * iv;
  const double k = 2.0 * (u * iu * iu - v * iv * iv) / (u + v);
  const double gp = -2.0 * iu * iu * iu + 2.0 * iv * iv * iv;
  const double d2 = W * ((h - k) * g + gp);
  return {B, d1, d2};
}

}  // namespace

CutoffEval cutoff_eval(const CutoffSpec& spec, double t, double r) {
  if (!(t > 0.0) || !(r > 0.0))
    throw ConfigError("cutoff_eval: t and r must be positive");
  const double scale = std::pow(t, -spec.tau);
  const double zeta = scale * r;
  CutoffEval out;
  if (zeta <= 1.0) {
    out.value = 0.0;
    return out;
  }
  if (zeta >= 2.0) {
    out.value = 1.0;
    return out;
  }
  const auto b = bump(zeta - 1.0);
  out.value = b[0];
  out.d1 = b[1] * scale;
  out.d2 = b[2] * scale * scale;
  return out;
}

double neck_core_radius(const LawlorParams& params) {
  return 1.0 / std::sqrt(params.a.minCoeff());
}

NeckProfile standard_neck(const RVec& motion_phi, double core, double y_max,
                          int grid_n, double tol) {
  AngleData target;
  target.phi = motion_phi;
  target.A = 1.0;
  LawlorParams p = params_from_angles(target, tol);
  const double c = core / neck_core_radius(p);
  p = scale_params(p, c);
  return psi_profile(p, y_max, grid_n, 1e-11);
}

GluedSurface glue_build(const CsConfiguration& config, int intersection_index,
                        double t, double tau, double eps, double Rhat,
                        const NeckProfile* cached_profile) {
  const int m = config.m;
  if (intersection_index < 0 ||
      intersection_index >= static_cast<int>(config.intersections.size()))
    throw ConfigError("glue_build: intersection index out of range");
  if (!(tau > static_cast<double>(m) / (m + 1) && tau < 1.0))
    throw ConfigError("glue_build: tau outside (m/(m+1), 1)");
  if (!(t > 0.0)) throw ConfigError("glue_build: t must be positive");
  GluedSurface s;
  s.config = config;
  s.intersection_index = intersection_index;
  s.t = t;
  s.cutoff.tau = tau;
  s.eps = eps;
  s.Rhat = Rhat;
  if (!(s.r_inner() < s.r_mix_lo()))
    throw ConfigError("glue_build: requires t * Rhat < t^tau");
  if (!(s.r_mix_hi() < eps))
    throw ConfigError("glue_build: requires 2 t^tau < eps");

  const IntersectionRecord& rec = config.intersections[intersection_index];
  const RigidMotionSpec& motion = config.motions[intersection_index];

  for (int side = 0; side < 2; ++side) {
    GrimChart chart = config.charts[intersection_index + side];
    chart.param = GrimParametrization::Arclength;
    s.wing_chart[side] = chart;
    RVec center = RVec::Zero(m);
    center[m - 1] = gudermann_inv(side == 0 ? rec.s0 : rec.s1);
    s.wing_center[side] = center;
  }

  // cone coordinates: rotate by the side-0 chart phases and the curve tangent
  const double alpha0 = rec.s0 - 0.5 * kPi;
  ConeChart cone;
  cone.vertex = rec.point;
  cone.rotation.resize(m);
  const RVec& phases = s.wing_chart[0].motion.phases;
  for (int j = 0; j < m - 1; ++j) cone.rotation[j] = std::polar(1.0, phases[j]);
  cone.rotation[m - 1] = std::polar(1.0, alpha0);
  cone.phi = motion.phi;
  cone.plane_basis[0] = CMat::Identity(m, m);
  cone.plane_basis[1] = CMat::Identity(m, m);
  for (int j = 0; j < m; ++j)
    cone.plane_basis[1](j, j) = std::polar(1.0, motion.phi[j]);
  for (int side = 0; side < 2; ++side) {
    cone.plane_ambient[side] = cone.plane_basis[side];
    for (int j = 0; j < m; ++j)
      cone.plane_ambient[side].row(j) *= cone.rotation[j];
  }
  s.cone = cone;

  if (cached_profile) {
    s.profile = *cached_profile;
    if ((s.profile.angle_data.phi - motion.phi).cwiseAbs().maxCoeff() > 1e-7)
      throw ConfigError("glue_build: cached profile angles do not match motion");
  } else {
    s.profile = standard_neck(motion.phi);
  }
  if (neck_core_radius(s.profile.params) > 0.8 * Rhat)
    throw ConfigError("glue_build: neck core too large for the graph radius Rhat");

  // empirical orientation check: the y < 0 end must run along the side-0 wing
  for (int side = 0; side < 2; ++side) {
    const double y = (side == 0 ? -1.0 : 1.0) * 0.5 * s.profile.y_max;
    RVec x = RVec::Zero(m);
    x[0] = 1.0;
    const Frame end = neck_eval(s.profile, x, y, 1.0);
    CMat ambient_end(m, m);
    for (int c = 0; c < m; ++c)
      ambient_end.col(c) = cone.rotate_out(end.jacobian.col(c));
    RVec xc = s.wing_center[side];
    const CMat wing_tan = chart_eval(s.wing_chart[side], xc).jacobian;
    if (plane_distance(ambient_end, wing_tan, 1e-4) > 0.05)
      throw ComputationError("glue_build: neck end does not match the wing plane");
  }
  return s;
}

Region classify_radius(const GluedSurface& surface, double r) {
  if (r < surface.r_inner()) return Region::Neck;
  if (r <= surface.r_mix_lo()) return Region::TransitionInner;
  if (r < surface.r_mix_hi()) return Region::TransitionMix;
  if (r < surface.eps) return Region::TransitionOuter;
  return Region::Wing;
}

namespace {

// Direct graph radius of an ambient point relative to a side's plane.
double graph_radius_of_point(const GluedSurface& s, int side, const CVec& z) {
  const CVec w = s.cone.plane_basis[side].adjoint() * s.cone.to_cone(z);
  return w.real().norm();
}

// rhat of a neck-units point, using the sign of y to pick the plane.
double neck_rhat(const GluedSurface& s, const RVec& x, double y) {
  const int m = s.config.m;
  const int side = (y < 0.0) ? 0 : 1;
  CVec n(m);
  for (int j = 0; j < m; ++j) n[j] = x[j] * s.profile.z(j, y);
  const CVec w = s.cone.plane_basis[side].adjoint() * n;
  return w.real().norm();
}

struct WingProjection {
  RVec x;      // chart parameters
  RVec grad;   // Im part in plane coordinates
  CVec point;  // ambient position
  Frame frame;
};

WingProjection project_wing(const GluedSurface& s, int side, const RVec& sigma,
                            double r, double tol) {
  ++s.projection_attempts;
  const int m = s.config.m;
  const CMat& B = s.cone.plane_basis[side];
  const RVec xi = r * sigma;
  // first-order seed through the tangent map at the center
  const Frame fc = chart_eval(s.wing_chart[side], s.wing_center[side]);
  CMat cone_jac(m, m);
  for (int c = 0; c < m; ++c)
    cone_jac.col(c) =
        B.adjoint() * s.cone.rotation.conjugate().cwiseProduct(fc.jacobian.col(c));
  RVec x = s.wing_center[side] + cone_jac.real().lu().solve(xi);
  RVec g(m);
  CVec w(m);
  Frame fr;
  for (int it = 0; it < 40; ++it) {
    fr = chart_eval(s.wing_chart[side], x);
    w = B.adjoint() * s.cone.to_cone(fr.point);
    g = w.real() - xi;
    if (g.cwiseAbs().maxCoeff() < tol) {
      WingProjection out;
      out.x = x;
      out.grad = w.imag();
      out.point = fr.point;
      out.frame = fr;
      return out;
    }
    CMat J(m, m);
    for (int c = 0; c < m; ++c)
      J.col(c) = B.adjoint() *
                 s.cone.rotation.conjugate().cwiseProduct(fr.jacobian.col(c));
    RVec step = J.real().lu().solve(g);
    const double cap = 0.3 * (1.0 + r);
    if (step.norm() > cap) step *= cap / step.norm();
    x -= step;
  }
  ++s.projection_failures;
  throw ProjectionFailure("project_wing: Newton did not converge", x,
                          g.cwiseAbs().maxCoeff());
}

struct NeckProjection {
  RVec x;      // sphere point
  double y;
  RVec grad;   // Im part in plane coordinates, scaled-neck units
  CVec point;  // ambient position
};

NeckProjection project_neck(const GluedSurface& s, int side, const RVec& sigma,
                            double r, double tol) {
  ++s.projection_attempts;
  const int m = s.config.m;
  const CMat& B = s.cone.plane_basis[side];
  const double rh = r / s.t;
  const RVec xi = rh * sigma;
  RVec x = sigma;
  double y = (side == 0 ? -1.0 : 1.0) * rh;
  RVec g(m);
  CVec w(m);
  const double ntol = tol / s.t;  // equation solved in neck units
  for (int it = 0; it < 60; ++it) {
    CVec n(m), dn(m);
    for (int j = 0; j < m; ++j) {
      n[j] = x[j] * s.profile.z(j, y);
      dn[j] = x[j] * s.profile.dz(j, y);
    }
    w = B.adjoint() * n;
    g = w.real() - xi;
    if (g.cwiseAbs().maxCoeff() < ntol) {
      if ((side == 0 && y > 0.0) || (side == 1 && y < 0.0)) break;
      NeckProjection out;
      out.x = x;
      out.y = y;
      out.grad = s.t * w.imag();
      CVec scaled = s.t * n;
      out.point = s.cone.from_cone(scaled);
      return out;
    }
    const RMat V = sphere_tangent_basis(x);
    RMat J(m, m);
    for (int a = 0; a < m - 1; ++a) {
      CVec col(m);
      for (int j = 0; j < m; ++j) col[j] = V(j, a) * s.profile.z(j, y);
      J.col(a) = (B.adjoint() * col).real();
    }
    J.col(m - 1) = (B.adjoint() * dn).real();
    RVec step = J.lu().solve(g);
    const double cap = 0.5 * (1.0 + rh);
    if (step.norm() > cap) step *= cap / step.norm();
    x = (x - V * step.head(m - 1)).normalized();
    y -= step[m - 1];
  }
  ++s.projection_failures;
  RVec last(m + 1);
  last << x, y;
  throw ProjectionFailure("project_neck: Newton did not converge", last,
                          g.cwiseAbs().maxCoeff());
}

}  // namespace

GraphPoint project_to_graph(const GluedSurface& surface, GraphTarget target,
                            int side, const RVec& sigma, double r, double tol) {
  if (side < 0 || side > 1) throw ConfigError("project_to_graph: side must be 0/1");
  if (std::abs(sigma.norm() - 1.0) > 1e-10)
    throw ConfigError("project_to_graph: sigma must be a unit vector");
  GraphPoint out;
  const int m = surface.config.m;
  const CVec cone_point =
      surface.cone.from_cone(surface.cone.plane_basis[side] *
                             (r * sigma).cast<Complex>());
  if (target == GraphTarget::WingChart) {
    const WingProjection wp = project_wing(surface, side, sigma, r, tol);
    out.grad = wp.grad;
    out.surface_param = wp.x;
    out.displacement = wp.point - cone_point;
  } else {
    const NeckProjection np = project_neck(surface, side, sigma, r, tol);
    out.grad = np.grad;
    out.surface_param.resize(m + 1);
    out.surface_param << np.x, np.y;
    out.displacement = np.point - cone_point;
  }
  return out;
}

RVec recover_potential(const RVec& r_nodes, const RVec& radial_grads,
                       PotentialKind kind, int m) {
  const int n = static_cast<int>(r_nodes.size());
  if (n < 3 || radial_grads.size() != n)
    throw ConfigError("recover_potential: need matched grids with >= 3 nodes");
  for (int k = 0; k + 1 < n; ++k)
    if (!(r_nodes[k + 1] > r_nodes[k]))
      throw ConfigError("recover_potential: r grid must be increasing");
  // integrate g(lambda) = r * du/dr in lambda = log r with a derivative-
  // corrected trapezoid (Euler-Maclaurin), slopes from 3-point differences
  RVec lam(n), g(n), gp(n);
  for (int k = 0; k < n; ++k) {
    lam[k] = std::log(r_nodes[k]);
    g[k] = r_nodes[k] * radial_grads[k];
  }
  auto slope3 = [&](int i0, int i1, int i2, int at) {
    const double x0 = lam[i0], x1 = lam[i1], x2 = lam[i2];
    const double y0 = g[i0], y1 = g[i1], y2 = g[i2];
    const double xa = lam[at];
    return y0 * (2 * xa - x1 - x2) / ((x0 - x1) * (x0 - x2)) +
           y1 * (2 * xa - x0 - x2) / ((x1 - x0) * (x1 - x2)) +
           y2 * (2 * xa - x0 - x1) / ((x2 - x0) * (x2 - x1));
  };
  gp[0] = slope3(0, 1, 2, 0);
  gp[n - 1] = slope3(n - 3, n - 2, n - 1, n - 1);
  for (int k = 1; k + 1 < n; ++k) gp[k] = slope3(k - 1, k, k + 1, k);
  RVec vals(n);
  if (kind == PotentialKind::WingU) {
    vals[0] = r_nodes[0] * radial_grads[0] / 3.0;  // u ~ c r^3 near the vertex
    for (int k = 0; k + 1 < n; ++k) {
      const double h = lam[k + 1] - lam[k];
      vals[k + 1] = vals[k] + 0.5 * h * (g[k] + g[k + 1]) +
                    h * h / 12.0 * (gp[k] - gp[k + 1]);
    }
  } else {
    vals[n - 1] = -r_nodes[n - 1] * radial_grads[n - 1] / (m - 2);
    for (int k = n - 2; k >= 0; --k) {
      const double h = lam[k + 1] - lam[k];
      vals[k] = vals[k + 1] - 0.5 * h * (g[k] + g[k + 1]) -
                h * h / 12.0 * (gp[k] - gp[k + 1]);
    }
  }
  return vals;
}

namespace {

double hermite_at(const RVec& lam, const RVec& vals, const RVec& slopes,
                  double x) {
  const int n = static_cast<int>(lam.size());
  if (x <= lam[0]) return vals[0] + slopes[0] * (x - lam[0]);
  if (x >= lam[n - 1]) return vals[n - 1] + slopes[n - 1] * (x - lam[n - 1]);
  int lo = 0, hi = n - 1;
  while (hi - lo > 1) {
    const int mid = (lo + hi) / 2;
    (lam[mid] <= x ? lo : hi) = mid;
  }
  const double h = lam[lo + 1] - lam[lo];
  const double sfrac = (x - lam[lo]) / h;
  const double s2 = sfrac * sfrac, s3 = s2 * sfrac;
  return (2 * s3 - 3 * s2 + 1) * vals[lo] + h * (s3 - 2 * s2 + sfrac) * slopes[lo] +
         (-2 * s3 + 3 * s2) * vals[lo + 1] + h * (s3 - s2) * slopes[lo + 1];
}

RVec log_grid(double lo, double hi, int per_dyadic, int min_nodes = 9) {
  const int n = std::max(min_nodes,
                         static_cast<int>(std::ceil(per_dyadic *
                                                    std::log2(hi / lo))) + 1);
  RVec r(n);
  for (int k = 0; k < n; ++k)
    r[k] = lo * std::pow(hi / lo, static_cast<double>(k) / (n - 1));
  return r;
}

}  // namespace

double RayPotentials::u_at(double r) const {
  return hermite_at(u_nodes, u_vals, u_slopes, std::log(r));
}

double RayPotentials::v_at(double r) const {
  return hermite_at(v_nodes, v_vals, v_slopes, std::log(r));
}

RayPotentials build_ray_potentials(const GluedSurface& s, int side,
                                   const RVec& sigma) {
  const int m = s.config.m;
  RayPotentials ray;
  const double rml = s.r_mix_lo();
  {
    const RVec rg = log_grid(rml / 8.0, 2.6 * rml, 16);
    const int n = static_cast<int>(rg.size());
    RVec grads(n);
    for (int k = 0; k < n; ++k)
      grads[k] = project_wing(s, side, sigma, rg[k], 1e-12).grad.dot(sigma);
    ray.u_vals = recover_potential(rg, grads, PotentialKind::WingU, m);
    ray.u_nodes.resize(n);
    ray.u_slopes.resize(n);
    for (int k = 0; k < n; ++k) {
      ray.u_nodes[k] = std::log(rg[k]);
      ray.u_slopes[k] = rg[k] * grads[k];
    }
  }
  {
    const double lo = std::max(1.02 * s.r_inner(), 0.55 * rml);
    const double hi = std::max(4.0, 8.0 * s.eps);
    const RVec rg = log_grid(lo, hi, 16);
    const int n = static_cast<int>(rg.size());
    RVec grads(n);
    for (int k = 0; k < n; ++k)
      grads[k] = project_neck(s, side, sigma, rg[k], 1e-12).grad.dot(sigma);
    ray.v_vals = recover_potential(rg, grads, PotentialKind::NeckV, m);
    ray.v_nodes.resize(n);
    ray.v_slopes.resize(n);
    for (int k = 0; k < n; ++k) {
      ray.v_nodes[k] = std::log(rg[k]);
      ray.v_slopes[k] = rg[k] * grads[k];
    }
  }
  return ray;
}

namespace {

// Graph Hessian of one potential by centered differences of projected
// gradients around xi = r sigma.
RMat hessian_by_differencing(const GluedSurface& s, GraphTarget target,
                             int side, const RVec& sigma, double r) {
  const int m = s.config.m;
  const RVec xi = r * sigma;
  const double delta = std::max(1e-6, 2e-4 * r);
  RMat H(m, m);
  for (int a = 0; a < m; ++a) {
    RVec xp = xi, xm_ = xi;
    xp[a] += delta;
    xm_[a] -= delta;
    const double rp = xp.norm(), rm = xm_.norm();
    const RVec gp = (target == GraphTarget::WingChart)
                        ? project_wing(s, side, xp / rp, rp, 1e-13).grad
                        : project_neck(s, side, xp / rp, rp, 1e-13).grad;
    const RVec gm = (target == GraphTarget::WingChart)
                        ? project_wing(s, side, xm_ / rm, rm, 1e-13).grad
                        : project_neck(s, side, xm_ / rm, rm, 1e-13).grad;
    H.col(a) = (gp - gm) / (2.0 * delta);
  }
  return 0.5 * (H + H.transpose());
}

struct TransitionEval {
  Frame frame;
  RMat hessian;      // graph Hessian actually in force at the node
  RVec grad;
  double area_factor;  // sqrt(det(I + H^2))
};

TransitionEval eval_transition(const GluedSurface& s, int side,
                               const RVec& sigma, double r, Region reg,
                               const RayPotentials* ray) {
  const int m = s.config.m;
  TransitionEval out;
  if (reg == Region::TransitionOuter || reg == Region::Wing) {
    const WingProjection wp = project_wing(s, side, sigma, r, 1e-12);
    out.frame = wp.frame;
    out.grad = wp.grad;
    out.hessian = hessian_by_differencing(s, GraphTarget::WingChart, side, sigma, r);
  } else if (reg == Region::TransitionInner) {
    const NeckProjection np = project_neck(s, side, sigma, r, 1e-12);
    Frame nf = neck_eval(s.profile, np.x, np.y, s.t);
    out.frame.point = s.cone.from_cone(nf.point);
    out.frame.jacobian.resize(m, m);
    for (int c = 0; c < m; ++c)
      out.frame.jacobian.col(c) = s.cone.rotate_out(nf.jacobian.col(c));
    out.grad = np.grad;
    out.hessian = hessian_by_differencing(s, GraphTarget::ScaledNeck, side, sigma, r);
  } else if (reg == Region::TransitionMix) {
    const RVec gu = project_wing(s, side, sigma, r, 1e-12).grad;
    const RVec gv = project_neck(s, side, sigma, r, 1e-12).grad;
    RayPotentials local;
    const RayPotentials* rp = ray;
    if (!rp) {
      local = build_ray_potentials(s, side, sigma);
      rp = &local;
    }
    const double D = rp->u_at(r) - rp->v_at(r);
    const CutoffEval cut = cutoff_eval(s.cutoff, s.t, r);
    const RMat Hu =
        hessian_by_differencing(s, GraphTarget::WingChart, side, sigma, r);
    const RMat Hv =
        hessian_by_differencing(s, GraphTarget::ScaledNeck, side, sigma, r);
    const RVec gw = cut.value * gu + (1.0 - cut.value) * gv +
                    (D * cut.d1) * sigma;
    const RVec gd = gu - gv;
    RMat Hw = cut.value * Hu + (1.0 - cut.value) * Hv +
              cut.d1 * (sigma * gd.transpose() + gd * sigma.transpose()) +
              (D * cut.d2) * (sigma * sigma.transpose()) +
              (D * cut.d1 / r) *
                  (RMat::Identity(m, m) - sigma * sigma.transpose());
    Hw = 0.5 * (Hw + Hw.transpose());
    const CVec diag = s.cone.plane_basis[side].diagonal();
    const RVec xi = r * sigma;
    CVec zeta(m);
    for (int j = 0; j < m; ++j) zeta[j] = diag[j] * Complex(xi[j], gw[j]);
    out.frame.point = s.cone.from_cone(zeta);
    out.frame.jacobian.resize(m, m);
    for (int c = 0; c < m; ++c) {
      CVec col(m);
      for (int j = 0; j < m; ++j)
        col[j] = diag[j] * Complex(c == j ? 1.0 : 0.0, Hw(j, c));
      out.frame.jacobian.col(c) = s.cone.rotate_out(col);
    }
    out.grad = gw;
    out.hessian = Hw;
  } else {
    throw OutOfDomain("eval_transition: not a transition region");
  }
  const RMat gmat =
      RMat::Identity(m, m) + out.hessian * out.hessian;
  out.area_factor = std::sqrt(gmat.determinant());
  return out;
}

}  // namespace

Frame glued_eval(const GluedSurface& surface, const GluedPoint& point,
                 const RayPotentials* ray) {
  const int m = surface.config.m;
  if (point.region == Region::Neck) {
    if (point.neck_x.size() != m)
      throw ConfigError("glued_eval: neck point needs a sphere coordinate");
    // the scaled neck parametrizes the surface exactly up to r = t^tau
    const double rhat = neck_rhat(surface, point.neck_x, point.neck_y);
    if (surface.t * rhat > surface.r_mix_lo() * (1.0 + 1e-9))
      throw OutOfDomain("glued_eval: neck parameter outside the neck region");
    Frame nf = neck_eval(surface.profile, point.neck_x, point.neck_y, surface.t);
    Frame out;
    out.point = surface.cone.from_cone(nf.point);
    out.jacobian.resize(m, m);
    for (int c = 0; c < m; ++c)
      out.jacobian.col(c) = surface.cone.rotate_out(nf.jacobian.col(c));
    return out;
  }
  if (point.region == Region::Wing && point.wing_param.size() == m)
    return chart_eval(surface.wing_chart[point.side], point.wing_param);
  if (point.sigma.size() != m)
    throw ConfigError("glued_eval: cone parameter needs a direction");
  const Region by_r = classify_radius(surface, point.r);
  const bool ok =
      by_r == point.region ||
      (point.region == Region::Wing && by_r == Region::TransitionOuter) ||
      (point.region == Region::TransitionOuter && by_r == Region::Wing);
  if (!ok)
    throw OutOfDomain(std::string("glued_eval: radius belongs to ") +
                      region_name(by_r) + ", parameter tagged " +
                      region_name(point.region));
  return eval_transition(surface, point.side, point.sigma, point.r,
                         point.region, ray)
      .frame;
}

double rho_eval(const RadiusField& field, const GluedPoint& point,
                const GluedSurface& surface) {
  switch (point.region) {
    case Region::TransitionOuter:
    case Region::TransitionMix:
    case Region::TransitionInner:
      return point.r;
    case Region::Neck:
      return field.t * neck_rhat(surface, point.neck_x, point.neck_y);
    case Region::Wing: {
      if (point.wing_param.size() == surface.config.m) {
        const CVec z =
            chart_eval(surface.wing_chart[point.side], point.wing_param).point;
        return std::min(1.0, graph_radius_of_point(surface, point.side, z));
      }
      return std::min(1.0, point.r);
    }
  }
  return 1.0;
}

void MeshResolution::validate(int m) const {
  if (radial_per_dyadic < 8)
    throw ConfigError("MeshResolution: need >= 8 radial nodes per dyadic annulus");
  if (m == 3 && (sphere_polar < 4 || sphere_azimuth < 8))
    throw ConfigError("MeshResolution: sphere rule must be exact to degree 7");
  if (neck_rows < 9) throw ConfigError("MeshResolution: need >= 9 neck rows");
  if (!(wing_out > 1.0)) throw ConfigError("MeshResolution: wing_out too small");
}

namespace {

// composite Simpson weights on a uniform grid with odd node count
RVec simpson_weights(int n, double h) {
  RVec w = RVec::Zero(n);
  for (int k = 0; k + 2 < n; k += 2) {
    w[k] += h / 3.0;
    w[k + 1] += 4.0 * h / 3.0;
    w[k + 2] += h / 3.0;
  }
  return w;
}

int odd_count(int n) { return (n % 2 == 0) ? n + 1 : n; }

struct BlockGrid {
  // structured block: sphere index (ip, ia) x longitudinal index k
  int np, na, nk;
  std::vector<MeshNode> nodes;  // size np*na*nk
  int idx(int ip, int ia, int k) const { return (ip * na + ia) * nk + k; }
};

// First-derivative weights at offset 0 for unit-spaced integer offsets
// (derivative of the Lagrange interpolant).
RVec fd_weights(const std::vector<int>& offsets) {
  const int n = static_cast<int>(offsets.size());
  RVec w(n);
  for (int i = 0; i < n; ++i) {
    // l_i'(0) = sum_{k != i} 1/(x_i - x_k) * prod_{j != i,k} (0 - x_j)/(x_i - x_j)
    double acc = 0.0;
    for (int k = 0; k < n; ++k) {
      if (k == i) continue;
      double prod = 1.0 / (offsets[i] - offsets[k]);
      for (int j = 0; j < n; ++j) {
        if (j == i || j == k) continue;
        prod *= static_cast<double>(0 - offsets[j]) / (offsets[i] - offsets[j]);
      }
      acc += prod;
    }
    w[i] = acc;
  }
  return w;
}

// |dTheta|_g by logical differencing of node positions and Theta values.
// Sliding 5-point stencils in index space (down to shorter windows at fences);
// Theta and the position use the same operator, so the induced
// reparametrization cancels in the metric solve.
void finish_block(BlockGrid& b) {
  // Theta vanishes identically on the wing-exact side of the mixing edge;
  // longitudinal differences there must not reach into the mixing annulus.
  auto exact_zero = [](Region r) {
    return r == Region::Wing || r == Region::TransitionOuter;
  };
  auto usable = [&](int ip, int ia, int k, int dim, int off) {
    if (dim == 0) return ip + off >= 0 && ip + off < b.np;
    if (dim == 1) return b.na > std::abs(off);
    if (k + off < 0 || k + off >= b.nk) return false;
    return exact_zero(b.nodes[b.idx(ip, ia, k + off)].region) ==
           exact_zero(b.nodes[b.idx(ip, ia, k)].region);
  };
  auto sample = [&](int ip, int ia, int k, int dim, int off) {
    int i = ip, a = ia, kk = k;
    if (dim == 0) i += off;
    if (dim == 1) a = ((ia + off) % b.na + b.na) % b.na;
    if (dim == 2) kk += off;
    return b.idx(i, a, kk);
  };
  auto dvec = [&](int ip, int ia, int k, int dim, double& dth, CVec& T) {
    // widest contiguous usable window around 0, up to 5 nodes
    int lo = 0, hi = 0;
    while (hi - lo < 4 && (usable(ip, ia, k, dim, lo - 1) ||
                           usable(ip, ia, k, dim, hi + 1))) {
      // prefer to stay centered
      if (usable(ip, ia, k, dim, lo - 1) &&
          (0 - lo <= hi - 0 || !usable(ip, ia, k, dim, hi + 1)))
        --lo;
      else if (usable(ip, ia, k, dim, hi + 1))
        ++hi;
      else
        break;
    }
    // fully one-sided wide stencils oscillate on coarse grids; cap them
    if (lo == 0 && hi > 2) hi = 2;
    if (hi == 0 && lo < -2) lo = -2;
    const int n = hi - lo + 1;
    if (n < 2) {
      dth = 0.0;
      T = CVec::Zero(b.nodes[0].position.size());
      return;
    }
    std::vector<int> offs;
    for (int off = lo; off <= hi; ++off) offs.push_back(off);
    const RVec w = fd_weights(offs);
    dth = 0.0;
    T = CVec::Zero(b.nodes[0].position.size());
    for (int i = 0; i < n; ++i) {
      const MeshNode& node = b.nodes[sample(ip, ia, k, dim, offs[i])];
      dth += w[i] * node.theta;
      T += w[i] * node.position;
    }
  };
  for (int ip = 0; ip < b.np; ++ip)
    for (int ia = 0; ia < b.na; ++ia)
      for (int k = 0; k < b.nk; ++k) {
        RMat G(3, 3);
        RVec dth(3);
        std::array<CVec, 3> T;
        for (int d = 0; d < 3; ++d) dvec(ip, ia, k, d, dth[d], T[d]);
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 3; ++j) G(i, j) = real_inner(T[i], T[j]);
        MeshNode& node = b.nodes[b.idx(ip, ia, k)];
        Eigen::LDLT<RMat> ldlt(G);
        if (ldlt.info() == Eigen::Success && G.determinant() > 1e-30) {
          const RVec sol = ldlt.solve(dth);
          node.dtheta_norm = std::sqrt(std::max(0.0, dth.dot(sol)));
        } else {
          node.dtheta_norm = 0.0;
        }
      }
}

double theta_of_frame(const Frame& f, const KahlerBackground& bg) {
  return lagrangian_angles(f, bg).residual;
}

}  // namespace

SampleMesh sample_mesh(const GluedSurface& surface, const MeshResolution& res) {
  const int m = surface.config.m;
  if (m != 3)
    throw ConfigError("sample_mesh: structured sampling supports m = 3 "
                      "(higher m uses tensor Gauss-Legendre polar rules; "
                      "cost grows as n^{m-2} sphere nodes)");
  res.validate(m);
  const auto bg = KahlerBackground::standard(m);
  SampleMesh mesh;
  mesh.t = surface.t;
  mesh.m = m;
  const SphereRule sph = sphere_product_rule(m, res.sphere_polar, res.sphere_azimuth);
  const int np = res.sphere_polar, na = res.sphere_azimuth;
  const long fail0 = surface.projection_failures;

  std::vector<BlockGrid> blocks;

  // transition blocks, one per side
  const double rin = surface.r_inner();
  for (int side = 0; side < 2; ++side) {
    BlockGrid b;
    b.np = np;
    b.na = na;
    b.nk = odd_count(std::max<int>(
        9, static_cast<int>(std::ceil(res.radial_per_dyadic *
                                      std::log2(surface.eps / rin))) + 1));
    b.nodes.resize(static_cast<std::size_t>(b.np) * b.na * b.nk);
    const double lam0 = std::log(rin), lam1 = std::log(surface.eps);
    const double dlam = (lam1 - lam0) / (b.nk - 1);
    const RVec wk = simpson_weights(b.nk, dlam);
    for (int ip = 0; ip < np; ++ip)
      for (int ia = 0; ia < na; ++ia) {
        const int srow = ip * na + ia;
        const RVec sigma = sph.points.row(srow).transpose();
        const RayPotentials ray = build_ray_potentials(surface, side, sigma);
        for (int k = 0; k < b.nk; ++k) {
          const double r = std::exp(lam0 + k * dlam);
          Region reg = classify_radius(surface, r);
          if (reg == Region::Wing) reg = Region::TransitionOuter;
          if (reg == Region::Neck) reg = Region::TransitionInner;
          const TransitionEval ev =
              eval_transition(surface, side, sigma, r, reg, &ray);
          MeshNode node;
          node.region = reg;
          node.side = side;
          node.sigma = sigma;
          node.r = r;
          node.neck_y = 0.0;
          node.position = ev.frame.point;
          node.weight = sph.weights[srow] * wk[k] * std::pow(r, m) * ev.area_factor;
          node.rho = r;
          node.f = bg.f(ev.frame.point);
          const AngleReport rep = lagrangian_angles(ev.frame, bg);
          node.theta_f = rep.theta_f;
          node.theta = rep.residual;
          node.dtheta_norm = 0.0;
          b.nodes[b.idx(ip, ia, k)] = node;
          if (reg == Region::TransitionMix) {
            const double dev = r * (ev.hessian * ev.hessian).norm();
            mesh.lemma_metric_sup = std::max(mesh.lemma_metric_sup, dev);
          }
        }
      }
    finish_block(b);
    blocks.push_back(std::move(b));
  }

  // wing blocks: polar grids in flat chart coordinates around the center
  for (int side = 0; side < 2; ++side) {
    BlockGrid b;
    b.np = np;
    b.na = na;
    b.nk = odd_count(std::max<int>(
        9, static_cast<int>(std::ceil(res.radial_per_dyadic *
                                      std::log2(res.wing_out / surface.eps))) + 1));
    b.nodes.resize(static_cast<std::size_t>(b.np) * b.na * b.nk);
    for (int ip = 0; ip < np; ++ip)
      for (int ia = 0; ia < na; ++ia) {
        const int srow = ip * na + ia;
        const RVec omega = sph.points.row(srow).transpose();
        // chart radius at which the cone radius equals eps
        auto graph_r = [&](double sr) {
          const RVec x = surface.wing_center[side] + sr * omega;
          const CVec z = chart_eval(surface.wing_chart[side], x).point;
          return graph_radius_of_point(surface, side, z);
        };
        double lo = 0.4 * surface.eps, hi = 2.5 * surface.eps;
        int guard = 0;
        while (graph_r(lo) > surface.eps && ++guard < 30) lo *= 0.7;
        guard = 0;
        while (graph_r(hi) < surface.eps && ++guard < 30) hi *= 1.3;
        for (int bis = 0; bis < 60; ++bis) {
          const double mid = 0.5 * (lo + hi);
          (graph_r(mid) < surface.eps ? lo : hi) = mid;
        }
        const double s_in = 0.5 * (lo + hi);
        const double lam0 = std::log(s_in), lam1 = std::log(res.wing_out);
        const double dlam = (lam1 - lam0) / (b.nk - 1);
        const RVec wk = simpson_weights(b.nk, dlam);
        for (int k = 0; k < b.nk; ++k) {
          const double sr = std::exp(lam0 + k * dlam);
          const RVec x = surface.wing_center[side] + sr * omega;
          const Frame f = chart_eval(surface.wing_chart[side], x);
          MeshNode node;
          node.region = Region::Wing;
          node.side = side;
          node.sigma = omega;
          node.r = sr;
          node.neck_y = 0.0;
          node.position = f.point;
          node.weight = sph.weights[srow] * wk[k] * std::pow(sr, m);
          node.rho = std::min(1.0, graph_radius_of_point(surface, side, f.point));
          node.f = bg.f(f.point);
          const AngleReport rep = lagrangian_angles(f, bg);
          node.theta_f = rep.theta_f;
          node.theta = rep.residual;
          node.dtheta_norm = 0.0;
          b.nodes[b.idx(ip, ia, k)] = node;
        }
      }
    finish_block(b);
    blocks.push_back(std::move(b));
  }

  // neck block
  {
    BlockGrid b;
    b.np = np;
    b.na = na;
    b.nk = odd_count(res.neck_rows);
    b.nodes.resize(static_cast<std::size_t>(b.np) * b.na * b.nk);
    for (int ip = 0; ip < np; ++ip)
      for (int ia = 0; ia < na; ++ia) {
        const int srow = ip * na + ia;
        const RVec x = sph.points.row(srow).transpose();
        auto rhat_at = [&](double y) { return neck_rhat(surface, x, y); };
        auto find_edge = [&](double sign) {
          double lo = 0.0, hi = sign * 2.0 * surface.Rhat;
          int guard = 0;
          while (rhat_at(hi) < surface.Rhat && ++guard < 40) hi *= 1.4;
          for (int bis = 0; bis < 60; ++bis) {
            const double mid = 0.5 * (lo + hi);
            (rhat_at(mid) < surface.Rhat ? lo : hi) = mid;
          }
          return 0.5 * (lo + hi);
        };
        const double y_hi = find_edge(+1.0);
        const double y_lo = find_edge(-1.0);
        const double dy = (y_hi - y_lo) / (b.nk - 1);
        const RVec wk = simpson_weights(b.nk, dy);
        const RMat basis = sphere_tangent_basis(x);
        for (int k = 0; k < b.nk; ++k) {
          const double y = y_lo + k * dy;
          Frame nf = neck_eval(surface.profile, x, y, surface.t, &basis);
          Frame f;
          f.point = surface.cone.from_cone(nf.point);
          f.jacobian.resize(m, m);
          for (int c = 0; c < m; ++c)
            f.jacobian.col(c) = surface.cone.rotate_out(nf.jacobian.col(c));
          const RMat G = (f.jacobian.adjoint() * f.jacobian).real();
          MeshNode node;
          node.region = Region::Neck;
          node.side = -1;
          node.sigma = RVec();
          node.r = 0.0;
          node.neck_x = x;
          node.neck_y = y;
          node.position = f.point;
          node.weight = sph.weights[srow] * wk[k] * std::sqrt(G.determinant());
          node.rho = surface.t * rhat_at(y);
          node.f = bg.f(f.point);
          const AngleReport rep = lagrangian_angles(f, bg);
          node.theta_f = rep.theta_f;
          node.theta = rep.residual;
          node.dtheta_norm = 0.0;
          b.nodes[b.idx(ip, ia, k)] = node;
        }
      }
    finish_block(b);
    blocks.push_back(std::move(b));
  }

  for (auto& b : blocks)
    for (auto& node : b.nodes) mesh.nodes.push_back(std::move(node));
  mesh.projection_failures = surface.projection_failures - fail0;
  return mesh;
}

void export_mesh_csv(const SampleMesh& mesh, const std::string& path) {
  std::vector<std::string> header = {"region", "side",   "param1", "param2",
                                     "param3", "param4", "rho",    "theta",
                                     "weight"};
  for (int j = 0; j < mesh.m; ++j) {
    header.push_back("re_z" + std::to_string(j + 1));
    header.push_back("im_z" + std::to_string(j + 1));
  }
  CsvWriter csv(header);
  for (const auto& n : mesh.nodes) {
    std::vector<std::string> row;
    row.push_back(region_name(n.region));
    row.push_back(std::to_string(n.side));
    if (n.region == Region::Neck) {
      row.push_back(format_double(n.neck_x[0]));
      row.push_back(format_double(n.neck_x[1]));
      row.push_back(format_double(n.neck_x[2]));
      row.push_back(format_double(n.neck_y));
    } else {
      row.push_back(format_double(n.sigma[0]));
      row.push_back(format_double(n.sigma[1]));
      row.push_back(format_double(n.sigma[2]));
      row.push_back(format_double(n.r));
    }
    row.push_back(format_double(n.rho));
    row.push_back(format_double(n.theta));
    row.push_back(format_double(n.weight));
    for (int j = 0; j < mesh.m; ++j) {
      row.push_back(format_double(n.position[j].real()));
      row.push_back(format_double(n.position[j].imag()));
    }
    csv.add_row(row);
  }
  csv.write(path);
}

void export_mesh_obj(const SampleMesh& mesh, const std::array<int, 3>& coords,
                     const std::string& path) {
  for (int c : coords)
    if (c < 0 || c >= 2 * mesh.m)
      throw ConfigError("export_mesh_obj: projection coordinate out of range");
  std::string text = "# point cloud projection\n";
  for (const auto& n : mesh.nodes) {
    double v[3];
    for (int i = 0; i < 3; ++i) {
      const int c = coords[i];
      v[i] = (c % 2 == 0) ? n.position[c / 2].real() : n.position[c / 2].imag();
    }
    text += "v " + format_double(v[0]) + " " + format_double(v[1]) + " " +
            format_double(v[2]) + "\n";
  }
  atomic_write_text(path, text);
}

}  // namespace tsol
