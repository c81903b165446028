#include "tsol/reduced.hpp"

#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <random>

#include "tsol/quadrature.hpp"

namespace tsol {

namespace {

constexpr double kAxisCellFraction = 0.125;  // half-cell integral of a linear J

// centered logical derivative of a per-node scalar field; second-order
// one-sided at the grid edges
double dfield(const ReducedMesh& mesh, const RVec& field, int i, int k, int dim,
              bool wrap = false) {
  const int n_dim = (dim == 0) ? mesh.ni : mesh.nk;
  const int pos = (dim == 0) ? i : k;
  auto at = [&](int p) {
    return (dim == 0) ? field[mesh.idx(p, k)] : field[mesh.idx(i, p)];
  };
  auto d = [&](double a, double b) { return wrap ? wrap_angle(b - a) : b - a; };
  if (pos > 0 && pos + 1 < n_dim) return 0.5 * d(at(pos - 1), at(pos + 1));
  if (n_dim < 3) return 0.0;
  if (pos == 0)
    return 0.5 * (4.0 * d(at(0), at(1)) - d(at(0), at(2)));
  return 0.5 * (4.0 * d(at(n_dim - 2), at(n_dim - 1)) -
                d(at(n_dim - 3), at(n_dim - 1)));
}

// Longitudinal difference of per-node vectors: centered in the interior,
// second-order one-sided at seam rows (the parametrization corners between
// blocks) and at the Dirichlet edges.
template <typename Get>
auto longitudinal_diff(const ReducedMesh& mesh, int i, int k, const Get& get)
    -> decltype(get(0, 0)) {
  const bool seam = mesh.nodes[mesh.idx(i, k)].seam;
  if (!seam && k > 0 && k + 1 < mesh.nk)
    return 0.5 * (get(i, k + 1) - get(i, k - 1));
  if (k + 2 < mesh.nk)
    return 0.5 * (-3.0 * get(i, k) + 4.0 * get(i, k + 1) - get(i, k + 2));
  return 0.5 * (3.0 * get(i, k) - 4.0 * get(i, k - 1) + get(i, k - 2));
}

// Angle of the slice frames assembled the same way perturbed_theta builds
// them: the branch of theta_f in the orientation of the global (i, k)
// parametrization. The exact region evaluators carry region-local frame
// orientations; the operator coefficients must use this one.
RVec raw_theta_f_field(const ReducedMesh& mesh) {
  const int m = mesh.m;
  RVec out = RVec::Zero(mesh.size());
  for (int i = 1; i + 1 < mesh.ni; ++i)
    for (int k = 0; k < mesh.nk; ++k) {
      const int n = mesh.idx(i, k);
      const CVec& Ti = mesh.nodes[n].tan_i;
      const CVec& Tk = mesh.nodes[n].tan_k;
      const Complex det2 = Ti[0] * Tk[m - 1] - Ti[m - 1] * Tk[0];
      double theta_L = std::arg(det2);
      if (mesh.has_orbit && m > 2)
        theta_L += (m - 2) * std::arg(mesh.nodes[n].position[0]);
      out[n] = wrap_angle(theta_L + mesh.nodes[n].position[m - 1].imag());
    }
  for (int k = 0; k < mesh.nk; ++k) {
    out[mesh.idx(0, k)] = out[mesh.idx(1, k)];
    out[mesh.idx(mesh.ni - 1, k)] = out[mesh.idx(mesh.ni - 2, k)];
  }
  return out;
}

// Re-branch the stored theta_f (and the sign of the exact residual) into the
// orientation of the differenced slice frames.
void align_angle_orientation(ReducedMesh& mesh) {
  const RVec raw = raw_theta_f_field(mesh);
  for (int n = 0; n < mesh.size(); ++n) {
    ReducedNode& node = mesh.nodes[n];
    const double gap = wrap_angle(node.theta_f - raw[n]);
    if (std::abs(gap) > 0.5 * kPi) {
      node.theta_f = wrap_angle(node.theta_f + kPi);
      node.theta_exact = -node.theta_exact;
    }
  }
}

void finish_geometry(ReducedMesh& mesh) {
  const int m = mesh.m;
  const double orbit_vol = (m > 2) ? sphere_volume(m - 1) : 2.0;
  for (int i = 0; i < mesh.ni; ++i)
    for (int k = 0; k < mesh.nk; ++k) {
      ReducedNode& node = mesh.nodes[mesh.idx(i, k)];
      const int i0 = std::max(0, i - 1), i1 = std::min(mesh.ni - 1, i + 1);
      node.tan_i = (mesh.nodes[mesh.idx(i1, k)].position -
                    mesh.nodes[mesh.idx(i0, k)].position) /
                   (i1 - i0);
      auto pos = [&](int kk) { return mesh.nodes[mesh.idx(i, kk)].position; };
      if (!node.seam && k > 0 && k + 1 < mesh.nk) {
        node.tan_k = 0.5 * (pos(k + 1) - pos(k - 1));
      } else if (k + 2 < mesh.nk &&
                 (node.seam ? true : k == 0)) {
        node.tan_k = 0.5 * (-3.0 * pos(k) + 4.0 * pos(k + 1) - pos(k + 2));
      } else {
        node.tan_k = 0.5 * (3.0 * pos(k) - 4.0 * pos(k - 1) + pos(k - 2));
      }
      node.g2.resize(2, 2);
      node.g2(0, 0) = real_inner(node.tan_i, node.tan_i);
      node.g2(0, 1) = node.g2(1, 0) = real_inner(node.tan_i, node.tan_k);
      node.g2(1, 1) = real_inner(node.tan_k, node.tan_k);
      if (!mesh.synthetic) {
        node.orbit_radius = std::abs(node.position[0]);
        node.J = orbit_vol * std::pow(node.orbit_radius, m - 2);
        node.axis = (i == 0 || i == mesh.ni - 1);
      }
    }
  for (int i = 0; i < mesh.ni; ++i)
    for (int k = 0; k < mesh.nk; ++k) {
      ReducedNode& node = mesh.nodes[mesh.idx(i, k)];
      double J_eff = node.J;
      if (node.axis) {
        const int in = (i == 0) ? 1 : mesh.ni - 2;
        J_eff = mesh.nodes[mesh.idx(in, k)].J * kAxisCellFraction;
      }
      double cell = 1.0;
      if (!node.axis && (i == 0 || i == mesh.ni - 1)) cell *= 0.5;
      if (k == 0 || k == mesh.nk - 1) cell *= 0.5;
      node.measure = J_eff * std::sqrt(std::max(node.g2.determinant(), 0.0)) * cell;
    }
}

}  // namespace

ReducedMesh build_reduced_mesh(const GluedSurface& surface,
                               const ReducedResolution& res) {
  const int m = surface.config.m;
  const RigidMotionSpec& motion =
      surface.config.motions[surface.intersection_index];
  for (int j = 1; j < m - 1; ++j)
    if (std::abs(motion.phi[j] - motion.phi[0]) > 1e-12)
      throw SymmetryRequired(
          "build_reduced_mesh: the slice reduction needs equal angles "
          "phi_1 = ... = phi_{m-1}");
  if (res.latitudes < 9 ||
      (res.neck_rows > 0 && res.neck_rows < 5) ||
      (res.wing_rows > 0 && res.wing_rows < 5))
    throw ConfigError("build_reduced_mesh: resolution too coarse");
  const auto bg = KahlerBackground::standard(m);

  const int ni = res.latitudes;
  const double r_seam = std::sqrt(surface.r_inner() * surface.r_mix_lo());
  const int nT = std::max(
      7, static_cast<int>(std::ceil(res.radial_per_dyadic *
                                    std::log2(surface.eps / r_seam))) + 1);
  const double lam_T = std::log(surface.eps / r_seam) / (nT - 1);
  // row counts matched so the longitudinal spacing stays continuous at the
  // seams; explicit overrides are honored when positive
  int nW = res.wing_rows;
  if (nW <= 0) {
    const double span = std::log(std::min(res.R_prime, res.R_out) /
                                 (1.05 * surface.eps));
    nW = std::max(5, static_cast<int>(std::lround(span / lam_T)) + 1);
  }
  int nN = res.neck_rows;
  if (nN <= 0) {
    // y-extent probed on the equatorial column
    RVec xeq = RVec::Zero(m);
    xeq[0] = 1.0;
    auto rhat_eq = [&](double y) {
      CVec nvec(m);
      const int side = (y < 0.0) ? 0 : 1;
      for (int j = 0; j < m; ++j) nvec[j] = xeq[j] * surface.profile.z(j, y);
      return (surface.cone.plane_basis[side].adjoint() * nvec).real().norm();
    };
    auto eq_edge = [&](double sign) {
      double lo = 0.0, hi = sign * 2.0 * surface.Rhat;
      int guard = 0;
      while (rhat_eq(hi) < r_seam / surface.t && ++guard < 50) hi *= 1.4;
      for (int b = 0; b < 60; ++b) {
        const double mid = 0.5 * (lo + hi);
        (rhat_eq(mid) < r_seam / surface.t ? lo : hi) = mid;
      }
      return 0.5 * (lo + hi);
    };
    const double extent = eq_edge(+1.0) - eq_edge(-1.0);
    const double dy = r_seam * lam_T / surface.t;
    nN = std::max(5, static_cast<int>(std::lround(extent / dy)) + 1);
  }
  const int nk = 2 * nW + 2 * nT + nN - 4;

  ReducedMesh mesh;
  mesh.m = m;
  mesh.ni = ni;
  mesh.nk = nk;
  mesh.t = surface.t;
  mesh.tau = surface.cutoff.tau;
  mesh.eps = surface.eps;
  mesh.Rhat = surface.Rhat;
  mesh.nodes.resize(static_cast<std::size_t>(ni) * nk);
  std::vector<CMat> trans_jac(mesh.nodes.size());

  for (int i = 0; i < ni; ++i) {
    const double theta = kPi * i / (ni - 1);
    RVec x = RVec::Zero(m);
    x[0] = std::sin(theta);
    x[m - 1] = std::cos(theta);
    // neck rows between the two seam latitudes
    auto rhat_of = [&](double y) {
      CVec n(m);
      const int side = (y < 0.0) ? 0 : 1;
      for (int j = 0; j < m; ++j) n[j] = x[j] * surface.profile.z(j, y);
      return (surface.cone.plane_basis[side].adjoint() * n).real().norm();
    };
    auto edge = [&](double sign) {
      double lo = 0.0, hi = sign * 2.0 * surface.Rhat;
      int guard = 0;
      while (rhat_of(hi) < r_seam / surface.t && ++guard < 50) hi *= 1.4;
      for (int b = 0; b < 70; ++b) {
        const double mid = 0.5 * (lo + hi);
        (rhat_of(mid) < r_seam / surface.t ? lo : hi) = mid;
      }
      return 0.5 * (lo + hi);
    };
    const double y0 = edge(-1.0), y1 = edge(+1.0);

    struct ColumnEntry {
      Region region;
      int side;
      RVec sigma;   // slice direction (transition) or wing direction
      double r;     // radius parameter
      double y;     // neck coordinate
    };
    std::vector<ColumnEntry> entries;
    entries.reserve(nk);

    // per-side transition directions from the seam points
    RVec sig[2];
    for (int side = 0; side < 2; ++side) {
      const double y = (side == 0) ? y0 : y1;
      CVec n(m);
      for (int j = 0; j < m; ++j) n[j] = x[j] * surface.profile.z(j, y);
      RVec re = (surface.cone.plane_basis[side].adjoint() * n).real();
      sig[side] = re / re.norm();
    }
    // wing directions and inner radii from the projected seam at r = eps
    RVec omega[2];
    double s_in[2], s_out[2];
    for (int side = 0; side < 2; ++side) {
      const GraphPoint gp = project_to_graph(surface, GraphTarget::WingChart,
                                             side, sig[side], surface.eps);
      const RVec d = gp.surface_param - surface.wing_center[side];
      s_in[side] = d.norm();
      omega[side] = d / s_in[side];
      // truncation boundary: the box corner rounded by a smooth 4-norm, so
      // the exit radius is C^2 in the latitude
      const double a4 = std::pow(std::max(omega[side][0], 0.0) / res.R_prime, 4);
      const double b4 = std::pow(std::abs(omega[side][m - 1]) / res.R_out, 4);
      s_out[side] = std::pow(a4 + b4, -0.25);
      if (!(s_out[side] > 1.2 * s_in[side]))
        throw ConfigError("build_reduced_mesh: truncation radii inside the collar");
    }

    auto wing_rows = [&](int side, bool outward) {
      std::vector<ColumnEntry> rows;
      for (int k = 0; k < nW; ++k) {
        const double frac = static_cast<double>(k) / (nW - 1);
        const double s = s_in[side] * std::pow(s_out[side] / s_in[side],
                                               outward ? frac : 1.0 - frac);
        ColumnEntry e;
        e.region = Region::Wing;
        e.side = side;
        e.sigma = omega[side];
        e.r = s;
        e.y = 0.0;
        rows.push_back(e);
      }
      return rows;
    };
    auto trans_rows = [&](int side, bool inward) {
      std::vector<ColumnEntry> rows;
      for (int k = 0; k < nT; ++k) {
        const double frac = static_cast<double>(k) / (nT - 1);
        const double r = surface.eps * std::pow(r_seam / surface.eps,
                                                inward ? frac : 1.0 - frac);
        ColumnEntry e;
        e.region = classify_radius(surface, r);
        if (e.region == Region::Wing) e.region = Region::TransitionOuter;
        if (e.region == Region::Neck) e.region = Region::TransitionInner;
        e.side = side;
        e.sigma = sig[side];
        e.r = r;
        e.y = 0.0;
        rows.push_back(e);
      }
      return rows;
    };

    {
      auto w0 = wing_rows(0, false);   // from the outer truncation inward
      entries.insert(entries.end(), w0.begin(), w0.end());
      auto t0 = trans_rows(0, true);   // eps down to the seam
      entries.insert(entries.end(), t0.begin() + 1, t0.end());
      for (int k = 1; k < nN - 1; ++k) {
        ColumnEntry e;
        e.region = Region::Neck;
        e.side = -1;
        e.sigma = x;
        e.r = 0.0;
        e.y = y0 + (y1 - y0) * k / (nN - 1);
        entries.push_back(e);
      }
      auto t1 = trans_rows(1, false);  // seam back out to eps
      entries.insert(entries.end(), t1.begin(), t1.end());
      auto w1 = wing_rows(1, true);
      entries.insert(entries.end(), w1.begin() + 1, w1.end());
    }
    if (static_cast<int>(entries.size()) != nk)
      throw ComputationError("build_reduced_mesh: row bookkeeping mismatch");

    const RayPotentials ray0 = build_ray_potentials(surface, 0, sig[0]);
    const RayPotentials ray1 = build_ray_potentials(surface, 1, sig[1]);
    for (int k = 0; k < nk; ++k) {
      const ColumnEntry& e = entries[k];
      ReducedNode node;
      node.region = e.region;
      node.side = e.side;
      node.sigma = e.sigma;
      node.rpar = (e.region == Region::Neck) ? e.y : e.r;
      Frame f;
      if (e.region == Region::Wing) {
        const RVec xp = surface.wing_center[e.side] + e.r * e.sigma;
        f = chart_eval(surface.wing_chart[e.side], xp);
        node.rho = std::min(1.0, (surface.cone.plane_basis[e.side].adjoint() *
                                  surface.cone.to_cone(f.point))
                                     .real()
                                     .norm());
      } else if (e.region == Region::Neck) {
        GluedPoint p{Region::Neck, -1, RVec(), 0.0, e.sigma, e.y, RVec()};
        f = glued_eval(surface, p);
        node.rho = surface.t * rhat_of(e.y);
      } else {
        GluedPoint p{e.region, e.side, e.sigma, e.r, RVec(), 0.0, RVec()};
        f = glued_eval(surface, p, e.side == 0 ? &ray0 : &ray1);
        node.rho = e.r;
        trans_jac[mesh.idx(i, k)] = f.jacobian;
      }
      const AngleReport rep = lagrangian_angles(f, bg);
      node.position = f.point;
      node.f = bg.f(f.point);
      node.theta_f = rep.theta_f;
      node.theta_exact = rep.residual;
      node.boundary = (k == 0 || k == nk - 1);
      node.seam = (k == nW - 1) || (k == nW + nT - 2) ||
                  (k == nW + nT + nN - 3) || (k == nW + 2 * nT + nN - 4);
      mesh.nodes[mesh.idx(i, k)] = node;
    }
  }
  finish_geometry(mesh);
  // wing tangents through the exact chart differential: the arclength chart
  // is an isometry, so the slice metric matches the parameter metric there
  for (int i = 0; i < ni; ++i)
    for (int k = 0; k < nk; ++k) {
      ReducedNode& node = mesh.nodes[mesh.idx(i, k)];
      if (node.region != Region::Wing) continue;
      bool inner_ok = true;
      auto param_of = [&](int ii, int kk, bool& ok) {
        const ReducedNode& nd = mesh.nodes[mesh.idx(ii, kk)];
        if (nd.region != Region::Wing || nd.side != node.side) ok = false;
        return (surface.wing_center[node.side] + nd.rpar * nd.sigma).eval();
      };
      const int i0 = std::max(0, i - 1), i1 = std::min(ni - 1, i + 1);
      const int k0 = std::max(0, k - 1), k1 = std::min(nk - 1, k + 1);
      RVec dpi = (param_of(i1, k, inner_ok) - param_of(i0, k, inner_ok)) /
                 (i1 - i0);
      RVec dpk = (param_of(i, k1, inner_ok) - param_of(i, k0, inner_ok)) /
                 (k1 - k0);
      if (!inner_ok) continue;
      const RVec xp = surface.wing_center[node.side] + node.rpar * node.sigma;
      const CMat jac = chart_eval(surface.wing_chart[node.side], xp).jacobian;
      node.tan_i = jac * dpi.cast<Complex>();
      node.tan_k = jac * dpk.cast<Complex>();
      node.g2(0, 0) = real_inner(node.tan_i, node.tan_i);
      node.g2(0, 1) = node.g2(1, 0) = real_inner(node.tan_i, node.tan_k);
      node.g2(1, 1) = real_inner(node.tan_k, node.tan_k);
    }
  // analytic tangents for the neck rows (profile derivatives plus the
  // per-column drift of the y-grid)
  for (int i = 0; i < ni; ++i)
    for (int k = 0; k < nk; ++k) {
      ReducedNode& node = mesh.nodes[mesh.idx(i, k)];
      if (node.region != Region::Neck) continue;
      const double theta = kPi * i / (ni - 1);
      const double y = node.rpar;
      CVec dz(m), zv(m);
      for (int j = 0; j < m; ++j) {
        zv[j] = surface.profile.z(j, y);
        dz[j] = surface.profile.dz(j, y);
      }
      RVec x = RVec::Zero(m), dx = RVec::Zero(m);
      x[0] = std::sin(theta);
      x[m - 1] = std::cos(theta);
      dx[0] = std::cos(theta);
      dx[m - 1] = -std::sin(theta);
      const CVec d_theta = dx.cast<Complex>().cwiseProduct(zv);
      const CVec d_y = x.cast<Complex>().cwiseProduct(dz);
      const double dtheta_di = kPi / (ni - 1);
      auto rpar_at = [&](int ii, int kk) {
        return mesh.nodes[mesh.idx(ii, kk)].rpar;
      };
      const int i0 = std::max(0, i - 1), i1 = std::min(ni - 1, i + 1);
      const double dy_di = (rpar_at(i1, k) - rpar_at(i0, k)) / (i1 - i0);
      auto is_neck = [&](int kk) {
        return kk >= 0 && kk < nk &&
               mesh.nodes[mesh.idx(i, kk)].region == Region::Neck;
      };
      double dy_dk;
      if (is_neck(k - 1) && is_neck(k + 1)) {
        dy_dk = 0.5 * (rpar_at(i, k + 1) - rpar_at(i, k - 1));
      } else if (is_neck(k + 1) && is_neck(k + 2)) {
        dy_dk = 0.5 * (-3.0 * rpar_at(i, k) + 4.0 * rpar_at(i, k + 1) -
                       rpar_at(i, k + 2));
      } else if (is_neck(k - 1) && is_neck(k - 2)) {
        dy_dk = 0.5 * (3.0 * rpar_at(i, k) - 4.0 * rpar_at(i, k - 1) +
                       rpar_at(i, k - 2));
      } else {
        dy_dk = is_neck(k + 1) ? (rpar_at(i, k + 1) - rpar_at(i, k))
                               : (rpar_at(i, k) - rpar_at(i, k - 1));
      }
      CVec ti = surface.t * (dtheta_di * d_theta + dy_di * d_y);
      CVec tk = surface.t * dy_dk * d_y;
      node.tan_i.resize(m);
      node.tan_k.resize(m);
      for (int j = 0; j < m; ++j) {
        node.tan_i[j] = surface.cone.rotation[j] * ti[j];
        node.tan_k[j] = surface.cone.rotation[j] * tk[j];
      }
      node.g2(0, 0) = real_inner(node.tan_i, node.tan_i);
      node.g2(0, 1) = node.g2(1, 0) = real_inner(node.tan_i, node.tan_k);
      node.g2(1, 1) = real_inner(node.tan_k, node.tan_k);
    }
  // transition tangents through the graph frames: d xi/di = r dsigma/di and
  // d xi/dk = (dr/dk) sigma mapped by the ambient plane-axis derivatives
  auto is_transition = [](Region r) {
    return r == Region::TransitionOuter || r == Region::TransitionMix ||
           r == Region::TransitionInner;
  };
  for (int i = 0; i < ni; ++i)
    for (int k = 0; k < nk; ++k) {
      ReducedNode& node = mesh.nodes[mesh.idx(i, k)];
      if (!is_transition(node.region)) continue;
      const CMat& jac_param = trans_jac[mesh.idx(i, k)];
      if (jac_param.size() == 0) continue;
      // reparametrize the frame to plane-coordinate derivatives: the real
      // plane projection of the columns is the parameter-to-xi differential
      CMat proj(m, m);
      for (int c = 0; c < m; ++c)
        proj.col(c) = surface.cone.plane_basis[node.side].adjoint() *
                      surface.cone.rotation.conjugate().cwiseProduct(
                          jac_param.col(c));
      const CMat jac = jac_param * proj.real().inverse().cast<Complex>();
      const int i0 = std::max(0, i - 1), i1 = std::min(ni - 1, i + 1);
      const RVec dsig = (mesh.nodes[mesh.idx(i1, k)].sigma -
                         mesh.nodes[mesh.idx(i0, k)].sigma) /
                        (i1 - i0);
      auto same_block = [&](int kk) {
        return kk >= 0 && kk < nk &&
               is_transition(mesh.nodes[mesh.idx(i, kk)].region) &&
               mesh.nodes[mesh.idx(i, kk)].side == node.side &&
               !(mesh.nodes[mesh.idx(i, kk)].seam && kk != k);
      };
      double dlogr;
      auto logr = [&](int kk) { return std::log(mesh.nodes[mesh.idx(i, kk)].rpar); };
      if (same_block(k - 1) && same_block(k + 1))
        dlogr = 0.5 * (logr(k + 1) - logr(k - 1));
      else if (same_block(k + 1) && same_block(k + 2))
        dlogr = 0.5 * (-3.0 * logr(k) + 4.0 * logr(k + 1) - logr(k + 2));
      else if (same_block(k - 1) && same_block(k - 2))
        dlogr = 0.5 * (3.0 * logr(k) - 4.0 * logr(k - 1) + logr(k - 2));
      else if (same_block(k + 1))
        dlogr = logr(k + 1) - logr(k);
      else
        dlogr = logr(k) - logr(k - 1);
      const RVec dxi_di = node.rpar * dsig;
      const RVec dxi_dk = (node.rpar * dlogr) * node.sigma;
      node.tan_i = jac * dxi_di.cast<Complex>();
      node.tan_k = jac * dxi_dk.cast<Complex>();
      node.g2(0, 0) = real_inner(node.tan_i, node.tan_i);
      node.g2(0, 1) = node.g2(1, 0) = real_inner(node.tan_i, node.tan_k);
      node.g2(1, 1) = real_inner(node.tan_k, node.tan_k);
    }
  align_angle_orientation(mesh);
  return mesh;
}

ReducedMesh flat_rectangle_mesh(int nx, int ny, double Lx, double Ly,
                                const std::function<double(double, double)>& f_field) {
  ReducedMesh mesh;
  mesh.m = 3;
  mesh.ni = nx;
  mesh.nk = ny;
  mesh.synthetic = true;
  mesh.has_orbit = false;
  mesh.nodes.resize(static_cast<std::size_t>(nx) * ny);
  for (int i = 0; i < nx; ++i)
    for (int k = 0; k < ny; ++k) {
      ReducedNode node;
      const double xv = Lx * i / (nx - 1);
      const double yv = Ly * k / (ny - 1);
      node.position = CVec::Zero(3);
      node.position[0] = Complex(xv, 0.0);
      node.position[2] = Complex(yv, 0.0);
      node.region = Region::Wing;
      node.side = 0;
      node.orbit_radius = 1.0;
      node.J = 1.0;
      node.f = f_field(xv, yv);
      node.theta_f = 0.0;
      node.rho = 1.0;
      node.theta_exact = 0.0;
      node.axis = false;
      node.boundary = (i == 0 || i == nx - 1 || k == 0 || k == ny - 1);
      mesh.nodes[mesh.idx(i, k)] = node;
    }
  finish_geometry(mesh);
  return mesh;
}

ReducedMesh flat_axisymmetric_patch(int nr, int nz, double R, double H) {
  ReducedMesh mesh;
  mesh.m = 3;
  mesh.ni = nr;
  mesh.nk = nz;
  mesh.synthetic = true;
  mesh.nodes.resize(static_cast<std::size_t>(nr) * nz);
  for (int i = 0; i < nr; ++i)
    for (int k = 0; k < nz; ++k) {
      ReducedNode node;
      const double rv = R * i / (nr - 1);
      const double zv = H * k / (nz - 1);
      node.position = CVec::Zero(3);
      node.position[0] = Complex(rv, 0.0);
      node.position[2] = Complex(zv, 0.0);
      node.region = Region::Wing;
      node.side = 0;
      node.orbit_radius = rv;
      node.J = 2.0 * kPi * rv;
      node.f = 0.0;
      node.theta_f = 0.0;
      node.rho = 1.0;
      node.theta_exact = 0.0;
      node.axis = (i == 0);
      node.boundary = (i == nr - 1 || k == 0 || k == nz - 1);
      mesh.nodes[mesh.idx(i, k)] = node;
    }
  finish_geometry(mesh);
  return mesh;
}

DiscreteOperator assemble_L(const ReducedMesh& mesh, const WeightSpec& spec,
                            bool chart_drift) {
  spec.validate_basic();
  const int N = mesh.size();
  const int m = mesh.m;
  // per-node inverse metric, fluxes K^{ab} = W g^{ab}, drift coefficients
  std::vector<RMat> ginv(N), Kmat(N);
  RVec W(N), cosf(N), sinf(N), envelope(N);
  RVec fld_f(N), fld_th(N);
  for (int n = 0; n < N; ++n) {
    fld_f[n] = mesh.nodes[n].f;
    fld_th[n] = chart_drift ? -mesh.nodes[n].position[mesh.m - 1].imag()
                            : mesh.nodes[n].theta_f;
  }
  for (int n = 0; n < N; ++n) {
    const ReducedNode& node = mesh.nodes[n];
    ginv[n] = node.g2.inverse();
    W[n] = node.J * std::sqrt(std::max(node.g2.determinant(), 1e-300));
    if (node.axis) W[n] = 0.0;
    Kmat[n] = W[n] * ginv[n];
    cosf[n] = std::cos(node.theta_f);
    sinf[n] = std::sin(node.theta_f);
    envelope[n] = std::exp(-0.5 * node.f);
  }

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(N) * 10);
  auto add = [&](int row, int i, int k, double val) {
    if (val != 0.0) trip.emplace_back(row, mesh.idx(i, k), val);
  };

  for (int i = 0; i < mesh.ni; ++i)
    for (int k = 0; k < mesh.nk; ++k) {
      const int row = mesh.idx(i, k);
      const ReducedNode& node = mesh.nodes[row];
      if (node.boundary) {
        trip.emplace_back(row, row, 1.0);
        continue;
      }
      const double env = envelope[row];
      // drift vector d^b = -cos/2 (g grad f)^b - sin (g grad theta_f)^b
      RVec gradf(2), gradt(2);
      gradf << dfield(mesh, fld_f, i, k, 0), dfield(mesh, fld_f, i, k, 1);
      gradt << dfield(mesh, fld_th, i, k, 0, !chart_drift),
          dfield(mesh, fld_th, i, k, 1, !chart_drift);
      if (node.axis) {
        gradf[0] = 0.0;
        gradt[0] = 0.0;
      }
      const double drift_sign = chart_drift ? 1.0 : -1.0;
      const RVec drift =
          ginv[row] * (-0.5 * cosf[row] * gradf + drift_sign * sinf[row] * gradt);

      if (node.axis) {
        // symmetry limit: (m-1)-fold latitude second difference plus the
        // one-dimensional conservative operator along the axis column
        const int in = (i == 0) ? 1 : mesh.ni - 2;
        const double gii = ginv[row](0, 0);
        const double c_lat = env * cosf[row] * (m - 1) * gii * 2.0;
        add(row, in, k, c_lat);
        add(row, i, k, -c_lat);
        // axis-column longitudinal operator with the neighbor-row stretch
        auto What = [&](int kk) {
          const int nb = mesh.idx(in, kk);
          return std::pow(mesh.nodes[nb].orbit_radius, m - 2) *
                 std::sqrt(std::max(mesh.nodes[mesh.idx(i, kk)].g2.determinant(),
                                    1e-300));
        };
        auto Kkk = [&](int kk) {
          const RMat gi = mesh.nodes[mesh.idx(i, kk)].g2.inverse();
          return What(kk) * gi(1, 1);
        };
        const double Wc = What(k);
        const double kp = 0.5 * (Kkk(k) + Kkk(k + 1));
        const double km = 0.5 * (Kkk(k) + Kkk(k - 1));
        add(row, i, k + 1, env * cosf[row] * kp / Wc);
        add(row, i, k - 1, env * cosf[row] * km / Wc);
        add(row, i, k, -env * cosf[row] * (kp + km) / Wc);
        // longitudinal drift
        add(row, i, k + 1, env * 0.5 * drift[1]);
        add(row, i, k - 1, env * (-0.5) * drift[1]);
        continue;
      }

      const double invW = 1.0 / std::max(W[row], 1e-300);
      // face-centered geometry: the chord across the face and the average
      // transverse tangent; robust on grids with graded spacing
      auto Kface_i = [&](int ia) {  // face between (ia, k) and (ia+1, k)
        const ReducedNode& a = mesh.nodes[mesh.idx(ia, k)];
        const ReducedNode& b2 = mesh.nodes[mesh.idx(ia + 1, k)];
        const CVec ti = b2.position - a.position;
        const CVec tk = 0.5 * (a.tan_k + b2.tan_k);
        RMat gf(2, 2);
        gf << real_inner(ti, ti), real_inner(ti, tk), real_inner(ti, tk),
            real_inner(tk, tk);
        const double Jf = 0.5 * (a.J + b2.J);
        return (Jf * std::sqrt(std::max(gf.determinant(), 1e-300)) *
                gf.inverse())
            .eval();
      };
      auto Kface_k = [&](int ka) {
        const ReducedNode& a = mesh.nodes[mesh.idx(i, ka)];
        const ReducedNode& b2 = mesh.nodes[mesh.idx(i, ka + 1)];
        const CVec tk = b2.position - a.position;
        const CVec ti = 0.5 * (a.tan_i + b2.tan_i);
        RMat gf(2, 2);
        gf << real_inner(ti, ti), real_inner(ti, tk), real_inner(ti, tk),
            real_inner(tk, tk);
        const double Jf = 0.5 * (a.J + b2.J);
        return (Jf * std::sqrt(std::max(gf.determinant(), 1e-300)) *
                gf.inverse())
            .eval();
      };
      const double c = env * cosf[row] * invW;
      // i-direction fluxes
      if (i + 1 < mesh.ni) {
        const RMat Kf = Kface_i(i);
        add(row, i + 1, k, c * Kf(0, 0));
        add(row, i, k, -c * Kf(0, 0));
        // cross term: averaged k-differences at the two face nodes
        const double q = 0.25 * c * Kf(0, 1);
        const bool up = (k + 1 < mesh.nk), dn = (k - 1 >= 0);
        if (up && dn) {
          add(row, i, k + 1, q);
          add(row, i + 1, k + 1, q);
          add(row, i, k - 1, -q);
          add(row, i + 1, k - 1, -q);
        }
      }
      if (i - 1 >= 0) {
        const RMat Kf = Kface_i(i - 1);
        add(row, i - 1, k, c * Kf(0, 0));
        add(row, i, k, -c * Kf(0, 0));
        const double q = -0.25 * c * Kf(0, 1);
        const bool up = (k + 1 < mesh.nk), dn = (k - 1 >= 0);
        if (up && dn) {
          add(row, i, k + 1, q);
          add(row, i - 1, k + 1, q);
          add(row, i, k - 1, -q);
          add(row, i - 1, k - 1, -q);
        }
      }
      // k-direction fluxes
      {
        const RMat Kf = Kface_k(k);
        add(row, i, k + 1, c * Kf(1, 1));
        add(row, i, k, -c * Kf(1, 1));
        const double q = 0.25 * c * Kf(0, 1);
        const bool up = (i + 1 < mesh.ni), dn = (i - 1 >= 0);
        if (up && dn) {
          add(row, i + 1, k, q);
          add(row, i + 1, k + 1, q);
          add(row, i - 1, k, -q);
          add(row, i - 1, k + 1, -q);
        }
      }
      {
        const RMat Kf = Kface_k(k - 1);
        add(row, i, k - 1, c * Kf(1, 1));
        add(row, i, k, -c * Kf(1, 1));
        const double q = -0.25 * c * Kf(0, 1);
        const bool up = (i + 1 < mesh.ni), dn = (i - 1 >= 0);
        if (up && dn) {
          add(row, i + 1, k, q);
          add(row, i + 1, k - 1, q);
          add(row, i - 1, k, -q);
          add(row, i - 1, k - 1, -q);
        }
      }
      // drift, centered
      if (i + 1 < mesh.ni && i - 1 >= 0) {
        add(row, i + 1, k, env * 0.5 * drift[0]);
        add(row, i - 1, k, env * (-0.5) * drift[0]);
      }
      add(row, i, k + 1, env * 0.5 * drift[1]);
      add(row, i, k - 1, env * (-0.5) * drift[1]);
    }

  DiscreteOperator op;
  op.raw.resize(N, N);
  op.raw.setFromTriplets(trip.begin(), trip.end());

  op.interior_of_node.assign(N, -1);
  for (int n = 0; n < N; ++n)
    if (!mesh.nodes[n].boundary) {
      op.interior_of_node[n] = static_cast<int>(op.interior.size());
      op.interior.push_back(n);
    }
  const int Ni = static_cast<int>(op.interior.size());
  op.w_in.resize(Ni);
  op.w_out.resize(Ni);
  for (int r = 0; r < Ni; ++r) {
    const ReducedNode& node = mesh.nodes[op.interior[r]];
    const double mu = std::sqrt(std::pow(node.rho, -m) *
                                std::max(node.measure, 1e-300));
    op.w_in[r] = std::exp(0.5 * spec.beta * node.f) *
                 std::pow(node.rho, -spec.gamma) * mu;
    op.w_out[r] = std::exp(0.5 * (spec.beta + 1.0) * node.f) *
                  std::pow(node.rho, -(spec.gamma - 2.0)) * mu;
  }
  std::vector<Eigen::Triplet<double>> ctrip;
  for (int col = 0; col < op.raw.outerSize(); ++col)
    for (Eigen::SparseMatrix<double>::InnerIterator it(op.raw, col); it; ++it) {
      const int ri = op.interior_of_node[it.row()];
      const int ci = op.interior_of_node[col];
      if (ri >= 0 && ci >= 0)
        ctrip.emplace_back(ri, ci, op.w_out[ri] * it.value() / op.w_in[ci]);
    }
  op.conjugated.resize(Ni, Ni);
  op.conjugated.setFromTriplets(ctrip.begin(), ctrip.end());
  return op;
}

double smallest_singular_value(const DiscreteOperator& op, int max_iter,
                               double tol) {
  const auto& M = op.conjugated;
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu, lut;
  lu.compute(M);
  if (lu.info() != Eigen::Success)
    throw SpectralFailure("smallest_singular_value: factorization failed");
  Eigen::SparseMatrix<double> Mt = M.transpose();
  lut.compute(Mt);
  if (lut.info() != Eigen::Success)
    throw SpectralFailure("smallest_singular_value: transpose factorization failed");
  std::mt19937_64 rng(12345);
  RVec v(M.rows());
  for (int j = 0; j < v.size(); ++j) v[j] = uniform_in(rng, -1.0, 1.0);
  v.normalize();
  double prev = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    RVec w = lu.solve(lut.solve(v).eval());
    const double growth = w.norm();
    if (!(growth > 0.0) || !std::isfinite(growth))
      throw SpectralFailure("smallest_singular_value: iteration degenerated");
    v = w / growth;
    const double sigma = 1.0 / std::sqrt(growth);
    if (it > 4 && std::abs(sigma - prev) <= tol * sigma) return sigma;
    prev = sigma;
  }
  throw SpectralFailure("smallest_singular_value: no convergence");
}

double smallest_laplace_eigenvalue(const DiscreteOperator& op, int max_iter,
                                   double tol) {
  const int Ni = static_cast<int>(op.interior.size());
  std::vector<Eigen::Triplet<double>> trip;
  for (int col = 0; col < op.raw.outerSize(); ++col)
    for (Eigen::SparseMatrix<double>::InnerIterator it(op.raw, col); it; ++it) {
      const int ri = op.interior_of_node[it.row()];
      const int ci = op.interior_of_node[col];
      if (ri >= 0 && ci >= 0) trip.emplace_back(ri, ci, -it.value());
    }
  Eigen::SparseMatrix<double> A(Ni, Ni);
  A.setFromTriplets(trip.begin(), trip.end());
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.compute(A);
  if (lu.info() != Eigen::Success)
    throw SpectralFailure("smallest_laplace_eigenvalue: factorization failed");
  std::mt19937_64 rng(777);
  RVec v(Ni);
  for (int j = 0; j < Ni; ++j) v[j] = uniform_in(rng, -1.0, 1.0);
  v.normalize();
  double prev = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    RVec w = lu.solve(v);
    const double growth = w.norm();
    v = w / growth;
    const double lam = 1.0 / growth;
    if (it > 4 && std::abs(lam - prev) <= tol * std::abs(lam)) return lam;
    prev = lam;
  }
  throw SpectralFailure("smallest_laplace_eigenvalue: no convergence");
}

std::vector<SigmaScanRow> sigma_min_scan(const CsConfiguration& config,
                                         int intersection_index,
                                         const std::vector<double>& ts,
                                         double tau, double eps, double Rhat,
                                         const NeckProfile* profile,
                                         const WeightSpec& spec,
                                         const ReducedResolution& res) {
  std::vector<SigmaScanRow> rows;
  for (double t : ts) {
    const GluedSurface s =
        glue_build(config, intersection_index, t, tau, eps, Rhat, profile);
    const ReducedMesh mesh = build_reduced_mesh(s, res);
    const DiscreteOperator op = assemble_L(mesh, spec);
    SigmaScanRow row;
    row.t = t;
    row.sigma_min = smallest_singular_value(op);
    row.interior_nodes = static_cast<long>(op.interior.size());
    rows.push_back(row);
  }
  return rows;
}

namespace {

// gradient of a field in logical coordinates, with the axis symmetry
void logical_gradient(const ReducedMesh& mesh, const RVec& u, int i, int k,
                      RVec& out) {
  out.resize(2);
  out[0] = dfield(mesh, u, i, k, 0);
  out[1] = dfield(mesh, u, i, k, 1);
  if (!mesh.synthetic && mesh.nodes[mesh.idx(i, k)].axis) out[0] = 0.0;
}

}  // namespace

PerturbedTheta perturbed_theta(const ReducedMesh& mesh, const RVec& u,
                               double chart_bound_factor) {
  const int N = mesh.size();
  const int m = mesh.m;
  if (u.size() != N) throw ConfigError("perturbed_theta: field size mismatch");
  // chart-validity bound
  double max_grad = 0.0, min_rho = 1e300;
  std::vector<CVec> P(N);
  for (int i = 0; i < mesh.ni; ++i)
    for (int k = 0; k < mesh.nk; ++k) {
      const int n = mesh.idx(i, k);
      const ReducedNode& node = mesh.nodes[n];
      RVec du;
      logical_gradient(mesh, u, i, k, du);
      const RVec gv = node.g2.ldlt().solve(du);
      max_grad = std::max(max_grad, std::sqrt(std::max(0.0, du.dot(gv))));
      min_rho = std::min(min_rho, node.rho);
      const CVec V = gv[0] * node.tan_i + gv[1] * node.tan_k;
      P[n] = node.position + Complex(0.0, 1.0) * V;
    }
  if (chart_bound_factor > 0.0 && max_grad > chart_bound_factor * min_rho)
    throw ChartOverflow("perturbed_theta: |grad u| exceeds the chart bound " +
                        std::to_string(chart_bound_factor * min_rho));

  // perturbation parts of the positions; the base tangents are stored
  std::vector<CVec> Vfield(N);
  for (int n = 0; n < N; ++n) Vfield[n] = P[n] - mesh.nodes[n].position;
  PerturbedTheta out;
  out.theta.setZero(N);
  out.defect.setZero(N);
  for (int i = 1; i + 1 < mesh.ni; ++i)
    for (int k = 0; k < mesh.nk; ++k) {
      const int n = mesh.idx(i, k);
      const CVec Ti =
          mesh.nodes[n].tan_i +
          0.5 * (Vfield[mesh.idx(i + 1, k)] - Vfield[mesh.idx(i - 1, k)]);
      const CVec Tk = mesh.nodes[n].tan_k +
                      longitudinal_diff(mesh, i, k, [&](int ii, int kk) {
                        return Vfield[mesh.idx(ii, kk)];
                      });
      const Complex det2 = Ti[0] * Tk[m - 1] - Ti[m - 1] * Tk[0];
      double theta_L = std::arg(det2);
      if (mesh.has_orbit && m > 2) theta_L += (m - 2) * std::arg(P[n][0]);
      const double pairing = -P[n][m - 1].imag();
      const double fval = -2.0 * P[n][m - 1].real();
      out.theta[n] =
          std::exp(-0.5 * fval) * std::sin(wrap_angle(theta_L - pairing));
      out.defect[n] =
          mesh.nodes[n].boundary ? 0.0 : std::abs(Ti.dot(Tk).imag());
    }
  // axis rows: even extrapolation in the latitude
  for (int k = 0; k < mesh.nk; ++k) {
    out.theta[mesh.idx(0, k)] =
        (4.0 * out.theta[mesh.idx(1, k)] - out.theta[mesh.idx(2, k)]) / 3.0;
    out.defect[mesh.idx(0, k)] = out.defect[mesh.idx(1, k)];
    const int e = mesh.ni - 1;
    out.theta[mesh.idx(e, k)] =
        (4.0 * out.theta[mesh.idx(e - 1, k)] - out.theta[mesh.idx(e - 2, k)]) /
        3.0;
    out.defect[mesh.idx(e, k)] = out.defect[mesh.idx(e - 1, k)];
  }
  return out;
}

Eigen::SparseMatrix<double> linearization_matrix(const ReducedMesh& mesh,
                                                 const RVec& u0) {
  const int N = mesh.size();
  constexpr int period = 9;
  constexpr int reach = 4;
  // probe so the induced frame perturbation is a fixed small fraction of the
  // local tangent scale; keeps the cubic truncation resolution-uniform
  RVec scale(N);
  for (int n = 0; n < N; ++n)
    scale[n] =
        1e-5 * std::min(mesh.nodes[n].g2(0, 0), mesh.nodes[n].g2(1, 1));
  std::vector<Eigen::Triplet<double>> trip;
  for (int ci = 0; ci < period; ++ci)
    for (int ck = 0; ck < period; ++ck) {
      RVec comb = RVec::Zero(N);
      bool any = false;
      for (int i = ci; i < mesh.ni; i += period)
        for (int k = ck; k < mesh.nk; k += period) {
          const int n = mesh.idx(i, k);
          if (mesh.nodes[n].boundary) continue;
          comb[n] = scale[n];
          any = true;
        }
      if (!any) continue;
      const PerturbedTheta plus = perturbed_theta(mesh, u0 + comb, 0.0);
      const PerturbedTheta minus = perturbed_theta(mesh, u0 - comb, 0.0);
      for (int i = 0; i < mesh.ni; ++i)
        for (int k = 0; k < mesh.nk; ++k) {
          const int n = mesh.idx(i, k);
          const double delta = 0.5 * (plus.theta[n] - minus.theta[n]);
          if (delta == 0.0) continue;
          // unique comb member within the dependence reach
          int bi = -1, bk = -1;
          for (int ii = ci; ii < mesh.ni; ii += period)
            if (std::abs(ii - i) <= reach) bi = ii;
          for (int kk = ck; kk < mesh.nk; kk += period)
            if (std::abs(kk - k) <= reach) bk = kk;
          if (bi < 0 || bk < 0) continue;
          const int j = mesh.idx(bi, bk);
          if (mesh.nodes[j].boundary) continue;
          trip.emplace_back(n, j, delta / scale[j]);
        }
    }
  // Dirichlet rows act as the identity
  for (int n = 0; n < N; ++n)
    if (mesh.nodes[n].boundary) trip.emplace_back(n, n, 1.0);
  Eigen::SparseMatrix<double> L(N, N);
  L.setFromTriplets(trip.begin(), trip.end());
  return L;
}

double mesh_field_norm(const ReducedMesh& mesh, const RVec& field,
                       const WeightSpec& spec) {
  spec.validate_basic();
  const int N = mesh.size();
  const int m = mesh.m;
  if (field.size() != N) throw ConfigError("mesh_field_norm: size mismatch");
  // derivative magnitude fields up to order k
  std::vector<RVec> mags(spec.k + 1);
  mags[0] = field.cwiseAbs();
  RVec gx(N), gy(N);  // ONB components of the gradient
  if (spec.k >= 1) {
    mags[1].resize(N);
    for (int i = 0; i < mesh.ni; ++i)
      for (int k = 0; k < mesh.nk; ++k) {
        const int n = mesh.idx(i, k);
        RVec du;
        logical_gradient(mesh, field, i, k, du);
        const ReducedNode& node = mesh.nodes[n];
        Eigen::LLT<RMat> llt(node.g2);
        RVec onb = llt.matrixL().solve(du);
        gx[n] = onb[0];
        gy[n] = onb[1];
        mags[1][n] = onb.norm();
      }
  }
  RVec kappa = RVec::Zero(N);
  std::vector<RVec> hess(3);  // ONB Hessian entries (xx, xy, yy)
  if (spec.k >= 2) {
    mags[2].resize(N);
    for (auto& h : hess) h.resize(N);
    RVec orb(N);
    for (int n = 0; n < N; ++n)
      orb[n] = std::max(mesh.nodes[n].orbit_radius, 1e-12);
    for (int i = 0; i < mesh.ni; ++i)
      for (int k = 0; k < mesh.nk; ++k) {
        const int n = mesh.idx(i, k);
        const ReducedNode& node = mesh.nodes[n];
        if (mesh.has_orbit && !node.axis) {
          RVec dorb, du;
          logical_gradient(mesh, orb, i, k, dorb);
          logical_gradient(mesh, field, i, k, du);
          kappa[n] = dorb.dot(node.g2.ldlt().solve(du)) / orb[n];
        }
      }
    if (mesh.has_orbit)
      for (int k = 0; k < mesh.nk; ++k) {
        kappa[mesh.idx(0, k)] = kappa[mesh.idx(1, k)];
        kappa[mesh.idx(mesh.ni - 1, k)] = kappa[mesh.idx(mesh.ni - 2, k)];
      }
    for (int i = 0; i < mesh.ni; ++i)
      for (int k = 0; k < mesh.nk; ++k) {
        const int n = mesh.idx(i, k);
        const ReducedNode& node = mesh.nodes[n];
        Eigen::LLT<RMat> llt(node.g2);
        RVec dgx, dgy;
        logical_gradient(mesh, gx, i, k, dgx);
        logical_gradient(mesh, gy, i, k, dgy);
        const RVec hx = llt.matrixL().solve(dgx);
        const RVec hy = llt.matrixL().solve(dgy);
        hess[0][n] = hx[0];
        hess[1][n] = 0.5 * (hx[1] + hy[0]);
        hess[2][n] = hy[1];
        mags[2][n] = std::sqrt(hx[0] * hx[0] + 2.0 * hess[1][n] * hess[1][n] +
                               hy[1] * hy[1] + (m - 2) * kappa[n] * kappa[n]);
      }
  }
  if (spec.k >= 3) {
    mags[3].resize(N);
    for (int i = 0; i < mesh.ni; ++i)
      for (int k = 0; k < mesh.nk; ++k) {
        const int n = mesh.idx(i, k);
        const ReducedNode& node = mesh.nodes[n];
        Eigen::LLT<RMat> llt(node.g2);
        double acc = 0.0;
        for (const auto& h : hess) {
          RVec dh;
          logical_gradient(mesh, h, i, k, dh);
          acc += llt.matrixL().solve(dh).squaredNorm();
        }
        RVec dk;
        logical_gradient(mesh, kappa, i, k, dk);
        acc += (m - 2) * llt.matrixL().solve(dk).squaredNorm();
        mags[3][n] = std::sqrt(acc);
      }
  }
  StableSum acc;
  for (int n = 0; n < N; ++n) {
    const ReducedNode& node = mesh.nodes[n];
    const double env = std::exp(0.5 * spec.beta * node.f);
    const double msr = std::pow(node.rho, -m) * node.measure;
    for (int j = 0; j <= spec.k; ++j) {
      const double term = env * std::pow(node.rho, -spec.gamma + j) * mags[j][n];
      acc.add(std::pow(term, spec.p) * msr);
    }
  }
  return std::pow(acc.value(), 1.0 / spec.p);
}

RVec random_smooth_field(const ReducedMesh& mesh, std::uint64_t seed,
                         double amplitude) {
  std::mt19937_64 rng(seed);
  const int N = mesh.size();
  RVec u = RVec::Zero(N);
  // low modes, even across the axis rows, vanishing at the Dirichlet rows
  for (int p = 0; p <= 2; ++p)
    for (int q = 1; q <= 3; ++q) {
      const double c = uniform_in(rng, -1.0, 1.0);
      for (int i = 0; i < mesh.ni; ++i)
        for (int k = 0; k < mesh.nk; ++k) {
          const double ih = static_cast<double>(i) / (mesh.ni - 1);
          const double kh = static_cast<double>(k) / (mesh.nk - 1);
          u[mesh.idx(i, k)] +=
              c * std::cos(p * kPi * ih) * std::sin(q * kPi * kh);
        }
    }
  // normalize max |grad u|_g to amplitude * min rho
  double max_grad = 0.0, min_rho = 1e300;
  for (int i = 0; i < mesh.ni; ++i)
    for (int k = 0; k < mesh.nk; ++k) {
      RVec du;
      logical_gradient(mesh, u, i, k, du);
      const ReducedNode& node = mesh.nodes[mesh.idx(i, k)];
      const RVec gv = node.g2.ldlt().solve(du);
      max_grad = std::max(max_grad, std::sqrt(std::max(0.0, du.dot(gv))));
      min_rho = std::min(min_rho, node.rho);
    }
  if (max_grad > 0.0) u *= amplitude * min_rho / max_grad;
  return u;
}

PicardHistory picard_iterate(const ReducedMesh& mesh, const WeightSpec& spec,
                             int max_iter, double tol, double floor,
                             bool relinearize, double chart_bound_factor) {
  const int N = mesh.size();
  const WeightSpec target = spec.shifted_target();
  WeightSpec dom = spec;
  dom.k = 3;
  WeightSpec tg1 = target;
  tg1.k = 1;
  WeightSpec tg0 = target;
  tg0.k = 0;

  Eigen::SparseMatrix<double> L = linearization_matrix(mesh, RVec::Zero(N));
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.compute(L);
  if (lu.info() != Eigen::Success)
    throw SpectralFailure("picard_iterate: frozen linearization is singular");

  PicardHistory hist;
  RVec u = RVec::Zero(N);
  int grew = 0;
  for (int it = 0; it <= max_iter; ++it) {
    const PerturbedTheta pt = perturbed_theta(mesh, u, chart_bound_factor);
    RVec res = pt.theta;
    for (int n = 0; n < N; ++n)
      if (mesh.nodes[n].boundary) res[n] = 0.0;
    const double rw1 = mesh_field_norm(mesh, res, tg1);
    hist.residual.push_back(rw1);
    hist.residual_l0.push_back(mesh_field_norm(mesh, res, tg0));
    hist.defect_max.push_back(pt.defect.maxCoeff());
    hist.iterate_norm.push_back(mesh_field_norm(mesh, u, dom));
    if (rw1 <= std::max(tol, floor)) {
      hist.converged = true;
      hist.hit_floor = (rw1 <= floor) && (rw1 > tol);
      break;
    }
    if (hist.residual.size() >= 2 &&
        rw1 > hist.residual[hist.residual.size() - 2]) {
      if (++grew >= 2)
        throw IterationDiverged("picard_iterate: residual grew twice",
                                std::vector<double>(hist.residual.begin(),
                                                    hist.residual.end()));
    } else {
      grew = 0;
    }
    if (it == max_iter) break;
    if (relinearize && it > 0) {
      L = linearization_matrix(mesh, u);
      lu.compute(L);
      if (lu.info() != Eigen::Success)
        throw SpectralFailure("picard_iterate: re-linearization is singular");
    }
    const RVec delta = lu.solve(res);
    u -= delta;
    for (int n = 0; n < N; ++n)
      if (mesh.nodes[n].boundary) u[n] = 0.0;
  }
  return hist;
}

QuadraticCheck quadratic_scaling_check(const ReducedMesh& mesh,
                                       const WeightSpec& spec, int trials,
                                       std::uint64_t seed) {
  const int N = mesh.size();
  WeightSpec dom = spec;
  dom.k = 3;
  WeightSpec tg1 = spec.shifted_target();
  tg1.k = 1;
  const Eigen::SparseMatrix<double> L = linearization_matrix(mesh, RVec::Zero(N));
  const PerturbedTheta base = perturbed_theta(mesh, RVec::Zero(N), 0.0);
  auto Q = [&](const RVec& w) {
    const PerturbedTheta pt = perturbed_theta(mesh, w, 0.0);
    RVec q = pt.theta - base.theta - L * w;
    for (int n = 0; n < N; ++n)
      if (mesh.nodes[n].boundary) q[n] = 0.0;
    return q;
  };
  QuadraticCheck out;
  for (int trial = 0; trial < trials; ++trial) {
    const RVec u = random_smooth_field(mesh, seed + 2 * trial, 0.05);
    const RVec v = random_smooth_field(mesh, seed + 2 * trial + 1, 0.03);
    const double num = mesh_field_norm(mesh, Q(u) - Q(v), tg1);
    const double den =
        mesh_field_norm(mesh, u - v, dom) *
        (mesh_field_norm(mesh, u, dom) + mesh_field_norm(mesh, v, dom));
    out.ratios.push_back(num / den);
  }
  std::vector<double> sorted = out.ratios;
  std::sort(sorted.begin(), sorted.end());
  out.max_ratio = sorted.back();
  out.median_ratio = sorted[sorted.size() / 2];
  // s^2 homogeneity of Q under u -> s u
  const RVec u0 = random_smooth_field(mesh, seed + 9999, 0.05);
  std::vector<double> ss = {1e-1, 3e-2, 1e-2, 3e-3, 1e-3};
  std::vector<double> qs;
  for (double s : ss) qs.push_back(mesh_field_norm(mesh, Q(s * u0), tg1));
  out.homogeneity_slope = loglog_fit_slope(ss, qs);
  return out;
}

}  // namespace tsol
