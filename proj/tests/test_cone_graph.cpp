#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "tsol/cone_graph.hpp"
#include "tsol/quadrature.hpp"
#include "tsol/report.hpp"

using namespace tsol;

namespace {

RigidMotionSpec demo_motion(double lambda = 0.0) {
  RigidMotionSpec spec;
  spec.phi = RVec(3);
  spec.phi << kPi / 4.0, kPi / 4.0, kPi / 2.0;
  spec.lambda = lambda;
  return spec;
}

// one shared neck profile and glued demo per test binary
const NeckProfile& demo_profile() {
  static NeckProfile prof = standard_neck(demo_motion().phi);
  return prof;
}

GluedSurface demo_surface(double t) {
  const auto cfg = build_configuration({demo_motion()}, 3);
  return glue_build(cfg, 0, t, 0.9, 0.5, 1.1, &demo_profile());
}

RVec unit3(double a, double b, double c) {
  RVec v(3);
  v << a, b, c;
  return v.normalized();
}

}  // namespace

TEST_CASE("cutoff: support, transition midpoint, derivative consistency") {
  CutoffSpec spec;
  spec.tau = 0.9;
  const double t = 0.05;
  const double rl = std::pow(t, spec.tau);
  auto lo = cutoff_eval(spec, t, 0.5 * rl);
  CHECK(lo.value == 0.0);
  CHECK(lo.d1 == 0.0);
  CHECK(lo.d2 == 0.0);
  auto hi = cutoff_eval(spec, t, 3.0 * rl);
  CHECK(hi.value == 1.0);
  CHECK(hi.d1 == 0.0);
  auto mid = cutoff_eval(spec, t, 1.5 * rl);
  CHECK(mid.value == doctest::Approx(0.5).epsilon(1e-12));
  // finite-difference check of the chain-rule derivatives
  const double r = 1.37 * rl, h = 1e-6 * rl;
  auto p = cutoff_eval(spec, t, r + h);
  auto m_ = cutoff_eval(spec, t, r - h);
  auto c = cutoff_eval(spec, t, r);
  CHECK((p.value - m_.value) / (2 * h) == doctest::Approx(c.d1).epsilon(1e-6));
  CHECK((p.d1 - m_.d1) / (2 * h) == doctest::Approx(c.d2).epsilon(1e-6));
  // monotone on [t^tau, 2 t^tau]
  double prev = -1.0;
  for (int k = 0; k <= 20; ++k) {
    const double v = cutoff_eval(spec, t, rl * (1.0 + k / 20.0)).value;
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("glue_build: cone chart realizes the intersection angles") {
  const auto s = demo_surface(0.05);
  // both plane frames are unitary hence Lagrangian
  for (int side = 0; side < 2; ++side) {
    const CMat& P = s.cone.plane_ambient[side];
    CHECK((P.adjoint() * P - CMat::Identity(3, 3)).norm() < 1e-12);
  }
  const RVec ang =
      principal_angles(s.cone.plane_ambient[0], s.cone.plane_ambient[1]);
  const RVec expected = s.config.intersections[0].cone_angles;
  CHECK((ang - expected).cwiseAbs().maxCoeff() < 1e-10);
  // region boundaries are ordered
  CHECK(0.0 < s.r_inner());
  CHECK(s.r_inner() < s.r_mix_lo());
  CHECK(s.r_mix_lo() < s.r_mix_hi());
  CHECK(s.r_mix_hi() < s.eps);
}

TEST_CASE("glue_build rejects invalid scales") {
  const auto cfg = build_configuration({demo_motion()}, 3);
  CHECK_THROWS_AS(glue_build(cfg, 0, 0.05, 0.5), ConfigError);  // tau too small
  CHECK_THROWS_AS(glue_build(cfg, 0, 0.4), ConfigError);        // t Rhat > t^tau
  CHECK_THROWS_AS(glue_build(cfg, 1, 0.05), ConfigError);       // bad index
}

TEST_CASE("wing projection: vanishing displacement toward the vertex") {
  const auto s = demo_surface(0.05);
  const RVec sigma = unit3(0.3, -0.2, 0.93);
  std::vector<double> rs, disp;
  for (double r : {0.02, 0.04, 0.08, 0.16}) {
    const GraphPoint gp =
        project_to_graph(s, GraphTarget::WingChart, 0, sigma, r);
    rs.push_back(r);
    disp.push_back(gp.displacement.norm());
    // displacement is J-normal to the cone plane: purely imaginary in
    // plane coordinates
    const CVec w = s.cone.plane_basis[0].adjoint() * s.cone.to_cone(
        s.cone.from_cone(s.cone.plane_basis[0] * (r * sigma).cast<Complex>()) +
        gp.displacement);
    CHECK((w.real() - r * sigma).cwiseAbs().maxCoeff() < 1e-10);
  }
  const double slope = oracle::loglog_slope(rs, disp);
  CHECK(slope > 1.8);  // O(r^2) tangency
  CHECK(slope < 2.6);
}

TEST_CASE("wing projection at r = eps/2 matches the nearest-point oracle") {
  const auto s = demo_surface(0.05);
  const double r = 0.5 * s.eps;
  const RVec sigma = unit3(0.1, 0.25, 0.96);
  const GraphPoint gp = project_to_graph(s, GraphTarget::WingChart, 0, sigma, r);
  // brute-force nearest point on the wing over a fine parameter patch
  const CVec cone_pt =
      s.cone.from_cone(s.cone.plane_basis[0] * (r * sigma).cast<Complex>());
  double best = 1e300;
  RVec xc = s.wing_center[0];
  for (int pass = 0; pass < 3; ++pass) {
    const double span = (pass == 0) ? 0.5 : 5e-2 / pass;
    RVec base = (pass == 0) ? (xc + RVec(gp.surface_param - xc)) : xc;
    if (pass == 0) base = gp.surface_param;  // center the scan at the answer
    RVec bx = base;
    for (int i = -12; i <= 12; ++i)
      for (int j = -12; j <= 12; ++j)
        for (int k = -12; k <= 12; ++k) {
          RVec x = base;
          x[0] += span * i / 12.0;
          x[1] += span * j / 12.0;
          x[2] += span * k / 12.0;
          const double d =
              (chart_eval(s.wing_chart[0], x).point - cone_pt).norm();
          if (d < best) {
            best = d;
            bx = x;
          }
        }
    base = bx;
  }
  // the J-normal displacement length agrees with the nearest distance to
  // leading order O(r^2), with O(r^3) discrepancy
  CHECK(gp.displacement.norm() == doctest::Approx(best).epsilon(0.02));
  CHECK(gp.displacement.norm() < 0.2 * r);
  CHECK(gp.displacement.norm() / (r * r) < 1.0);
}

TEST_CASE("neck projection gradient scales like t^m r^{1-m}") {
  std::vector<double> ts = {0.05, 0.1};
  std::vector<double> ratio;
  const RVec sigma = unit3(0.4, 0.1, 0.9);
  for (double t : ts) {
    const auto s = demo_surface(t);
    const double r = 10.0 * t;
    const GraphPoint gp =
        project_to_graph(s, GraphTarget::ScaledNeck, 1, sigma, r);
    // |grad| ~ t^m r^{1-m} = t^3 / (100 t^2) at r = 10 t
    ratio.push_back(gp.grad.norm() / (t * t * t * std::pow(r, 1.0 - 3.0)));
  }
  CHECK(ratio[0] == doctest::Approx(ratio[1]).epsilon(0.25));
}

TEST_CASE("recover_potential: zero input, wing and neck decay rates") {
  const int n = 41;
  RVec r(n);
  for (int k = 0; k < n; ++k) r[k] = 0.01 * std::pow(100.0, k / (n - 1.0));
  CHECK(recover_potential(r, RVec::Zero(n), PotentialKind::WingU, 3)
            .cwiseAbs()
            .maxCoeff() == 0.0);

  const auto s = demo_surface(0.05);
  {
    // wing-u near r -> 0: log|u| vs log r slope >= 2.7
    const RVec sigma = unit3(-0.2, 0.5, 0.84);
    RVec rg(9), grads(9);
    for (int k = 0; k < 9; ++k) {
      rg[k] = 0.01 * std::pow(8.0, k / 8.0);
      grads[k] =
          project_to_graph(s, GraphTarget::WingChart, 1, sigma, rg[k]).grad.dot(
              sigma);
    }
    const RVec u = recover_potential(rg, grads, PotentialKind::WingU, 3);
    std::vector<double> xs, ys;
    for (int k = 0; k < 9; ++k) {
      xs.push_back(rg[k]);
      ys.push_back(std::abs(u[k]));
    }
    CHECK(oracle::loglog_slope(xs, ys) >= 2.7);
  }
  {
    // neck-v at large r: slope <= 2 - m + 0.3
    const RVec sigma = unit3(0.6, -0.3, 0.74);
    RVec rg(9), grads(9);
    for (int k = 0; k < 9; ++k) {
      rg[k] = 0.4 * std::pow(8.0, k / 8.0);
      grads[k] =
          project_to_graph(s, GraphTarget::ScaledNeck, 0, sigma, rg[k]).grad.dot(
              sigma);
    }
    const RVec v = recover_potential(rg, grads, PotentialKind::NeckV, 3);
    std::vector<double> xs, ys;
    for (int k = 0; k < 9; ++k) {
      xs.push_back(rg[k]);
      ys.push_back(std::abs(v[k]));
    }
    CHECK(oracle::loglog_slope(xs, ys) <= 2.0 - 3.0 + 0.3);
  }
}

TEST_CASE("glued formula is continuous across the mixing edges") {
  const auto s = demo_surface(0.05);
  const RVec sigma = unit3(0.2, 0.3, 0.93);
  for (int side = 0; side < 2; ++side) {
    const RayPotentials ray = build_ray_potentials(s, side, sigma);
    {
      // just below 2 t^tau the mixing graph must meet the wing chart
      const double r = s.r_mix_hi() * (1.0 - 1e-9);
      GluedPoint mix{Region::TransitionMix, side, sigma, r, RVec(), 0.0, RVec()};
      GluedPoint outer{Region::TransitionOuter, side, sigma,
                       s.r_mix_hi() * (1.0 + 1e-9), RVec(), 0.0, RVec()};
      const CVec a = glued_eval(s, mix, &ray).point;
      const CVec b = glued_eval(s, outer).point;
      CHECK((a - b).norm() < 1e-8);
    }
    {
      // just above t^tau the mixing graph must meet the scaled neck
      const double r = s.r_mix_lo() * (1.0 + 1e-9);
      GluedPoint mix{Region::TransitionMix, side, sigma, r, RVec(), 0.0, RVec()};
      GluedPoint inner{Region::TransitionInner, side, sigma,
                       s.r_mix_lo() * (1.0 - 1e-9), RVec(), 0.0, RVec()};
      const CVec a = glued_eval(s, mix, &ray).point;
      const CVec b = glued_eval(s, inner).point;
      CHECK((a - b).norm() < 1e-8);
    }
  }
}

TEST_CASE("glued frames: wing-exact residual and Lagrangian defect") {
  const auto s = demo_surface(0.05);
  const auto bg = KahlerBackground::standard(3);
  const RVec sigma = unit3(-0.4, 0.1, 0.91);
  for (int side = 0; side < 2; ++side) {
    const RayPotentials ray = build_ray_potentials(s, side, sigma);
    // r >= 2 t^tau: frame equals the wing frame; Theta vanishes
    for (double r : {s.r_mix_hi() * 1.0001, 0.7 * s.eps, 0.98 * s.eps}) {
      GluedPoint p{Region::TransitionOuter, side, sigma, r, RVec(), 0.0, RVec()};
      const Frame f = glued_eval(s, p);
      const auto rep = lagrangian_angles(f, bg);
      CHECK(std::abs(rep.residual) < 1e-10);
      CHECK(rep.defect < 1e-10);
    }
    // mixing annulus: defect below 1e-6 with the symmetrized graph Hessian
    for (double frac : {1.15, 1.5, 1.85}) {
      const double r = frac * s.r_mix_lo();
      GluedPoint p{Region::TransitionMix, side, sigma, r, RVec(), 0.0, RVec()};
      const Frame f = glued_eval(s, p, &ray);
      const auto rep = lagrangian_angles(f, bg);
      CHECK(rep.defect < 1e-6);
      CHECK(std::isfinite(rep.residual));
    }
  }
}

TEST_CASE("pointwise error profile: neck O(t), inner annulus O(r)") {
  const auto bg = KahlerBackground::standard(3);
  // deep neck: |Theta| <= C t across the sweep
  std::vector<double> ts = {0.02, 0.04, 0.08};
  std::vector<double> sup_over_t;
  for (double t : ts) {
    const auto s = demo_surface(t);
    double sup = 0.0;
    for (double y : {-0.8, -0.3, 0.0, 0.4, 0.9}) {
      for (int i = 0; i < 5; ++i) {
        const RVec x = unit3(0.2 + 0.1 * i, -0.3 + 0.12 * i, 0.8);
        GluedPoint p{Region::Neck, -1, RVec(), 0.0, x, y, RVec()};
        const Frame f = glued_eval(s, p);
        sup = std::max(sup, std::abs(lagrangian_angles(f, bg).residual));
      }
    }
    sup_over_t.push_back(sup / t);
  }
  const double vmax = *std::max_element(sup_over_t.begin(), sup_over_t.end());
  const double vmin = *std::min_element(sup_over_t.begin(), sup_over_t.end());
  CHECK(vmax / vmin < 10.0);

  // inner annulus at fixed t: sup_sigma |Theta| grows linearly in r
  const auto s = demo_surface(0.05);
  std::vector<double> rs, sups;
  const double span = s.r_mix_lo() / s.r_inner();
  for (double fr : {1.02, std::sqrt(1.02 * 0.98 * span), 0.98 * span}) {
    const double r = fr * s.r_inner();
    double sup = 0.0;
    for (int i = 0; i < 8; ++i) {
      const RVec sigma = unit3(std::cos(0.7 * i), std::sin(0.7 * i), 1.1);
      GluedPoint p{Region::TransitionInner, (i % 2), sigma, r, RVec(), 0.0,
                   RVec()};
      const Frame f = glued_eval(s, p);
      sup = std::max(sup, std::abs(lagrangian_angles(f, bg).residual));
    }
    rs.push_back(r);
    sups.push_back(sup);
  }
  const double slope = oracle::loglog_slope(rs, sups);
  CHECK(slope == doctest::Approx(1.0).epsilon(0.35));
}

TEST_CASE("rho field: region values and seam continuity") {
  const auto s = demo_surface(0.05);
  const auto field = s.radius_field();
  const RVec sigma = unit3(0.3, 0.4, 0.87);
  // transition: rho = r
  GluedPoint tp{Region::TransitionMix, 0, sigma, 1.4 * s.r_mix_lo(), RVec(), 0.0,
                RVec()};
  CHECK(rho_eval(field, tp, s) == doctest::Approx(1.4 * s.r_mix_lo()));
  // deep wing: rho = 1
  RVec far = s.wing_center[0];
  far[0] += 3.0;
  GluedPoint wp{Region::Wing, 0, RVec(), 0.0, RVec(), 0.0, far};
  CHECK(rho_eval(field, wp, s) == doctest::Approx(1.0));
  // neck seam: t * rhat meets the transition radius
  const double r_seam = s.r_inner() * 1.0000001;
  const GraphPoint gp =
      project_to_graph(s, GraphTarget::ScaledNeck, 0, sigma, r_seam);
  GluedPoint np{Region::Neck, -1, RVec(), 0.0, gp.surface_param.head(3),
                gp.surface_param[3], RVec()};
  CHECK(std::abs(rho_eval(field, np, s) - r_seam) < 1e-10);
  // wing seam: the chart point of the projection at r = eps reproduces eps
  const GraphPoint wgp =
      project_to_graph(s, GraphTarget::WingChart, 1, sigma, s.eps);
  GluedPoint wsp{Region::Wing, 1, RVec(), 0.0, RVec(), 0.0, wgp.surface_param};
  CHECK(std::abs(rho_eval(field, wsp, s) - s.eps) < 1e-10);
}

TEST_CASE("flat-cone annulus measure matches the closed form") {
  // the sphere x Simpson x r^m weight assembly, on an exactly flat cone
  const int np = 6, na = 12, nk = 33;
  const SphereRule sph = sphere_product_rule(3, np, na);
  const double r0 = 0.1, r1 = 0.5;
  const double dlam = std::log(r1 / r0) / (nk - 1);
  double total = 0.0;
  for (int i = 0; i < sph.weights.size(); ++i)
    for (int k = 0; k < nk; ++k) {
      const double r = r0 * std::exp(k * dlam);
      double w = (k == 0 || k == nk - 1) ? dlam / 3.0
                 : (k % 2 == 1)          ? 4.0 * dlam / 3.0
                                         : 2.0 * dlam / 3.0;
      total += sph.weights[i] * w * r * r * r;
    }
  const double closed = sphere_volume(3) * (std::pow(r1, 3) - std::pow(r0, 3)) / 3.0;
  CHECK(total == doctest::Approx(closed).epsilon(1e-6));
}

TEST_CASE("sample_mesh: regions, weights, metric deviation trend") {
  MeshResolution res;
  res.sphere_polar = 4;
  res.sphere_azimuth = 8;
  res.radial_per_dyadic = 8;
  res.neck_rows = 13;
  res.wing_out = 3.0;

  const auto s1 = demo_surface(0.05);
  const SampleMesh mesh1 = sample_mesh(s1, res);
  CHECK(mesh1.projection_failures == 0);
  int counts[5] = {0, 0, 0, 0, 0};
  for (const auto& n : mesh1.nodes) {
    counts[static_cast<int>(n.region)]++;
    CHECK(n.weight >= 0.0);
    CHECK(n.rho > 0.0);
    CHECK(std::isfinite(n.theta));
  }
  CHECK(counts[static_cast<int>(Region::Wing)] > 0);
  CHECK(counts[static_cast<int>(Region::TransitionOuter)] > 0);
  CHECK(counts[static_cast<int>(Region::TransitionMix)] > 0);
  CHECK(counts[static_cast<int>(Region::TransitionInner)] > 0);
  CHECK(counts[static_cast<int>(Region::Neck)] > 0);
  // wing-exact region carries no residual
  for (const auto& n : mesh1.nodes)
    if (n.region == Region::Wing || n.region == Region::TransitionOuter)
      CHECK(std::abs(n.theta) < 1e-10);

  // scaled metric deviation on the mixing annulus decreases with t
  const auto s2 = demo_surface(0.02);
  const SampleMesh mesh2 = sample_mesh(s2, res);
  CHECK(mesh2.lemma_metric_sup < mesh1.lemma_metric_sup);
}

TEST_CASE("mesh exports: CSV rows and OBJ vertices") {
  MeshResolution res;
  res.sphere_polar = 4;
  res.sphere_azimuth = 8;
  res.radial_per_dyadic = 8;
  res.neck_rows = 9;
  res.wing_out = 2.0;
  const auto s = demo_surface(0.05);
  const SampleMesh mesh = sample_mesh(s, res);
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path();
  const std::string csv = (dir / "tsol_mesh.csv").string();
  const std::string obj = (dir / "tsol_mesh.obj").string();
  export_mesh_csv(mesh, csv);
  export_mesh_obj(mesh, {0, 1, 4}, obj);
  const std::string obj_text = read_text_file(obj);
  std::size_t vcount = 0, pos = 0;
  while ((pos = obj_text.find("\nv ", pos)) != std::string::npos) {
    ++vcount;
    ++pos;
  }
  if (obj_text.rfind("v ", 0) == 0) ++vcount;
  CHECK(vcount == mesh.nodes.size());
  fs::remove(csv);
  fs::remove(obj);
}
