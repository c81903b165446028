#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "tsol/ambient.hpp"
#include "tsol/grim.hpp"

using namespace tsol;

namespace {

RigidMotionSpec demo_motion(double lambda = 0.0) {
  RigidMotionSpec spec;
  spec.phi = RVec(3);
  spec.phi << kPi / 4.0, kPi / 4.0, kPi / 2.0;
  spec.lambda = lambda;
  return spec;
}

}  // namespace

TEST_CASE("identity chart at the origin sits at i pi/2 with phase 0") {
  GrimChart chart = GrimChart::identity(3);
  RVec x = RVec::Zero(3);
  Frame f = chart_eval(chart, x);
  CHECK(std::abs(f.point[0]) < 1e-15);
  CHECK(std::abs(f.point[1]) < 1e-15);
  CHECK(f.point[2].real() == doctest::Approx(0.0));
  CHECK(f.point[2].imag() == doctest::Approx(kPi / 2.0));
  const auto rep = lagrangian_angles(f, KahlerBackground::standard(3));
  CHECK(std::abs(rep.theta_f) < 1e-14);
  CHECK(std::abs(rep.residual) < 1e-14);
}

TEST_CASE("theta_L of the identity chart is x_m - pi/2") {
  GrimChart chart = GrimChart::identity(3);
  auto bg = KahlerBackground::standard(3);
  for (double xm : {-1.2, -0.3, 0.0, 0.7, 1.4}) {
    RVec x = RVec::Zero(3);
    x[2] = xm;
    const auto rep = lagrangian_angles(chart_eval(chart, x), bg);
    CHECK(wrap_angle(rep.theta_L - (xm - kPi / 2.0)) ==
          doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("arclength parametrization: gd(0) = 0 and flat induced metric") {
  GrimChart chart = GrimChart::identity(3, GrimParametrization::Arclength);
  CHECK(gudermann(0.0) == doctest::Approx(0.0));
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    RVec x(3);
    x << uniform_in(rng, -2.0, 2.0), uniform_in(rng, -2.0, 2.0),
        uniform_in(rng, -3.0, 3.0);
    Frame f = chart_eval(chart, x);
    auto [g, defect] = induced_metric_and_defect(f);
    CHECK((g - RMat::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(defect < 1e-14);
    // cross-check against a finite-difference first fundamental form
    RMat g_fd = oracle::fd_metric(
        [&](const RVec& p) { return chart_eval(chart, p).point; }, x);
    CHECK((g - g_fd).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("angle domain is enforced") {
  GrimChart chart = GrimChart::identity(3);
  RVec x = RVec::Zero(3);
  x[2] = 1.7;
  CHECK_THROWS_AS(chart_eval(chart, x), OutOfDomain);
}

TEST_CASE("apply_motion: identity and origin image") {
  RigidMotionSpec spec = demo_motion(0.8);
  CVec z = CVec::Zero(3);
  const CVec img = apply_motion(spec, z);
  CHECK(std::abs(img[0]) < 1e-16);
  CHECK(img[2].real() == doctest::Approx(0.8));
  CHECK(img[2].imag() == doctest::Approx(kPi / 2.0));

  RigidMotionSpec almost_id;
  almost_id.phi = RVec::Constant(3, 1e-300);
  almost_id.lambda = 0.0;
  CVec w(3);
  w << Complex(1, 2), Complex(-0.5, 0.25), Complex(3, -1);
  CHECK((apply_motion(almost_id, w) - w).norm() < 1e-12);
}

TEST_CASE("moved chart is an exact translator with phase sum(phi)") {
  auto bg = KahlerBackground::standard(3);
  GrimChart mv = GrimChart::moved(3, demo_motion(1.3));
  std::vector<double> phases;
  for (double xm : {-1.0, -0.2, 0.5, 1.2}) {
    RVec x(3);
    x << 0.3, -0.8, xm;
    const auto rep = lagrangian_angles(chart_eval(mv, x), bg);
    phases.push_back(rep.theta_f);
    // phase pi: the orientation-reversed chart solves the phase-0 equation
    CHECK(std::abs(rep.residual) < 1e-13);
    CHECK(std::abs(wrap_angle(rep.theta_f - kPi)) < 1e-12);
  }
  CHECK(angle_spread(phases) < 1e-12);
}

TEST_CASE("translator residual of every chart is below 1e-12 (both params)") {
  auto bg = KahlerBackground::standard(3);
  std::mt19937_64 rng(17);
  for (auto param : {GrimParametrization::Angle, GrimParametrization::Arclength}) {
    GrimChart id = GrimChart::identity(3, param);
    GrimChart mv = GrimChart::moved(3, demo_motion(-0.7), param);
    for (int trial = 0; trial < 50; ++trial) {
      RVec x(3);
      const double lim = (param == GrimParametrization::Angle) ? 1.5 : 3.0;
      x << uniform_in(rng, -2, 2), uniform_in(rng, -2, 2),
          uniform_in(rng, -lim, lim);
      CHECK(std::abs(lagrangian_angles(chart_eval(id, x), bg).residual) < 1e-12);
      CHECK(std::abs(lagrangian_angles(chart_eval(mv, x), bg).residual) < 1e-12);
    }
  }
}

TEST_CASE("intersect: symmetric case lambda = 0") {
  for (double pm : {0.4, kPi / 2.0, 2.2}) {
    RigidMotionSpec spec;
    spec.phi = RVec(3);
    spec.phi << 0.3, 0.4, pm;
    spec.lambda = 0.0;
    const auto rec = intersect(spec);
    CHECK(rec.s0 == doctest::Approx(-pm / 2.0).epsilon(1e-11));
    CHECK(rec.s1 == doctest::Approx(pm / 2.0).epsilon(1e-11));
  }
}

TEST_CASE("intersect: phi_m = pi/2, lambda = 1 against the bisection oracle") {
  // oracle: pure long-double bisection of log cos(s+pi/2) - log cos(s) = 1,
  // frozen value; the closed form for phi_m = pi/2 is s0 = -atan(e^lambda).
  const double frozen = -1.2182829050172776;
  const double ours = oracle::bisect(
      [](double s) {
        return std::log(std::cos(s + kPi / 2.0)) - std::log(std::cos(s)) - 1.0;
      },
      -kPi / 2.0 + 1e-9, -1e-9, 1e-14);
  CHECK(ours == doctest::Approx(frozen).epsilon(1e-12));
  RigidMotionSpec spec = demo_motion(1.0);
  const auto rec = intersect(spec);
  CHECK(rec.s0 == doctest::Approx(frozen).epsilon(1e-12));
  CHECK(std::abs(std::log(std::cos(rec.s1)) - std::log(std::cos(rec.s0)) - 1.0) <
        1e-12);
}

TEST_CASE("intersect consistency: both charts meet at the recorded point") {
  for (double lam : {-2.0, -1.0, 0.0, 1.0, 2.0}) {
    RigidMotionSpec spec = demo_motion(lam);
    const auto rec = intersect(spec);
    GrimChart id = GrimChart::identity(3);
    GrimChart mv = GrimChart::moved(3, spec);
    RVec x0 = RVec::Zero(3), x1 = RVec::Zero(3);
    x0[2] = rec.s0;
    x1[2] = rec.s1;
    const CVec p0 = chart_eval(id, x0).point;
    const CVec p1 = chart_eval(mv, x1).point;
    CHECK((p0 - rec.point).norm() < 1e-10);
    CHECK((p1 - rec.point).norm() < 1e-10);
  }
}

TEST_CASE("cone angles at the intersection match the motion, any lambda") {
  auto bg = KahlerBackground::standard(3);
  RVec reference;
  std::vector<RVec> results;
  for (double lam : {-2.0, -1.0, 0.0, 1.0, 2.0}) {
    RigidMotionSpec spec = demo_motion(lam);
    const auto rec = intersect(spec);
    GrimChart id = GrimChart::identity(3);
    GrimChart mv = GrimChart::moved(3, spec);
    RVec x0 = RVec::Zero(3), x1 = RVec::Zero(3);
    x0[2] = rec.s0;
    x1[2] = rec.s1;
    const CMat ta = chart_eval(id, x0).jacobian;
    const CMat tb = chart_eval(mv, x1).jacobian;
    const RVec ang = principal_angles(ta, tb);
    results.push_back(ang);
    CHECK(std::abs(ang[0] - kPi / 4.0) < 1e-9);
    CHECK(std::abs(ang[1] - kPi / 4.0) < 1e-9);
    CHECK(std::abs(ang[2] - kPi / 2.0) < 1e-9);
  }
  for (const auto& r : results)
    CHECK((r - results[0]).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("the root s0(lambda) is strictly monotone") {
  double prev = 1e300;
  for (double lam = -3.0; lam <= 3.0; lam += 0.25) {
    RigidMotionSpec spec = demo_motion(lam);
    const double s0 = intersect(spec).s0;
    CHECK(s0 < prev);
    prev = s0;
  }
}

TEST_CASE("build_configuration: empty, single, and composed motions") {
  const auto empty = build_configuration({}, 3);
  CHECK(empty.charts.size() == 1);
  CHECK(empty.intersections.empty());

  const auto single = build_configuration({demo_motion(0.5)}, 3);
  CHECK(single.charts.size() == 2);
  CHECK(single.intersections.size() == 1);

  RigidMotionSpec second;
  second.phi = RVec(3);
  second.phi << kPi / 3.0, kPi / 3.0, kPi / 3.0;
  second.lambda = -4.0;
  const auto two = build_configuration({demo_motion(0.5), second}, 3);
  CHECK(two.charts.size() == 3);
  CHECK(two.intersections.size() == 2);
  // second record lives on the once-moved chart
  GrimChart c1 = two.charts[1];
  RVec x = RVec::Zero(3);
  x[2] = two.intersections[1].s0;
  if (c1.param == GrimParametrization::Arclength) x[2] = gudermann_inv(x[2]);
  CHECK((chart_eval(c1, x).point - two.intersections[1].point).norm() < 1e-10);
  CHECK(std::isfinite(two.t_finite_bound));
}

TEST_CASE("inadmissible motions are rejected by the builder") {
  RigidMotionSpec bad;
  bad.phi = RVec(3);
  bad.phi << 0.5, 0.5, 0.5;
  CHECK_THROWS_AS(build_configuration({bad}, 3), AngleConditionViolated);
}

TEST_CASE("T-finiteness: f attains an interior maximum and decays at the ends") {
  GrimChart id = GrimChart::identity(3);
  auto bg = KahlerBackground::standard(3);
  double worst = -1e300;
  for (double xm = -1.55; xm <= 1.55; xm += 0.01) {
    RVec x = RVec::Zero(3);
    x[2] = xm;
    worst = std::max(worst, bg.f(chart_eval(id, x).point));
  }
  CHECK(worst <= 0.0 + 1e-12);
  CHECK(worst == doctest::Approx(0.0).epsilon(1e-3));
  RVec edge = RVec::Zero(3);
  edge[2] = 1.5707;
  CHECK(bg.f(chart_eval(id, edge).point) < -10.0);
}

TEST_CASE("configuration JSON ingest") {
  const char* text = R"({
    "m": 3,
    "parametrization": "angle",
    "motions": [{"phi": [0.7853981633974483, 0.7853981633974483,
                          1.5707963267948966], "lambda": 1.0}]
  })";
  const auto cfg = configuration_from_json(text);
  CHECK(cfg.m == 3);
  CHECK(cfg.param == GrimParametrization::Angle);
  CHECK(cfg.intersections.size() == 1);
  CHECK(cfg.intersections[0].s0 == doctest::Approx(-1.2182829050172776));
}
