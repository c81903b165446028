#include "tsol/grim.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace tsol {

void RigidMotionSpec::validate() const {
  if (phi.size() < 2) throw ConfigError("RigidMotionSpec: need m >= 2 angles");
  for (int j = 0; j < phi.size(); ++j)
    if (!(phi[j] > 0.0 && phi[j] < kPi))
      throw ConfigError("RigidMotionSpec: phi_" + std::to_string(j + 1) +
                        " outside (0, pi)");
}

CVec apply_motion(const RigidMotionSpec& spec, const CVec& z) {
  const int m = spec.dim();
  if (z.size() != m) throw ConfigError("apply_motion: dimension mismatch");
  CVec out(m);
  for (int j = 0; j < m - 1; ++j)
    out[j] = std::polar(1.0, spec.phi[j]) * z[j];
  out[m - 1] = z[m - 1] + Complex(spec.lambda, spec.phi[m - 1]);
  return out;
}

AffineMotion AffineMotion::identity(int m) {
  AffineMotion a;
  a.phases = RVec::Zero(m - 1);
  a.shift = Complex(0.0, 0.0);
  return a;
}

AffineMotion AffineMotion::then(const RigidMotionSpec& next) const {
  const int m = static_cast<int>(phases.size()) + 1;
  if (next.dim() != m) throw ConfigError("AffineMotion::then: dimension mismatch");
  AffineMotion out;
  out.phases = phases + next.phi.head(m - 1);
  out.shift = shift + Complex(next.lambda, next.phi[m - 1]);
  return out;
}

CVec AffineMotion::apply(const CVec& z) const {
  const int m = static_cast<int>(phases.size()) + 1;
  CVec out(m);
  for (int j = 0; j < m - 1; ++j) out[j] = std::polar(1.0, phases[j]) * z[j];
  out[m - 1] = z[m - 1] + shift;
  return out;
}

CVec AffineMotion::rotate(const CVec& v) const {
  const int m = static_cast<int>(phases.size()) + 1;
  CVec out(m);
  for (int j = 0; j < m - 1; ++j) out[j] = std::polar(1.0, phases[j]) * v[j];
  out[m - 1] = v[m - 1];
  return out;
}

GrimChart GrimChart::identity(int m, GrimParametrization p) {
  GrimChart c;
  c.m = m;
  c.motion = AffineMotion::identity(m);
  c.param = p;
  return c;
}

GrimChart GrimChart::moved(int m, const RigidMotionSpec& spec, GrimParametrization p) {
  spec.validate();
  GrimChart c;
  c.m = m;
  c.motion = AffineMotion::identity(m).then(spec);
  c.param = p;
  return c;
}

namespace {

// Curve data for the phase-0 profile gamma_0(x) = -log cos x - i(x - pi/2),
// reported in whichever parametrization the chart uses.
struct CurvePoint {
  Complex value;   // gamma_0 at the parameter
  Complex d1;      // first derivative w.r.t. the chart parameter
  Complex d2;      // second derivative
};

CurvePoint curve_eval(GrimParametrization param, double p) {
  CurvePoint c;
  if (param == GrimParametrization::Angle) {
    if (!(p > -0.5 * kPi && p < 0.5 * kPi))
      throw OutOfDomain("chart_eval: angle parameter outside (-pi/2, pi/2)");
    c.value = Complex(-std::log(std::cos(p)), -(p - 0.5 * kPi));
    c.d1 = Complex(std::tan(p), -1.0);
    const double sec2 = 1.0 / (std::cos(p) * std::cos(p));
    c.d2 = Complex(sec2, 0.0);
  } else {
    // unit-speed: x = gd(s), cos x = sech s, tangent = -i e^{i x}
    const double x = gudermann(p);
    c.value = Complex(std::log(std::cosh(p)), -(x - 0.5 * kPi));
    c.d1 = Complex(std::tanh(p), -1.0 / std::cosh(p));
    const double sech = 1.0 / std::cosh(p);
    // d/ds(-i e^{ix}) = e^{ix} cos x
    c.d2 = Complex(std::cos(x) * sech, std::sin(x) * sech);
  }
  return c;
}

}  // namespace

Frame chart_eval(const GrimChart& chart, const RVec& params) {
  const int m = chart.m;
  if (params.size() != m) throw ConfigError("chart_eval: parameter dimension mismatch");
  const CurvePoint c = curve_eval(chart.param, params[m - 1]);
  CVec base(m);
  for (int j = 0; j < m - 1; ++j) base[j] = Complex(params[j], 0.0);
  base[m - 1] = c.value;
  Frame frame;
  frame.point = chart.motion.apply(base);
  frame.jacobian = CMat::Zero(m, m);
  CVec col = CVec::Zero(m);
  for (int j = 0; j < m - 1; ++j) {
    col.setZero();
    col[j] = Complex(1.0, 0.0);
    frame.jacobian.col(j) = chart.motion.rotate(col);
  }
  col.setZero();
  col[m - 1] = c.d1;
  frame.jacobian.col(m - 1) = chart.motion.rotate(col);
  frame.hessian.assign(m, CMat::Zero(m, m));
  col.setZero();
  col[m - 1] = c.d2;
  frame.hessian[m - 1].col(m - 1) = chart.motion.rotate(col);
  return frame;
}

IntersectionRecord intersect(const RigidMotionSpec& spec) {
  spec.validate();
  const int m = spec.dim();
  const double pm = spec.phi[m - 1];
  const double lam = spec.lambda;
  // h(s) = log cos(s + pm) - log cos(s) - lam is strictly decreasing on
  // (-pi/2, pi/2 - pm), with limits +inf / -inf at the ends.
  auto h = [&](double s) {
    return std::log(std::cos(s + pm)) - std::log(std::cos(s)) - lam;
  };
  const double lo_lim = -0.5 * kPi;
  const double hi_lim = 0.5 * kPi - pm;
  double lo = lo_lim + 1e-12 * (hi_lim - lo_lim);
  double hi = hi_lim - 1e-12 * (hi_lim - lo_lim);
  // pull the endpoints in until the bracket is sign-changing
  int guard = 0;
  while (h(lo) < 0.0) {
    lo = lo_lim + 0.5 * (lo - lo_lim);
    if (++guard > 200) throw NoIntersection("intersect: no bracket at lower end");
  }
  guard = 0;
  while (h(hi) > 0.0) {
    hi = hi_lim - 0.5 * (hi_lim - hi);
    if (++guard > 200) throw NoIntersection("intersect: no bracket at upper end");
  }
  while (hi - lo > 1e-10) {
    const double mid = 0.5 * (lo + hi);
    (h(mid) > 0.0 ? lo : hi) = mid;
  }
  double s0 = 0.5 * (lo + hi);
  for (int it = 0; it < 5; ++it) {
    const double hp = -std::tan(s0 + pm) + std::tan(s0);
    const double step = h(s0) / hp;
    const double next = s0 - step;
    if (next > lo_lim && next < hi_lim) s0 = next;
    if (std::abs(step) < 1e-16) break;
  }
  IntersectionRecord rec;
  rec.s0 = s0;
  rec.s1 = s0 + pm;
  rec.rate = 3;
  rec.cone_angles = spec.phi;
  std::sort(rec.cone_angles.data(), rec.cone_angles.data() + m);
  GrimChart id = GrimChart::identity(m);
  RVec x = RVec::Zero(m);
  x[m - 1] = s0;
  rec.point = chart_eval(id, x).point;
  // cross-check against the moved chart
  GrimChart mv = GrimChart::moved(m, spec);
  x[m - 1] = rec.s1;
  const CVec other = chart_eval(mv, x).point;
  if ((other - rec.point).norm() > 1e-10)
    throw NoIntersection("intersect: defining equation residual too large");
  return rec;
}

CsConfiguration build_configuration(const std::vector<RigidMotionSpec>& motions,
                                    int m, GrimParametrization param) {
  CsConfiguration cfg;
  cfg.m = m;
  cfg.param = param;
  cfg.motions = motions;
  cfg.charts.push_back(GrimChart::identity(m, param));
  AffineMotion acc = AffineMotion::identity(m);
  for (const auto& spec : motions) {
    spec.validate();
    if (!spec.admissible())
      throw AngleConditionViolated("build_configuration: angle sum differs from pi");
    IntersectionRecord rec = intersect(spec);
    rec.point = acc.apply(rec.point);
    cfg.intersections.push_back(rec);
    acc = acc.then(spec);
    GrimChart c;
    c.m = m;
    c.motion = acc;
    c.param = param;
    cfg.charts.push_back(c);
  }
  // T-finiteness bound: f = 2<F,T> = -2 Re(F_m) peaks at the curve apex.
  double bound = -1e300;
  for (const auto& chart : cfg.charts)
    bound = std::max(bound, -2.0 * chart.motion.shift.real());
  cfg.t_finite_bound = bound;
  // coarse sampling for unintended intersections between non-consecutive charts
  const int nc = static_cast<int>(cfg.charts.size());
  auto samples = [&](const GrimChart& chart) {
    std::vector<CVec> pts;
    const int na = 17, nr = 5;
    for (int ia = 0; ia < na; ++ia) {
      const double xm = -0.5 * kPi + (ia + 0.5) * kPi / na;
      for (int ir = 0; ir < nr; ++ir) {
        RVec x = RVec::Zero(m);
        x[0] = -2.0 + ir;  // flat directions are translation-invariant
        x[m - 1] = (chart.param == GrimParametrization::Angle) ? xm
                                                               : gudermann_inv(xm);
        pts.push_back(chart_eval(chart, x).point);
      }
    }
    return pts;
  };
  std::vector<std::vector<CVec>> pts(nc);
  for (int i = 0; i < nc; ++i) pts[i] = samples(cfg.charts[i]);
  for (int i = 0; i < nc; ++i)
    for (int j = i + 2; j < nc; ++j) {
      double dmin = 1e300;
      for (const auto& a : pts[i])
        for (const auto& b : pts[j]) dmin = std::min(dmin, (a - b).norm());
      if (dmin < 5e-2) cfg.extra_intersections.emplace_back(i, j);
    }
  return cfg;
}

CsConfiguration configuration_from_json(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  const int m = j.at("m").get<int>();
  GrimParametrization param = GrimParametrization::Arclength;
  if (j.contains("parametrization")) {
    const std::string p = j["parametrization"].get<std::string>();
    if (p == "angle")
      param = GrimParametrization::Angle;
    else if (p == "arclength")
      param = GrimParametrization::Arclength;
    else
      throw ConfigError("configuration_from_json: unknown parametrization '" + p + "'");
  }
  std::vector<RigidMotionSpec> motions;
  for (const auto& jm : j.at("motions")) {
    RigidMotionSpec spec;
    const auto phis = jm.at("phi").get<std::vector<double>>();
    if (static_cast<int>(phis.size()) != m)
      throw ConfigError("configuration_from_json: motion phi length != m");
    spec.phi = Eigen::Map<const RVec>(phis.data(), m);
    spec.lambda = jm.value("lambda", 0.0);
    motions.push_back(spec);
  }
  return build_configuration(motions, m, param);
}

}  // namespace tsol
