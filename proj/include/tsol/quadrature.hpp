#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "tsol/types.hpp"

namespace tsol {

// Gauss(7)/Kronrod(15) panel: returns {K15 value, |K15 - G7| error estimate}.
template <typename F>
std::pair<double, double> gk15_panel(const F& f, double a, double b) {
  static const double xk[8] = {
      0.0,
      0.405845151377397166906606412076961,
      0.741531185599394439863864773280788,
      0.949107912342758524526189684047851,
      0.207784955007898467600689403773245,
      0.586087235467691130294144838258730,
      0.864864423359769072789712788640926,
      0.991455371120812639206854697526329};
  static const double wg[4] = {
      0.417959183673469387755102040816327,
      0.381830050505118944950369775488975,
      0.279705391489276667901467771423780,
      0.129484966168869693270611432679082};
  static const double wk[8] = {
      0.209482141084727828012999174891714,
      0.190350578064785409913256402421014,
      0.140653259715525918745189590510238,
      0.063092092629978553290700663189204,
      0.204432940075298892414161999234649,
      0.169004726639267902826583426598550,
      0.104790010322250183839876322541518,
      0.022935322010529224963732008058970};
  const double c = 0.5 * (a + b);
  const double h = 0.5 * (b - a);
  const double f0 = f(c);
  double g7 = wg[0] * f0;
  double k15 = wk[0] * f0;
  for (int i = 1; i < 4; ++i) {
    const double y = f(c + h * xk[i]) + f(c - h * xk[i]);
    g7 += wg[i] * y;
    k15 += wk[i] * y;
  }
  for (int i = 4; i < 8; ++i) {
    const double y = f(c + h * xk[i]) + f(c - h * xk[i]);
    k15 += wk[i] * y;
  }
  g7 *= h;
  k15 *= h;
  return {k15, std::abs(k15 - g7)};
}

// Adaptive bisection on [a, b] down to an absolute tolerance.
template <typename F>
double adaptive_integrate(const F& f, double a, double b, double tol,
                          int max_panels = 4000) {
  struct Seg {
    double a, b, val, err;
  };
  auto [v0, e0] = gk15_panel(f, a, b);
  std::vector<Seg> segs{{a, b, v0, e0}};
  int used = 1;
  while (true) {
    double err = 0.0;
    for (const auto& s : segs) err += s.err;
    if (err <= tol) break;
    // split the worst segment
    std::size_t iw = 0;
    for (std::size_t i = 1; i < segs.size(); ++i)
      if (segs[i].err > segs[iw].err) iw = i;
    if (++used > max_panels)
      throw QuadratureFailure("adaptive_integrate: panel budget exhausted");
    Seg s = segs[iw];
    const double mid = 0.5 * (s.a + s.b);
    auto [vl, el] = gk15_panel(f, s.a, mid);
    auto [vr, er] = gk15_panel(f, mid, s.b);
    segs[iw] = {s.a, mid, vl, el};
    segs.push_back({mid, s.b, vr, er});
  }
  // fixed-order reduction for reproducibility
  std::sort(segs.begin(), segs.end(),
            [](const Seg& x, const Seg& y) { return x.a < y.a; });
  StableSum sum;
  for (const auto& s : segs) sum.add(s.val);
  return sum.value();
}

// Integral of f over (0, inf) via x = tan(u), u in (0, pi/2).
template <typename F>
double integrate_half_line(const F& f, double tol, int max_panels = 4000) {
  auto g = [&f](double u) {
    const double c = std::cos(u);
    const double x = std::tan(u);
    return f(x) / (c * c);
  };
  return adaptive_integrate(g, 0.0, 0.5 * kPi, tol, max_panels);
}

// Gauss-Legendre nodes/weights on [-1, 1] by Newton on the Legendre recurrence.
inline void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double z = std::cos(kPi * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
      }
      pp = n * (z * p0 - p1) / (z * z - 1.0);
      const double dz = p0 / pp;
      z -= dz;
      if (std::abs(dz) < 1e-15) break;
    }
    x[i] = -z;
    x[n - 1 - i] = z;
    w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
    w[n - 1 - i] = w[i];
  }
}

// Product quadrature on the unit sphere S^{m-1}. For m = 3 the polar factor
// is Gauss-Legendre in cos(theta), exact for spherical polynomials of degree
// <= min(2*n_polar - 1, n_azimuth - 1). For m > 3 the polar angles use
// Gauss-Legendre in theta with the sin-power weight folded into the node
// weight; spectrally accurate for smooth integrands, cost n_polar^{m-3} *
// n_polar * n_azimuth nodes.
struct SphereRule {
  RMat points;   // rows = nodes, cols = m ambient coordinates
  RVec weights;  // sums to vol(S^{m-1})
};

inline SphereRule sphere_product_rule(int m, int n_polar, int n_azimuth) {
  if (m < 2) throw ConfigError("sphere_product_rule: need m >= 2");
  SphereRule rule;
  if (m == 2) {
    rule.points.resize(n_azimuth, 2);
    rule.weights.resize(n_azimuth);
    for (int k = 0; k < n_azimuth; ++k) {
      const double ph = 2.0 * kPi * k / n_azimuth;
      rule.points.row(k) << std::cos(ph), std::sin(ph);
      rule.weights[k] = 2.0 * kPi / n_azimuth;
    }
    return rule;
  }
  SphereRule sub = sphere_product_rule(m - 1, n_polar, n_azimuth);
  std::vector<double> gx, gw;
  gauss_legendre(n_polar, gx, gw);
  const int n = n_polar * static_cast<int>(sub.weights.size());
  rule.points.resize(n, m);
  rule.weights.resize(n);
  int row = 0;
  for (int i = 0; i < n_polar; ++i) {
    double c, s, wpol;
    if (m == 3) {
      c = gx[i];  // node in cos(theta); the d(cos) weight is flat
      s = std::sqrt(1.0 - c * c);
      wpol = gw[i];
    } else {
      const double th = 0.5 * kPi * (gx[i] + 1.0);
      c = std::cos(th);
      s = std::sin(th);
      wpol = 0.5 * kPi * gw[i] * std::pow(s, m - 2);
    }
    for (int j = 0; j < sub.weights.size(); ++j) {
      rule.points.block(row, 0, 1, m - 1) = s * sub.points.row(j);
      rule.points(row, m - 1) = c;
      rule.weights[row] = wpol * sub.weights[j];
      ++row;
    }
  }
  return rule;
}

inline double sphere_volume(int m) {
  // vol(S^{m-1}) = 2 pi^{m/2} / Gamma(m/2)
  return 2.0 * std::pow(kPi, 0.5 * m) / std::tgamma(0.5 * m);
}

}  // namespace tsol
