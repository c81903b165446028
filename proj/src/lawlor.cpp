#include "tsol/lawlor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "tsol/quadrature.hpp"
#include "tsol/report.hpp"

namespace tsol {

void LawlorParams::validate() const {
  if (dim() < 3) throw ConfigError("LawlorParams: the neck family needs m >= 3");
  for (int j = 0; j < dim(); ++j)
    if (!(a[j] > 0.0)) throw ConfigError("LawlorParams: a_j must be positive");
}

ProfilePoly ProfilePoly::from_params(const LawlorParams& p) {
  const int m = p.dim();
  std::vector<double> c(m + 1, 0.0);
  c[0] = 1.0;
  for (int j = 0; j < m; ++j)
    for (int k = j + 1; k >= 1; --k) c[k] += p.a[j] * c[k - 1];
  ProfilePoly poly;
  poly.e = Eigen::Map<const RVec>(c.data() + 1, m);
  return poly;
}

double ProfilePoly::eval(double x) const {
  const double u = x * x;
  double v = 0.0;
  for (int k = static_cast<int>(e.size()) - 1; k >= 0; --k) v = v * u + e[k];
  return v;
}

double ProfilePoly::deriv(double x) const {
  const double u = x * x;
  double v = 0.0;
  for (int k = static_cast<int>(e.size()) - 1; k >= 1; --k)
    v = v * u + 2.0 * k * e[k];
  return v * x;
}

double ProfilePoly::eval_reciprocal(double s) const {
  const double u = s * s;
  double v = 0.0;
  for (int k = 0; k < e.size(); ++k) v = v * u + e[k];
  return v;
}

void AngleData::validate() const {
  if (dim() < 3) throw ConfigError("AngleData: need m >= 3");
  for (int j = 0; j < dim(); ++j)
    if (!(phi[j] > 0.0 && phi[j] < kPi))
      throw ConfigError("AngleData: phi_j outside (0, pi)");
  if (!(A > 0.0)) throw ConfigError("AngleData: A must be positive");
  if (std::abs(angle_sum_defect()) > 1e-6)
    throw AngleConditionViolated("AngleData: angle sum differs from pi");
}

AngleData angles_from_params(const LawlorParams& params, double tol) {
  params.validate();
  if (tol < 1e-12) throw ConfigError("angles_from_params: tol below 1e-12");
  const ProfilePoly P = ProfilePoly::from_params(params);
  const int m = params.dim();
  AngleData out;
  out.phi.resize(m);
  for (int j = 0; j < m; ++j) {
    const double aj = params.a[j];
    out.phi[j] = 2.0 * aj * integrate_half_line(
        [&](double x) {
          return 1.0 / ((1.0 + aj * x * x) * std::sqrt(P.eval(x)));
        },
        0.5 * tol);
  }
  out.A = integrate_half_line(
      [&](double x) { return 1.0 / std::sqrt(P.eval(x)); }, 0.5 * tol);
  return out;
}

LawlorParams scale_params(const LawlorParams& p, double c) {
  LawlorParams out;
  out.a = p.a / (c * c);
  return out;
}

LawlorParams params_from_angles(const AngleData& target, double tol) {
  target.validate();
  const int m = target.dim();
  const double qtol = std::min(1e-10, 1e-2 * tol);

  // a(r): a_m = 1, a_j = exp(r_j), then rescaled so A matches exactly.
  auto assemble = [&](const RVec& r) {
    LawlorParams p;
    p.a.resize(m);
    for (int j = 0; j < m - 1; ++j) p.a[j] = std::exp(r[j]);
    p.a[m - 1] = 1.0;
    AngleData ad = angles_from_params(p, qtol);
    p.a *= ad.A / target.A;  // a -> a / c^2 with c^2 = target.A / ad.A
    return p;
  };
  auto residual = [&](const RVec& r, LawlorParams& p_out) {
    p_out = assemble(r);
    const AngleData ad = angles_from_params(p_out, qtol);
    RVec res(m - 1);
    for (int j = 0; j < m - 1; ++j) res[j] = ad.phi[j] - target.phi[j];
    return res;
  };

  RVec r(m - 1);
  for (int j = 0; j < m - 1; ++j)
    r[j] = 2.0 * std::log(target.phi[j] / target.phi[m - 1]);
  LawlorParams best;
  RVec res = residual(r, best);
  double best_norm = res.cwiseAbs().maxCoeff();
  for (int it = 0; it < 50; ++it) {
    if (best_norm < tol) return best;
    RMat Jac(m - 1, m - 1);
    const double h = 1e-5;
    for (int k = 0; k < m - 1; ++k) {
      RVec rp = r, rm = r;
      rp[k] += h;
      rm[k] -= h;
      LawlorParams dummy;
      Jac.col(k) = (residual(rp, dummy) - residual(rm, dummy)) / (2.0 * h);
    }
    const RVec step = Jac.fullPivLu().solve(res);
    double damping = 1.0;
    bool improved = false;
    for (int half = 0; half < 8; ++half) {
      const RVec r_try = r - damping * step;
      LawlorParams p_try;
      const RVec res_try = residual(r_try, p_try);
      const double norm_try = res_try.cwiseAbs().maxCoeff();
      if (norm_try < best_norm) {
        r = r_try;
        res = res_try;
        best = p_try;
        best_norm = norm_try;
        improved = true;
        break;
      }
      damping *= 0.5;
    }
    if (!improved) break;
  }
  if (best_norm < tol) return best;
  throw InversionFailure("params_from_angles: Newton stagnated", best.a, best_norm);
}

double y_max_for_tail(const LawlorParams& params, double tol) {
  const ProfilePoly P = ProfilePoly::from_params(params);
  const int m = params.dim();
  const double em = P.e[m - 1];
  const double y = std::pow(1.0 / (m * std::sqrt(em) * tol), 1.0 / m);
  return std::max(4.0, y);
}

namespace {

// Tail integral a_j Int_y^inf dx/((1+a_j x^2) sqrt(P)) via s = 1/x.
double psi_tail(const ProfilePoly& P, double aj, double y, double tol) {
  const int m = static_cast<int>(P.e.size());
  return adaptive_integrate(
      [&](double s) {
        const double Q = P.eval_reciprocal(s);
        return aj * std::pow(s, m - 1) / ((s * s + aj) * std::sqrt(Q));
      },
      0.0, 1.0 / y, tol);
}

}  // namespace

NeckProfile psi_profile(const LawlorParams& params, double y_max, int n,
                        double quad_tol) {
  params.validate();
  if (!(y_max > 0.0)) throw ConfigError("psi_profile: y_max must be positive");
  if (n < 64) throw ConfigError("psi_profile: need n >= 64 grid nodes");
  if (n % 2 == 0) ++n;  // keep a node at y = 0
  const int m = params.dim();
  const ProfilePoly P = ProfilePoly::from_params(params);

  NeckProfile prof;
  prof.params = params;
  prof.angle_data = angles_from_params(params, quad_tol);
  prof.y_max = y_max;
  prof.y_grid.resize(n);
  for (int k = 0; k < n; ++k)
    prof.y_grid[k] = -y_max + 2.0 * y_max * k / (n - 1);
  prof.psi_values.resize(n, m);
  prof.psi_slopes.resize(n, m);

  RVec psi(m);
  for (int j = 0; j < m; ++j)
    psi[j] = psi_tail(P, params.a[j], y_max, 0.1 * quad_tol);
  prof.psi_values.row(0) = psi.transpose();
  for (int k = 0; k + 1 < n; ++k) {
    const double a = prof.y_grid[k];
    const double b = prof.y_grid[k + 1];
    // one Kronrod panel per interval, all components sharing sqrt(P)
    static const double xk[8] = {
        0.0, 0.405845151377397166906606412076961,
        0.741531185599394439863864773280788,
        0.949107912342758524526189684047851,
        0.207784955007898467600689403773245,
        0.586087235467691130294144838258730,
        0.864864423359769072789712788640926,
        0.991455371120812639206854697526329};
    static const double wk[8] = {
        0.209482141084727828012999174891714,
        0.190350578064785409913256402421014,
        0.140653259715525918745189590510238,
        0.063092092629978553290700663189204,
        0.204432940075298892414161999234649,
        0.169004726639267902826583426598550,
        0.104790010322250183839876322541518,
        0.022935322010529224963732008058970};
    const double c = 0.5 * (a + b), h = 0.5 * (b - a);
    RVec acc = RVec::Zero(m);
    auto add_at = [&](double y, double w) {
      const double sp = std::sqrt(P.eval(y));
      for (int j = 0; j < m; ++j)
        acc[j] += w * params.a[j] / ((1.0 + params.a[j] * y * y) * sp);
    };
    add_at(c, wk[0]);
    for (int i = 1; i < 8; ++i) {
      add_at(c + h * xk[i], wk[i]);
      add_at(c - h * xk[i], wk[i]);
    }
    psi += h * acc;
    prof.psi_values.row(k + 1) = psi.transpose();
  }
  for (int k = 0; k < n; ++k) {
    const double y = prof.y_grid[k];
    const double sp = std::sqrt(P.eval(y));
    for (int j = 0; j < m; ++j)
      prof.psi_slopes(k, j) = params.a[j] / ((1.0 + params.a[j] * y * y) * sp);
  }
  // Fritsch-Carlson safeguard; exact slopes of the monotone integrand on a
  // fine grid stay inside the region, so this is a no-op in practice.
  for (int j = 0; j < m; ++j) {
    for (int k = 0; k + 1 < n; ++k) {
      const double hseg = prof.y_grid[k + 1] - prof.y_grid[k];
      const double delta =
          (prof.psi_values(k + 1, j) - prof.psi_values(k, j)) / hseg;
      if (delta <= 0.0) continue;
      const double al = prof.psi_slopes(k, j) / delta;
      const double be = prof.psi_slopes(k + 1, j) / delta;
      const double r2 = al * al + be * be;
      if (r2 > 9.0) {
        const double s = 3.0 / std::sqrt(r2);
        prof.psi_slopes(k, j) = s * al * delta;
        prof.psi_slopes(k + 1, j) = s * be * delta;
      }
    }
  }
  prof.tail_coeff.resize(m);
  for (int j = 0; j < m; ++j)
    prof.tail_coeff[j] =
        (prof.angle_data.phi[j] - prof.psi_values(n - 1, j)) * std::pow(y_max, m);
  return prof;
}

double NeckProfile::psi(int j, double y) const {
  const int m = params.dim();
  if (y > y_max)
    return angle_data.phi[j] - tail_coeff[j] * std::pow(y, -m);
  if (y < -y_max) return tail_coeff[j] * std::pow(-y, -m);
  const int n = static_cast<int>(y_grid.size());
  const double step = 2.0 * y_max / (n - 1);
  int k = static_cast<int>(std::floor((y + y_max) / step));
  k = std::clamp(k, 0, n - 2);
  const double h = y_grid[k + 1] - y_grid[k];
  const double s = (y - y_grid[k]) / h;
  const double s2 = s * s, s3 = s2 * s;
  const double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s;
  const double h01 = -2 * s3 + 3 * s2, h11 = s3 - s2;
  return h00 * psi_values(k, j) + h * h10 * psi_slopes(k, j) +
         h01 * psi_values(k + 1, j) + h * h11 * psi_slopes(k + 1, j);
}

double NeckProfile::psi_deriv(int j, double y) const {
  const ProfilePoly P = ProfilePoly::from_params(params);
  const double aj = params.a[j];
  return aj / ((1.0 + aj * y * y) * std::sqrt(P.eval(y)));
}

double NeckProfile::psi_deriv2(int j, double y) const {
  const ProfilePoly P = ProfilePoly::from_params(params);
  const double aj = params.a[j];
  const double q = 1.0 + aj * y * y;
  const double Pv = P.eval(y);
  const double Pd = P.deriv(y);
  return aj * (-2.0 * aj * y / (q * q * std::sqrt(Pv)) -
               0.5 * Pd / (q * std::pow(Pv, 1.5)));
}

Complex NeckProfile::z(int j, double y) const {
  const double rho = std::sqrt(1.0 / params.a[j] + y * y);
  return std::polar(rho, psi(j, y));
}

Complex NeckProfile::dz(int j, double y) const {
  const double rho = std::sqrt(1.0 / params.a[j] + y * y);
  const double rho_d = y / rho;
  const Complex phase = std::polar(1.0, psi(j, y));
  return phase * (Complex(0.0, psi_deriv(j, y)) * rho + rho_d);
}

Complex NeckProfile::d2z(int j, double y) const {
  const double rho = std::sqrt(1.0 / params.a[j] + y * y);
  const double rho_d = y / rho;
  const double rho_dd = (1.0 / params.a[j]) / (rho * rho * rho);
  const double p1 = psi_deriv(j, y);
  const double p2 = psi_deriv2(j, y);
  const Complex phase = std::polar(1.0, psi(j, y));
  return phase * (Complex(-p1 * p1 * rho + rho_dd, p2 * rho + 2.0 * p1 * rho_d));
}

RMat sphere_tangent_basis(const RVec& x) {
  const int m = static_cast<int>(x.size());
  RMat basis(m, m - 1);
  RVec v = x;
  v[0] -= 1.0;
  if (v.norm() < 1e-8) {
    basis.setZero();
    for (int j = 0; j < m - 1; ++j) basis(j + 1, j) = 1.0;
    return basis;
  }
  v.normalize();
  for (int j = 0; j < m - 1; ++j) {
    RVec e = RVec::Zero(m);
    e[j + 1] = 1.0;
    basis.col(j) = e - 2.0 * v * (v.dot(e));
  }
  return basis;
}

Frame neck_eval(const NeckProfile& profile, const RVec& x, double y, double t,
                const RMat* sphere_basis, bool with_hessian) {
  const int m = profile.params.dim();
  if (x.size() != m) throw ConfigError("neck_eval: point dimension mismatch");
  if (std::abs(x.norm() - 1.0) > 1e-10)
    throw ConfigError("neck_eval: x must be a unit vector");
  if (!(t > 0.0)) throw ConfigError("neck_eval: scale t must be positive");
  RMat basis;
  if (sphere_basis) {
    if (sphere_basis->rows() != m || sphere_basis->cols() != m - 1)
      throw ConfigError("neck_eval: sphere basis has wrong shape");
    basis = *sphere_basis;
  } else {
    basis = sphere_tangent_basis(x);
  }
  CVec zv(m), dzv(m);
  for (int j = 0; j < m; ++j) {
    zv[j] = profile.z(j, y);
    dzv[j] = profile.dz(j, y);
  }
  Frame frame;
  frame.point = t * (x.cast<Complex>().cwiseProduct(zv));
  frame.jacobian.resize(m, m);
  for (int c = 0; c < m - 1; ++c)
    frame.jacobian.col(c) = t * basis.col(c).cast<Complex>().cwiseProduct(zv);
  frame.jacobian.col(m - 1) = t * x.cast<Complex>().cwiseProduct(dzv);
  if (with_hessian) {
    // geodesic normal coordinates at x in the sphere directions
    CVec d2zv(m);
    for (int j = 0; j < m; ++j) d2zv[j] = profile.d2z(j, y);
    frame.hessian.assign(m, CMat::Zero(m, m));
    for (int a = 0; a < m - 1; ++a) {
      frame.hessian[a].col(a) = -t * x.cast<Complex>().cwiseProduct(zv);
      frame.hessian[a].col(m - 1) =
          t * basis.col(a).cast<Complex>().cwiseProduct(dzv);
      frame.hessian[m - 1].col(a) = frame.hessian[a].col(m - 1);
    }
    frame.hessian[m - 1].col(m - 1) = t * x.cast<Complex>().cwiseProduct(d2zv);
  }
  return frame;
}

std::string profile_to_json(const NeckProfile& profile) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["a"] = std::vector<double>(profile.params.a.data(),
                               profile.params.a.data() + profile.params.dim());
  j["phi"] = std::vector<double>(profile.angle_data.phi.data(),
                                 profile.angle_data.phi.data() +
                                     profile.angle_data.dim());
  j["A"] = profile.angle_data.A;
  j["y_max"] = profile.y_max;
  j["y_grid"] = std::vector<double>(profile.y_grid.data(),
                                    profile.y_grid.data() + profile.y_grid.size());
  const int n = static_cast<int>(profile.y_grid.size());
  const int m = profile.params.dim();
  std::vector<std::vector<double>> psi(m), slopes(m);
  for (int c = 0; c < m; ++c) {
    psi[c].resize(n);
    slopes[c].resize(n);
    for (int k = 0; k < n; ++k) {
      psi[c][k] = profile.psi_values(k, c);
      slopes[c][k] = profile.psi_slopes(k, c);
    }
  }
  j["psi"] = psi;
  j["psi_slopes"] = slopes;
  j["tail_coeff"] = std::vector<double>(profile.tail_coeff.data(),
                                        profile.tail_coeff.data() + m);
  return j.dump(2);
}

NeckProfile profile_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  if (j.at("format_version").get<int>() != 1)
    throw ConfigError("profile_from_json: unsupported format version");
  NeckProfile p;
  const auto a = j.at("a").get<std::vector<double>>();
  p.params.a = Eigen::Map<const RVec>(a.data(), a.size());
  const auto phi = j.at("phi").get<std::vector<double>>();
  p.angle_data.phi = Eigen::Map<const RVec>(phi.data(), phi.size());
  p.angle_data.A = j.at("A").get<double>();
  p.y_max = j.at("y_max").get<double>();
  const auto yg = j.at("y_grid").get<std::vector<double>>();
  p.y_grid = Eigen::Map<const RVec>(yg.data(), yg.size());
  const auto psi = j.at("psi").get<std::vector<std::vector<double>>>();
  const auto slopes = j.at("psi_slopes").get<std::vector<std::vector<double>>>();
  const int m = static_cast<int>(a.size());
  const int n = static_cast<int>(yg.size());
  p.psi_values.resize(n, m);
  p.psi_slopes.resize(n, m);
  for (int c = 0; c < m; ++c)
    for (int k = 0; k < n; ++k) {
      p.psi_values(k, c) = psi[c][k];
      p.psi_slopes(k, c) = slopes[c][k];
    }
  const auto tails = j.at("tail_coeff").get<std::vector<double>>();
  p.tail_coeff = Eigen::Map<const RVec>(tails.data(), tails.size());
  return p;
}

void save_profile(const NeckProfile& profile, const std::string& path) {
  atomic_write_text(path, profile_to_json(profile));
}

NeckProfile load_profile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("load_profile: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return profile_from_json(text);
}

}  // namespace tsol
