#include "tsol/weighted.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "tsol/report.hpp"

namespace tsol {

void WeightSpec::validate_basic() const {
  if (k < 0 || k > 3) throw ConfigError("WeightSpec: k must be 0..3");
  if (!(p > 1.0)) throw ConfigError("WeightSpec: p must exceed 1");
}

WeightSpec WeightSpec::analysis_preset(int m, int k, double p, double beta,
                                       double gamma) {
  WeightSpec spec;
  spec.k = k;
  spec.p = p;
  spec.beta = beta;
  spec.gamma = gamma;
  spec.validate_basic();
  if (!(beta > -1.0 && beta < 0.0))
    throw ConfigError("WeightSpec: analysis preset needs beta in (-1, 0)");
  if (!(gamma > 2.0 - m && gamma < 0.0))
    throw ConfigError("WeightSpec: analysis preset needs gamma in (2-m, 0)");
  return spec;
}

double weighted_norm(const FieldSamples& samples, const WeightSpec& spec) {
  spec.validate_basic();
  if (static_cast<int>(samples.deriv_norms.size()) < spec.k + 1)
    throw IncompleteField("weighted_norm: missing derivative samples for k >= " +
                          std::to_string(spec.k));
  const Eigen::Index n = samples.weights.size();
  for (int j = 0; j <= spec.k; ++j)
    if (samples.deriv_norms[j].size() != n)
      throw IncompleteField("weighted_norm: sample arrays disagree in length");
  StableSum acc;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double env = std::exp(0.5 * spec.beta * samples.f[i]);
    const double measure = std::pow(samples.rho[i], -samples.m) * samples.weights[i];
    for (int j = 0; j <= spec.k; ++j) {
      const double term = env * std::pow(samples.rho[i], -spec.gamma + j) *
                          std::abs(samples.deriv_norms[j][i]);
      acc.add(std::pow(term, spec.p) * measure);
    }
  }
  return std::pow(acc.value(), 1.0 / spec.p);
}

ThetaNorms theta_norm(const SampleMesh& mesh, const WeightSpec& spec) {
  spec.validate_basic();
  if (spec.k > 1)
    throw IncompleteField("theta_norm: mesh carries Theta and dTheta only");
  StableSum total, neck, inner, mix, outer;
  double rho_min = 1e300, sup_w = 0.0;
  for (const auto& node : mesh.nodes) {
    const double env = std::exp(0.5 * spec.beta * node.f);
    const double measure = std::pow(node.rho, -mesh.m) * node.weight;
    double cell = std::pow(env * std::pow(node.rho, -spec.gamma) *
                               std::abs(node.theta),
                           spec.p) *
                  measure;
    if (spec.k >= 1)
      cell += std::pow(env * std::pow(node.rho, -spec.gamma + 1) *
                           node.dtheta_norm,
                       spec.p) *
              measure;
    total.add(cell);
    switch (node.region) {
      case Region::Neck: neck.add(cell); break;
      case Region::TransitionInner: inner.add(cell); break;
      case Region::TransitionMix: mix.add(cell); break;
      default: outer.add(cell); break;
    }
    rho_min = std::min(rho_min, node.rho);
    sup_w = std::max(sup_w, env * std::pow(node.rho, -spec.gamma) *
                                std::abs(node.theta));
  }
  ThetaNorms out;
  const double inv_p = 1.0 / spec.p;
  out.total = std::pow(total.value(), inv_p);
  out.region_neck = std::pow(neck.value(), inv_p);
  out.region_inner = std::pow(inner.value(), inv_p);
  out.region_mix = std::pow(mix.value(), inv_p);
  out.region_outer_wing = std::pow(outer.value(), inv_p);
  out.rho_min = rho_min;
  out.sup_weighted = sup_w;
  out.nodes = static_cast<long>(mesh.nodes.size());
  return out;
}

double loglog_fit_slope(const std::vector<double>& x,
                        const std::vector<double>& y) {
  const int n = static_cast<int>(x.size());
  if (n < 2) throw ConfigError("loglog_fit_slope: need at least two points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int i = 0; i < n; ++i) {
    const double lx = std::log(x[i]), ly = std::log(std::max(y[i], 1e-300));
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

ErrorScan error_scan(const CsConfiguration& config, int intersection_index,
                     const std::vector<double>& ts, double tau, double eps,
                     double Rhat, const NeckProfile* profile,
                     const WeightSpec& spec, const MeshResolution& res) {
  if (ts.size() < 2) throw ConfigError("error_scan: need at least two scales");
  std::vector<double> sorted = ts;
  std::sort(sorted.begin(), sorted.end());
  if (sorted.back() / sorted.front() < 4.999)
    throw ConfigError("error_scan: t list must span at least a factor of 5");
  ErrorScan scan;
  scan.ts = sorted;
  // the residual is measured in the target space W^{1,p}_{beta+1, gamma-2, t}
  const WeightSpec target = spec.shifted_target();
  for (double t : sorted) {
    const GluedSurface s =
        glue_build(config, intersection_index, t, tau, eps, Rhat, profile);
    const SampleMesh mesh = sample_mesh(s, res);
    scan.norms.push_back(theta_norm(mesh, target));
  }
  const int m = config.m;
  scan.predicted = tau * (2.0 - spec.gamma) + (1.0 - tau) * m;
  // drop the largest (pre-asymptotic) scale when five or more are given
  const std::size_t fit_n =
      (sorted.size() >= 5) ? sorted.size() - 1 : sorted.size();
  std::vector<double> xs(sorted.begin(), sorted.begin() + fit_n);
  std::vector<double> tot, nk, in, mx;
  for (std::size_t i = 0; i < fit_n; ++i) {
    tot.push_back(scan.norms[i].total);
    nk.push_back(scan.norms[i].region_neck);
    in.push_back(scan.norms[i].region_inner);
    mx.push_back(scan.norms[i].region_mix);
  }
  scan.slope = loglog_fit_slope(xs, tot);
  scan.slope_neck = loglog_fit_slope(xs, nk);
  scan.slope_inner = loglog_fit_slope(xs, in);
  scan.slope_mix = loglog_fit_slope(xs, mx);
  scan.deviation = std::abs(scan.slope - scan.predicted) / scan.predicted;
  scan.prefactor =
      scan.norms.front().total / std::pow(sorted.front(), scan.predicted);
  return scan;
}

void write_error_scan_csv(const ErrorScan& scan, const std::string& path) {
  CsvWriter csv({"t", "norm_total", "norm_I", "norm_II", "norm_III", "rho_min",
                 "nodes"});
  for (std::size_t i = 0; i < scan.ts.size(); ++i) {
    const ThetaNorms& n = scan.norms[i];
    csv.add_row(std::vector<double>{scan.ts[i], n.total, n.region_neck,
                                    n.region_inner, n.region_mix, n.rho_min,
                                    static_cast<double>(n.nodes)});
  }
  csv.write(path);
}

std::string error_scan_summary_json(const ErrorScan& scan) {
  nlohmann::json j;
  j["slope"] = scan.slope;
  j["predicted"] = scan.predicted;
  j["deviation"] = scan.deviation;
  j["prefactor"] = scan.prefactor;
  j["slope_neck"] = scan.slope_neck;
  j["slope_inner"] = scan.slope_inner;
  j["slope_mix"] = scan.slope_mix;
  j["note"] = "prefactor is configuration-dependent and reported, not asserted";
  return j.dump(2);
}

}  // namespace tsol
