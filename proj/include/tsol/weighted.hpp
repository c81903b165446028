#pragma once

#include <string>
#include <vector>

#include "tsol/cone_graph.hpp"
#include "tsol/types.hpp"

namespace tsol {

struct WeightSpec {
  int k = 1;          // derivative order (0/1 for fields, up to 3 diagnostics)
  double p = 2.0;     // integrability exponent > 1
  double beta = -0.5;
  double gamma = -0.5;

  void validate_basic() const;
  // enforces the isomorphism window beta in (-1, 0), gamma in (2-m, 0)
  static WeightSpec analysis_preset(int m, int k = 1, double p = 2.0,
                                    double beta = -0.5, double gamma = -0.5);
  WeightSpec shifted_target() const {  // the linearized operator's codomain
    WeightSpec out = *this;
    out.beta = beta + 1.0;
    out.gamma = gamma - 2.0;
    return out;
  }
};

// Point samples of a field: |nabla^j u| for j = 0..k, integration weights
// (already including the area element), rho_t and f_t values.
struct FieldSamples {
  std::vector<RVec> deriv_norms;
  RVec weights;
  RVec rho;
  RVec f;
  int m = 3;
};

// ( sum_j Int |e^{beta f/2} rho^{-gamma+j} nabla^j u|^p rho^{-m} dV )^{1/p},
// deterministic fixed-order compensated reduction.
double weighted_norm(const FieldSamples& samples, const WeightSpec& spec);

struct ThetaNorms {
  double total = 0.0;
  double region_neck = 0.0;       // I_t
  double region_inner = 0.0;      // II_t
  double region_mix = 0.0;        // III_t
  double region_outer_wing = 0.0;
  double rho_min = 0.0;
  double sup_weighted = 0.0;      // sup |e^{beta f/2} rho^{-gamma} Theta|
  long nodes = 0;
};

// Theta(F~_t) measured in W^{k,p} with the given weights over a sample mesh.
ThetaNorms theta_norm(const SampleMesh& mesh, const WeightSpec& spec);

struct ErrorScan {
  std::vector<double> ts;
  std::vector<ThetaNorms> norms;
  double slope = 0.0;      // log-log fit; largest t dropped when >= 5 entries
  double predicted = 0.0;  // tau (2 - gamma) + (1 - tau) m
  double deviation = 0.0;  // |slope - predicted| / predicted
  double prefactor = 0.0;  // empirical constant at the smallest t
  double slope_neck = 0.0, slope_inner = 0.0, slope_mix = 0.0;
};

ErrorScan error_scan(const CsConfiguration& config, int intersection_index,
                     const std::vector<double>& ts, double tau, double eps,
                     double Rhat, const NeckProfile* profile,
                     const WeightSpec& spec, const MeshResolution& res);

void write_error_scan_csv(const ErrorScan& scan, const std::string& path);
std::string error_scan_summary_json(const ErrorScan& scan);

double loglog_fit_slope(const std::vector<double>& x,
                        const std::vector<double>& y);

}  // namespace tsol
