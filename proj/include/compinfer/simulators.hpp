#pragma once
#include <string>
#include <vector>

#include "compinfer/prior_graph.hpp"
#include "compinfer/rng.hpp"
#include "compinfer/tensor.hpp"

namespace compinfer {

// ---- additive time-series family ----

enum class AdditiveFamily { Six, Eleven, Twenty };

long additive_component_count(AdditiveFamily f);
long additive_component_dim(AdditiveFamily f, int comp);

// Equidistant grid on [0, 10], endpoints included.
std::vector<double> additive_grid(long g = 100);

// Noise-free sum of the active deterministic components on the grid.
std::vector<double> additive_mean(AdditiveFamily f, const ModelVector& m,
                                  const std::vector<double>& theta, long grid = 100);

// Per-point standard deviation of the active noise term (strictly positive).
std::vector<double> additive_noise_std(AdditiveFamily f, const ModelVector& m,
                                       const std::vector<double>& theta, long grid = 100);

std::vector<double> run_additive(AdditiveFamily f, const ModelVector& m,
                                 const std::vector<double>& theta, Rng& rng, long grid = 100);

// Exact Gaussian log density of an observation under (m, theta); the mean is
// the deterministic sum and the per-point std comes from the noise term.
double additive_log_likelihood(AdditiveFamily f, const ModelVector& m,
                               const std::vector<double>& theta, const std::vector<double>& x,
                               long grid = 100);

// ---- drift diffusion family ----

struct DdmConfig {
  long trials = 400;
  double dt = 0.005;  // seconds
  double t_max = 10.0;
};

// Component order: constant drift, leaky drift, constant boundary, collapsing
// boundary, non-decision time. Rows are (decision time, decision in {-1,+1});
// trials still undecided at t_max are stored as (t_max, 0).
RowMat run_ddm(const ModelVector& m, const std::vector<double>& theta, Rng& rng,
               const DdmConfig& cfg = {});

long ddm_undecided_count(const RowMat& trials);

// ---- conductance-based neuron family ----

struct HhConfig {
  double dt = 0.025;        // ms
  double t_total = 1450.0;  // ms
  double stim_on = 100.0;   // step stimulus window, ms
  double stim_off = 1100.0;
  double stim_amp = 2.0;  // muA/cm^2
};

struct HhTrace {
  std::vector<double> v;  // mV, one sample per step, v[0] at t = 0
  double dt = 0.025;
  double stim_on = 100.0;
  double stim_off = 1100.0;
  // Range of every gating variable over the whole run.
  double gate_min = 1.0;
  double gate_max = 0.0;
};

// Component order: leak, delayed-rectifier K, slow K, Na, Ca, noise. The K
// and Na channels are mandatory; conductances are drawn in S/cm^2 and
// converted internally. Throws numeric_error when the state diverges.
HhTrace run_hh(const ModelVector& m, const std::vector<double>& theta, Rng& rng,
               const HhConfig& cfg = {});

inline constexpr long kHhSummaryDim = 24;

// 24 summary statistics of a voltage trace; deterministic, always finite
// (undefined entries are imputed with documented constants). The list and
// imputation rules live in docs/summary-stats.md.
std::vector<double> hh_summary(const HhTrace& trace);

}  // namespace compinfer
