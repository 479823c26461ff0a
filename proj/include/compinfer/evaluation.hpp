#pragma once
#include <cstdint>
#include <functional>
#include <map>
#include <utility>
#include <vector>

#include "compinfer/posterior.hpp"
#include "compinfer/prior_graph.hpp"
#include "compinfer/rng.hpp"

namespace compinfer {

// log p(x_o | M, theta) with x_o bound by the caller.
using LogLikFn = std::function<double(const ModelVector&, const std::vector<double>&)>;
// One predictive simulation for a draw; the seed makes reruns reproducible.
using SimulateFn =
    std::function<std::vector<double>(const ModelVector&, const std::vector<double>&,
                                      std::uint64_t)>;

// ---- importance-sampled reference posterior over models ----

struct ReferenceConfig {
  long n_importance = 100000;  // proposal draws per model
  double ess_floor = 100.0;    // below this the entry is flagged unreliable
  std::uint64_t seed = 1;
};

struct ReferenceEntry {
  double prob = 0.0;          // normalized posterior mass
  double log_evidence = 0.0;  // importance estimate of log p(x_o | M)
  long n_samples = 0;
  double ess = 0.0;
  bool unreliable = false;
};

struct ReferencePosterior {
  std::map<ModelVector, ReferenceEntry> entries;
};

// Evidence per model by importance sampling with the trained parameter head
// as proposal, truncated to the prior box (zero weight outside). model_prior
// is an empirical frequency table (see empirical_prior); models with zero
// frequency are skipped.
ReferencePosterior reference_posterior(const std::map<ModelVector, double>& model_prior,
                                       const ComponentPrior& prior,
                                       const PosteriorBundle& bundle,
                                       const std::vector<double>& x, const LogLikFn& log_lik,
                                       const ReferenceConfig& config = {});

// Sum over the reference support of p_ref log(p_ref / q). Underflowed q is
// reported as +infinity.
double kl_model_posteriors(const ReferencePosterior& ref, const PosteriorBundle& bundle,
                           const std::vector<double>& x);

// Per component: posterior marginal probability of the true bit.
std::vector<double> marginal_performance(const PosteriorBundle& bundle,
                                         const std::vector<double>& x,
                                         const ModelVector& m_true);

// Pooled root mean squared deviation between x and n joint posterior
// predictive simulations.
double rmse_predictive(const PosteriorBundle& bundle, const std::vector<double>& x,
                       const SimulateFn& simulate, long n, Rng& rng);

// Most probable model (enumerated) and the mode of its conditional parameter
// mixture (gradient ascent from each component mean, best kept).
std::pair<ModelVector, std::vector<double>> map_estimate(const PosteriorBundle& bundle,
                                                         const std::vector<double>& x);

// q(m1|x)/q(m2|x) * prior(m2)/prior(m1).
double bayes_factor(const PosteriorBundle& bundle,
                    const std::map<ModelVector, double>& model_prior,
                    const std::vector<double>& x, const ModelVector& m1,
                    const ModelVector& m2);

// ---- posterior predictive ensembles ----

struct PredictiveEnsemble {
  std::vector<std::vector<double>> draws;  // successful simulations
  std::vector<double> mean, stddev;        // per output point
  // Draws whose simulation was refused (unsupported model vector) or
  // diverged; excluded from the ensemble, mirroring generation-time filters.
  long n_failed = 0;
};

// Local: model fixed, parameters from its conditional mixture.
PredictiveEnsemble predictive_local(const PosteriorBundle& bundle, const std::vector<double>& x,
                                    const ModelVector& m, const SimulateFn& simulate, long n,
                                    Rng& rng);
// Global: (model, parameters) drawn jointly.
PredictiveEnsemble predictive_global(const PosteriorBundle& bundle,
                                     const std::vector<double>& x, const SimulateFn& simulate,
                                     long n, Rng& rng);

// ---- simulation-based calibration ----

struct SbcConfig {
  long n_rank_samples = 1000;
  long min_records = 50;  // models with fewer test records are skipped
  std::uint64_t seed = 1;
};

struct SbcReport {
  // ranks[m][j] lists, for ground-truth model m, the rank of each record's
  // j-th active parameter among the posterior draws (0..n_rank_samples).
  std::map<ModelVector, std::vector<std::vector<long>>> ranks;
  // Two-sample classifier accuracy per model and active parameter.
  std::map<ModelVector, std::vector<double>> c2st;
  std::map<ModelVector, long> n_records;
  std::vector<ModelVector> skipped;
  double c2st_mode = 0.0;
  double c2st_p05 = 0.0;
  double c2st_p95 = 0.0;
};

// Ranks each test record's true parameters among draws from the posterior
// conditioned on the ground-truth model, then scores rank uniformity per
// model/parameter with a cross-validated nearest-neighbor two-sample test.
SbcReport sbc(const PosteriorBundle& bundle, const std::vector<Record>& test_records,
              const SbcConfig& config = {});

// Draws from the conditional parameter mixture of m (active dimensions only).
std::vector<std::vector<double>> sample_conditional(const PosteriorBundle& bundle,
                                                    const std::vector<double>& x,
                                                    const ModelVector& m, long n, Rng& rng);

// Mean held-out accuracy of a 5-nearest-neighbor classifier separating two
// scalar samples, 5-fold cross-validated. 0.5 means indistinguishable.
double c2st_knn(const std::vector<double>& a, const std::vector<double>& b, Rng& rng);

}  // namespace compinfer
