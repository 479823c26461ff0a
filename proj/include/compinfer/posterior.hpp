#pragma once
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "compinfer/grassmann.hpp"
#include "compinfer/prior_graph.hpp"
#include "compinfer/rng.hpp"
#include "compinfer/tape.hpp"
#include "compinfer/tensor.hpp"

namespace compinfer {

// Joint amortized posterior over model vectors and parameters: an embedding
// net feeds a mixture-of-Grassmann model head and a marginalizing Gaussian
// mixture parameter head, trained together on the summed negative log
// posterior of (M, theta) pairs.

enum class EmbedKind { ConvSeq, TrialSet, Identity };

struct EmbedConfig {
  EmbedKind kind = EmbedKind::Identity;
  // ConvSeq: each record is one sequence of seq_len values (single channel);
  // two valid convolutions (kernel x stride 1) then fully connected layers.
  long seq_len = 0;
  std::vector<long> conv_channels{10, 16};
  long kernel = 5;
  std::vector<long> fc_dims{200, 200, 50};
  // TrialSet: each record is set_size exchangeable trials of trial_features
  // values; a per-trial net, mean pooling, then fully connected layers
  // (fc_dims) on the pooled vector.
  long set_size = 0;
  long trial_features = 0;
  std::vector<long> trial_dims{120, 120, 100};
  // Identity: each record is a precomputed feature vector of length features.
  long features = 0;

  long out_dim() const;
  long x_dim() const;            // flattened record length
  long feature_period() const;   // standardization granularity
};

enum class ModelHead { MoGr, Categorical };

struct NetConfig {
  EmbedConfig embed;
  ModelHead model_head = ModelHead::MoGr;
  long n_components = 0;             // model vector length N
  std::vector<long> component_dims;  // parameter count per component
  long mogr_layers = 3;
  long mogr_width = 80;
  long mogr_components = 3;
  long mdn_layers = 3;
  long mdn_width = 120;
  long mdn_components = 3;

  long full_dim() const;
  std::vector<long> active_indices(const ModelVector& m) const;
  void validate() const;
};

struct Record {
  ModelVector m;
  std::vector<double> theta;  // active parameters, component order
  std::vector<double> x;      // flattened observation, layout per EmbedConfig
};

struct Dataset {
  std::vector<Record> records;
  long x_dim = 0;
};

struct PosteriorBundle {
  NetConfig config;
  std::vector<std::string> names;
  std::vector<Tensor> params;
  // z-scoring constants; empty until trained (identity transform).
  std::vector<double> x_mean, x_std;          // length feature_period
  std::vector<double> theta_mean, theta_std;  // length full_dim
  std::string prior_fingerprint;

  long param_index(const std::string& name) const;
};

// Fresh bundle with randomly initialized weights (He-normal hidden layers,
// near-zero output layers so both heads start close to uniform).
PosteriorBundle make_bundle(const NetConfig& config, Rng& rng,
                            const std::string& prior_fingerprint = "");

struct TrainConfig {
  long batch_size = 3000;
  long max_epochs = 2000;
  long patience = 25;      // epochs without validation improvement
  long max_steps = 0;      // optimizer-step budget; 0 means unlimited
  double lr = 5e-4;
  double grad_clip = 5.0;
  double val_fraction = 0.1;
  std::uint64_t seed = 1;
  bool verbose = false;
};

struct TrainReport {
  std::vector<double> val_history;       // validation loss per epoch
  std::vector<double> best_val_history;  // running best, non-increasing
  long epochs = 0;
  long steps = 0;
  bool stopped_early = false;
};

// Joint training; bundle weights are updated in place and end at the best
// validation checkpoint. Throws numeric_error on a non-finite loss, with the
// best checkpoint so far restored into the bundle first.
TrainReport train(PosteriorBundle& bundle, const Dataset& data, const TrainConfig& config);

// Sum over the given records of -(log q(M|x) + log q(theta|M,x)) as a tape
// node. If param_vars is non-null it receives one leaf per bundle parameter
// (same order), for gradient extraction.
Var batch_loss_tape(Tape& tape, const PosteriorBundle& bundle,
                    const std::vector<const Record*>& rows, std::vector<Var>* param_vars);

double model_log_posterior(const PosteriorBundle& bundle, const std::vector<double>& x,
                           const ModelVector& m);
// All 2^N log posteriors, indexed by model_index(); N capped at 20.
std::vector<double> model_log_posterior_all(const PosteriorBundle& bundle,
                                            const std::vector<double>& x);
double param_log_posterior(const PosteriorBundle& bundle, const std::vector<double>& x,
                           const ModelVector& m, const std::vector<double>& theta);

// Model head as an explicit distribution for one observation.
MoGrParams model_posterior_mogr(const PosteriorBundle& bundle, const std::vector<double>& x);

// Parameter head as an explicit full-space Gaussian mixture in original
// (de-standardized) parameter units for one observation and model.
struct GaussianMixture {
  std::vector<double> weights;
  std::vector<Eigen::VectorXd> means;
  std::vector<RowMat> covs;
};
GaussianMixture ppn_mixture(const PosteriorBundle& bundle, const std::vector<double>& x,
                            const ModelVector& m);

std::vector<std::pair<ModelVector, std::vector<double>>> sample_joint(
    const PosteriorBundle& bundle, const std::vector<double>& x, long count, Rng& rng);

long model_index(const ModelVector& m);
ModelVector model_from_index(long index, long n);

// Stable fingerprint of the prior configuration, stored in bundles and
// checked when a bundle is applied to a task.
std::string prior_fingerprint(const PriorGraph& graph, const ComponentPrior& prior);

// Checkpoint container: one-line JSON manifest followed by raw little-endian
// float64 tensor payloads; see docs/file-formats.md.
void save_bundle(const PosteriorBundle& bundle, const std::string& path);
PosteriorBundle load_bundle(const std::string& path);

std::string net_config_to_json(const NetConfig& config);
NetConfig net_config_from_json(const std::string& json_text);

}  // namespace compinfer
