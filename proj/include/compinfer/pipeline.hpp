#pragma once
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "compinfer/evaluation.hpp"
#include "compinfer/posterior.hpp"
#include "compinfer/prior_graph.hpp"

namespace compinfer {

// Family-level exact likelihood: log p(x | m, theta).
using TaskLogLik = std::function<double(const ModelVector&, const std::vector<double>&,
                                        const std::vector<double>&)>;

// A runnable inference problem: prior, default architecture, and (for the
// built-in families) the simulator itself.
struct Task {
  std::string name;
  PriorGraph graph;
  ComponentPrior prior;
  NetConfig net;        // default architecture for the family
  SimulateFn simulate;  // null for custom priors (no built-in simulator)
  TaskLogLik log_lik;   // null unless the family has an exact density
  // Returns a rejection reason for records the family excludes from training
  // data, or the empty string to keep. Null keeps everything.
  std::function<std::string(const std::vector<double>& x)> reject;
};

// Built-in families: additive6, additive11, additive20, ddm, hh.
Task make_task(const std::string& name);

// Prior config text: the graph schema plus a "params" object mapping each
// component name to its [lo, hi] interval list. No simulator attached.
Task make_custom_task(const std::string& prior_config_json);
std::pair<PriorGraph, ComponentPrior> load_prior_config(const std::string& json_text);

struct GenerateReport {
  long requested = 0;
  long kept = 0;
  std::map<std::string, long> rejected;     // reason -> count
  std::vector<std::uint64_t> record_seeds;  // kept records, file order
};

// Draws (m, theta) from the prior and simulates each record under a seed
// derived from the root seed by record counter; output is independent of the
// thread count. Rejected records are dropped, not replaced.
GenerateReport generate_dataset(const Task& task, long size, std::uint64_t seed, long threads,
                                Dataset* out);

// Dataset file: one JSON header line, then one JSON record per line.
void save_dataset(const std::string& path, const Dataset& data, const std::string& task_name,
                  long n_components, const std::vector<std::uint64_t>& record_seeds = {});
Dataset load_dataset(const std::string& path, std::string* task_name = nullptr);

// Runs body(0..n-1) on up to `threads` workers; body must only touch state
// owned by its own index.
void parallel_for(long n, long threads, const std::function<void(long)>& body);

}  // namespace compinfer
