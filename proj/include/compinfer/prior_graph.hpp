#pragma once
#include <map>
#include <string>
#include <vector>

#include "compinfer/rng.hpp"
#include "compinfer/tensor.hpp"

namespace compinfer {

using ModelVector = std::vector<int>;

// Rewrite rules mutate a per-walk copy of the edge weights after every
// accepted step, in declaration order:
//   KillIngoing(a):    when a itself was just sampled, zero all ingoing edges
//                      of a (no revisits).
//   ExcludePair(a,b):  while a is visited, zero all ingoing edges of b.
//   ScalePair(a,b,c):  while a is visited, scale ingoing edges of b by c
//                      (0 < c < 1); compounds if several steps pass.
//   FavorEnd(a,c):     while a is visited and a has no direct edge to end,
//                      scale every ingoing edge of the end node by c (c > 1);
//                      compounds per step, pulling long walks to termination.
struct RewriteRule {
  enum Kind { KillIngoing, ExcludePair, ScalePair, FavorEnd } kind;
  int a = -1;
  int b = -1;
  double c = 1.0;
};

// Weighted directed graph over N components plus start (0) and end (N+1).
struct PriorGraph {
  int n = 0;                       // component count
  std::vector<std::string> names;  // size n
  RowMat weights;                  // (n+2) x (n+2), row = from, col = to
  std::vector<RewriteRule> rules;

  int start() const { return 0; }
  int end() const { return n + 1; }
  void validate() const;  // throws config_error on malformed graphs/rules
};

// Independent uniform boxes; component i owns intervals[i] (one [lo,hi] per
// scalar parameter of that component).
struct ComponentPrior {
  std::vector<std::vector<std::pair<double, double>>> intervals;

  long param_dim(const ModelVector& m) const;
  long component_dim(int i) const { return static_cast<long>(intervals[i].size()); }
  long full_dim() const;
  // Offset of component i inside the full parameter vector.
  long offset(int i) const;
  // Indices of the active sub-vector inside the full vector, component order.
  std::vector<long> active_indices(const ModelVector& m) const;
};

// Random walk of Algorithm-A1 form; returns the visit indicator over the N
// components. Throws numeric_error if a walk exceeds N+2 steps or strands on
// a node with no positive outgoing weight.
ModelVector sample_model(const PriorGraph& graph, Rng& rng);

// Concatenated uniform draws for the active components, in component order.
std::vector<double> sample_parameters(const ComponentPrior& prior, const ModelVector& m,
                                      Rng& rng);

// Normalized frequency table over n_samples walks.
std::map<ModelVector, double> empirical_prior(const PriorGraph& graph, long n_samples, Rng& rng);

// JSON round-trip for graph configuration overrides; see docs/prior-format.md.
PriorGraph prior_graph_from_json(const std::string& json_text);
std::string prior_graph_to_json(const PriorGraph& graph);

}  // namespace compinfer
