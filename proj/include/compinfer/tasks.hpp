#pragma once
#include <string>
#include <vector>

#include "compinfer/prior_graph.hpp"

namespace compinfer {

// Built-in simulation families. Component order matches the documentation
// tables in docs/tasks.md; the model vector, parameter concatenation, and
// posterior heads all share it.

PriorGraph additive6_graph();
PriorGraph additive11_graph();
PriorGraph additive20_graph();
PriorGraph ddm_graph();
PriorGraph hh_graph();

ComponentPrior additive6_prior();
ComponentPrior additive11_prior();
ComponentPrior additive20_prior();
ComponentPrior ddm_prior();
ComponentPrior hh_prior();

}  // namespace compinfer
