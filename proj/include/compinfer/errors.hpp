#pragma once
#include <stdexcept>
#include <string>

namespace compinfer {

// Bad run configuration (unknown task, invalid hyperparameter, schema violation).
struct config_error : std::runtime_error {
  explicit config_error(const std::string& m) : std::runtime_error(m) {}
};

// Malformed or incompatible data (dataset files, checkpoints, shape mismatches in IO).
struct data_error : std::runtime_error {
  explicit data_error(const std::string& m) : std::runtime_error(m) {}
};

// Numerical failure (invalid distribution parameters, singular systems, divergence).
struct numeric_error : std::runtime_error {
  explicit numeric_error(const std::string& m) : std::runtime_error(m) {}
};

// Internal shape/contract violation in tensor ops.
struct shape_error : std::runtime_error {
  explicit shape_error(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace compinfer
