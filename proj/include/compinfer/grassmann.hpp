#pragma once
#include <utility>
#include <vector>

#include "compinfer/rng.hpp"
#include "compinfer/tape.hpp"
#include "compinfer/tensor.hpp"

namespace compinfer {

// Σ parametrization of an n-dimensional binary distribution whose pmf is the
// determinant of a signed combination of Σ. Validity ((Σ^-1 - I) a P0-matrix)
// is guaranteed when built through build_sigma, not checked on arbitrary Σ.
struct GrassmannParams {
  long n = 0;
  RowMat sigma;
};

// Free real matrices mapped to a valid Σ by build_sigma.
struct UnconstrainedPair {
  RowMat b_raw;
  RowMat c_raw;
};

enum class PositiveFn { Exp, Relu };

struct MoGrParams {
  std::vector<GrassmannParams> components;
  std::vector<double> alpha;
};

// Replaces each diagonal with pos(raw_ii) + sum_{j != i} |raw_ij| (strict row
// dominance with positive diagonal), then returns Σ = C (B + C)^-1, which is
// equivalent to Σ^-1 = B C^-1 + I.
GrassmannParams build_sigma(const UnconstrainedPair& pair, PositiveFn fn = PositiveFn::Exp);

// log pmf at y via det(Σ diag(2y-1) + diag(1-y)), pivoted LU, det clamped at
// 1e-30. det < -1e-9 means Σ was not a valid parameter and raises.
double log_pmf(const GrassmannParams& params, const std::vector<int>& y);

// Condition on observed bits (index, bit). Remaining indices keep their
// original relative order.
GrassmannParams condition(const GrassmannParams& params,
                          const std::vector<std::pair<long, int>>& observed);

// Sequential exact sampler: Bernoulli from the running conditional diagonal.
std::vector<int> sample(const GrassmannParams& params, Rng& rng);

// Marginal mean E[Y_i] = Σ_ii; covariance Cov[Y_i,Y_j] = -Σ_ij Σ_ji for i != j
// and Σ_ii (1 - Σ_ii) on the diagonal.
void moments(const GrassmannParams& params, Eigen::VectorXd& mean, RowMat& cov);

double mogr_log_pmf(const MoGrParams& params, const std::vector<int>& y);
std::vector<int> mogr_sample(const MoGrParams& params, Rng& rng);
void mogr_moments(const MoGrParams& params, Eigen::VectorXd& mean, RowMat& cov);

// ---- tape builders (batched, shared by the model-posterior head and the
// gradient tests) ----

// b_raw/c_raw (B,n,n) -> Σ (B,n,n) through the same dominance construction.
Var build_sigma_tape(Tape& t, Var b_raw, Var c_raw, PositiveFn fn = PositiveFn::Exp);

// Σ (B,n,n) with one binary vector per batch row -> log pmf (B).
Var grassmann_log_pmf_tape(Tape& t, Var sigma, const std::vector<std::vector<int>>& y);

// Per-component log pmfs (each (B)) + mixture logits (B,k) -> log mixture pmf (B).
Var mixture_log_pmf_tape(Tape& t, const std::vector<Var>& component_log_pmfs, Var logits);

}  // namespace compinfer
