#include "compinfer/grassmann.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/LU>

#include "compinfer/errors.hpp"

namespace compinfer {

namespace {

RowMat dominant_diagonal(const RowMat& raw, PositiveFn fn) {
  long n = raw.rows();
  RowMat out = raw;
  for (long i = 0; i < n; ++i) {
    double off = raw.row(i).cwiseAbs().sum() - std::abs(raw(i, i));
    double head = fn == PositiveFn::Exp ? std::exp(raw(i, i))
                                        : std::max(raw(i, i), 0.0) + 1e-6;
    out(i, i) = head + off;
  }
  return out;
}

}  // namespace

GrassmannParams build_sigma(const UnconstrainedPair& pair, PositiveFn fn) {
  if (pair.b_raw.rows() != pair.b_raw.cols() || pair.c_raw.rows() != pair.c_raw.cols() ||
      pair.b_raw.rows() != pair.c_raw.rows() || pair.b_raw.rows() < 1)
    throw shape_error("build_sigma: need square matrices of equal size");
  RowMat b = dominant_diagonal(pair.b_raw, fn);
  RowMat c = dominant_diagonal(pair.c_raw, fn);
  RowMat bc = b + c;
  // Σ = C (B+C)^-1 solved as (B+C)^T Σ^T = C^T.
  RowMat sigma = bc.transpose().partialPivLu().solve(c.transpose()).transpose();
  if (!sigma.allFinite())
    throw numeric_error("build_sigma: degenerate parameters (non-finite result)");
  return GrassmannParams{b.rows(), std::move(sigma)};
}

double log_pmf(const GrassmannParams& params, const std::vector<int>& y) {
  long n = params.n;
  if (static_cast<long>(y.size()) != n) throw shape_error("log_pmf: y length mismatch");
  RowMat a = params.sigma;
  for (long j = 0; j < n; ++j) {
    if (y[j] != 0 && y[j] != 1) throw shape_error("log_pmf: y must be binary");
    double s = y[j] == 1 ? 1.0 : -1.0;
    a.col(j) *= s;
    if (y[j] == 0) a(j, j) += 1.0;
  }
  double det = a.partialPivLu().determinant();
  if (det < -1e-9)
    throw numeric_error("log_pmf: negative pmf, sigma violates validity condition");
  return std::log(std::max(det, 1e-30));
}

GrassmannParams condition(const GrassmannParams& params,
                          const std::vector<std::pair<long, int>>& observed) {
  long n = params.n;
  std::vector<int> mark(n, -1);
  for (auto [idx, bit] : observed) {
    if (idx < 0 || idx >= n) throw shape_error("condition: index out of range");
    if (bit != 0 && bit != 1) throw shape_error("condition: bits must be binary");
    if (mark[idx] != -1) throw shape_error("condition: repeated index");
    mark[idx] = bit;
  }
  std::vector<long> rest;
  std::vector<long> cond;
  for (long i = 0; i < n; ++i) (mark[i] == -1 ? rest : cond).push_back(i);
  long r = static_cast<long>(rest.size()), c = static_cast<long>(cond.size());
  if (c == 0) return params;
  RowMat scc(c, c), src(r, c), scr(c, r), srr(r, r);
  for (long i = 0; i < c; ++i)
    for (long j = 0; j < c; ++j) scc(i, j) = params.sigma(cond[i], cond[j]);
  for (long i = 0; i < r; ++i)
    for (long j = 0; j < c; ++j) src(i, j) = params.sigma(rest[i], cond[j]);
  for (long i = 0; i < c; ++i)
    for (long j = 0; j < r; ++j) scr(i, j) = params.sigma(cond[i], rest[j]);
  for (long i = 0; i < r; ++i)
    for (long j = 0; j < r; ++j) srr(i, j) = params.sigma(rest[i], rest[j]);
  for (long i = 0; i < c; ++i) scc(i, i) -= 1.0 - static_cast<double>(mark[cond[i]]);
  Eigen::PartialPivLU<RowMat> lu(scc);
  if (std::abs(lu.determinant()) < 1e-300)
    throw numeric_error("condition: observed pattern has zero probability");
  RowMat out = srr - src * lu.solve(scr);
  return GrassmannParams{r, std::move(out)};
}

std::vector<int> sample(const GrassmannParams& params, Rng& rng) {
  std::vector<int> y(params.n, 0);
  GrassmannParams cur = params;
  for (long i = 0; i < params.n; ++i) {
    double p = std::clamp(cur.sigma(0, 0), 0.0, 1.0);
    int bit = rng.uniform() < p ? 1 : 0;
    y[i] = bit;
    if (i + 1 < params.n) cur = condition(cur, {{0, bit}});
  }
  return y;
}

void moments(const GrassmannParams& params, Eigen::VectorXd& mean, RowMat& cov) {
  long n = params.n;
  mean.resize(n);
  cov.resize(n, n);
  for (long i = 0; i < n; ++i) {
    mean(i) = params.sigma(i, i);
    for (long j = 0; j < n; ++j)
      cov(i, j) = i == j ? params.sigma(i, i) * (1.0 - params.sigma(i, i))
                         : -params.sigma(i, j) * params.sigma(j, i);
  }
}

double mogr_log_pmf(const MoGrParams& params, const std::vector<int>& y) {
  if (params.components.empty()) throw numeric_error("mogr_log_pmf: empty mixture");
  if (params.components.size() != params.alpha.size())
    throw shape_error("mogr_log_pmf: component/weight count mismatch");
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> terms(params.components.size());
  for (size_t i = 0; i < params.components.size(); ++i) {
    if (params.alpha[i] < 0.0) throw numeric_error("mogr_log_pmf: negative mixture weight");
    terms[i] = params.alpha[i] <= 0.0
                   ? -std::numeric_limits<double>::infinity()
                   : std::log(params.alpha[i]) + log_pmf(params.components[i], y);
    best = std::max(best, terms[i]);
  }
  if (!std::isfinite(best)) return -std::numeric_limits<double>::infinity();
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - best);
  return best + std::log(acc);
}

std::vector<int> mogr_sample(const MoGrParams& params, Rng& rng) {
  if (params.components.empty()) throw numeric_error("mogr_sample: empty mixture");
  int k = rng.categorical(params.alpha);
  return sample(params.components[k], rng);
}

void mogr_moments(const MoGrParams& params, Eigen::VectorXd& mean, RowMat& cov) {
  if (params.components.empty()) throw numeric_error("mogr_moments: empty mixture");
  long n = params.components[0].n;
  mean = Eigen::VectorXd::Zero(n);
  cov = RowMat::Zero(n, n);
  std::vector<Eigen::VectorXd> mu(params.components.size());
  for (size_t i = 0; i < params.components.size(); ++i) {
    RowMat ci;
    moments(params.components[i], mu[i], ci);
    mean += params.alpha[i] * mu[i];
    cov += params.alpha[i] * ci;
  }
  for (size_t i = 0; i < params.components.size(); ++i) {
    Eigen::VectorXd d = mu[i] - mean;
    cov += params.alpha[i] * (d * d.transpose());
  }
}

// ---- tape builders ----

Var build_sigma_tape(Tape& t, Var b_raw, Var c_raw, PositiveFn fn) {
  const Tensor& braw = t.val(b_raw);
  if (braw.nd != 3 || braw.d[1] != braw.d[2] || !braw.same_shape(t.val(c_raw)))
    throw shape_error("build_sigma_tape: need matching (B,n,n)");
  long nb = braw.d[0], n = braw.d[1];
  Tensor offmask({nb, n, n}, 1.0);
  for (long b = 0; b < nb; ++b)
    for (long i = 0; i < n; ++i) offmask(b, i, i) = 0.0;
  Var mask = t.constant(offmask);
  auto dominant = [&](Var raw) {
    Var off = t.mul(raw, mask);
    Var rowabs = t.sum_last(t.abs(off));
    Var head = fn == PositiveFn::Exp ? t.exp(t.extract_diag(raw))
                                     : t.add_scalar(t.relu(t.extract_diag(raw)), 1e-6);
    return t.add(off, t.diag_embed(t.add(head, rowabs)));
  };
  Var b = dominant(b_raw);
  Var c = dominant(c_raw);
  Var bc = t.add(b, c);
  // Σ = C (B+C)^-1 via the transposed solve.
  return t.transpose_last(t.lu_solve(t.transpose_last(bc), t.transpose_last(c)));
}

Var grassmann_log_pmf_tape(Tape& t, Var sigma, const std::vector<std::vector<int>>& y) {
  const Tensor& s = t.val(sigma);
  if (s.nd != 3 || s.d[1] != s.d[2]) throw shape_error("grassmann_log_pmf_tape: need (B,n,n)");
  long nb = s.d[0], n = s.d[1];
  if (static_cast<long>(y.size()) != nb)
    throw shape_error("grassmann_log_pmf_tape: batch size mismatch");
  Tensor signs({nb, n});
  Tensor shift({nb, n, n}, 0.0);
  for (long b = 0; b < nb; ++b) {
    if (static_cast<long>(y[b].size()) != n)
      throw shape_error("grassmann_log_pmf_tape: y length mismatch");
    for (long j = 0; j < n; ++j) {
      signs(b, j) = y[b][j] == 1 ? 1.0 : -1.0;
      shift(b, j, j) = y[b][j] == 1 ? 0.0 : 1.0;
    }
  }
  Var a = t.add(t.scale_cols(sigma, t.constant(signs)), t.constant(shift));
  return t.logdet(a);
}

Var mixture_log_pmf_tape(Tape& t, const std::vector<Var>& component_log_pmfs, Var logits) {
  if (component_log_pmfs.empty()) throw shape_error("mixture_log_pmf_tape: empty mixture");
  Var stacked = t.stack_cols(component_log_pmfs);
  Var logw = t.log_softmax_rows(logits);
  return t.log_sum_exp_rows(t.add(stacked, logw));
}

}  // namespace compinfer
