#include "compinfer/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "compinfer/errors.hpp"

namespace compinfer {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(const std::vector<double>& v) {
  double mx = kNegInf;
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return kNegInf;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

// Conditional mixture of a model's active dimensions with factorizations
// cached for repeated density, gradient, and sampling work.
struct SubMixture {
  long dim = 0;
  std::vector<double> weights, log_weights;
  std::vector<Eigen::VectorXd> mu;
  std::vector<Eigen::LLT<RowMat>> llt;
  std::vector<double> log_norm;

  double log_pdf(const Eigen::VectorXd& t) const {
    std::vector<double> terms(weights.size());
    for (size_t c = 0; c < weights.size(); ++c) {
      Eigen::VectorXd r = t - mu[c];
      terms[c] = log_weights[c] + log_norm[c] - 0.5 * r.dot(llt[c].solve(r));
    }
    return log_sum_exp(terms);
  }

  Eigen::VectorXd grad_log_pdf(const Eigen::VectorXd& t) const {
    std::vector<double> terms(weights.size());
    for (size_t c = 0; c < weights.size(); ++c) {
      Eigen::VectorXd r = t - mu[c];
      terms[c] = log_weights[c] + log_norm[c] - 0.5 * r.dot(llt[c].solve(r));
    }
    double lf = log_sum_exp(terms);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(dim);
    for (size_t c = 0; c < weights.size(); ++c)
      g += std::exp(terms[c] - lf) * llt[c].solve(mu[c] - t);
    return g;
  }

  Eigen::VectorXd sample(Rng& rng) const {
    int c = rng.categorical(weights);
    Eigen::VectorXd z(dim);
    for (long j = 0; j < dim; ++j) z[j] = rng.normal();
    return mu[c] + llt[c].matrixL() * z;
  }
};

SubMixture make_sub_mixture(const GaussianMixture& mix, const std::vector<long>& act) {
  SubMixture s;
  s.dim = static_cast<long>(act.size());
  s.weights = mix.weights;
  for (double w : mix.weights) s.log_weights.push_back(std::log(w));
  for (size_t c = 0; c < mix.weights.size(); ++c) {
    Eigen::VectorXd mu(s.dim);
    RowMat cov(s.dim, s.dim);
    for (long i = 0; i < s.dim; ++i) {
      mu[i] = mix.means[c][act[i]];
      for (long j = 0; j < s.dim; ++j) cov(i, j) = mix.covs[c](act[i], act[j]);
    }
    Eigen::LLT<RowMat> llt(cov);
    if (llt.info() != Eigen::Success)
      throw numeric_error("conditional mixture covariance not positive definite");
    double ld = 0.0;
    for (long i = 0; i < s.dim; ++i) ld += 2.0 * std::log(llt.matrixL()(i, i));
    s.mu.push_back(std::move(mu));
    s.llt.push_back(std::move(llt));
    s.log_norm.push_back(-0.5 * (s.dim * kLogTwoPi + ld));
  }
  return s;
}

SubMixture conditional_mixture(const PosteriorBundle& bundle, const std::vector<double>& x,
                               const ModelVector& m) {
  return make_sub_mixture(ppn_mixture(bundle, x, m), bundle.config.active_indices(m));
}

PredictiveEnsemble ensemble_from_draws(
    const std::vector<std::pair<ModelVector, std::vector<double>>>& draws,
    const SimulateFn& simulate, Rng& rng) {
  PredictiveEnsemble out;
  for (const auto& [m, th] : draws) {
    std::vector<double> sim;
    // Posterior draws can land on model vectors the simulator refuses, or
    // diverge; those are excluded the same way they would be at generation.
    std::uint64_t seed = rng.raw();
    try {
      sim = simulate(m, th, seed);
    } catch (const data_error&) {
      ++out.n_failed;
      continue;
    } catch (const numeric_error&) {
      ++out.n_failed;
      continue;
    }
    if (!out.draws.empty() && sim.size() != out.draws.front().size())
      throw shape_error("predictive simulations returned inconsistent lengths");
    out.draws.push_back(std::move(sim));
  }
  if (out.draws.empty()) return out;
  long g = static_cast<long>(out.draws.front().size());
  long n = static_cast<long>(out.draws.size());
  out.mean.assign(g, 0.0);
  out.stddev.assign(g, 0.0);
  for (const auto& d : out.draws)
    for (long i = 0; i < g; ++i) out.mean[i] += d[i];
  for (long i = 0; i < g; ++i) out.mean[i] /= n;
  if (n > 1) {
    for (const auto& d : out.draws)
      for (long i = 0; i < g; ++i)
        out.stddev[i] += (d[i] - out.mean[i]) * (d[i] - out.mean[i]);
    for (long i = 0; i < g; ++i) out.stddev[i] = std::sqrt(out.stddev[i] / (n - 1));
  }
  return out;
}

double percentile(std::vector<double> v, double p) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  double pos = p * (v.size() - 1);
  long lo = static_cast<long>(pos);
  long hi = std::min<long>(lo + 1, v.size() - 1);
  return v[lo] + (pos - lo) * (v[hi] - v[lo]);
}

// Mode of the c2st values via a coarse histogram on [0,1].
double histogram_mode(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  constexpr long kBins = 100;
  std::vector<long> counts(kBins, 0);
  for (double x : v) {
    long b = std::min<long>(kBins - 1, std::max<long>(0, static_cast<long>(x * kBins)));
    ++counts[b];
  }
  long best = 0;
  for (long b = 1; b < kBins; ++b)
    if (counts[b] > counts[best]) best = b;
  return (best + 0.5) / kBins;
}

}  // namespace

ReferencePosterior reference_posterior(const std::map<ModelVector, double>& model_prior,
                                       const ComponentPrior& prior,
                                       const PosteriorBundle& bundle,
                                       const std::vector<double>& x, const LogLikFn& log_lik,
                                       const ReferenceConfig& config) {
  if (config.n_importance <= 0) throw config_error("n_importance must be positive");
  ReferencePosterior ref;
  std::vector<ModelVector> models;
  std::vector<double> log_post;

  long model_counter = 0;
  for (const auto& [m, pm] : model_prior) {
    ++model_counter;
    if (pm <= 0.0) continue;
    if (m.size() != prior.intervals.size())
      throw shape_error("model vector length does not match the prior");
    std::vector<long> act = prior.active_indices(m);
    long na = static_cast<long>(act.size());
    ReferenceEntry entry;
    entry.n_samples = config.n_importance;

    if (na == 0) {
      entry.log_evidence = log_lik(m, {});
      entry.ess = static_cast<double>(config.n_importance);
    } else {
      // Box density and bounds of the active parameters.
      double log_box = 0.0;
      std::vector<double> lo(na), hi(na);
      long at = 0;
      for (size_t c = 0; c < prior.intervals.size(); ++c) {
        if (!m[c]) continue;
        for (const auto& iv : prior.intervals[c]) {
          lo[at] = iv.first;
          hi[at] = iv.second;
          log_box -= std::log(iv.second - iv.first);
          ++at;
        }
      }

      SubMixture q = conditional_mixture(bundle, x, m);
      Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(model_counter)));
      std::vector<double> lw(config.n_importance, kNegInf);
      std::vector<double> theta(na);
      for (long j = 0; j < config.n_importance; ++j) {
        Eigen::VectorXd t = q.sample(rng);
        bool inside = true;
        for (long i = 0; i < na; ++i) {
          theta[i] = t[i];
          inside = inside && t[i] >= lo[i] && t[i] <= hi[i];
        }
        if (!inside) continue;
        lw[j] = log_lik(m, theta) + log_box - q.log_pdf(t);
      }
      double mx = kNegInf;
      for (double v : lw) mx = std::max(mx, v);
      if (!std::isfinite(mx)) {
        entry.log_evidence = kNegInf;
        entry.ess = 0.0;
      } else {
        double s1 = 0.0, s2 = 0.0;
        for (double v : lw) {
          if (!std::isfinite(v)) continue;
          double u = std::exp(v - mx);
          s1 += u;
          s2 += u * u;
        }
        entry.log_evidence = mx + std::log(s1 / config.n_importance);
        entry.ess = s1 * s1 / s2;
      }
    }
    entry.unreliable = entry.ess < config.ess_floor;
    ref.entries.emplace(m, entry);
    models.push_back(m);
    log_post.push_back(std::log(pm) + entry.log_evidence);
  }
  if (ref.entries.empty()) throw data_error("model prior has no support");

  double lz = log_sum_exp(log_post);
  if (!std::isfinite(lz))
    throw numeric_error("every model evidence estimate underflowed to zero");
  for (size_t i = 0; i < models.size(); ++i)
    ref.entries[models[i]].prob = std::exp(log_post[i] - lz);
  return ref;
}

double kl_model_posteriors(const ReferencePosterior& ref, const PosteriorBundle& bundle,
                           const std::vector<double>& x) {
  double kl = 0.0;
  for (const auto& [m, entry] : ref.entries) {
    if (entry.prob <= 0.0) continue;
    double lq = model_log_posterior(bundle, x, m);
    if (!std::isfinite(lq)) return std::numeric_limits<double>::infinity();
    kl += entry.prob * (std::log(entry.prob) - lq);
  }
  return kl;
}

std::vector<double> marginal_performance(const PosteriorBundle& bundle,
                                         const std::vector<double>& x,
                                         const ModelVector& m_true) {
  long n = bundle.config.n_components;
  if (static_cast<long>(m_true.size()) != n)
    throw shape_error("true model vector length does not match the bundle");
  std::vector<double> on(n, 0.0);
  if (bundle.config.model_head == ModelHead::MoGr) {
    MoGrParams mp = model_posterior_mogr(bundle, x);
    Eigen::VectorXd mean;
    RowMat cov;
    mogr_moments(mp, mean, cov);
    for (long i = 0; i < n; ++i) on[i] = mean[i];
  } else {
    std::vector<double> lp = model_log_posterior_all(bundle, x);
    for (size_t idx = 0; idx < lp.size(); ++idx) {
      double p = std::exp(lp[idx]);
      for (long i = 0; i < n; ++i)
        if ((idx >> i) & 1) on[i] += p;
    }
  }
  std::vector<double> score(n);
  for (long i = 0; i < n; ++i) score[i] = m_true[i] ? on[i] : 1.0 - on[i];
  return score;
}

double rmse_predictive(const PosteriorBundle& bundle, const std::vector<double>& x,
                       const SimulateFn& simulate, long n, Rng& rng) {
  if (n <= 0) throw config_error("predictive sample count must be positive");
  auto draws = sample_joint(bundle, x, n, rng);
  double sq = 0.0;
  long count = 0;
  for (const auto& [m, th] : draws) {
    std::vector<double> sim;
    std::uint64_t seed = rng.raw();
    try {
      sim = simulate(m, th, seed);
    } catch (const data_error&) {
      continue;
    } catch (const numeric_error&) {
      continue;
    }
    if (sim.size() != x.size())
      throw shape_error("predictive simulation length does not match the observation");
    for (size_t i = 0; i < sim.size(); ++i) {
      double d = sim[i] - x[i];
      sq += d * d;
      ++count;
    }
  }
  if (count == 0) throw data_error("no posterior predictive draw could be simulated");
  return std::sqrt(sq / count);
}

std::pair<ModelVector, std::vector<double>> map_estimate(const PosteriorBundle& bundle,
                                                         const std::vector<double>& x) {
  std::vector<double> lp = model_log_posterior_all(bundle, x);
  long best = 0;
  for (size_t i = 1; i < lp.size(); ++i)
    if (lp[i] > lp[best]) best = static_cast<long>(i);
  ModelVector m = model_from_index(best, bundle.config.n_components);

  std::vector<long> act = bundle.config.active_indices(m);
  if (act.empty()) return {m, {}};
  SubMixture mix = conditional_mixture(bundle, x, m);

  Eigen::VectorXd arg_best;
  double f_best = kNegInf;
  for (size_t c = 0; c < mix.weights.size(); ++c) {
    Eigen::VectorXd t = mix.mu[c];
    double f = mix.log_pdf(t);
    for (long iter = 0; iter < 500; ++iter) {
      Eigen::VectorXd g = mix.grad_log_pdf(t);
      if (g.lpNorm<Eigen::Infinity>() < 1e-12) break;
      double step = 1.0;
      double gg = g.squaredNorm();
      double f_new = mix.log_pdf(t + step * g);
      while (f_new < f + 1e-4 * step * gg && step > 1e-16) {
        step *= 0.5;
        f_new = mix.log_pdf(t + step * g);
      }
      if (f_new <= f) break;
      t += step * g;
      f = f_new;
    }
    if (f > f_best) {
      f_best = f;
      arg_best = t;
    }
  }
  return {m, std::vector<double>(arg_best.data(), arg_best.data() + arg_best.size())};
}

double bayes_factor(const PosteriorBundle& bundle,
                    const std::map<ModelVector, double>& model_prior,
                    const std::vector<double>& x, const ModelVector& m1,
                    const ModelVector& m2) {
  auto it1 = model_prior.find(m1), it2 = model_prior.find(m2);
  if (it1 == model_prior.end() || it1->second <= 0.0 || it2 == model_prior.end() ||
      it2->second <= 0.0)
    throw data_error("bayes factor undefined: a model has zero prior support");
  double lq1 = model_log_posterior(bundle, x, m1);
  double lq2 = model_log_posterior(bundle, x, m2);
  return std::exp(lq1 - lq2) * (it2->second / it1->second);
}

PredictiveEnsemble predictive_local(const PosteriorBundle& bundle, const std::vector<double>& x,
                                    const ModelVector& m, const SimulateFn& simulate, long n,
                                    Rng& rng) {
  std::vector<std::pair<ModelVector, std::vector<double>>> draws;
  std::vector<long> act = bundle.config.active_indices(m);
  if (act.empty()) {
    for (long i = 0; i < n; ++i) draws.emplace_back(m, std::vector<double>{});
  } else {
    SubMixture mix = conditional_mixture(bundle, x, m);
    for (long i = 0; i < n; ++i) {
      Eigen::VectorXd t = mix.sample(rng);
      draws.emplace_back(m, std::vector<double>(t.data(), t.data() + t.size()));
    }
  }
  return ensemble_from_draws(draws, simulate, rng);
}

PredictiveEnsemble predictive_global(const PosteriorBundle& bundle,
                                     const std::vector<double>& x, const SimulateFn& simulate,
                                     long n, Rng& rng) {
  return ensemble_from_draws(sample_joint(bundle, x, n, rng), simulate, rng);
}

std::vector<std::vector<double>> sample_conditional(const PosteriorBundle& bundle,
                                                    const std::vector<double>& x,
                                                    const ModelVector& m, long n, Rng& rng) {
  std::vector<long> act = bundle.config.active_indices(m);
  std::vector<std::vector<double>> out;
  out.reserve(n);
  if (act.empty()) {
    out.assign(n, {});
    return out;
  }
  SubMixture mix = conditional_mixture(bundle, x, m);
  for (long i = 0; i < n; ++i) {
    Eigen::VectorXd t = mix.sample(rng);
    out.emplace_back(t.data(), t.data() + t.size());
  }
  return out;
}

double c2st_knn(const std::vector<double>& a, const std::vector<double>& b, Rng& rng) {
  constexpr long kNeighbors = 5;
  constexpr long kFolds = 5;
  struct Point {
    double x;
    int label;
  };
  std::vector<Point> pts;
  for (double v : a) pts.push_back({v, 1});
  for (double v : b) pts.push_back({v, 0});
  long n = static_cast<long>(pts.size());
  if (n < 2 * kFolds) throw data_error("too few points for a cross-validated two-sample test");

  std::vector<long> order(n);
  for (long i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);

  long correct = 0;
  for (long fold = 0; fold < kFolds; ++fold) {
    std::vector<Point> train;
    std::vector<Point> test;
    for (long i = 0; i < n; ++i)
      ((i % kFolds == fold) ? test : train).push_back(pts[order[i]]);
    std::sort(train.begin(), train.end(),
              [](const Point& p, const Point& q) { return p.x < q.x; });
    for (const Point& t : test) {
      // Nearest neighbors in a sorted scalar array: widen from the insertion
      // point.
      long hi = std::lower_bound(train.begin(), train.end(), t,
                                 [](const Point& p, const Point& q) { return p.x < q.x; }) -
                train.begin();
      long lo = hi - 1;
      long votes = 0;
      for (long k = 0; k < kNeighbors; ++k) {
        bool take_lo;
        if (lo < 0)
          take_lo = false;
        else if (hi >= static_cast<long>(train.size()))
          take_lo = true;
        else
          take_lo = (t.x - train[lo].x) <= (train[hi].x - t.x);
        votes += take_lo ? train[lo--].label : train[hi++].label;
      }
      correct += (2 * votes > kNeighbors) == (t.label == 1);
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

SbcReport sbc(const PosteriorBundle& bundle, const std::vector<Record>& test_records,
              const SbcConfig& config) {
  if (config.n_rank_samples <= 0) throw config_error("rank sample count must be positive");
  SbcReport report;

  std::map<ModelVector, std::vector<long>> groups;
  for (size_t i = 0; i < test_records.size(); ++i)
    groups[test_records[i].m].push_back(static_cast<long>(i));

  std::vector<double> all_c2st;
  for (const auto& [m, idx] : groups) {
    std::vector<long> act = bundle.config.active_indices(m);
    if (static_cast<long>(idx.size()) < config.min_records || act.empty()) {
      report.skipped.push_back(m);
      continue;
    }
    long na = static_cast<long>(act.size());
    std::vector<std::vector<long>> ranks(na);
    for (long rec_i : idx) {
      const Record& rec = test_records[rec_i];
      if (static_cast<long>(rec.theta.size()) != na)
        throw shape_error("test record theta length does not match its model vector");
      Rng rec_rng(derive_seed(config.seed, static_cast<std::uint64_t>(rec_i)));
      auto draws = sample_conditional(bundle, rec.x, m, config.n_rank_samples, rec_rng);
      for (long j = 0; j < na; ++j) {
        long r = 0;
        for (const auto& d : draws) r += d[j] < rec.theta[j];
        ranks[j].push_back(r);
      }
    }
    report.n_records[m] = static_cast<long>(idx.size());

    std::vector<double> scores(na);
    Rng c2st_rng(derive_seed(config.seed, 0x5bc5bc + model_index(m)));
    for (long j = 0; j < na; ++j) {
      // Dither integer ranks onto [0,1) so the scalar test sees continuous
      // values, and compare against fresh uniforms.
      std::vector<double> sample_r, sample_u;
      for (long r : ranks[j])
        sample_r.push_back((r + c2st_rng.uniform()) / (config.n_rank_samples + 1.0));
      for (size_t q = 0; q < ranks[j].size(); ++q) sample_u.push_back(c2st_rng.uniform());
      scores[j] = c2st_knn(sample_r, sample_u, c2st_rng);
      all_c2st.push_back(scores[j]);
    }
    report.ranks.emplace(m, std::move(ranks));
    report.c2st.emplace(m, std::move(scores));
  }

  report.c2st_mode = histogram_mode(all_c2st);
  report.c2st_p05 = percentile(all_c2st, 0.05);
  report.c2st_p95 = percentile(all_c2st, 0.95);
  return report;
}

}  // namespace compinfer
