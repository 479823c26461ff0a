#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include <doctest.h>

#include "compinfer/errors.hpp"
#include "compinfer/evaluation.hpp"
#include "compinfer/posterior.hpp"

using namespace compinfer;

namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;
constexpr double kDiagShift = 0.54132485461292323;

double mvn_log_pdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mu, const RowMat& cov) {
  long d = x.size();
  Eigen::FullPivLU<RowMat> lu(cov);
  Eigen::VectorXd r = x - mu;
  double quad = r.dot(lu.inverse() * r);
  return -0.5 * (d * kLogTwoPi + std::log(lu.determinant()) + quad);
}

double mixture_log_pdf(const GaussianMixture& mix, const Eigen::VectorXd& x) {
  double best = -1e300;
  std::vector<double> terms;
  for (size_t c = 0; c < mix.weights.size(); ++c) {
    terms.push_back(std::log(mix.weights[c]) + mvn_log_pdf(x, mix.means[c], mix.covs[c]));
    best = std::max(best, terms.back());
  }
  double s = 0.0;
  for (double t : terms) s += std::exp(t - best);
  return best + std::log(s);
}

NetConfig tiny_identity_config(long features, long n, std::vector<long> dims) {
  NetConfig c;
  c.embed.kind = EmbedKind::Identity;
  c.embed.features = features;
  c.n_components = n;
  c.component_dims = std::move(dims);
  c.mogr_layers = 2;
  c.mogr_width = 12;
  c.mogr_components = 2;
  c.mdn_layers = 2;
  c.mdn_width = 14;
  c.mdn_components = 2;
  return c;
}

void perturb(PosteriorBundle& b, const std::string& name, double magnitude, Rng& rng) {
  Tensor& t = b.params[b.param_index(name)];
  for (double& v : t.v) v += rng.uniform(-magnitude, magnitude);
}

void zero_param(PosteriorBundle& b, const std::string& name) {
  Tensor& t = b.params[b.param_index(name)];
  std::fill(t.v.begin(), t.v.end(), 0.0);
}

// Marginal mean and covariance of a model's active block, from the full
// mixture.
void sub_moments(const GaussianMixture& mix, const std::vector<long>& act,
                 Eigen::VectorXd& mean, RowMat& cov) {
  long d = static_cast<long>(act.size());
  mean = Eigen::VectorXd::Zero(d);
  RowMat second = RowMat::Zero(d, d);
  for (size_t c = 0; c < mix.weights.size(); ++c) {
    Eigen::VectorXd mu(d);
    RowMat cc(d, d);
    for (long i = 0; i < d; ++i) {
      mu[i] = mix.means[c][act[i]];
      for (long j = 0; j < d; ++j) cc(i, j) = mix.covs[c](act[i], act[j]);
    }
    mean += mix.weights[c] * mu;
    second += mix.weights[c] * (cc + mu * mu.transpose());
  }
  cov = second - mean * mean.transpose();
}

GaussianMixture gather_mixture(const GaussianMixture& mix, const std::vector<long>& act) {
  GaussianMixture out;
  out.weights = mix.weights;
  long d = static_cast<long>(act.size());
  for (size_t c = 0; c < mix.weights.size(); ++c) {
    Eigen::VectorXd mu(d);
    RowMat cc(d, d);
    for (long i = 0; i < d; ++i) {
      mu[i] = mix.means[c][act[i]];
      for (long j = 0; j < d; ++j) cc(i, j) = mix.covs[c](act[i], act[j]);
    }
    out.means.push_back(std::move(mu));
    out.covs.push_back(std::move(cc));
  }
  return out;
}

// ---- analytic two-component toy shared with the posterior tests:
// x = theta_a + [B active] theta_b + 0.1 eps with uniform box priors. ----

double norm_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double toy_evidence_10(double x) {
  return 0.5 * (norm_cdf((x + 1.0) / 0.1) - norm_cdf((x - 1.0) / 0.1));
}

double toy_sum_density(double s) {
  if (s < -0.5 || s > 2.5) return 0.0;
  if (s < 0.5) return (s + 0.5) / 2.0;
  if (s <= 1.5) return 0.5;
  return (2.5 - s) / 2.0;
}

double toy_evidence_11(double x) {
  double h = 0.0005, acc = 0.0;
  for (double s = -0.5; s <= 2.5 + 1e-12; s += h) {
    double w = (s <= -0.5 + 1e-12 || s >= 2.5 - 1e-12) ? 0.5 : 1.0;
    double z = (x - s) / 0.1;
    acc += w * toy_sum_density(s) * std::exp(-0.5 * z * z) / (0.1 * std::sqrt(2.0 * M_PI));
  }
  return acc * h;
}

double toy_log_lik(const ModelVector& m, const std::vector<double>& theta, double x) {
  double mean = theta[0];
  if (m[1]) mean += theta[1];
  double z = (x - mean) / 0.1;
  return -0.5 * z * z - std::log(0.1) - 0.5 * kLogTwoPi;
}

// One-sample Kolmogorov statistic against Uniform(0,1).
double ks_uniform(std::vector<double> u) {
  std::sort(u.begin(), u.end());
  double n = static_cast<double>(u.size());
  double d = 0.0;
  for (size_t i = 0; i < u.size(); ++i) {
    d = std::max(d, std::abs((i + 1) / n - u[i]));
    d = std::max(d, std::abs(u[i] - i / n));
  }
  return d;
}

}  // namespace

TEST_SUITE_BEGIN("evaluation");

TEST_CASE("reference posterior point mass and exact zero-active evidence") {
  Rng rng(3);
  PosteriorBundle b = make_bundle(tiny_identity_config(1, 1, {1}), rng);
  ComponentPrior prior;
  prior.intervals = {{{-1.0, 1.0}}};

  std::map<ModelVector, double> model_prior{{{0}, 1.0}};
  LogLikFn lik = [](const ModelVector&, const std::vector<double>&) { return -2.5; };
  ReferenceConfig rc;
  rc.n_importance = 500;
  ReferencePosterior ref = reference_posterior(model_prior, prior, b, {0.2}, lik, rc);
  REQUIRE(ref.entries.size() == 1);
  const ReferenceEntry& e = ref.entries.at({0});
  CHECK(e.prob == doctest::Approx(1.0));
  CHECK(e.log_evidence == doctest::Approx(-2.5));
  CHECK(e.ess == doctest::Approx(500.0));
  CHECK_FALSE(e.unreliable);

  std::map<ModelVector, double> empty_prior{{{0}, 0.0}};
  CHECK_THROWS_AS(reference_posterior(empty_prior, prior, b, {0.2}, lik, rc), data_error);
  std::map<ModelVector, double> bad_len{{{0, 1}, 1.0}};
  CHECK_THROWS_AS(reference_posterior(bad_len, prior, b, {0.2}, lik, rc), shape_error);
  ReferenceConfig bad_rc;
  bad_rc.n_importance = 0;
  CHECK_THROWS_AS(reference_posterior(model_prior, prior, b, {0.2}, lik, bad_rc), config_error);
}

TEST_CASE("importance sampled evidences match the analytic toy") {
  Rng rng(17);
  PosteriorBundle b = make_bundle(tiny_identity_config(1, 2, {1, 1}), rng);
  ComponentPrior prior;
  prior.intervals = {{{-1.0, 1.0}}, {{0.5, 1.5}}};

  double x = 0.8;
  std::map<ModelVector, double> model_prior{{{1, 0}, 0.5}, {{1, 1}, 0.5}, {{0, 1}, 0.0}};
  LogLikFn lik = [x](const ModelVector& m, const std::vector<double>& th) {
    return toy_log_lik(m, th, x);
  };
  ReferenceConfig rc;
  rc.n_importance = 40000;
  rc.seed = 71;
  ReferencePosterior ref = reference_posterior(model_prior, prior, b, {x}, lik, rc);
  REQUIRE(ref.entries.size() == 2);
  CHECK(ref.entries.count({0, 1}) == 0);

  const ReferenceEntry& e10 = ref.entries.at({1, 0});
  const ReferenceEntry& e11 = ref.entries.at({1, 1});
  INFO("ess10 ", e10.ess, " ess11 ", e11.ess);
  CHECK(e10.n_samples == 40000);
  CHECK(e10.ess > 100.0);
  CHECK(e11.ess > 100.0);
  CHECK_FALSE(e10.unreliable);
  CHECK_FALSE(e11.unreliable);

  double tol10 = 4.0 / std::sqrt(e10.ess);
  double tol11 = 4.0 / std::sqrt(e11.ess);
  INFO("log ev10 ", e10.log_evidence, " truth ", std::log(toy_evidence_10(x)));
  INFO("log ev11 ", e11.log_evidence, " truth ", std::log(toy_evidence_11(x)));
  CHECK(std::abs(e10.log_evidence - std::log(toy_evidence_10(x))) < tol10);
  CHECK(std::abs(e11.log_evidence - std::log(toy_evidence_11(x))) < tol11);

  double p10 = toy_evidence_10(x) / (toy_evidence_10(x) + toy_evidence_11(x));
  CHECK(e10.prob + e11.prob == doctest::Approx(1.0));
  CHECK(std::abs(e10.prob - p10) < 0.25 * (tol10 + tol11));
}

TEST_CASE("ess flags an underdispersed proposal as unreliable") {
  Rng rng(5);
  PosteriorBundle b = make_bundle(tiny_identity_config(1, 1, {1}), rng);
  b.theta_mean = {0.0};
  b.theta_std = {0.01};
  ComponentPrior prior;
  prior.intervals = {{{-1.0, 1.0}}};

  std::map<ModelVector, double> model_prior{{{1}, 1.0}};
  LogLikFn flat = [](const ModelVector&, const std::vector<double>&) { return 0.0; };
  ReferenceConfig rc;
  rc.n_importance = 10000;
  ReferencePosterior ref = reference_posterior(model_prior, prior, b, {0.0}, flat, rc);
  const ReferenceEntry& e = ref.entries.at({1});
  INFO("ess ", e.ess);
  CHECK(e.ess < 100.0);
  CHECK(e.unreliable);
  CHECK(e.prob == doctest::Approx(1.0));
}

TEST_CASE("kl of the posterior against itself is zero") {
  Rng rng(23);
  PosteriorBundle b = make_bundle(tiny_identity_config(1, 2, {1, 1}), rng);
  perturb(b, "mpn.out.b", 0.7, rng);
  perturb(b, "mpn.out.w", 0.3, rng);
  std::vector<double> x{0.4};

  ReferencePosterior self;
  std::vector<double> lp = model_log_posterior_all(b, x);
  for (long i = 0; i < 4; ++i) {
    ReferenceEntry e;
    e.prob = std::exp(lp[i]);
    self.entries.emplace(model_from_index(i, 2), e);
  }
  CHECK(std::abs(kl_model_posteriors(self, b, x)) < 1e-12);

  ReferencePosterior skewed;
  ReferenceEntry e10, e11;
  e10.prob = 0.7;
  e11.prob = 0.3;
  skewed.entries.emplace(ModelVector{1, 0}, e10);
  skewed.entries.emplace(ModelVector{1, 1}, e11);
  double want = 0.7 * (std::log(0.7) - model_log_posterior(b, x, {1, 0})) +
                0.3 * (std::log(0.3) - model_log_posterior(b, x, {1, 1}));
  double got = kl_model_posteriors(skewed, b, x);
  CHECK(got == doctest::Approx(want).epsilon(1e-12));
  CHECK(got >= 0.0);
}

TEST_CASE("marginal performance matches enumeration for both heads") {
  for (ModelHead head : {ModelHead::MoGr, ModelHead::Categorical}) {
    CAPTURE(static_cast<int>(head));
    Rng rng(31);
    NetConfig c = tiny_identity_config(2, 3, {1, 1, 1});
    c.model_head = head;
    PosteriorBundle b = make_bundle(c, rng);
    perturb(b, "mpn.out.b", 0.8, rng);
    perturb(b, "mpn.out.w", 0.4, rng);
    std::vector<double> x{0.3, -0.6};

    std::vector<double> lp = model_log_posterior_all(b, x);
    std::vector<double> on(3, 0.0);
    for (long idx = 0; idx < 8; ++idx) {
      double p = std::exp(lp[idx]);
      for (long i = 0; i < 3; ++i)
        if ((idx >> i) & 1) on[i] += p;
    }
    ModelVector m_true{1, 0, 1};
    std::vector<double> perf = marginal_performance(b, x, m_true);
    REQUIRE(perf.size() == 3);
    for (long i = 0; i < 3; ++i) {
      double want = m_true[i] ? on[i] : 1.0 - on[i];
      CHECK(perf[i] == doctest::Approx(want).epsilon(1e-9));
    }
    CHECK_THROWS_AS((void)marginal_performance(b, x, {1, 0}), shape_error);
  }
}

TEST_CASE("map estimate finds the conditional mode") {
  SUBCASE("single component mode is the mean") {
    Rng rng(41);
    NetConfig c = tiny_identity_config(1, 2, {1, 1});
    c.mdn_components = 1;
    PosteriorBundle b = make_bundle(c, rng);
    perturb(b, "ppn.out.b", 0.6, rng);
    perturb(b, "mpn.out.b", 0.5, rng);
    std::vector<double> x{0.2};

    auto [m, theta] = map_estimate(b, x);
    std::vector<double> lp = model_log_posterior_all(b, x);
    long best = 0;
    for (long i = 1; i < 4; ++i)
      if (lp[i] > lp[best]) best = i;
    CHECK(m == model_from_index(best, 2));

    std::vector<long> act = b.config.active_indices(m);
    GaussianMixture mix = ppn_mixture(b, x, m);
    REQUIRE(theta.size() == act.size());
    for (size_t j = 0; j < act.size(); ++j)
      CHECK(theta[j] == doctest::Approx(mix.means[0][act[j]]).epsilon(1e-9));
  }

  SUBCASE("two component scalar mode matches a grid search") {
    Rng rng(43);
    NetConfig c = tiny_identity_config(1, 2, {1, 1});
    c.model_head = ModelHead::Categorical;
    PosteriorBundle b = make_bundle(c, rng);
    zero_param(b, "mpn.out.w");
    Tensor& logits = b.params[b.param_index("mpn.out.b")];
    logits.v = {0.0, 0.0, 8.0, 0.0};
    perturb(b, "ppn.out.b", 0.9, rng);
    std::vector<double> x{-0.3};

    auto [m, theta] = map_estimate(b, x);
    CHECK(m == ModelVector{0, 1});
    REQUIRE(theta.size() == 1);

    GaussianMixture sub = gather_mixture(ppn_mixture(b, x, m), b.config.active_indices(m));
    double best_t = 0.0, best_f = -1e300;
    for (double t = -8.0; t <= 8.0; t += 1e-4) {
      double f = mixture_log_pdf(sub, Eigen::VectorXd::Constant(1, t));
      if (f > best_f) {
        best_f = f;
        best_t = t;
      }
    }
    INFO("map ", theta[0], " grid ", best_t);
    CHECK(std::abs(theta[0] - best_t) < 2e-4);
    CHECK(mixture_log_pdf(sub, Eigen::VectorXd::Constant(1, theta[0])) >= best_f - 1e-10);
  }

  SUBCASE("empty model yields an empty parameter vector") {
    Rng rng(47);
    NetConfig c = tiny_identity_config(1, 1, {1});
    c.model_head = ModelHead::Categorical;
    PosteriorBundle b = make_bundle(c, rng);
    zero_param(b, "mpn.out.w");
    b.params[b.param_index("mpn.out.b")].v = {6.0, 0.0};
    auto [m, theta] = map_estimate(b, {0.1});
    CHECK(m == ModelVector{0});
    CHECK(theta.empty());
  }
}

TEST_CASE("bayes factors are consistent") {
  Rng rng(53);
  PosteriorBundle b = make_bundle(tiny_identity_config(1, 2, {1, 1}), rng);
  perturb(b, "mpn.out.b", 0.8, rng);
  std::vector<double> x{0.1};
  std::map<ModelVector, double> model_prior{
      {{0, 0}, 0.1}, {{1, 0}, 0.4}, {{1, 1}, 0.5}};

  CHECK(bayes_factor(b, model_prior, x, {1, 0}, {1, 0}) == doctest::Approx(1.0));
  double bf = bayes_factor(b, model_prior, x, {1, 0}, {1, 1});
  double fb = bayes_factor(b, model_prior, x, {1, 1}, {1, 0});
  CHECK(bf * fb == doctest::Approx(1.0).epsilon(1e-12));

  double want = std::exp(model_log_posterior(b, x, {1, 0}) - model_log_posterior(b, x, {1, 1})) *
                (0.5 / 0.4);
  CHECK(bf == doctest::Approx(want).epsilon(1e-12));

  CHECK_THROWS_AS((void)bayes_factor(b, model_prior, x, {0, 1}, {1, 0}), data_error);
  std::map<ModelVector, double> zeroed = model_prior;
  zeroed[{1, 1}] = 0.0;
  CHECK_THROWS_AS((void)bayes_factor(b, zeroed, x, {1, 0}, {1, 1}), data_error);
}

TEST_CASE("pooled predictive rmse on deterministic simulators") {
  Rng rng(59);
  PosteriorBundle b = make_bundle(tiny_identity_config(2, 2, {1, 1}), rng);
  std::vector<double> x{0.4, -0.2};

  SimulateFn echo = [&x](const ModelVector&, const std::vector<double>&, std::uint64_t) {
    return x;
  };
  Rng r1(7);
  CHECK(rmse_predictive(b, x, echo, 50, r1) == doctest::Approx(0.0));

  SimulateFn off = [&x](const ModelVector&, const std::vector<double>&, std::uint64_t) {
    std::vector<double> o = x;
    for (double& v : o) v += 1.0;
    return o;
  };
  Rng r2(7);
  CHECK(rmse_predictive(b, x, off, 50, r2) == doctest::Approx(1.0));

  SimulateFn bad = [](const ModelVector&, const std::vector<double>&, std::uint64_t) {
    return std::vector<double>{0.0};
  };
  Rng r3(7);
  CHECK_THROWS_AS((void)rmse_predictive(b, x, bad, 5, r3), shape_error);
  Rng r4(7);
  CHECK_THROWS_AS((void)rmse_predictive(b, x, echo, 0, r4), config_error);

  // Draws the simulator refuses are excluded, like generation-time filters.
  SimulateFn picky = [&x](const ModelVector& m, const std::vector<double>&, std::uint64_t) {
    if (m[0]) throw data_error("unsupported model");
    return x;
  };
  Rng r5(7);
  CHECK(rmse_predictive(b, x, picky, 200, r5) == doctest::Approx(0.0));
  SimulateFn refuses = [](const ModelVector&, const std::vector<double>&,
                          std::uint64_t) -> std::vector<double> {
    throw numeric_error("diverged");
  };
  Rng r6(7);
  CHECK_THROWS_AS((void)rmse_predictive(b, x, refuses, 5, r6), data_error);
  Rng r7(7);
  PredictiveEnsemble ens = predictive_global(b, x, picky, 200, r7);
  CHECK(ens.n_failed > 0);
  CHECK(ens.draws.size() + ens.n_failed == 200);
}

TEST_CASE("predictive ensembles obey the law of total variance") {
  Rng rng(61);
  PosteriorBundle b = make_bundle(tiny_identity_config(1, 2, {1, 1}), rng);
  perturb(b, "ppn.out.b", 0.8, rng);
  perturb(b, "mpn.out.b", 0.5, rng);
  std::vector<double> x{0.3};

  SimulateFn sum_theta = [](const ModelVector&, const std::vector<double>& th, std::uint64_t) {
    double s = 0.0;
    for (double t : th) s += t;
    return std::vector<double>{s};
  };

  long n = 20000;
  Rng rg(101);
  PredictiveEnsemble global = predictive_global(b, x, sum_theta, n, rg);
  REQUIRE(global.draws.size() == static_cast<size_t>(n));
  REQUIRE(global.mean.size() == 1);
  REQUIRE(global.stddev.size() == 1);

  std::vector<double> lp = model_log_posterior_all(b, x);
  double pooled = 0.0;
  for (long i = 0; i < 4; ++i) {
    Rng rl(211 + i);
    PredictiveEnsemble local =
        predictive_local(b, x, model_from_index(i, 2), sum_theta, n, rl);
    pooled += std::exp(lp[i]) * local.stddev[0] * local.stddev[0];
  }
  double global_var = global.stddev[0] * global.stddev[0];
  INFO("pooled ", pooled, " global ", global_var);
  CHECK(pooled <= global_var + 0.1 * std::max(1.0, global_var));
}

TEST_CASE("near point mass posterior gives a near point mass predictive") {
  Rng rng(67);
  PosteriorBundle b = make_bundle(tiny_identity_config(1, 2, {1, 1}), rng);
  b.theta_mean = {0.0, 0.0};
  b.theta_std = {1e-6, 1e-6};

  SimulateFn sum_theta = [](const ModelVector&, const std::vector<double>& th, std::uint64_t) {
    double s = 0.0;
    for (double t : th) s += t;
    return std::vector<double>{s};
  };
  Rng rl(5);
  PredictiveEnsemble local = predictive_local(b, {0.2}, {1, 1}, sum_theta, 200, rl);
  CHECK(std::abs(local.mean[0]) < 1e-4);
  CHECK(local.stddev[0] < 1e-4);
}

TEST_CASE("classifier two sample test separates what it should") {
  Rng rng(71);
  std::vector<double> a, bb;
  for (long i = 0; i < 400; ++i) a.push_back(rng.normal());
  for (long i = 0; i < 400; ++i) bb.push_back(rng.normal());
  double same = c2st_knn(a, bb, rng);
  INFO("same-distribution accuracy ", same);
  CHECK(std::abs(same - 0.5) < 0.05);

  std::vector<double> lo, hi;
  for (long i = 0; i < 200; ++i) lo.push_back(rng.uniform());
  for (long i = 0; i < 200; ++i) hi.push_back(10.0 + rng.uniform());
  CHECK(c2st_knn(lo, hi, rng) == doctest::Approx(1.0));

  std::vector<double> shifted;
  for (long i = 0; i < 400; ++i) shifted.push_back(2.0 + rng.normal());
  CHECK(c2st_knn(a, shifted, rng) > 0.7);

  std::vector<double> tiny{0.1, 0.2};
  CHECK_THROWS_AS((void)c2st_knn(tiny, tiny, rng), data_error);
}

TEST_CASE("sbc is calibrated for a matched head and flags an overconfident one") {
  NetConfig c = tiny_identity_config(1, 2, {1, 1});
  Rng rng(73);
  PosteriorBundle b = make_bundle(c, rng);
  zero_param(b, "ppn.out.w");
  zero_param(b, "ppn.out.b");

  // theta ~ N(0, I) regardless of x, matching the zeroed head exactly.
  std::vector<Record> records;
  Rng gen(79);
  for (long i = 0; i < 400; ++i) {
    Record r;
    r.m = {1, 1};
    r.theta = {gen.normal(), gen.normal()};
    r.x = {gen.normal()};
    records.push_back(std::move(r));
  }
  for (long i = 0; i < 30; ++i) {
    Record r;
    r.m = {1, 0};
    r.theta = {gen.normal()};
    r.x = {gen.normal()};
    records.push_back(std::move(r));
  }
  for (long i = 0; i < 60; ++i) {
    Record r;
    r.m = {0, 0};
    r.x = {gen.normal()};
    records.push_back(std::move(r));
  }

  SbcConfig sc;
  sc.seed = 83;
  SbcReport report = sbc(b, records, sc);
  REQUIRE(report.ranks.count({1, 1}) == 1);
  CHECK(report.n_records.at({1, 1}) == 400);
  REQUIRE(report.skipped.size() == 2);
  CHECK(std::count(report.skipped.begin(), report.skipped.end(), ModelVector{1, 0}) == 1);
  CHECK(std::count(report.skipped.begin(), report.skipped.end(), ModelVector{0, 0}) == 1);

  const auto& ranks = report.ranks.at({1, 1});
  REQUIRE(ranks.size() == 2);
  for (const auto& rv : ranks) {
    REQUIRE(rv.size() == 400);
    std::vector<double> u;
    for (long r : rv) {
      CHECK(r >= 0);
      CHECK(r <= 1000);
      u.push_back((r + 0.5) / 1001.0);
    }
    double ks = ks_uniform(u);
    INFO("ks ", ks);
    CHECK(ks < 1.9495 / std::sqrt(400.0));
  }
  const auto& scores = report.c2st.at({1, 1});
  REQUIRE(scores.size() == 2);
  for (double s : scores) {
    INFO("calibrated c2st ", s);
    CHECK(std::abs(s - 0.5) < 0.05);
  }
  CHECK(report.c2st_mode > 0.4);
  CHECK(report.c2st_mode < 0.6);
  CHECK(report.c2st_p05 <= report.c2st_p95);

  // Shrink the reported scale to 0.5 while the truth stays unit: ranks pile
  // up at the extremes and the classifier should notice.
  PosteriorBundle tight = b;
  double raw = std::log(std::exp(0.5 - 1e-6) - 1.0) - kDiagShift;
  Tensor& bias = tight.params[tight.param_index("ppn.out.b")];
  long d = 2, strict = 1, per = 2 * d + strict;
  for (long ci = 0; ci < c.mdn_components; ++ci)
    for (long j = 0; j < d; ++j) bias.v[ci * per + d + strict + j] = raw;

  SbcReport over = sbc(tight, records, sc);
  for (double s : over.c2st.at({1, 1})) {
    INFO("overconfident c2st ", s);
    CHECK(s > 0.55);
  }
}

TEST_CASE("conditional samples match mixture moments and density") {
  Rng rng(89);
  PosteriorBundle b = make_bundle(tiny_identity_config(1, 2, {1, 2}), rng);
  perturb(b, "ppn.out.b", 0.7, rng);
  std::vector<double> x{0.5};
  ModelVector m{1, 1};
  std::vector<long> act = b.config.active_indices(m);
  REQUIRE(act.size() == 3);

  GaussianMixture mix = ppn_mixture(b, x, m);
  Eigen::VectorXd mean;
  RowMat cov;
  sub_moments(mix, act, mean, cov);

  long n = 40000;
  Rng draw_rng(97);
  auto draws = sample_conditional(b, x, m, n, draw_rng);
  REQUIRE(draws.size() == static_cast<size_t>(n));
  Eigen::VectorXd sample_mean = Eigen::VectorXd::Zero(3);
  for (const auto& d : draws)
    for (long j = 0; j < 3; ++j) sample_mean[j] += d[j];
  sample_mean /= n;
  Eigen::VectorXd sample_var = Eigen::VectorXd::Zero(3);
  for (const auto& d : draws)
    for (long j = 0; j < 3; ++j)
      sample_var[j] += (d[j] - sample_mean[j]) * (d[j] - sample_mean[j]);
  sample_var /= n - 1;

  for (long j = 0; j < 3; ++j) {
    double se = std::sqrt(cov(j, j) / n);
    INFO("dim ", j, " mean ", sample_mean[j], " want ", mean[j]);
    CHECK(std::abs(sample_mean[j] - mean[j]) < 4.0 * se);
    CHECK(sample_var[j] == doctest::Approx(cov(j, j)).epsilon(0.1));
  }

  GaussianMixture sub = gather_mixture(mix, act);
  Rng theta_rng(101);
  for (long trial = 0; trial < 20; ++trial) {
    std::vector<double> theta(3);
    Eigen::VectorXd tv(3);
    for (long j = 0; j < 3; ++j) {
      theta[j] = theta_rng.uniform(-2.0, 2.0);
      tv[j] = theta[j];
    }
    CHECK(param_log_posterior(b, x, m, theta) ==
          doctest::Approx(mixture_log_pdf(sub, tv)).epsilon(1e-9));
  }

  auto empty = sample_conditional(b, x, {0, 0}, 5, draw_rng);
  REQUIRE(empty.size() == 5);
  CHECK(empty[0].empty());
}

TEST_SUITE_END();
