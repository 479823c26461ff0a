#include <cmath>
#include <vector>

#include <doctest.h>

#include "compinfer/errors.hpp"
#include "compinfer/simulators.hpp"
#include "compinfer/tasks.hpp"

using namespace compinfer;

namespace {

constexpr double kPi = 3.14159265358979323846;

// First-passage density to the +b boundary for constant drift d, unit
// diffusion, symmetric boundaries +-b, start 0: classical eigenfunction
// series for absorption in a strip, reflected to the upper barrier.
double fp_density_upper(double t, double d, double b) {
  if (t <= 0.0) return 0.0;
  double a = 2.0 * b;
  double sum = 0.0;
  for (int k = 1; k <= 199; k += 2) {
    double sgn = ((k - 1) / 2) % 2 == 0 ? 1.0 : -1.0;
    sum += sgn * k * std::exp(-k * k * kPi * kPi * t / (2.0 * a * a));
  }
  return kPi / (a * a) * std::exp(b * d - d * d * t / 2.0) * sum;
}

double fp_density_lower(double t, double d, double b) { return fp_density_upper(t, -d, b); }

double hit_prob_upper(double d, double b) { return 1.0 / (1.0 + std::exp(-2.0 * d * b)); }

// Exact upper-absorption probability of the discretely monitored walk
// z_{k+1} = z_k + d*dt + sqrt(dt)*eps, computed by propagating the
// unabsorbed density on a grid with the Gaussian transfer kernel. This is
// the same stochastic process the simulator monitors, evaluated without
// Monte-Carlo error, so simulated splits must match it to sampling noise.
double discrete_hit_prob_upper(double d, double b, double dt, long max_steps, long n) {
  const double h = 2.0 * b / static_cast<double>(n);
  const double s = std::sqrt(dt);
  const double shift = d * dt;
  auto Phi = [](double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); };

  std::vector<double> f(n), kernel(2 * n), up_out(n);
  double up = 1.0 - Phi((b - shift) / s);
  for (long j = 0; j < n; ++j) {
    double y = -b + (j + 0.5) * h;
    f[j] = Phi((y + 0.5 * h - shift) / s) - Phi((y - 0.5 * h - shift) / s);
  }
  for (long o = 0; o < 2 * n; ++o) {
    double delta = static_cast<double>(o - n) * h;
    kernel[o] = Phi((delta + 0.5 * h - shift) / s) - Phi((delta - 0.5 * h - shift) / s);
  }
  for (long i = 0; i < n; ++i) {
    double z = -b + (i + 0.5) * h;
    up_out[i] = 1.0 - Phi((b - z - shift) / s);
  }

  std::vector<double> g(n);
  for (long step = 1; step < max_steps; ++step) {
    double mass = 0.0;
    for (long i = 0; i < n; ++i) mass += f[i];
    if (mass < 1e-13) break;
    for (long i = 0; i < n; ++i) up += f[i] * up_out[i];
    std::fill(g.begin(), g.end(), 0.0);
    for (long i = 0; i < n; ++i) {
      if (f[i] <= 0.0) continue;
      const double fi = f[i];
      const double* k = kernel.data() + (n - i);
      for (long j = 0; j < n; ++j) g[j] += fi * k[j];
    }
    f.swap(g);
  }
  return up;
}

}  // namespace

TEST_SUITE_BEGIN("simulators");

TEST_CASE("additive grid is equidistant on [0,10]") {
  std::vector<double> t = additive_grid(100);
  REQUIRE(t.size() == 100);
  CHECK(t.front() == 0.0);
  CHECK(t.back() == doctest::Approx(10.0).epsilon(1e-15));
  for (size_t i = 1; i < t.size(); ++i)
    CHECK(t[i] - t[i - 1] == doctest::Approx(10.0 / 99.0).epsilon(1e-12));
  CHECK_THROWS_AS(additive_grid(1), config_error);
}

TEST_CASE("additive component tables agree with the graphs and priors") {
  struct Row {
    AdditiveFamily fam;
    PriorGraph graph;
    ComponentPrior prior;
  };
  for (const Row& r : {Row{AdditiveFamily::Six, additive6_graph(), additive6_prior()},
                       Row{AdditiveFamily::Eleven, additive11_graph(), additive11_prior()},
                       Row{AdditiveFamily::Twenty, additive20_graph(), additive20_prior()}}) {
    REQUIRE(additive_component_count(r.fam) == r.graph.n);
    REQUIRE(additive_component_count(r.fam) ==
            static_cast<long>(r.prior.intervals.size()));
    for (int i = 0; i < r.graph.n; ++i)
      CHECK(additive_component_dim(r.fam, i) == r.prior.component_dim(i));
  }
}

TEST_CASE("additive mean matches a direct symbolic evaluation") {
  ModelVector m{1, 1, 0, 1, 1, 0};
  std::vector<double> th{0.7, -0.4, 2.0, 1.3, 0.5};
  std::vector<double> mean = additive_mean(AdditiveFamily::Six, m, th);
  std::vector<double> t = additive_grid(100);
  for (long g = 0; g < 100; ++g) {
    double want = (0.7 - 0.4) * t[g] + 2.0 * std::sin(1.3 * t[g]);
    CHECK(mean[g] == doctest::Approx(want).epsilon(1e-12));
  }

  ModelVector mq{0, 0, 1, 0, 1, 0};
  std::vector<double> mq_mean = additive_mean(AdditiveFamily::Six, mq, {0.0, 1.0});
  for (double x : mq_mean) CHECK(x == 0.0);
}

TEST_CASE("pure-noise output has the configured standard deviation") {
  ModelVector m{0, 0, 0, 0, 1, 0};
  Rng rng(71);
  std::vector<double> x = run_additive(AdditiveFamily::Six, m, {0.1}, rng, 2000);
  double mu = 0.0;
  for (double v : x) mu += v;
  mu /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mu) * (v - mu);
  double sd = std::sqrt(var / static_cast<double>(x.size()));
  CHECK(std::abs(sd - 0.1) < 0.007);
  CHECK(std::abs(mu) < 0.01);
}

TEST_CASE("scaled noise terms use the absolute scale factor") {
  // The last noise term's factor changes sign inside the interval.
  ModelVector m(20, 0);
  m[19] = 1;
  std::vector<double> sd = additive_noise_std(AdditiveFamily::Twenty, m, {0.4}, 5);
  std::vector<double> t = additive_grid(5);
  for (long g = 0; g < 5; ++g)
    CHECK(sd[g] == doctest::Approx(std::abs(11.0 - t[g] * t[g]) * 0.4).epsilon(1e-12));

  Rng rng(73);
  const long reps = 20000;
  double acc = 0.0;
  for (long i = 0; i < reps; ++i) {
    std::vector<double> x = run_additive(AdditiveFamily::Twenty, m, {0.4}, rng, 5);
    acc += x[2] * x[2];
  }
  double want = std::abs(11.0 - 25.0) * 0.4;
  CHECK(std::abs(std::sqrt(acc / reps) - want) < 4.0 * want / std::sqrt(2.0 * reps));
}

TEST_CASE("additive log likelihood matches a per-point density oracle") {
  ModelVector m{1, 0, 1, 0, 0, 1};
  std::vector<double> th{1.2, -0.3, 0.8};
  Rng rng(79);
  std::vector<double> x = run_additive(AdditiveFamily::Six, m, th, rng);
  double got = additive_log_likelihood(AdditiveFamily::Six, m, th, x);

  std::vector<double> mean = additive_mean(AdditiveFamily::Six, m, th);
  std::vector<double> t = additive_grid(100);
  double want = 0.0;
  for (long g = 0; g < 100; ++g) {
    double sd = (t[g] + 1.0) * 0.8;
    want += -0.5 * std::log(2.0 * kPi * sd * sd) -
            (x[g] - mean[g]) * (x[g] - mean[g]) / (2.0 * sd * sd);
  }
  CHECK(got == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("zero residual at unit noise gives the normalizing constant") {
  ModelVector m{1, 0, 0, 0, 1, 0};
  std::vector<double> th{0.5, 1.0};
  std::vector<double> x = additive_mean(AdditiveFamily::Six, m, th);
  double ll = additive_log_likelihood(AdditiveFamily::Six, m, th, x);
  CHECK(ll == doctest::Approx(-50.0 * std::log(2.0 * kPi)).epsilon(1e-12));
}

TEST_CASE("likelihood is symmetric in the two linear components") {
  ModelVector m{1, 1, 0, 0, 1, 0};
  Rng rng(83);
  std::vector<double> x = run_additive(AdditiveFamily::Six, m, {0.9, -1.1, 0.6}, rng);
  double a = additive_log_likelihood(AdditiveFamily::Six, m, {0.9, -1.1, 0.6}, x);
  double b = additive_log_likelihood(AdditiveFamily::Six, m, {-1.1, 0.9, 0.6}, x);
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("additive input validation") {
  Rng rng(1);
  ModelVector no_noise{1, 0, 0, 0, 0, 0};
  CHECK_THROWS_AS(run_additive(AdditiveFamily::Six, no_noise, {0.5}, rng), data_error);
  ModelVector two_noise{0, 0, 0, 0, 1, 1};
  CHECK_THROWS_AS(run_additive(AdditiveFamily::Six, two_noise, {0.5, 0.5}, rng), data_error);
  ModelVector m{1, 0, 0, 0, 1, 0};
  CHECK_THROWS_AS(run_additive(AdditiveFamily::Six, m, {0.5}, rng), shape_error);
  CHECK_THROWS_AS(run_additive(AdditiveFamily::Six, m, {0.5, 0.0}, rng), data_error);
  CHECK_THROWS_AS(run_additive(AdditiveFamily::Six, ModelVector{1, 0}, {0.5}, rng),
                  shape_error);
  CHECK_THROWS_AS(
      additive_log_likelihood(AdditiveFamily::Six, m, {0.5, 1.0}, {1.0, 2.0}), shape_error);
}

TEST_CASE("first-passage oracle integrates to the analytic hit probability") {
  for (auto [d, b] : std::vector<std::pair<double, double>>{{1.0, 1.0}, {5.0, 0.3}, {0.5, 0.8}}) {
    double acc = 0.0, dt = 1e-3;
    for (long k = 0; k < 30000; ++k) {
      double t0 = k * dt, t1 = t0 + dt;
      acc += 0.5 * (fp_density_upper(t0, d, b) + fp_density_upper(t1, d, b)) * dt;
    }
    CHECK(acc == doctest::Approx(hit_prob_upper(d, b)).epsilon(1e-6));
  }
}

TEST_CASE("decision split matches the analytic hit probability") {
  DdmConfig cfg;
  ModelVector m{1, 0, 1, 0, 1};

  // The grid oracle reproduces the continuous-time odds e^{2db} once the
  // monitoring step is fine, and quantifies the step-size bias at the
  // default dt (discrete monitoring misses brief excursions, so the
  // favoured boundary collects extra mass).
  double cont = hit_prob_upper(5.0, 0.3);
  double disc_fine = discrete_hit_prob_upper(5.0, 0.3, 2e-4, 50000, 401);
  double disc = discrete_hit_prob_upper(5.0, 0.3, cfg.dt, 2000, 801);
  CHECK(std::abs(disc_fine - cont) < 5e-3);
  CHECK(std::abs(disc - cont) > std::abs(disc_fine - cont));

  cfg.trials = 100000;
  Rng r1(89);
  RowMat x = run_ddm(m, {5.0, 0.3, 0.2}, r1, cfg);
  double up = 0.0;
  for (long i = 0; i < x.rows(); ++i) up += x(i, 1) > 0.0 ? 1.0 : 0.0;
  up /= static_cast<double>(x.rows());
  double se = std::sqrt(disc * (1.0 - disc) / cfg.trials);
  CHECK(std::abs(up - disc) <= 4.0 * se);

  Rng r2(90);
  x = run_ddm(m, {5.0, 0.5, 0.2}, r2, cfg);
  up = 0.0;
  for (long i = 0; i < x.rows(); ++i) up += x(i, 1) > 0.0 ? 1.0 : 0.0;
  up /= static_cast<double>(x.rows());
  double p = discrete_hit_prob_upper(5.0, 0.5, cfg.dt, 2000, 801);
  se = std::sqrt(p * (1.0 - p) / cfg.trials);
  CHECK(std::abs(up - p) <= 4.0 * se);
  CHECK(hit_prob_upper(5.0, 0.5) > 0.99);
  CHECK(up > 0.99);

  Rng r3(91);
  cfg.trials = 40000;
  x = run_ddm(m, {0.0, 1.0, 0.1}, r3, cfg);
  up = 0.0;
  for (long i = 0; i < x.rows(); ++i) up += x(i, 1) > 0.0 ? 1.0 : 0.0;
  up /= static_cast<double>(x.rows());
  CHECK(std::abs(up - 0.5) <= 4.0 * std::sqrt(0.25 / cfg.trials));
}

TEST_CASE("decision-time histogram matches the series density") {
  DdmConfig cfg;
  cfg.trials = 100000;
  ModelVector m{1, 0, 1, 0, 1};
  double d = 1.0, b = 1.0, ndt = 0.2;
  Rng rng(97);
  RowMat x = run_ddm(m, {d, b, ndt}, rng, cfg);

  const double width = 0.1;
  const long nbins = 60;
  for (double side : {1.0, -1.0}) {
    std::vector<double> emp(nbins, 0.0);
    for (long i = 0; i < x.rows(); ++i) {
      if (x(i, 1) != side) continue;
      long bin = static_cast<long>((x(i, 0) - ndt) / width);
      if (bin >= 0 && bin < nbins) emp[bin] += 1.0;
    }
    double mse = 0.0;
    for (long k = 0; k < nbins; ++k) {
      double e = emp[k] / (cfg.trials * width);
      double ref = 0.0;
      const int sub = 10;
      for (int j = 0; j < sub; ++j) {
        double t = (k + (j + 0.5) / sub) * width;
        ref += side > 0 ? fp_density_upper(t, d, b) : fp_density_lower(t, d, b);
      }
      ref /= sub;
      mse += (e - ref) * (e - ref);
    }
    mse /= nbins;
    CHECK(mse < 1e-3);
  }
}

TEST_CASE("undecided trials are stored as (t_max, 0)") {
  DdmConfig cfg;
  cfg.trials = 2000;
  ModelVector m{1, 0, 1, 0, 1};
  Rng rng(101);
  RowMat x = run_ddm(m, {0.0, 5.0, 0.25}, rng, cfg);
  long undecided = 0;
  for (long i = 0; i < x.rows(); ++i) {
    if (x(i, 1) == 0.0) {
      ++undecided;
      CHECK(x(i, 0) == cfg.t_max);
    } else {
      CHECK(x(i, 0) >= 0.25 + cfg.dt - 1e-12);
      CHECK((x(i, 1) == 1.0 || x(i, 1) == -1.0));
    }
  }
  CHECK(undecided > 0);
  CHECK(undecided < x.rows());
  CHECK(ddm_undecided_count(x) == undecided);
}

TEST_CASE("a boundary that starts negative decides on the first step") {
  DdmConfig cfg;
  cfg.trials = 100;
  ModelVector m{1, 0, 0, 1, 1};
  Rng rng(103);
  RowMat x = run_ddm(m, {1.0, 0.3, 1.5, 0.1}, rng, cfg);
  for (long i = 0; i < x.rows(); ++i)
    CHECK(x(i, 0) == doctest::Approx(0.1 + cfg.dt).epsilon(1e-12));
}

TEST_CASE("leaky drift with a reachable boundary behaves sanely") {
  DdmConfig cfg;
  cfg.trials = 3000;
  ModelVector m{0, 1, 1, 0, 1};
  Rng rng(107);
  RowMat x = run_ddm(m, {2.0, -10.0, 0.5, 0.15}, rng, cfg);
  long up = 0, down = 0, undecided = 0;
  for (long i = 0; i < x.rows(); ++i) {
    if (x(i, 1) > 0) ++up;
    else if (x(i, 1) < 0) ++down;
    else ++undecided;
  }
  CHECK(up + down > cfg.trials / 2);
  CHECK(up > down);
}

TEST_CASE("ddm input validation") {
  Rng rng(1);
  CHECK_THROWS_AS(run_ddm(ModelVector{1, 1, 1, 0, 1}, {1, 1, 0.2}, rng), data_error);
  CHECK_THROWS_AS(run_ddm(ModelVector{1, 0, 0, 0, 1}, {1, 0.2}, rng), data_error);
  CHECK_THROWS_AS(run_ddm(ModelVector{1, 0, 1, 0, 0}, {1, 1}, rng), data_error);
  CHECK_THROWS_AS(run_ddm(ModelVector{1, 0, 1, 0, 1}, {1, 1}, rng), shape_error);
  CHECK_THROWS_AS(run_ddm(ModelVector{1, 0, 1}, {1, 1, 0.2}, rng), shape_error);
}

TEST_SUITE_END();
