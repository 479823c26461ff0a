#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include <doctest.h>

#include "compinfer/errors.hpp"
#include "compinfer/prior_graph.hpp"
#include "compinfer/tasks.hpp"

using namespace compinfer;

namespace {

// Exact reference distribution over models: exhaustively expand every walk
// branch with its probability instead of sampling. Rule application is
// re-implemented here from the documented semantics.
void apply_rules_ref(const PriorGraph& g, RowMat& w, const std::vector<char>& visited,
                     int just_sampled) {
  for (const RewriteRule& r : g.rules) {
    switch (r.kind) {
      case RewriteRule::KillIngoing:
        if (just_sampled == r.a)
          for (int i = 0; i < g.n + 2; ++i) w(i, r.a) = 0.0;
        break;
      case RewriteRule::ExcludePair:
        if (visited[r.a])
          for (int i = 0; i < g.n + 2; ++i) w(i, r.b) = 0.0;
        break;
      case RewriteRule::ScalePair:
        if (visited[r.a])
          for (int i = 0; i < g.n + 2; ++i) w(i, r.b) *= r.c;
        break;
      case RewriteRule::FavorEnd:
        if (visited[r.a] && w(r.a, g.end()) == 0.0)
          for (int i = 0; i < g.n + 2; ++i) w(i, g.end()) *= r.c;
        break;
    }
  }
}

void expand_walks(const PriorGraph& g, const RowMat& w, const std::vector<char>& visited, int cur,
                  double prob, const ModelVector& m, std::map<ModelVector, double>& out) {
  double total = w.row(cur).sum();
  REQUIRE(total > 0.0);
  for (int j = 0; j < g.n + 2; ++j) {
    if (w(cur, j) <= 0.0) continue;
    double p = prob * w(cur, j) / total;
    if (j == g.end()) {
      out[m] += p;
      continue;
    }
    ModelVector m2 = m;
    m2[j - 1] = 1;
    std::vector<char> v2 = visited;
    v2[j] = 1;
    RowMat w2 = w;
    apply_rules_ref(g, w2, v2, j);
    expand_walks(g, w2, v2, j, p, m2, out);
  }
}

std::map<ModelVector, double> exact_prior(const PriorGraph& g) {
  std::map<ModelVector, double> out;
  expand_walks(g, g.weights, std::vector<char>(g.n + 2, 0), g.start(), 1.0,
               ModelVector(g.n, 0), out);
  return out;
}

PriorGraph chain_graph() {
  PriorGraph g;
  g.n = 1;
  g.names = {"a"};
  g.weights = RowMat::Zero(3, 3);
  g.weights(0, 1) = 1.0;
  g.weights(1, 2) = 1.0;
  return g;
}

}  // namespace

TEST_SUITE_BEGIN("prior_graph");

TEST_CASE("linear chain always yields the single component") {
  PriorGraph g = chain_graph();
  g.validate();
  Rng rng(3);
  for (int i = 0; i < 10; ++i) CHECK(sample_model(g, rng) == ModelVector{1});
  auto freq = empirical_prior(g, 50, rng);
  REQUIRE(freq.size() == 1);
  CHECK(freq.begin()->second == doctest::Approx(1.0));
}

TEST_CASE("walks are deterministic under a fixed seed") {
  PriorGraph g = additive6_graph();
  Rng r1(99), r2(99);
  for (int i = 0; i < 100; ++i) CHECK(sample_model(g, r1) == sample_model(g, r2));
}

TEST_CASE("graph validation rejects malformed input") {
  PriorGraph g = chain_graph();
  g.weights(0, 1) = 0.0;
  CHECK_THROWS_AS(g.validate(), config_error);

  g = chain_graph();
  g.weights(1, 2) = -0.5;
  CHECK_THROWS_AS(g.validate(), config_error);

  g = chain_graph();
  g.rules.push_back({RewriteRule::ScalePair, 1, 1, 1.5});
  CHECK_THROWS_AS(g.validate(), config_error);

  g = chain_graph();
  g.rules.push_back({RewriteRule::FavorEnd, 1, -1, 0.5});
  CHECK_THROWS_AS(g.validate(), config_error);

  g = chain_graph();
  g.rules.push_back({RewriteRule::KillIngoing, 0, -1, 1.0});
  CHECK_THROWS_AS(g.validate(), config_error);

  g = chain_graph();
  g.names = {};
  CHECK_THROWS_AS(g.validate(), config_error);
}

TEST_CASE("a walk that cannot reach the end raises") {
  PriorGraph g;
  g.n = 2;
  g.names = {"a", "b"};
  g.weights = RowMat::Zero(4, 4);
  g.weights(0, 1) = 1.0;
  g.weights(1, 2) = 1.0;
  g.weights(2, 1) = 1.0;
  g.validate();
  Rng rng(1);
  CHECK_THROWS_AS(sample_model(g, rng), numeric_error);
}

TEST_CASE("a stranded node raises") {
  PriorGraph g;
  g.n = 2;
  g.names = {"a", "b"};
  g.weights = RowMat::Zero(4, 4);
  g.weights(0, 1) = 1.0;
  g.weights(1, 2) = 1.0;
  g.validate();
  Rng rng(1);
  CHECK_THROWS_AS(sample_model(g, rng), numeric_error);
}

TEST_CASE("kill rules make a cyclic graph terminate") {
  PriorGraph g;
  g.n = 2;
  g.names = {"a", "b"};
  g.weights = RowMat::Zero(4, 4);
  g.weights(0, 1) = 1.0;
  g.weights(1, 2) = 1.0;
  g.weights(2, 1) = 1.0;
  g.weights(2, 3) = 1.0;
  g.rules.push_back({RewriteRule::KillIngoing, 1, -1, 1.0});
  g.rules.push_back({RewriteRule::KillIngoing, 2, -1, 1.0});
  g.validate();
  Rng rng(17);
  for (int i = 0; i < 200; ++i) CHECK(sample_model(g, rng) == ModelVector{1, 1});
}

TEST_CASE("exclusion rule forbids co-occurrence") {
  PriorGraph g = additive6_graph();
  Rng rng(11);
  for (int i = 0; i < 100000; ++i) {
    ModelVector m = sample_model(g, rng);
    CHECK(m[4] + m[5] == 1);  // exactly one noise term
    CHECK(m[0] + m[1] + m[2] + m[3] >= 1);
  }
}

TEST_CASE("additive graph walk frequencies match exact path enumeration") {
  PriorGraph g = additive6_graph();
  std::map<ModelVector, double> exact = exact_prior(g);

  double total = 0.0;
  for (auto& [m, p] : exact) total += p;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(exact.size() == 30);

  // Support: one noise term + any non-empty subset of the four others.
  std::set<ModelVector> expected;
  for (int noise = 0; noise < 2; ++noise)
    for (int mask = 1; mask < 16; ++mask) {
      ModelVector m(6, 0);
      for (int i = 0; i < 4; ++i) m[i] = (mask >> i) & 1;
      m[4 + noise] = 1;
      expected.insert(m);
    }
  for (auto& [m, p] : exact) CHECK(expected.count(m) == 1);

  const long draws = 1000000;
  Rng rng(13);
  std::map<ModelVector, double> freq = empirical_prior(g, draws, rng);
  CHECK(freq.size() == 30);
  for (auto& [m, f] : freq) REQUIRE(exact.count(m) == 1);
  for (auto& [m, p] : exact) {
    double se = std::sqrt(p * (1.0 - p) / draws);
    CHECK(std::abs(freq[m] - p) <= 4.0 * se);
  }
}

TEST_CASE("decision-model graph has the documented model probabilities") {
  PriorGraph g = ddm_graph();
  std::map<ModelVector, double> exact = exact_prior(g);
  REQUIRE(exact.size() == 4);
  CHECK(exact[{1, 0, 1, 0, 1}] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(exact[{1, 0, 0, 1, 1}] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(exact[{0, 1, 1, 0, 1}] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
  CHECK(exact[{0, 1, 0, 1, 1}] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  const long draws = 100000;
  Rng rng(19);
  auto freq = empirical_prior(g, draws, rng);
  for (auto& [m, p] : exact) {
    double se = std::sqrt(p * (1.0 - p) / draws);
    CHECK(std::abs(freq[m] - p) <= 4.0 * se);
  }
}

TEST_CASE("conductance-model graph keeps required channels and weighs optional ones") {
  PriorGraph g = hh_graph();
  std::map<ModelVector, double> exact = exact_prior(g);
  REQUIRE(exact.size() == 4);
  // order: leak, K, K_m, Na, Ca, noise
  CHECK(exact[{1, 1, 0, 1, 0, 1}] == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
  CHECK(exact[{1, 1, 1, 1, 0, 1}] == doctest::Approx(3.0 / 14.0).epsilon(1e-12));
  CHECK(exact[{1, 1, 0, 1, 1, 1}] == doctest::Approx(3.0 / 14.0).epsilon(1e-12));
  CHECK(exact[{1, 1, 1, 1, 1, 1}] == doctest::Approx(3.0 / 7.0).epsilon(1e-12));

  Rng rng(23);
  for (int i = 0; i < 20000; ++i) {
    ModelVector m = sample_model(g, rng);
    CHECK(m[0] == 1);
    CHECK(m[1] == 1);
    CHECK(m[3] == 1);
    CHECK(m[5] == 1);
  }
}

TEST_CASE("larger additive graphs stay inside their support") {
  for (auto [graph, nd, nn] :
       {std::tuple{additive11_graph(), 9, 2}, std::tuple{additive20_graph(), 15, 5}}) {
    Rng rng(29);
    for (int i = 0; i < 10000; ++i) {
      ModelVector m = sample_model(graph, rng);
      int noise = 0, det = 0;
      for (int k = 0; k < nd; ++k) det += m[k];
      for (int k = nd; k < nd + nn; ++k) noise += m[k];
      CHECK(noise == 1);
      CHECK(det >= 1);
    }
  }
}

TEST_CASE("parameter dimensions match the component tables") {
  CHECK(additive6_prior().full_dim() == 7);
  CHECK(additive11_prior().full_dim() == 13);
  CHECK(additive20_prior().full_dim() == 28);
  CHECK(ddm_prior().full_dim() == 7);
  CHECK(hh_prior().full_dim() == 9);
  CHECK(additive6_graph().n == 6);
  CHECK(additive11_graph().n == 11);
  CHECK(additive20_graph().n == 20);
  CHECK(static_cast<long>(additive6_prior().intervals.size()) == 6);
  CHECK(static_cast<long>(hh_prior().intervals.size()) == 6);

  ComponentPrior p = additive6_prior();
  ModelVector m{1, 0, 0, 1, 1, 0};
  CHECK(p.param_dim(m) == 4);
  CHECK(p.offset(3) == 3);
  CHECK(p.active_indices(m) == std::vector<long>{0, 3, 4, 5});
}

TEST_CASE("parameter draws respect the active components") {
  ComponentPrior p = additive6_prior();
  Rng rng(31);
  CHECK(sample_parameters(p, ModelVector(6, 0), rng).empty());

  ModelVector m{0, 0, 0, 1, 0, 0};
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> th = sample_parameters(p, m, rng);
    REQUIRE(th.size() == 2);
    CHECK(th[0] >= 0.0);
    CHECK(th[0] < 5.0);
    CHECK(th[1] >= 0.5);
    CHECK(th[1] < 5.0);
  }
}

TEST_CASE("parameter draws pass a Kolmogorov-Smirnov uniformity check") {
  ComponentPrior p = ddm_prior();
  ModelVector m{0, 1, 0, 1, 1};  // 5 active scalars
  const long n = 100000;
  Rng rng(37);
  std::vector<std::vector<double>> dims(5);
  for (long i = 0; i < n; ++i) {
    std::vector<double> th = sample_parameters(p, m, rng);
    REQUIRE(th.size() == 5);
    for (int k = 0; k < 5; ++k) dims[k].push_back(th[k]);
  }
  std::vector<std::pair<double, double>> boxes = {
      {0.0, 5.0}, {-20.0, -5.0}, {0.3, 2.0}, {0.5, 1.5}, {0.1, 0.3}};
  // 0.999 asymptotic critical value.
  double crit = 1.9495 / std::sqrt(static_cast<double>(n));
  for (int k = 0; k < 5; ++k) {
    std::sort(dims[k].begin(), dims[k].end());
    auto [lo, hi] = boxes[k];
    double d = 0.0;
    for (long i = 0; i < n; ++i) {
      double cdf = (dims[k][i] - lo) / (hi - lo);
      d = std::max(d, std::abs((i + 1.0) / n - cdf));
      d = std::max(d, std::abs(cdf - static_cast<double>(i) / n));
    }
    CHECK(d < crit);
  }
}

TEST_CASE("graph json round-trips") {
  for (const PriorGraph& g : {additive6_graph(), ddm_graph(), hh_graph()}) {
    PriorGraph back = prior_graph_from_json(prior_graph_to_json(g));
    CHECK(back.n == g.n);
    CHECK(back.names == g.names);
    CHECK((back.weights - g.weights).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(back.rules.size() == g.rules.size());
    for (size_t i = 0; i < g.rules.size(); ++i) {
      CHECK(back.rules[i].kind == g.rules[i].kind);
      CHECK(back.rules[i].a == g.rules[i].a);
      CHECK(back.rules[i].b == g.rules[i].b);
      CHECK(back.rules[i].c == doctest::Approx(g.rules[i].c));
    }
  }
}

TEST_CASE("graph json accepts names and rejects malformed input") {
  std::string text = R"({
    "components": ["a", "b"],
    "edges": [["start", "a", 1.0], ["a", "b", 0.5], ["a", "end", 1.0], ["b", "end", 1.0]],
    "rules": [{"kind": "kill_ingoing", "a": "a"},
              {"kind": "scale_pair", "a": "a", "b": "b", "c": 0.25}]
  })";
  PriorGraph g = prior_graph_from_json(text);
  CHECK(g.n == 2);
  CHECK(g.weights(0, 1) == 1.0);
  CHECK(g.weights(1, 2) == 0.5);
  CHECK(g.weights(1, 3) == 1.0);
  CHECK(g.rules[1].kind == RewriteRule::ScalePair);
  CHECK(g.rules[1].c == 0.25);

  CHECK_THROWS_AS(prior_graph_from_json("not json"), config_error);
  CHECK_THROWS_AS(prior_graph_from_json(R"({"edges": []})"), config_error);
  CHECK_THROWS_AS(prior_graph_from_json(
                      R"({"components": ["a"], "edges": [["start", "zz", 1.0]]})"),
                  config_error);
  CHECK_THROWS_AS(prior_graph_from_json(
                      R"({"components": ["a"],
                          "edges": [["start", "a", 1.0], ["a", "end", 1.0]],
                          "rules": [{"kind": "banana"}]})"),
                  config_error);
}

TEST_SUITE_END();
