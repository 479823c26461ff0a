#include "compinfer/prior_graph.hpp"

#include <json.hpp>

#include "compinfer/errors.hpp"

namespace compinfer {

void PriorGraph::validate() const {
  if (n < 1) throw config_error("prior graph: need at least one component");
  if (static_cast<int>(names.size()) != n)
    throw config_error("prior graph: name count must equal component count");
  if (weights.rows() != n + 2 || weights.cols() != n + 2)
    throw config_error("prior graph: weight matrix must be (n+2) x (n+2)");
  if (weights.minCoeff() < 0.0) throw config_error("prior graph: negative edge weight");
  if (weights.row(start()).sum() <= 0.0)
    throw config_error("prior graph: start node has no outgoing edge");
  for (const RewriteRule& r : rules) {
    auto in_range = [&](int x) { return x >= 1 && x <= n; };
    switch (r.kind) {
      case RewriteRule::KillIngoing:
        if (!in_range(r.a)) throw config_error("kill_ingoing: subject out of range");
        break;
      case RewriteRule::ExcludePair:
        if (!in_range(r.a) || !in_range(r.b))
          throw config_error("exclude_pair: subjects out of range");
        break;
      case RewriteRule::ScalePair:
        if (!in_range(r.a) || !in_range(r.b))
          throw config_error("scale_pair: subjects out of range");
        if (!(r.c > 0.0 && r.c < 1.0)) throw config_error("scale_pair: factor must be in (0,1)");
        break;
      case RewriteRule::FavorEnd:
        if (!in_range(r.a)) throw config_error("favor_end: subject out of range");
        if (!(r.c > 1.0)) throw config_error("favor_end: factor must exceed 1");
        break;
    }
  }
}

namespace {

void apply_rules(const PriorGraph& g, RowMat& w, const std::vector<char>& visited,
                 int just_sampled) {
  for (const RewriteRule& r : g.rules) {
    switch (r.kind) {
      case RewriteRule::KillIngoing:
        if (just_sampled == r.a) w.col(r.a).setZero();
        break;
      case RewriteRule::ExcludePair:
        if (visited[r.a]) w.col(r.b).setZero();
        break;
      case RewriteRule::ScalePair:
        if (visited[r.a]) w.col(r.b) *= r.c;
        break;
      case RewriteRule::FavorEnd:
        if (visited[r.a] && w(r.a, g.end()) == 0.0) w.col(g.end()) *= r.c;
        break;
    }
  }
}

}  // namespace

ModelVector sample_model(const PriorGraph& graph, Rng& rng) {
  RowMat w = graph.weights;
  std::vector<char> visited(graph.n + 2, 0);
  ModelVector m(graph.n, 0);
  int cur = graph.start();
  for (int step = 0; step < graph.n + 2; ++step) {
    double total = w.row(cur).sum();
    if (total <= 0.0)
      throw numeric_error("sample_model: node '" +
                          (cur == 0 ? std::string("start") : graph.names[cur - 1]) +
                          "' has no outgoing weight");
    double u = rng.uniform() * total;
    double acc = 0.0;
    int next = -1;
    for (int j = 0; j < graph.n + 2; ++j) {
      if (w(cur, j) <= 0.0) continue;
      acc += w(cur, j);
      next = j;
      if (u < acc) break;
    }
    if (next == graph.end()) return m;
    m[next - 1] = 1;
    visited[next] = 1;
    apply_rules(graph, w, visited, next);
    cur = next;
  }
  throw numeric_error("sample_model: walk exceeded step bound, rules break termination");
}

long ComponentPrior::param_dim(const ModelVector& m) const {
  long d = 0;
  for (size_t i = 0; i < m.size(); ++i)
    if (m[i]) d += component_dim(static_cast<int>(i));
  return d;
}

long ComponentPrior::full_dim() const {
  long d = 0;
  for (size_t i = 0; i < intervals.size(); ++i) d += component_dim(static_cast<int>(i));
  return d;
}

long ComponentPrior::offset(int i) const {
  long d = 0;
  for (int k = 0; k < i; ++k) d += component_dim(k);
  return d;
}

std::vector<long> ComponentPrior::active_indices(const ModelVector& m) const {
  std::vector<long> idx;
  long off = 0;
  for (size_t i = 0; i < intervals.size(); ++i) {
    long di = component_dim(static_cast<int>(i));
    if (i < m.size() && m[i])
      for (long k = 0; k < di; ++k) idx.push_back(off + k);
    off += di;
  }
  return idx;
}

std::vector<double> sample_parameters(const ComponentPrior& prior, const ModelVector& m,
                                      Rng& rng) {
  std::vector<double> out;
  for (size_t i = 0; i < m.size(); ++i) {
    if (i >= prior.intervals.size()) throw config_error("sample_parameters: prior too short");
    if (!m[i]) continue;
    for (auto [lo, hi] : prior.intervals[i]) {
      if (!(lo < hi)) throw config_error("sample_parameters: empty prior interval");
      out.push_back(rng.uniform(lo, hi));
    }
  }
  return out;
}

std::map<ModelVector, double> empirical_prior(const PriorGraph& graph, long n_samples,
                                              Rng& rng) {
  if (n_samples < 1) throw config_error("empirical_prior: need at least one sample");
  std::map<ModelVector, double> counts;
  for (long i = 0; i < n_samples; ++i) counts[sample_model(graph, rng)] += 1.0;
  for (auto& [m, c] : counts) c /= static_cast<double>(n_samples);
  return counts;
}

PriorGraph prior_graph_from_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw config_error(std::string("prior graph json: ") + e.what());
  }
  PriorGraph g;
  if (!j.contains("components") || !j["components"].is_array())
    throw config_error("prior graph json: missing 'components' array");
  for (const auto& c : j["components"]) g.names.push_back(c.get<std::string>());
  g.n = static_cast<int>(g.names.size());
  auto node_index = [&](const nlohmann::json& v) -> int {
    if (v.is_string()) {
      std::string s = v.get<std::string>();
      if (s == "start") return 0;
      if (s == "end") return g.n + 1;
      for (int i = 0; i < g.n; ++i)
        if (g.names[i] == s) return i + 1;
      throw config_error("prior graph json: unknown node '" + s + "'");
    }
    return v.get<int>();
  };
  g.weights = RowMat::Zero(g.n + 2, g.n + 2);
  for (const auto& e : j.value("edges", nlohmann::json::array())) {
    int from = node_index(e.at(0));
    int to = node_index(e.at(1));
    double w = e.at(2).get<double>();
    if (from < 0 || from > g.n + 1 || to < 0 || to > g.n + 1)
      throw config_error("prior graph json: edge endpoint out of range");
    g.weights(from, to) = w;
  }
  for (const auto& r : j.value("rules", nlohmann::json::array())) {
    RewriteRule rule;
    std::string kind = r.at("kind").get<std::string>();
    if (kind == "kill_ingoing") rule.kind = RewriteRule::KillIngoing;
    else if (kind == "exclude_pair") rule.kind = RewriteRule::ExcludePair;
    else if (kind == "scale_pair") rule.kind = RewriteRule::ScalePair;
    else if (kind == "favor_end") rule.kind = RewriteRule::FavorEnd;
    else throw config_error("prior graph json: unknown rule kind '" + kind + "'");
    if (r.contains("a")) rule.a = node_index(r["a"]);
    if (r.contains("b")) rule.b = node_index(r["b"]);
    if (r.contains("c")) rule.c = r["c"].get<double>();
    g.rules.push_back(rule);
  }
  g.validate();
  return g;
}

std::string prior_graph_to_json(const PriorGraph& graph) {
  nlohmann::json j;
  j["components"] = graph.names;
  auto node_name = [&](int i) -> std::string {
    if (i == 0) return "start";
    if (i == graph.n + 1) return "end";
    return graph.names[i - 1];
  };
  nlohmann::json edges = nlohmann::json::array();
  for (int i = 0; i < graph.n + 2; ++i)
    for (int k = 0; k < graph.n + 2; ++k)
      if (graph.weights(i, k) > 0.0)
        edges.push_back({node_name(i), node_name(k), graph.weights(i, k)});
  j["edges"] = edges;
  nlohmann::json rules = nlohmann::json::array();
  for (const RewriteRule& r : graph.rules) {
    nlohmann::json jr;
    switch (r.kind) {
      case RewriteRule::KillIngoing: jr["kind"] = "kill_ingoing"; break;
      case RewriteRule::ExcludePair: jr["kind"] = "exclude_pair"; break;
      case RewriteRule::ScalePair: jr["kind"] = "scale_pair"; break;
      case RewriteRule::FavorEnd: jr["kind"] = "favor_end"; break;
    }
    if (r.a >= 0) jr["a"] = node_name(r.a);
    if (r.b >= 0) jr["b"] = node_name(r.b);
    if (r.kind == RewriteRule::ScalePair || r.kind == RewriteRule::FavorEnd) jr["c"] = r.c;
    rules.push_back(jr);
  }
  j["rules"] = rules;
  return j.dump(2);
}

}  // namespace compinfer
