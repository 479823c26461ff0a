#include "compinfer/pipeline.hpp"

#include <atomic>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "compinfer/errors.hpp"
#include "compinfer/simulators.hpp"
#include "compinfer/tasks.hpp"

namespace compinfer {

namespace {

using nlohmann::json;

std::vector<long> dims_of(const ComponentPrior& prior) {
  std::vector<long> dims;
  for (size_t i = 0; i < prior.intervals.size(); ++i)
    dims.push_back(prior.component_dim(static_cast<int>(i)));
  return dims;
}

Task additive_task(const std::string& name, AdditiveFamily family, PriorGraph graph,
                   ComponentPrior prior) {
  Task t;
  t.name = name;
  t.graph = std::move(graph);
  t.prior = std::move(prior);
  t.net.embed.kind = EmbedKind::ConvSeq;
  t.net.embed.seq_len = 100;
  t.net.n_components = t.graph.n;
  t.net.component_dims = dims_of(t.prior);
  t.simulate = [family](const ModelVector& m, const std::vector<double>& theta,
                        std::uint64_t seed) {
    Rng rng(seed);
    return run_additive(family, m, theta, rng);
  };
  t.log_lik = [family](const ModelVector& m, const std::vector<double>& theta,
                       const std::vector<double>& x) {
    return additive_log_likelihood(family, m, theta, x);
  };
  return t;
}

}  // namespace

Task make_task(const std::string& name) {
  if (name == "additive6")
    return additive_task(name, AdditiveFamily::Six, additive6_graph(), additive6_prior());
  if (name == "additive11")
    return additive_task(name, AdditiveFamily::Eleven, additive11_graph(), additive11_prior());
  if (name == "additive20")
    return additive_task(name, AdditiveFamily::Twenty, additive20_graph(), additive20_prior());
  if (name == "ddm") {
    Task t;
    t.name = name;
    t.graph = ddm_graph();
    t.prior = ddm_prior();
    t.net.embed.kind = EmbedKind::TrialSet;
    t.net.embed.set_size = DdmConfig{}.trials;
    t.net.embed.trial_features = 2;
    t.net.n_components = t.graph.n;
    t.net.component_dims = dims_of(t.prior);
    t.simulate = [](const ModelVector& m, const std::vector<double>& theta,
                    std::uint64_t seed) {
      Rng rng(seed);
      RowMat trials = run_ddm(m, theta, rng);
      std::vector<double> x(trials.size());
      for (long i = 0; i < trials.rows(); ++i) {
        x[2 * i] = trials(i, 0);
        x[2 * i + 1] = trials(i, 1);
      }
      return x;
    };
    t.reject = [](const std::vector<double>& x) -> std::string {
      long undecided = 0;
      for (size_t i = 1; i < x.size(); i += 2)
        if (x[i] == 0.0) ++undecided;
      return undecided > 300 ? "undecided_filter" : "";
    };
    return t;
  }
  if (name == "hh") {
    Task t;
    t.name = name;
    t.graph = hh_graph();
    t.prior = hh_prior();
    t.net.embed.kind = EmbedKind::Identity;
    t.net.embed.features = kHhSummaryDim;
    t.net.n_components = t.graph.n;
    t.net.component_dims = dims_of(t.prior);
    t.simulate = [](const ModelVector& m, const std::vector<double>& theta,
                    std::uint64_t seed) {
      Rng rng(seed);
      return hh_summary(run_hh(m, theta, rng));
    };
    return t;
  }
  throw config_error("unknown task '" + name +
                     "' (expected additive6, additive11, additive20, ddm, hh, or custom)");
}

std::pair<PriorGraph, ComponentPrior> load_prior_config(const std::string& json_text) {
  PriorGraph graph = prior_graph_from_json(json_text);
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw config_error(std::string("prior config: ") + e.what());
  }
  if (!j.contains("params") || !j["params"].is_object())
    throw config_error("prior config: missing 'params' object");
  ComponentPrior prior;
  prior.intervals.resize(graph.n);
  long seen = 0;
  for (const auto& [key, ivs] : j["params"].items()) {
    int idx = -1;
    for (int i = 0; i < graph.n; ++i)
      if (graph.names[i] == key) idx = i;
    if (idx < 0) throw config_error("prior config: params for unknown component '" + key + "'");
    for (const auto& iv : ivs) {
      double lo = iv.at(0).get<double>();
      double hi = iv.at(1).get<double>();
      if (!(lo < hi))
        throw config_error("prior config: empty interval for component '" + key + "'");
      prior.intervals[idx].emplace_back(lo, hi);
    }
    ++seen;
  }
  if (seen != graph.n) throw config_error("prior config: params must cover every component");
  return {std::move(graph), std::move(prior)};
}

Task make_custom_task(const std::string& prior_config_json) {
  Task t;
  t.name = "custom";
  auto [graph, prior] = load_prior_config(prior_config_json);
  t.graph = std::move(graph);
  t.prior = std::move(prior);
  t.net.embed.kind = EmbedKind::Identity;
  t.net.embed.features = 1;
  t.net.n_components = t.graph.n;
  t.net.component_dims = dims_of(t.prior);
  return t;
}

void parallel_for(long n, long threads, const std::function<void(long)>& body) {
  threads = std::max<long>(1, std::min(threads, n));
  if (threads <= 1) {
    for (long i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<long> next{0};
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (long w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      try {
        for (long i = next.fetch_add(1); i < n; i = next.fetch_add(1)) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (std::thread& th : pool) th.join();
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);
}

GenerateReport generate_dataset(const Task& task, long size, std::uint64_t seed, long threads,
                                Dataset* out) {
  if (size < 0) throw config_error("dataset size must be nonnegative");
  if (!task.simulate) throw config_error("task '" + task.name + "' has no built-in simulator");

  struct Slot {
    Record rec;
    std::uint64_t seed = 0;
    std::string reason;
    bool kept = false;
  };
  std::vector<Slot> slots(size);

  parallel_for(size, threads, [&](long i) {
    Slot& s = slots[i];
    s.seed = derive_seed(seed, static_cast<std::uint64_t>(i));
    Rng rng(s.seed);
    s.rec.m = sample_model(task.graph, rng);
    s.rec.theta = sample_parameters(task.prior, s.rec.m, rng);
    try {
      s.rec.x = task.simulate(s.rec.m, s.rec.theta, derive_seed(s.seed, 1));
    } catch (const numeric_error&) {
      s.reason = "diverged";
      return;
    }
    if (task.reject) s.reason = task.reject(s.rec.x);
    s.kept = s.reason.empty();
  });

  GenerateReport report;
  report.requested = size;
  out->records.clear();
  out->x_dim = task.net.embed.x_dim();
  for (Slot& s : slots) {
    if (!s.kept) {
      ++report.rejected[s.reason];
      continue;
    }
    out->records.push_back(std::move(s.rec));
    report.record_seeds.push_back(s.seed);
  }
  report.kept = static_cast<long>(out->records.size());
  return report;
}

void save_dataset(const std::string& path, const Dataset& data, const std::string& task_name,
                  long n_components, const std::vector<std::uint64_t>& record_seeds) {
  if (!record_seeds.empty() && record_seeds.size() != data.records.size())
    throw shape_error("record seed list does not match the record count");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot open dataset file for writing: " + path);
  json header{{"format", "compinfer-dataset-v1"},
              {"task", task_name},
              {"x_dim", data.x_dim},
              {"n_components", n_components},
              {"n_records", static_cast<long>(data.records.size())}};
  out << header.dump() << "\n";
  for (size_t i = 0; i < data.records.size(); ++i) {
    const Record& r = data.records[i];
    json line{{"m", r.m}, {"theta", r.theta}, {"x", r.x}};
    if (!record_seeds.empty()) line["seed"] = record_seeds[i];
    out << line.dump() << "\n";
  }
  if (!out) throw data_error("short write to dataset file: " + path);
}

Dataset load_dataset(const std::string& path, std::string* task_name) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open dataset file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw data_error("dataset file is empty (no header): " + path);
  json header;
  try {
    header = json::parse(line);
  } catch (const json::parse_error& e) {
    throw data_error("bad dataset header: " + std::string(e.what()));
  }
  if (header.value("format", "") != "compinfer-dataset-v1")
    throw data_error("not a dataset file: " + path);
  Dataset data;
  data.x_dim = header.at("x_dim").get<long>();
  long n_components = header.at("n_components").get<long>();
  if (task_name) *task_name = header.value("task", "");

  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw data_error("dataset line " + std::to_string(line_no) + ": " + e.what());
    }
    Record r;
    try {
      r.m = j.at("m").get<ModelVector>();
      r.theta = j.at("theta").get<std::vector<double>>();
      r.x = j.at("x").get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw data_error("dataset line " + std::to_string(line_no) + ": " + e.what());
    }
    if (static_cast<long>(r.m.size()) != n_components)
      throw data_error("dataset line " + std::to_string(line_no) +
                       ": model vector length does not match the header");
    if (static_cast<long>(r.x.size()) != data.x_dim)
      throw data_error("dataset line " + std::to_string(line_no) +
                       ": x length does not match the header");
    data.records.push_back(std::move(r));
  }
  return data;
}

}  // namespace compinfer
