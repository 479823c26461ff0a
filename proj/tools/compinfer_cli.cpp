// Command line driver: dataset generation, training, amortized inference,
// evaluation, and calibration, with a manifest written beside every output.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "compinfer/errors.hpp"
#include "compinfer/evaluation.hpp"
#include "compinfer/pipeline.hpp"
#include "compinfer/posterior.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace compinfer;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string read_file(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error(std::string("cannot open ") + what + ": " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::string bits(const ModelVector& m) {
  std::string s;
  for (int b : m) s += b ? '1' : '0';
  return s;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw data_error("cannot create output directory " + dir + ": " + ec.message());
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot open output file: " + path);
  return out;
}

void write_manifest(const std::string& out_dir, const std::string& command, json fields) {
  fields["command"] = command;
  fields["version"] = kVersion;
  std::ofstream out = open_out(out_dir + "/" + command + ".manifest.json");
  out << fields.dump(2) << "\n";
  if (!out) throw data_error("short write to manifest in " + out_dir);
}

// ---- run configuration ----

struct RunSpec {
  std::string config_text;
  Task task;
  NetConfig net;
  TrainConfig train;
  long size = 0;
  std::uint64_t seed = 1;
  std::string out = ".";
};

NetConfig merge_net(const NetConfig& base, const json& over) {
  if (!over.is_object()) throw config_error("run config: 'net' must be an object");
  json j = json::parse(net_config_to_json(base));
  for (const auto& [k, v] : over.items()) {
    if (k == "embed") {
      if (!v.is_object()) throw config_error("run config: 'net.embed' must be an object");
      // A changed kind replaces the embedding config wholesale; otherwise
      // individual fields override the task default.
      if (v.contains("kind") && v["kind"] != j["embed"]["kind"])
        j["embed"] = v;
      else
        for (const auto& [ek, ev] : v.items()) j["embed"][ek] = ev;
    } else {
      j[k] = v;
    }
  }
  return net_config_from_json(j.dump());
}

RunSpec load_run_spec(const std::string& path) {
  RunSpec s;
  try {
    s.config_text = read_file(path, "run config");
  } catch (const data_error& e) {
    throw config_error(e.what());
  }
  json j;
  try {
    j = json::parse(s.config_text);
  } catch (const json::parse_error& e) {
    throw config_error(std::string("bad run config JSON: ") + e.what());
  }
  static const std::set<std::string> keys{"task", "prior_config", "size", "seed",
                                          "out",  "net",          "train"};
  for (const auto& [k, v] : j.items())
    if (!keys.count(k)) throw config_error("run config: unknown key '" + k + "'");

  std::string task_name = j.at("task").get<std::string>();
  if (task_name == "custom") {
    if (!j.contains("prior_config"))
      throw config_error("run config: a custom task needs 'prior_config'");
    s.task = make_custom_task(
        read_file(j["prior_config"].get<std::string>(), "prior config"));
  } else {
    s.task = make_task(task_name);
    if (j.contains("prior_config")) {
      auto [graph, prior] =
          load_prior_config(read_file(j["prior_config"].get<std::string>(), "prior config"));
      if (graph.n != s.task.graph.n)
        throw config_error("run config: prior component count does not match the task");
      for (int i = 0; i < graph.n; ++i)
        if (prior.component_dim(i) != s.task.prior.component_dim(i))
          throw config_error("run config: prior parameter dims do not match the task");
      s.task.graph = std::move(graph);
      s.task.prior = std::move(prior);
    }
  }

  s.net = j.contains("net") ? merge_net(s.task.net, j["net"]) : s.task.net;
  if (j.contains("train")) {
    const json& t = j["train"];
    static const std::set<std::string> tkeys{"batch_size", "max_epochs",   "patience",
                                             "max_steps",  "lr",           "grad_clip",
                                             "val_fraction", "verbose"};
    for (const auto& [k, v] : t.items())
      if (!tkeys.count(k)) throw config_error("run config: unknown train key '" + k + "'");
    s.train.batch_size = t.value("batch_size", s.train.batch_size);
    s.train.max_epochs = t.value("max_epochs", s.train.max_epochs);
    s.train.patience = t.value("patience", s.train.patience);
    s.train.max_steps = t.value("max_steps", s.train.max_steps);
    s.train.lr = t.value("lr", s.train.lr);
    s.train.grad_clip = t.value("grad_clip", s.train.grad_clip);
    s.train.val_fraction = t.value("val_fraction", s.train.val_fraction);
    s.train.verbose = t.value("verbose", s.train.verbose);
  }
  s.size = j.value("size", 0L);
  s.seed = j.value("seed", std::uint64_t{1});
  s.out = j.value("out", std::string("."));
  return s;
}

// ---- shared command state ----

struct Opts {
  std::string config;
  std::string data;
  std::string bundle;
  std::string x_path;
  std::string out;
  std::string device = "cpu";
  std::uint64_t seed = 1;
  long threads = 1;
  long n_samples = -1;
  long n_importance = 10000;
  long index = 0;
  bool reference = false;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* out_opt = nullptr;
};

void add_common(CLI::App* cmd, Opts& o) {
  o.seed_opt = cmd->add_option("--seed", o.seed, "Root random seed");
  o.out_opt = cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--threads", o.threads, "Worker threads for generation/evaluation")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--device", o.device, "Compute device (only cpu)");
}

void check_device(const Opts& o) {
  if (o.device != "cpu") throw config_error("only --device cpu is supported");
}

// Resolve seed/out from flag > config > default.
void resolve(Opts& o, const RunSpec* spec) {
  if (spec) {
    if (!o.seed_opt->count()) o.seed = spec->seed;
    if (!o.out_opt->count()) o.out = spec->out;
  } else if (!o.out_opt->count()) {
    o.out = ".";
  }
}

// ---- observation loading for infer ----

std::vector<double> load_observation(const std::string& path, long index) {
  std::string text = read_file(path, "observation file");
  json j = json::parse(text, nullptr, false);
  if (!j.is_discarded() && j.is_object() && j.contains("x"))
    return j["x"].get<std::vector<double>>();
  Dataset data = load_dataset(path);
  if (index < 0 || index >= static_cast<long>(data.records.size()))
    throw data_error("observation index " + std::to_string(index) + " out of range (dataset has " +
                     std::to_string(data.records.size()) + " records)");
  return data.records[index].x;
}

// ---- commands ----

int cmd_generate(Opts& o) {
  RunSpec spec = load_run_spec(o.config);
  resolve(o, &spec);
  check_device(o);

  Dataset data;
  GenerateReport rep = generate_dataset(spec.task, spec.size, o.seed, o.threads, &data);
  ensure_dir(o.out);
  save_dataset(o.out + "/dataset.jsonl", data, spec.task.name, spec.task.graph.n,
               rep.record_seeds);

  json rejected = json::object();
  for (const auto& [reason, count] : rep.rejected) rejected[reason] = count;
  write_manifest(o.out, "generate",
                 {{"config_hash", fnv1a_hex(spec.config_text)},
                  {"seed", o.seed},
                  {"threads", o.threads},
                  {"task", spec.task.name},
                  {"requested", rep.requested},
                  {"kept", rep.kept},
                  {"rejected", rejected},
                  {"outputs", {"dataset.jsonl"}}});

  std::cout << "kept " << rep.kept << " of " << rep.requested << " records";
  for (const auto& [reason, count] : rep.rejected)
    std::cout << "; rejected " << count << " (" << reason << ")";
  std::cout << "\n";
  return 0;
}

int cmd_train(Opts& o) {
  RunSpec spec = load_run_spec(o.config);
  resolve(o, &spec);
  check_device(o);

  std::string data_text_hash = fnv1a_hex(read_file(o.data, "dataset"));
  std::string task_name;
  Dataset data = load_dataset(o.data, &task_name);
  if (task_name != spec.task.name)
    throw config_error("dataset was generated for task '" + task_name +
                       "' but the run config says '" + spec.task.name + "'");
  if (spec.net.embed.x_dim() != data.x_dim)
    throw config_error("embedding expects x_dim " + std::to_string(spec.net.embed.x_dim()) +
                       " but the dataset has " + std::to_string(data.x_dim));

  TrainConfig tc = spec.train;
  tc.seed = o.seed;
  Rng init_rng(derive_seed(o.seed, 0xb00d1e));
  PosteriorBundle bundle =
      make_bundle(spec.net, init_rng, prior_fingerprint(spec.task.graph, spec.task.prior));
  TrainReport rep = train(bundle, data, tc);

  ensure_dir(o.out);
  save_bundle(bundle, o.out + "/bundle.bin");
  {
    std::ofstream log = open_out(o.out + "/train_log.csv");
    log << "epoch,val_loss,best_val_loss\n";
    for (size_t e = 0; e < rep.val_history.size(); ++e)
      log << e + 1 << "," << fmt(rep.val_history[e]) << "," << fmt(rep.best_val_history[e])
          << "\n";
  }
  write_manifest(o.out, "train",
                 {{"config_hash", fnv1a_hex(spec.config_text)},
                  {"data", o.data},
                  {"data_hash", data_text_hash},
                  {"seed", o.seed},
                  {"task", spec.task.name},
                  {"epochs", rep.epochs},
                  {"steps", rep.steps},
                  {"stopped_early", rep.stopped_early},
                  {"best_val_loss",
                   rep.best_val_history.empty() ? 0.0 : rep.best_val_history.back()},
                  {"outputs", {"bundle.bin", "train_log.csv"}}});

  std::cout << "trained " << rep.epochs << " epochs (" << rep.steps << " steps), best val loss "
            << (rep.best_val_history.empty() ? 0.0 : rep.best_val_history.back()) << "\n";
  return 0;
}

int cmd_infer(Opts& o) {
  resolve(o, nullptr);
  check_device(o);
  long n_samples = o.n_samples < 0 ? 1000 : o.n_samples;

  PosteriorBundle bundle = load_bundle(o.bundle);
  std::vector<double> x = load_observation(o.x_path, o.index);
  long n = bundle.config.n_components;

  std::vector<double> lp = model_log_posterior_all(bundle, x);
  std::vector<long> order(lp.size());
  for (size_t i = 0; i < lp.size(); ++i) order[i] = static_cast<long>(i);
  std::sort(order.begin(), order.end(), [&](long a, long b) { return lp[a] > lp[b]; });

  ensure_dir(o.out);
  {
    std::ofstream out = open_out(o.out + "/model_posterior.csv");
    out << "model,prob\n";
    for (long idx : order)
      out << bits(model_from_index(idx, n)) << "," << fmt(std::exp(lp[idx])) << "\n";
  }
  {
    std::vector<double> on = marginal_performance(bundle, x, ModelVector(n, 1));
    std::ofstream out = open_out(o.out + "/marginals.csv");
    out << "component,marginal\n";
    for (long i = 0; i < n; ++i) out << i << "," << fmt(on[i]) << "\n";
  }
  long full = bundle.config.full_dim();
  {
    Rng rng(derive_seed(o.seed, 0x5a));
    auto draws = sample_joint(bundle, x, n_samples, rng);
    std::ofstream out = open_out(o.out + "/joint_samples.csv");
    out << "model";
    for (long d = 0; d < full; ++d) out << ",theta_" << d;
    out << "\n";
    for (const auto& [m, theta] : draws) {
      out << bits(m);
      std::vector<long> act = bundle.config.active_indices(m);
      std::vector<std::string> cells(full);
      for (size_t j = 0; j < act.size(); ++j) cells[act[j]] = fmt(theta[j]);
      for (long d = 0; d < full; ++d) out << "," << cells[d];
      out << "\n";
    }
  }
  auto [map_m, map_theta] = map_estimate(bundle, x);
  {
    std::ofstream out = open_out(o.out + "/summary.json");
    out << json{{"map_model", bits(map_m)},
                {"map_theta", map_theta},
                {"top_model", bits(model_from_index(order[0], n))},
                {"top_prob", std::exp(lp[order[0]])}}
               .dump(2)
        << "\n";
  }
  write_manifest(o.out, "infer",
                 {{"bundle", o.bundle},
                  {"bundle_hash", fnv1a_hex(read_file(o.bundle, "bundle"))},
                  {"seed", o.seed},
                  {"n_samples", n_samples},
                  {"outputs",
                   {"model_posterior.csv", "marginals.csv", "joint_samples.csv",
                    "summary.json"}}});

  std::cout << "top model " << bits(model_from_index(order[0], n)) << " (prob "
            << fmt(std::exp(lp[order[0]])) << "), MAP model " << bits(map_m) << "\n";
  return 0;
}

int cmd_eval(Opts& o) {
  resolve(o, nullptr);
  check_device(o);
  long n_pred = o.n_samples < 0 ? 100 : o.n_samples;

  PosteriorBundle bundle = load_bundle(o.bundle);
  std::string task_name;
  Dataset data = load_dataset(o.data, &task_name);
  if (data.records.empty()) throw data_error("test dataset has no records");
  Task task = task_name == "custom" ? Task{} : make_task(task_name);
  bool can_simulate = static_cast<bool>(task.simulate);
  if (o.reference) {
    if (!task.log_lik)
      throw config_error("--reference needs an exact likelihood (additive tasks only)");
    if (!bundle.prior_fingerprint.empty() &&
        bundle.prior_fingerprint != prior_fingerprint(task.graph, task.prior))
      throw config_error("bundle was trained under a different prior than task '" + task_name +
                         "'; reference posteriors would be inconsistent");
  }

  std::map<ModelVector, double> model_prior;
  if (o.reference) {
    Rng prior_rng(derive_seed(o.seed, 0xef));
    model_prior = empirical_prior(task.graph, 200000, prior_rng);
  }

  long nr = static_cast<long>(data.records.size());
  std::vector<double> perf(nr), rmse(nr, 0.0), rmse_truth(nr, 0.0), kl(nr, 0.0);
  std::vector<int> unreliable(nr, 0);
  parallel_for(nr, o.threads, [&](long i) {
    const Record& rec = data.records[i];
    std::vector<double> scores = marginal_performance(bundle, rec.x, rec.m);
    double acc = 0.0;
    for (double s : scores) acc += s;
    perf[i] = acc / scores.size();

    if (can_simulate) {
      Rng rng(derive_seed(o.seed, 2 * i));
      rmse[i] = rmse_predictive(bundle, rec.x, task.simulate, n_pred, rng);
      double sq = 0.0;
      long count = 0;
      for (long g = 0; g < n_pred; ++g) {
        std::vector<double> sim;
        try {
          sim = task.simulate(rec.m, rec.theta, derive_seed(o.seed, 2 * i + 1 + 1000003 * g));
        } catch (const numeric_error&) {
          continue;
        }
        for (size_t p = 0; p < sim.size(); ++p) {
          double dv = sim[p] - rec.x[p];
          sq += dv * dv;
          ++count;
        }
      }
      rmse_truth[i] = count ? std::sqrt(sq / count) : 0.0;
    }
    if (o.reference) {
      ReferenceConfig rc;
      rc.n_importance = o.n_importance;
      rc.seed = derive_seed(o.seed, 0xce0 + i);
      LogLikFn lik = [&task, &rec](const ModelVector& m, const std::vector<double>& th) {
        return task.log_lik(m, th, rec.x);
      };
      ReferencePosterior ref =
          reference_posterior(model_prior, task.prior, bundle, rec.x, lik, rc);
      kl[i] = kl_model_posteriors(ref, bundle, rec.x);
      for (const auto& [m, entry] : ref.entries)
        if (entry.unreliable && entry.prob > 1e-4) unreliable[i] = 1;
    }
  });

  ensure_dir(o.out);
  {
    std::ofstream out = open_out(o.out + "/metrics.csv");
    out << "record,marginal_performance";
    if (can_simulate) out << ",rmse,rmse_truth";
    if (o.reference) out << ",kl,ref_unreliable";
    out << "\n";
    for (long i = 0; i < nr; ++i) {
      out << i << "," << fmt(perf[i]);
      if (can_simulate) out << "," << fmt(rmse[i]) << "," << fmt(rmse_truth[i]);
      if (o.reference) out << "," << fmt(kl[i]) << "," << unreliable[i];
      out << "\n";
    }
  }
  auto mean_of = [&](const std::vector<double>& v) {
    double s = 0.0;
    for (double u : v) s += u;
    return s / static_cast<double>(v.size());
  };
  {
    std::ofstream out = open_out(o.out + "/report.txt");
    out << "records: " << nr << "\n";
    out << "mean marginal performance: " << fmt(mean_of(perf)) << "\n";
    if (can_simulate) {
      out << "mean predictive rmse: " << fmt(mean_of(rmse)) << "\n";
      out << "mean ground-truth rmse: " << fmt(mean_of(rmse_truth)) << "\n";
    }
    if (o.reference) {
      out << "mean kl to reference: " << fmt(mean_of(kl)) << "\n";
      long flagged = 0;
      for (int u : unreliable) flagged += u;
      out << "records with unreliable reference mass: " << flagged << "\n";
    }
  }
  json manifest{{"bundle", o.bundle},
                {"bundle_hash", fnv1a_hex(read_file(o.bundle, "bundle"))},
                {"data", o.data},
                {"data_hash", fnv1a_hex(read_file(o.data, "dataset"))},
                {"seed", o.seed},
                {"threads", o.threads},
                {"n_samples", n_pred},
                {"task", task_name},
                {"reference", o.reference},
                {"outputs", {"metrics.csv", "report.txt"}}};
  if (o.reference) manifest["n_importance"] = o.n_importance;
  write_manifest(o.out, "eval", manifest);

  std::cout << "evaluated " << nr << " records; mean marginal performance "
            << fmt(mean_of(perf));
  if (o.reference) std::cout << ", mean kl " << fmt(mean_of(kl));
  std::cout << "\n";
  return 0;
}

int cmd_sbc(Opts& o) {
  resolve(o, nullptr);
  check_device(o);

  PosteriorBundle bundle = load_bundle(o.bundle);
  Dataset data = load_dataset(o.data);

  SbcConfig sc;
  if (o.n_samples > 0) sc.n_rank_samples = o.n_samples;
  sc.seed = o.seed;
  SbcReport rep = sbc(bundle, data.records, sc);

  ensure_dir(o.out);
  {
    std::ofstream out = open_out(o.out + "/ranks.csv");
    out << "model,param,record,rank\n";
    for (const auto& [m, per_param] : rep.ranks)
      for (size_t j = 0; j < per_param.size(); ++j)
        for (size_t r = 0; r < per_param[j].size(); ++r)
          out << bits(m) << "," << j << "," << r << "," << per_param[j][r] << "\n";
  }
  {
    std::ofstream out = open_out(o.out + "/c2st.csv");
    out << "model,param,c2st\n";
    for (const auto& [m, scores] : rep.c2st)
      for (size_t j = 0; j < scores.size(); ++j)
        out << bits(m) << "," << j << "," << fmt(scores[j]) << "\n";
  }
  {
    std::ofstream out = open_out(o.out + "/report.txt");
    out << "c2st mode: " << fmt(rep.c2st_mode) << "\n";
    out << "c2st 5th percentile: " << fmt(rep.c2st_p05) << "\n";
    out << "c2st 95th percentile: " << fmt(rep.c2st_p95) << "\n";
    for (const auto& [m, count] : rep.n_records)
      out << "model " << bits(m) << ": " << count << " records\n";
    for (const ModelVector& m : rep.skipped) out << "skipped: " << bits(m) << "\n";
  }
  write_manifest(o.out, "sbc",
                 {{"bundle", o.bundle},
                  {"bundle_hash", fnv1a_hex(read_file(o.bundle, "bundle"))},
                  {"data", o.data},
                  {"data_hash", fnv1a_hex(read_file(o.data, "dataset"))},
                  {"seed", o.seed},
                  {"n_rank_samples", sc.n_rank_samples},
                  {"outputs", {"ranks.csv", "c2st.csv", "report.txt"}}});

  std::cout << "sbc c2st mode " << fmt(rep.c2st_mode) << " (5-95%: " << fmt(rep.c2st_p05)
            << " to " << fmt(rep.c2st_p95) << "), " << rep.skipped.size()
            << " models skipped\n";
  return 0;
}

int guarded(const std::function<int()>& fn) {
  try {
    return fn();
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const data_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const shape_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const numeric_error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint model/parameter posterior toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  Opts gen_o, train_o, infer_o, eval_o, sbc_o;

  CLI::App* gen = app.add_subcommand("generate", "Sample a dataset from a task prior");
  gen->add_option("--config", gen_o.config, "Run config JSON")->required();
  add_common(gen, gen_o);

  CLI::App* tr = app.add_subcommand("train", "Train a posterior bundle on a dataset");
  tr->add_option("--config", train_o.config, "Run config JSON")->required();
  tr->add_option("--data", train_o.data, "Training dataset (.jsonl)")->required();
  add_common(tr, train_o);

  CLI::App* inf = app.add_subcommand("infer", "Posterior summaries for one observation");
  inf->add_option("--bundle", infer_o.bundle, "Trained bundle checkpoint")->required();
  inf->add_option("--x", infer_o.x_path, "Observation JSON ({\"x\": [...]}) or a dataset")
      ->required();
  inf->add_option("--index", infer_o.index, "Record index when --x is a dataset");
  inf->add_option("--n-samples", infer_o.n_samples, "Joint posterior draws (default 1000)");
  add_common(inf, infer_o);

  CLI::App* ev = app.add_subcommand("eval", "Evaluate a bundle on a test dataset");
  ev->add_option("--bundle", eval_o.bundle, "Trained bundle checkpoint")->required();
  ev->add_option("--data", eval_o.data, "Test dataset (.jsonl)")->required();
  ev->add_flag("--reference", eval_o.reference,
               "Also compute importance-sampled reference posteriors and KL");
  ev->add_option("--n-importance", eval_o.n_importance,
                 "Importance samples per model for --reference (default 10000)");
  ev->add_option("--n-samples", eval_o.n_samples, "Predictive draws per record (default 100)");
  add_common(ev, eval_o);

  CLI::App* sb = app.add_subcommand("sbc", "Simulation-based calibration on a test dataset");
  sb->add_option("--bundle", sbc_o.bundle, "Trained bundle checkpoint")->required();
  sb->add_option("--data", sbc_o.data, "Test dataset with ground truth (.jsonl)")->required();
  sb->add_option("--n-samples", sbc_o.n_samples, "Posterior draws per rank (default 1000)");
  add_common(sb, sbc_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (gen->parsed()) return guarded([&] { return cmd_generate(gen_o); });
  if (tr->parsed()) return guarded([&] { return cmd_train(train_o); });
  if (inf->parsed()) return guarded([&] { return cmd_infer(infer_o); });
  if (ev->parsed()) return guarded([&] { return cmd_eval(eval_o); });
  if (sb->parsed()) return guarded([&] { return cmd_sbc(sbc_o); });
  return 2;
}
