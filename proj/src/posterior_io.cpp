#include <cstdint>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "compinfer/errors.hpp"
#include "compinfer/posterior.hpp"

namespace compinfer {

namespace {

using nlohmann::json;

std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string embed_kind_name(EmbedKind k) {
  switch (k) {
    case EmbedKind::ConvSeq: return "conv_seq";
    case EmbedKind::TrialSet: return "trial_set";
    case EmbedKind::Identity: return "identity";
  }
  return "identity";
}

EmbedKind embed_kind_of(const std::string& s) {
  if (s == "conv_seq") return EmbedKind::ConvSeq;
  if (s == "trial_set") return EmbedKind::TrialSet;
  if (s == "identity") return EmbedKind::Identity;
  throw config_error("unknown embedding kind '" + s + "'");
}

json config_json(const NetConfig& c) {
  json e{{"kind", embed_kind_name(c.embed.kind)}};
  switch (c.embed.kind) {
    case EmbedKind::ConvSeq:
      e["seq_len"] = c.embed.seq_len;
      e["conv_channels"] = c.embed.conv_channels;
      e["kernel"] = c.embed.kernel;
      e["fc_dims"] = c.embed.fc_dims;
      break;
    case EmbedKind::TrialSet:
      e["set_size"] = c.embed.set_size;
      e["trial_features"] = c.embed.trial_features;
      e["trial_dims"] = c.embed.trial_dims;
      e["fc_dims"] = c.embed.fc_dims;
      break;
    case EmbedKind::Identity:
      e["features"] = c.embed.features;
      break;
  }
  return json{{"embed", e},
              {"model_head", c.model_head == ModelHead::Categorical ? "categorical" : "mogr"},
              {"n_components", c.n_components},
              {"component_dims", c.component_dims},
              {"mogr_layers", c.mogr_layers},
              {"mogr_width", c.mogr_width},
              {"mogr_components", c.mogr_components},
              {"mdn_layers", c.mdn_layers},
              {"mdn_width", c.mdn_width},
              {"mdn_components", c.mdn_components}};
}

NetConfig config_of_json(const json& j) {
  NetConfig c;
  const json& e = j.at("embed");
  c.embed.kind = embed_kind_of(e.at("kind").get<std::string>());
  switch (c.embed.kind) {
    case EmbedKind::ConvSeq:
      c.embed.seq_len = e.at("seq_len").get<long>();
      c.embed.conv_channels = e.at("conv_channels").get<std::vector<long>>();
      c.embed.kernel = e.at("kernel").get<long>();
      c.embed.fc_dims = e.at("fc_dims").get<std::vector<long>>();
      break;
    case EmbedKind::TrialSet:
      c.embed.set_size = e.at("set_size").get<long>();
      c.embed.trial_features = e.at("trial_features").get<long>();
      c.embed.trial_dims = e.at("trial_dims").get<std::vector<long>>();
      c.embed.fc_dims = e.at("fc_dims").get<std::vector<long>>();
      break;
    case EmbedKind::Identity:
      c.embed.features = e.at("features").get<long>();
      break;
  }
  std::string head = j.at("model_head").get<std::string>();
  if (head == "categorical")
    c.model_head = ModelHead::Categorical;
  else if (head == "mogr")
    c.model_head = ModelHead::MoGr;
  else
    throw config_error("unknown model head '" + head + "'");
  c.n_components = j.at("n_components").get<long>();
  c.component_dims = j.at("component_dims").get<std::vector<long>>();
  c.mogr_layers = j.at("mogr_layers").get<long>();
  c.mogr_width = j.at("mogr_width").get<long>();
  c.mogr_components = j.at("mogr_components").get<long>();
  c.mdn_layers = j.at("mdn_layers").get<long>();
  c.mdn_width = j.at("mdn_width").get<long>();
  c.mdn_components = j.at("mdn_components").get<long>();
  c.validate();
  return c;
}

}  // namespace

std::string prior_fingerprint(const PriorGraph& graph, const ComponentPrior& prior) {
  std::ostringstream os;
  os << prior_graph_to_json(graph) << '|';
  os.precision(17);
  for (const auto& comp : prior.intervals) {
    os << '[';
    for (const auto& iv : comp) os << iv.first << ',' << iv.second << ';';
    os << ']';
  }
  return hex64(fnv1a(os.str()));
}

std::string net_config_to_json(const NetConfig& config) { return config_json(config).dump(); }

NetConfig net_config_from_json(const std::string& json_text) {
  try {
    return config_of_json(json::parse(json_text));
  } catch (const json::exception& e) {
    throw data_error(std::string("bad net config JSON: ") + e.what());
  }
}

void save_bundle(const PosteriorBundle& bundle, const std::string& path) {
  json manifest{{"format", "compinfer-bundle-v1"},
                {"config", config_json(bundle.config)},
                {"x_mean", bundle.x_mean},
                {"x_std", bundle.x_std},
                {"theta_mean", bundle.theta_mean},
                {"theta_std", bundle.theta_std},
                {"prior_fingerprint", bundle.prior_fingerprint}};
  json tensors = json::array();
  for (size_t i = 0; i < bundle.params.size(); ++i)
    tensors.push_back(json{{"name", bundle.names[i]}, {"shape", bundle.params[i].shape()}});
  manifest["tensors"] = tensors;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot open " + path + " for writing");
  out << manifest.dump() << '\n';
  for (const Tensor& t : bundle.params)
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(sizeof(double) * t.numel()));
  if (!out) throw data_error("short write to " + path);
}

PosteriorBundle load_bundle(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw data_error(path + ": missing manifest line");
  json manifest;
  try {
    manifest = json::parse(line);
  } catch (const json::exception& e) {
    throw data_error(path + ": bad manifest: " + e.what());
  }
  if (manifest.value("format", "") != "compinfer-bundle-v1")
    throw data_error(path + ": not a posterior bundle");

  PosteriorBundle b;
  try {
    b.config = config_of_json(manifest.at("config"));
    b.x_mean = manifest.at("x_mean").get<std::vector<double>>();
    b.x_std = manifest.at("x_std").get<std::vector<double>>();
    b.theta_mean = manifest.at("theta_mean").get<std::vector<double>>();
    b.theta_std = manifest.at("theta_std").get<std::vector<double>>();
    b.prior_fingerprint = manifest.value("prior_fingerprint", "");
    for (const json& tj : manifest.at("tensors")) {
      b.names.push_back(tj.at("name").get<std::string>());
      b.params.emplace_back(tj.at("shape").get<std::vector<long>>());
    }
  } catch (const json::exception& e) {
    throw data_error(path + ": bad manifest: " + e.what());
  }
  for (Tensor& t : b.params) {
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(sizeof(double) * t.numel()));
    if (!in) throw data_error(path + ": truncated tensor payload");
  }
  return b;
}

}  // namespace compinfer
