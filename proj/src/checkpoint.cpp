#include "par/checkpoint.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

namespace par {

namespace {

using Json = nlohmann::ordered_json;

constexpr const char* kFormat = "par-checkpoint";

Json config_json(const TrainConfig& c) {
  Json j;
  j["k"] = c.k;
  j["query_size"] = c.query_size;
  j["inner_lr"] = c.inner_lr;
  j["inner_steps"] = c.inner_steps;
  j["meta_lr"] = c.meta_lr;
  j["max_episodes"] = c.max_episodes;
  j["patience"] = c.patience;
  j["meta_batch"] = c.meta_batch;
  j["val_every"] = c.val_every;
  j["val_episodes"] = c.val_episodes;
  j["seed"] = c.seed;
  j["encoder_layers"] = c.model.encoder.num_layers;
  j["encoder_dim"] = c.model.encoder.hidden_dim;
  j["encoder_dropout"] = c.model.encoder.dropout;
  j["mlp_hidden"] = c.model.mlp_hidden;
  j["projection_dim"] = c.model.projection_dim;
  j["projection_dropout"] = c.model.projection_dropout;
  j["t_iters"] = c.model.iterations;
  j["full_graph"] = c.model.full_graph;
  j["normalization"] = normalization_name(c.model.normalization);
  j["ablation"] = c.model.ablation.enabled();
  return j;
}

TrainConfig config_from(const Json& j) {
  TrainConfig c;
  c.k = j.at("k").get<std::size_t>();
  c.query_size = j.at("query_size").get<std::size_t>();
  c.inner_lr = j.at("inner_lr").get<double>();
  c.inner_steps = j.at("inner_steps").get<std::size_t>();
  c.meta_lr = j.at("meta_lr").get<double>();
  c.max_episodes = j.at("max_episodes").get<std::size_t>();
  c.patience = j.at("patience").get<std::size_t>();
  c.meta_batch = j.at("meta_batch").get<std::size_t>();
  c.val_every = j.at("val_every").get<std::size_t>();
  c.val_episodes = j.at("val_episodes").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.model.encoder.num_layers = j.at("encoder_layers").get<std::size_t>();
  c.model.encoder.hidden_dim = j.at("encoder_dim").get<std::size_t>();
  c.model.encoder.dropout = j.at("encoder_dropout").get<double>();
  c.model.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
  c.model.projection_dim = j.at("projection_dim").get<std::size_t>();
  c.model.projection_dropout = j.at("projection_dropout").get<double>();
  c.model.iterations = j.at("t_iters").get<std::size_t>();
  c.model.full_graph = j.at("full_graph").get<bool>();
  c.model.normalization = parse_normalization(j.at("normalization").get<std::string>());
  for (const auto& name : j.at("ablation")) c.model.ablation.enable(name.get<std::string>());
  return c;
}

}  // namespace

const char* normalization_name(ops::RowNorm mode) {
  switch (mode) {
    case ops::RowNorm::kSoftmax:
      return "softmax";
    case ops::RowNorm::kZScore:
      return "zscore";
    case ops::RowNorm::kMinMax:
      return "minmax";
    case ops::RowNorm::kSigmoid:
      return "sigmoid";
  }
  return "softmax";
}

ops::RowNorm parse_normalization(const std::string& name) {
  for (auto m : {ops::RowNorm::kSoftmax, ops::RowNorm::kZScore, ops::RowNorm::kMinMax, ops::RowNorm::kSigmoid})
    if (name == normalization_name(m)) return m;
  throw ConfigError("unknown normalization '" + name + "'");
}

std::string checkpoint_to_json(const TrainConfig& cfg, const ParameterStore& params) {
  Json j;
  j["format"] = kFormat;
  j["version"] = kCheckpointVersion;
  j["config"] = config_json(cfg);
  Json tensors = Json::object();
  for (const auto& [name, t] : params.named()) {
    Json e;
    e["shape"] = {t.rows(), t.cols()};
    e["data"] = std::vector<double>(t.data().begin(), t.data().end());
    tensors[name] = std::move(e);
  }
  j["tensors"] = std::move(tensors);
  return j.dump();
}

Checkpoint checkpoint_from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw CheckpointError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || j.value("format", "") != kFormat) throw CheckpointError("not a par checkpoint");
  const int version = j.value("version", -1);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint out;
  try {
    out.config = config_from(j.at("config"));
    out.config.validate();
  } catch (const Json::exception& e) {
    throw CheckpointError(std::string("checkpoint config: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config: ") + e.what());
  }
  out.params = init_parameters(out.config.model, out.config.seed);
  const Json& tensors = j.at("tensors");
  for (auto& [name, t] : out.params.named()) {
    if (!tensors.contains(name)) throw CheckpointError("checkpoint lacks tensor '" + name + "'");
    const Json& e = tensors.at(name);
    std::vector<double> data;
    std::vector<std::size_t> shape;
    try {
      shape = e.at("shape").get<std::vector<std::size_t>>();
      data = e.at("data").get<std::vector<double>>();
    } catch (const Json::exception& ex) {
      throw CheckpointError("tensor '" + name + "': " + ex.what());
    }
    if (shape != std::vector<std::size_t>{t.rows(), t.cols()} || data.size() != t.numel()) {
      throw CheckpointError("tensor '" + name + "' has shape " + Json(shape).dump() + ", expected " +
                            shape_str(t.shape()));
    }
    std::copy(data.begin(), data.end(), t.mutable_data().begin());
  }
  if (tensors.size() != out.params.named().size()) throw CheckpointError("checkpoint has unexpected tensors");
  return out;
}

void save_checkpoint(const std::string& path, const TrainConfig& cfg, const ParameterStore& params) {
  std::ofstream f(path);
  if (!f) throw CheckpointError("cannot write checkpoint '" + path + "'");
  f << checkpoint_to_json(cfg, params) << '\n';
  if (!f) throw CheckpointError("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw CheckpointError("cannot read checkpoint '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return checkpoint_from_json(ss.str());
}

}  // namespace par
