#include "par/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "par/checkpoint.hpp"
#include "par/chem.hpp"
#include "par/meta.hpp"

namespace par::cli {

namespace {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

/// Raised for bad input files; maps to kDataError.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string data;
  std::string split = "last:20%";
  std::string out_dir = ".";
  std::string checkpoint;
  std::string seeds = "0";
  std::string support;
  std::string out_file = "synth.csv";
  std::string normalization = "softmax";
  std::vector<std::string> ablations;
  std::size_t tasks = 25;
  std::size_t mols = 400;
  int k = -1;  // -1 keeps the checkpoint's value
  bool full_graph = false;
  TrainConfig train;
};

void add_model_flags(CLI::App& app, Options& o) {
  auto& t = o.train;
  app.add_option("--shots-query", t.query_size, "Query molecules per meta-training episode")->capture_default_str();
  app.add_option("--episodes", t.max_episodes, "Maximum meta-training episodes")->capture_default_str();
  app.add_option("--meta-batch", t.meta_batch, "Tasks per outer update")->capture_default_str();
  app.add_option("--inner-lr", t.inner_lr, "Fine-tuning learning rate")->capture_default_str();
  app.add_option("--meta-lr", t.meta_lr, "Meta-learning rate")->capture_default_str();
  app.add_option("--inner-steps", t.inner_steps, "Fine-tuning steps per task")->capture_default_str();
  app.add_option("--t-iters", t.model.iterations, "Relation graph iterations")->capture_default_str();
  app.add_option("--encoder-layers", t.model.encoder.num_layers, "GIN layers")->capture_default_str();
  app.add_option("--encoder-dim", t.model.encoder.hidden_dim, "GIN hidden size")->capture_default_str();
  app.add_option("--encoder-dropout", t.model.encoder.dropout, "Dropout inside the encoder")->capture_default_str();
  app.add_option("--dropout", t.model.projection_dropout, "Dropout outside the encoder")->capture_default_str();
  app.add_option("--mlp-hidden", t.model.mlp_hidden, "Hidden size of the projection and adjacency MLPs")
      ->capture_default_str();
  app.add_option("--patience", t.patience, "Validation checks without improvement before stopping")
      ->capture_default_str();
  app.add_option("--val-every", t.val_every, "Episodes between validation checks")->capture_default_str();
  app.add_option("--val-episodes", t.val_episodes, "Episodes per validation check")->capture_default_str();
  app.add_option("--normalization", o.normalization, "Row normalisation: softmax, zscore, minmax, sigmoid")
      ->capture_default_str();
  app.add_option("--ablation", o.ablations, "Ablation variant (repeatable): " + [] {
    std::string s;
    for (const auto& n : Ablation::names()) s += (s.empty() ? "" : ", ") + n;
    return s;
  }());
}

void add_common_flags(CLI::App& app, Options& o) {
  app.add_option("--seed", o.train.seed, "Run seed")->capture_default_str();
  app.add_option("--threads", o.train.threads, "Worker threads")->capture_default_str();
  app.add_option("--out-dir", o.out_dir, "Output directory")->capture_default_str();
}

void add_data_flags(CLI::App& app, Options& o, bool required) {
  auto* d = app.add_option("--data", o.data, "Dataset CSV (smiles,<property>...)");
  if (required) d->required();
  app.add_option("--split", o.split, "Meta-train/meta-test split")->capture_default_str();
}

chem::PropertyDataset read_data(const Options& o, std::size_t k) {
  try {
    return chem::load_dataset(o.data, chem::SplitSpec{o.split}, k);
  } catch (const chem::FormatError& e) {
    throw DataError(e.what());
  } catch (const chem::ParseError& e) {
    throw DataError(e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
}

void finish_config(Options& o) {
  for (const auto& a : o.ablations) o.train.model.ablation.enable(a);
  o.train.model.normalization = parse_normalization(o.normalization);
  o.train.model.full_graph = o.full_graph;
  o.train.validate();
}

fs::path out_path(const Options& o, const std::string& name) {
  fs::create_directories(o.out_dir);
  return fs::path(o.out_dir) / name;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
  f << text;
}

Json eval_json(const EvalResult& r) {
  Json j;
  Json per = Json::object();
  for (const auto& t : r.per_task) per[t.task] = t.auc;
  j["per_task_auc"] = per;
  j["mean"] = r.mean;
  j["std"] = r.std;
  if (!r.skipped.empty()) j["skipped"] = r.skipped;
  return j;
}

Json matrix_json(const Tensor& t) {
  Json rows = Json::array();
  if (!t.defined()) return nullptr;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    std::vector<double> r(t.cols());
    for (std::size_t j = 0; j < t.cols(); ++j) r[j] = t(i, j);
    rows.push_back(r);
  }
  return rows;
}

int cmd_train(Options& o, std::ostream& out) {
  finish_config(o);
  if (o.k > 0) o.train.k = static_cast<std::size_t>(o.k);
  auto data = read_data(o, o.train.k);
  if (std::none_of(data.train_properties.begin(), data.train_properties.end(),
                   [&](std::size_t p) { return data.usable[p]; })) {
    throw DataError("no meta-train property has " + std::to_string(o.train.k) + " molecules of each class");
  }
  TrainResult result;
  try {
    result = meta_train(data, o.train);
  } catch (const TaskUnusable& e) {
    throw DataError(e.what());
  }
  const auto ckpt = out_path(o, "checkpoint.json");
  save_checkpoint(ckpt.string(), o.train, result.params);

  std::ostringstream hist;
  for (const auto& s : result.steps) {
    Json j;
    j["episode"] = s.episode;
    j["task"] = s.task;
    j["support_loss"] = s.support_loss;
    j["query_loss"] = s.query_loss;
    j["reg"] = s.reg;
    hist << j.dump() << '\n';
  }
  for (const auto& v : result.validation) {
    Json j;
    j["episode"] = v.episode;
    j["val_loss"] = v.val_loss;
    hist << j.dump() << '\n';
  }
  Json final_rec;
  if (!data.test_properties.empty()) {
    EvalResult ev;
    try {
      ev = evaluate(data, result.params, o.train, o.train.seed);
    } catch (const TaskUnusable& e) {
      throw DataError(e.what());
    }
    final_rec = eval_json(ev);
    out << "mean ROC-AUC " << ev.mean << " +/- " << ev.std << '\n';
  } else {
    final_rec["per_task_auc"] = Json::object();
    final_rec["mean"] = nullptr;
    final_rec["std"] = nullptr;
  }
  final_rec["episodes_run"] = result.episodes_run;
  final_rec["early_stopped"] = result.early_stopped;
  hist << final_rec.dump() << '\n';
  write_text(out_path(o, "history.jsonl"), hist.str());
  out << "wrote " << ckpt.string() << " after " << result.episodes_run << " episodes\n";
  return kOk;
}

Checkpoint read_checkpoint(const Options& o) {
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  return load_checkpoint(o.checkpoint);
}

int cmd_eval(Options& o, std::ostream& out) {
  auto ck = read_checkpoint(o);
  auto cfg = ck.config;
  cfg.threads = o.train.threads;
  if (o.k > 0) cfg.k = static_cast<std::size_t>(o.k);
  const auto seeds = parse_seed_list(o.seeds);
  auto data = read_data(o, cfg.k);
  if (data.test_properties.empty()) throw DataError("dataset has no meta-test properties");
  Json records = Json::array();
  double sum = 0.0, sq = 0.0;
  for (auto s : seeds) {
    EvalResult r;
    try {
      r = evaluate(data, ck.params, cfg, s);
    } catch (const TaskUnusable& e) {
      throw DataError(e.what());
    }
    Json j;
    j["seed"] = s;
    j.update(eval_json(r));
    records.push_back(j);
    sum += r.mean;
    sq += r.mean * r.mean;
    out << "seed " << s << " mean ROC-AUC " << r.mean << " +/- " << r.std << '\n';
  }
  const double n = static_cast<double>(seeds.size());
  Json doc;
  doc["records"] = records;
  doc["mean"] = sum / n;
  doc["std"] = std::sqrt(std::max(0.0, sq / n - (sum / n) * (sum / n)));
  write_text(out_path(o, "metrics.json"), doc.dump(2) + "\n");
  out << "mean over " << seeds.size() << " seed(s) " << doc["mean"].get<double>() << '\n';
  return kOk;
}

int cmd_gen_synth(Options& o, std::ostream& out) {
  chem::SyntheticConfig c;
  c.num_tasks = o.tasks;
  c.num_molecules = o.mols;
  c.k = o.k > 0 ? static_cast<std::size_t>(o.k) : 10;
  c.seed = o.train.seed;
  chem::SyntheticDataset s;
  try {
    s = chem::gen_synthetic(c);
  } catch (const chem::GenerationError& e) {
    throw DataError(e.what());
  }
  fs::path path(o.out_file);
  if (path.is_relative()) path = out_path(o, o.out_file);
  write_text(path, chem::dataset_to_csv(s.data));
  out << "wrote " << path.string() << " (" << s.data.num_molecules() << " molecules, " << s.data.num_properties()
      << " properties)\n";
  return kOk;
}

struct SupportTask {
  std::string name;
  std::vector<std::size_t> molecules;
  std::vector<int> labels;
};

std::vector<SupportTask> read_support(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read support file '" + path + "'");
  std::vector<SupportTask> out;
  try {
    auto j = nlohmann::json::parse(f);
    for (const auto& t : j.at("tasks")) {
      SupportTask s;
      s.name = t.at("name").get<std::string>();
      s.molecules = t.at("molecules").get<std::vector<std::size_t>>();
      s.labels = t.at("labels").get<std::vector<int>>();
      if (s.molecules.size() != s.labels.size()) throw DataError("task '" + s.name + "': one label per molecule");
      out.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("support file '" + path + "': " + e.what());
  }
  return out;
}

int cmd_dump(Options& o, std::ostream& out) {
  auto ck = read_checkpoint(o);
  auto cfg = ck.config;
  cfg.threads = o.train.threads;
  cfg.model.full_graph = cfg.model.full_graph || o.full_graph;
  if (o.k > 0) cfg.k = static_cast<std::size_t>(o.k);
  if (o.support.empty()) throw ConfigError("--support is required");
  auto data = read_data(o, cfg.k);
  auto tasks = read_support(o.support);
  Json doc;
  doc["tasks"] = Json::array();
  for (const auto& t : tasks) {
    for (auto m : t.molecules)
      if (m >= data.num_molecules()) throw DataError("task '" + t.name + "': unknown molecule id " + std::to_string(m));
    TaskDump d;
    try {
      d = dump_task(data, ck.params, cfg, t.name, t.molecules, t.labels, o.train.seed);
    } catch (const ContractViolation& e) {
      throw DataError(std::string("task '") + t.name + "': " + e.what());
    }
    Json j;
    j["task"] = d.task;
    j["nodes"] = d.nodes;
    j["labels"] = d.labels;
    j["A_hat"] = matrix_json(d.a_hat);
    j["A_star"] = matrix_json(d.a_star);
    j["g"] = matrix_json(d.g);
    j["p"] = matrix_json(d.p);
    j["h"] = matrix_json(d.h);
    doc["tasks"].push_back(j);
  }
  const auto path = out_path(o, "dump.json");
  write_text(path, doc.dump() + "\n");
  out << "wrote " << path.string() << " (" << tasks.size() << " task(s))\n";
  return kOk;
}

}  // namespace

std::vector<unsigned long long> parse_seed_list(const std::string& text) {
  std::vector<unsigned long long> out;
  auto num = [&](const std::string& s) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(s, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != s.size() || s[0] == '-') throw ConfigError("bad seed '" + s + "' in '" + text + "'");
    return v;
  };
  if (auto dots = text.find(".."); dots != std::string::npos) {
    const auto a = num(text.substr(0, dots)), b = num(text.substr(dots + 2));
    if (b < a) throw ConfigError("empty seed range '" + text + "'");
    for (auto s = a; s <= b; ++s) out.push_back(s);
    return out;
  }
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(num(item));
  if (out.empty()) throw ConfigError("no seeds given");
  return out;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Property-aware relation networks for few-shot molecular property prediction", "par"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML or INI file with flag values; command-line flags take precedence");
  app.allow_config_extras(CLI::config_extras_mode::error);

  Options o;
  // Paper-scale defaults; the encoder keeps its own dropout.
  o.train.model.encoder.dropout = 0.5;
  o.train.model.projection_dropout = 0.1;

  auto* train = app.add_subcommand("train", "Meta-train and write checkpoint.json and history.jsonl");
  add_data_flags(*train, o, true);
  train->add_option("--k", o.k, "Shots per class (also the KNN size); default 10");
  add_model_flags(*train, o);
  add_common_flags(*train, o);
  train->add_flag("--full-graph", o.full_graph, "Keep every neighbour instead of the K nearest");

  auto* eval = app.add_subcommand("eval", "Score meta-test tasks and write metrics.json");
  add_data_flags(*eval, o, true);
  eval->add_option("--checkpoint", o.checkpoint, "Checkpoint from train")->required();
  eval->add_option("--k", o.k, "Shots per class; defaults to the checkpoint's value");
  eval->add_option("--seeds", o.seeds, "Evaluation seeds: 3, 0,1,2 or 0..9")->capture_default_str();
  add_common_flags(*eval, o);

  auto* gen = app.add_subcommand("gen-synth", "Write a synthetic motif dataset as CSV");
  gen->add_option("--tasks", o.tasks, "Number of properties")->capture_default_str();
  gen->add_option("--mols", o.mols, "Number of molecules")->capture_default_str();
  gen->add_option("--k", o.k, "Minimum molecules per class and property; default 10");
  gen->add_option("--out", o.out_file, "CSV path (relative paths land in --out-dir)")->capture_default_str();
  add_common_flags(*gen, o);

  auto* dump = app.add_subcommand("dump", "Export adjacency matrices and embeddings for support sets");
  add_data_flags(*dump, o, true);
  dump->add_option("--checkpoint", o.checkpoint, "Checkpoint from train")->required();
  dump->add_option("--support", o.support,
                   "JSON file {\"tasks\": [{\"name\", \"molecules\": [ids], \"labels\": [0/1]}]}")
      ->required();
  dump->add_option("--k", o.k, "KNN size; defaults to the checkpoint's value");
  dump->add_flag("--full-graph", o.full_graph, "Keep every neighbour instead of the K nearest");
  add_common_flags(*dump, o);

  std::vector<const char*> argv = {"par"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kConfigError;
  }

  try {
    if (train->parsed()) return cmd_train(o, out);
    if (eval->parsed()) return cmd_eval(o, out);
    if (gen->parsed()) return cmd_gen_synth(o, out);
    return cmd_dump(o, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::ios_base::failure& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << '\n';
    return kCheckpointError;
  } catch (const fs::filesystem_error& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace par::cli
