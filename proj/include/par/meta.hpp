#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "par/chem.hpp"
#include "par/embed.hpp"
#include "par/encoder.hpp"
#include "par/relgraph.hpp"
#include "par/tensor.hpp"

namespace par {

/// Raised when a property lacks K labelled molecules of some class.
class TaskUnusable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for unusable training setups (no tasks, bad rates).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Ablation {
  bool no_P = false;        // p = g
  bool no_context = false;  // b = g
  bool no_R = false;        // T = 0
  bool cos_sim = false;     // cosine adjacency
  bool no_knn = false;      // keep every neighbour
  bool no_reg = false;      // drop the alignment term
  bool tune_all = false;    // inner loop also adapts theta

  static const std::vector<std::string>& names();
  /// Throws ConfigError for unknown names.
  void enable(std::string_view name);
  std::vector<std::string> enabled() const;
};

struct ModelConfig {
  EncoderConfig encoder;
  std::size_t mlp_hidden = kMlpHidden;
  std::size_t projection_dim = kProjectionDim;
  double projection_dropout = kProjectionDropout;
  std::size_t iterations = 2;  // T
  Ablation ablation;
  bool full_graph = false;     // skip KNN reduction
  ops::RowNorm normalization = ops::RowNorm::kSoftmax;

  std::size_t relation_dim() const { return ablation.no_P ? encoder.hidden_dim : projection_dim; }
  RelationConfig relation(std::size_t k) const;
};

struct TrainConfig {
  ModelConfig model;
  std::size_t k = 10;
  std::size_t query_size = 16;
  double inner_lr = 0.05;
  std::size_t inner_steps = 1;
  double meta_lr = 1e-3;
  std::size_t max_episodes = 2000;
  std::size_t patience = 10;
  std::size_t meta_batch = 4;
  std::size_t val_every = 10;
  std::size_t val_episodes = 8;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  void validate() const;
};

struct ClassifierWeights {
  Tensor w;  // d x 2
  Tensor b;  // 1 x 2
};

/// theta = {encoder, relation}; phi = {projection, classifier}.
struct ParameterStore {
  EncoderWeights encoder;
  RelationWeights relation;
  ProjectionWeights projection;
  ClassifierWeights classifier;

  std::vector<Tensor> theta() const;
  std::vector<Tensor> phi() const;
  /// Stable names for every tensor, theta first.
  std::vector<std::pair<std::string, Tensor>> named() const;

  /// Copy of the handles with theta (or phi) replaced, in theta()/phi() order.
  ParameterStore with_theta(std::span<const Tensor> theta) const;
  ParameterStore with_phi(std::span<const Tensor> phi) const;
  /// Deep copy; the result shares no storage with this store.
  ParameterStore clone() const;
};

ParameterStore init_parameters(const ModelConfig& cfg, std::uint64_t seed);

struct Episode {
  std::size_t property = 0;
  std::vector<std::size_t> support;  // K inactives then K actives
  std::vector<int> support_labels;
  std::vector<std::size_t> query;
  std::vector<int> query_labels;
};

inline constexpr std::size_t kAllRemaining = static_cast<std::size_t>(-1);

/// Support: K per class without replacement. Query: drawn from the rest,
/// balanced when both classes allow it, otherwise filled from the larger class.
/// n_query = kAllRemaining takes every remaining labelled molecule.
Episode sample_episode(const chem::PropertyDataset& data, std::size_t property, std::size_t k, std::size_t n_query,
                       std::mt19937_64& rng);

/// Class logits W_c h + b: n x 2.
Tensor class_logits(const Tensor& h, const ClassifierWeights& w);
/// softmax(W_c h + b): n x 2.
Tensor classify(const Tensor& h, const ClassifierWeights& w);

/// Property-aware embeddings of `g` given the support embeddings.
struct Embedded {
  PrototypePair protos;
  Tensor p_support;
  Tensor p_query;  // undefined when there are no queries
};

Embedded embed(const ParameterStore& params, const ModelConfig& cfg, const Tensor& g_support,
               std::span<const int> support_labels, const Tensor* g_query, bool train, std::mt19937_64& rng);

struct PhaseOutput {
  Tensor loss;    // ce + reg (reg dropped under no_reg)
  Tensor ce;
  Tensor reg;     // mean over relation graphs
  Tensor logits;  // one row per scored molecule
};

/// One relation graph over the support set; scores every support molecule.
PhaseOutput support_phase(const ParameterStore& params, const ModelConfig& cfg, std::size_t k,
                          const Tensor& g_support, std::span<const int> support_labels, bool train,
                          std::mt19937_64& rng);

/// One (2K+1)-node relation graph per query. `query_labels` may be empty when
/// only logits are needed.
PhaseOutput query_phase(const ParameterStore& params, const ModelConfig& cfg, std::size_t k,
                        const Tensor& g_support, std::span<const int> support_labels, const Tensor& g_query,
                        std::span<const int> query_labels, bool train, std::mt19937_64& rng);

enum class Phase { kSupport, kQuery };

/// Encodes the episode molecules and returns the phase loss.
Tensor episode_loss(const chem::PropertyDataset& data, const Episode& ep, const ParameterStore& params,
                    const TrainConfig& cfg, Phase phase, bool train, std::mt19937_64& rng);

/// Adapted parameters after cfg.inner_steps SGD steps on the support loss.
/// Only phi changes unless tune_all is set. `params` is never modified.
ParameterStore inner_finetune(const chem::PropertyDataset& data, const Episode& ep, const ParameterStore& params,
                              const TrainConfig& cfg, std::mt19937_64& rng);

struct StepRecord {
  std::size_t episode = 0;
  std::string task;
  double support_loss = 0.0;
  double query_loss = 0.0;
  double reg = 0.0;
};

struct ValidationRecord {
  std::size_t episode = 0;
  double val_loss = 0.0;
};

struct TrainResult {
  ParameterStore params;
  std::vector<StepRecord> steps;
  std::vector<ValidationRecord> validation;
  std::size_t episodes_run = 0;
  bool early_stopped = false;
  std::optional<std::size_t> validation_property;
};

/// First-order meta-training with Adam on the summed task gradients.
TrainResult meta_train(const chem::PropertyDataset& data, const TrainConfig& cfg);
TrainResult meta_train(const chem::PropertyDataset& data, const TrainConfig& cfg, ParameterStore init);

/// Rank-statistic ROC-AUC with average ranks for ties.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct TaskScore {
  std::string task;
  double auc = 0.0;
};

struct EvalResult {
  std::vector<TaskScore> per_task;
  std::vector<std::string> skipped;
  double mean = 0.0;
  double std = 0.0;
};

/// Fine-tunes on a sampled support per meta-test task and scores every
/// remaining labelled molecule. `eval_seed` picks the support sample.
EvalResult evaluate(const chem::PropertyDataset& data, const ParameterStore& params, const TrainConfig& cfg,
                    std::uint64_t eval_seed);

/// Per-task exports for case studies.
struct TaskDump {
  std::string task;
  std::vector<std::size_t> nodes;
  std::vector<int> labels;
  Tensor a_hat;   // support x support, undefined under no_R
  Tensor a_star;  // support x support
  Tensor g, p, h;
};

/// Fine-tunes phi on the given (possibly imbalanced) support and exports the
/// relation graph over those molecules.
TaskDump dump_task(const chem::PropertyDataset& data, const ParameterStore& params, const TrainConfig& cfg,
                   const std::string& task, std::span<const std::size_t> molecules, std::span<const int> labels,
                   std::uint64_t seed);

}  // namespace par
