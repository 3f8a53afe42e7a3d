#include "par/meta.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <iostream>
#include <limits>
#include <numeric>
#include <thread>

#include "par/init.hpp"
#include "par/ops.hpp"
#include "par/optim.hpp"
#include "par/rng.hpp"

namespace par {

// ---------------------------------------------------------------------------
// Configuration

const std::vector<std::string>& Ablation::names() {
  static const std::vector<std::string> n = {"no_P", "no_context", "no_R", "cos_sim", "no_knn", "no_reg", "tune_all"};
  return n;
}

void Ablation::enable(std::string_view name) {
  if (name == "no_P") {
    no_P = true;
  } else if (name == "no_context") {
    no_context = true;
  } else if (name == "no_R") {
    no_R = true;
  } else if (name == "cos_sim") {
    cos_sim = true;
  } else if (name == "no_knn") {
    no_knn = true;
  } else if (name == "no_reg") {
    no_reg = true;
  } else if (name == "tune_all") {
    tune_all = true;
  } else {
    throw ConfigError("unknown ablation '" + std::string(name) + "'");
  }
}

std::vector<std::string> Ablation::enabled() const {
  const bool flags[] = {no_P, no_context, no_R, cos_sim, no_knn, no_reg, tune_all};
  std::vector<std::string> out;
  for (std::size_t i = 0; i < names().size(); ++i)
    if (flags[i]) out.push_back(names()[i]);
  return out;
}

RelationConfig ModelConfig::relation(std::size_t k) const {
  RelationConfig rc;
  rc.iterations = ablation.no_R ? 0 : iterations;
  rc.k = k;
  rc.knn = !(ablation.no_knn || full_graph);
  rc.cosine = ablation.cos_sim;
  rc.normalization = normalization;
  return rc;
}

void TrainConfig::validate() const {
  try {
    model.encoder.validate();
  } catch (const ContractViolation& e) {
    throw ConfigError(e.what());
  }
  if (k == 0) throw ConfigError("k must be positive");
  if (query_size == 0) throw ConfigError("query size must be positive");
  if (!(inner_lr >= 0.0)) throw ConfigError("inner learning rate must be non-negative");
  if (!(meta_lr > 0.0)) throw ConfigError("meta learning rate must be positive");
  if (meta_batch == 0) throw ConfigError("meta batch must be positive");
  if (val_every == 0) throw ConfigError("validation interval must be positive");
  if (threads == 0) throw ConfigError("threads must be positive");
  if (!(model.projection_dropout >= 0.0 && model.projection_dropout < 1.0)) {
    throw ConfigError("projection dropout must be in [0, 1)");
  }
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

std::vector<Tensor*> theta_slots(ParameterStore& s) {
  std::vector<Tensor*> out = {&s.encoder.atom_number, &s.encoder.chirality};
  for (auto& L : s.encoder.layers) {
    for (Tensor* t : {&L.bond_type, &L.bond_direction, &L.w1, &L.b1, &L.w2, &L.b2, &L.epsilon}) out.push_back(t);
  }
  for (Tensor* t : {&s.relation.wa1, &s.relation.ba1, &s.relation.wa2, &s.relation.ba2, &s.relation.wr})
    out.push_back(t);
  return out;
}

std::vector<Tensor*> phi_slots(ParameterStore& s) {
  return {&s.projection.w1, &s.projection.b1, &s.projection.w2, &s.projection.b2, &s.classifier.w, &s.classifier.b};
}

std::vector<Tensor> values(std::vector<Tensor*> slots) {
  std::vector<Tensor> out;
  out.reserve(slots.size());
  for (auto* t : slots) out.push_back(*t);
  return out;
}

void assign(std::vector<Tensor*> slots, std::span<const Tensor> with, const char* what) {
  if (slots.size() != with.size()) {
    throw ContractViolation(std::string(what) + ": expected " + std::to_string(slots.size()) + " tensors, got " +
                            std::to_string(with.size()));
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i]->shape() != with[i].shape()) {
      throw ContractViolation(std::string(what) + ": shape mismatch " + shape_str(slots[i]->shape()) + " vs " +
                              shape_str(with[i].shape()));
    }
    *slots[i] = with[i];
  }
}

}  // namespace

std::vector<Tensor> ParameterStore::theta() const { return values(theta_slots(const_cast<ParameterStore&>(*this))); }
std::vector<Tensor> ParameterStore::phi() const { return values(phi_slots(const_cast<ParameterStore&>(*this))); }

std::vector<std::pair<std::string, Tensor>> ParameterStore::named() const {
  auto out = encoder.named();
  out.emplace_back("relation.wa1", relation.wa1);
  out.emplace_back("relation.ba1", relation.ba1);
  out.emplace_back("relation.wa2", relation.wa2);
  out.emplace_back("relation.ba2", relation.ba2);
  out.emplace_back("relation.wr", relation.wr);
  out.emplace_back("projection.w1", projection.w1);
  out.emplace_back("projection.b1", projection.b1);
  out.emplace_back("projection.w2", projection.w2);
  out.emplace_back("projection.b2", projection.b2);
  out.emplace_back("classifier.w", classifier.w);
  out.emplace_back("classifier.b", classifier.b);
  return out;
}

ParameterStore ParameterStore::with_theta(std::span<const Tensor> t) const {
  ParameterStore s = *this;
  assign(theta_slots(s), t, "with_theta");
  return s;
}

ParameterStore ParameterStore::with_phi(std::span<const Tensor> p) const {
  ParameterStore s = *this;
  assign(phi_slots(s), p, "with_phi");
  return s;
}

ParameterStore ParameterStore::clone() const {
  ParameterStore s = *this;
  for (auto* t : theta_slots(s)) *t = t->clone();
  for (auto* t : phi_slots(s)) *t = t->clone();
  return s;
}

ParameterStore init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  auto rng = substream(seed, Stream::kInit);
  ParameterStore s;
  s.encoder = init_encoder(cfg.encoder, rng);
  const std::size_t d = cfg.relation_dim();
  s.relation = init_relation(d, cfg.mlp_hidden, rng);
  s.projection = init_projection(2 * cfg.encoder.hidden_dim, cfg.mlp_hidden, cfg.projection_dim, rng);
  s.classifier.w = Tensor::zeros({d, 2});
  s.classifier.b = Tensor::zeros({1, 2});
  for (auto* t : theta_slots(s)) t->set_requires_grad(true);
  for (auto* t : phi_slots(s)) t->set_requires_grad(true);
  return s;
}

// ---------------------------------------------------------------------------
// Episodes

Episode sample_episode(const chem::PropertyDataset& data, std::size_t property, std::size_t k, std::size_t n_query,
                       std::mt19937_64& rng) {
  if (property >= data.num_properties()) throw ContractViolation("sample_episode: property out of range");
  if (k == 0) throw ContractViolation("sample_episode: k must be positive");
  std::vector<std::size_t> cls[2];
  for (std::size_t m = 0; m < data.num_molecules(); ++m) {
    const auto v = data.labels[m][property];
    if (v == 0 || v == 1) cls[v].push_back(m);
  }
  const auto& name = data.property_names[property];
  if (cls[0].size() < k || cls[1].size() < k) {
    throw TaskUnusable("property '" + name + "' has " + std::to_string(cls[1].size()) + " actives and " +
                       std::to_string(cls[0].size()) + " inactives; need " + std::to_string(k) + " of each");
  }
  Episode ep;
  ep.property = property;
  for (int c = 0; c < 2; ++c) {
    std::shuffle(cls[c].begin(), cls[c].end(), rng);
    for (std::size_t i = 0; i < k; ++i) {
      ep.support.push_back(cls[c][i]);
      ep.support_labels.push_back(c);
    }
  }
  const std::size_t r0 = cls[0].size() - k, r1 = cls[1].size() - k;
  std::size_t q0 = r0, q1 = r1;
  if (n_query != kAllRemaining && r0 + r1 > n_query) {
    const std::size_t half = n_query / 2;
    if (r0 >= half && r1 >= half) {
      q0 = half;
      q1 = half;
      if (q0 + q1 < n_query) (r1 > r0 ? q1 : q0) += 1;
    } else if (r0 < half) {
      q0 = r0;
      q1 = n_query - r0;
    } else {
      q1 = r1;
      q0 = n_query - r1;
    }
  }
  std::vector<std::pair<std::size_t, int>> q;
  for (std::size_t i = 0; i < q0; ++i) q.emplace_back(cls[0][k + i], 0);
  for (std::size_t i = 0; i < q1; ++i) q.emplace_back(cls[1][k + i], 1);
  std::shuffle(q.begin(), q.end(), rng);
  for (auto [m, y] : q) {
    ep.query.push_back(m);
    ep.query_labels.push_back(y);
  }
  return ep;
}

// ---------------------------------------------------------------------------
// Forward

Tensor class_logits(const Tensor& h, const ClassifierWeights& w) {
  return ops::add_row_bias(ops::matmul(h, w.w), w.b);
}

Tensor classify(const Tensor& h, const ClassifierWeights& w) { return ops::softmax_rows(class_logits(h, w)); }

Embedded embed(const ParameterStore& params, const ModelConfig& cfg, const Tensor& g_support,
               std::span<const int> support_labels, const Tensor* g_query, bool train, std::mt19937_64& rng) {
  Embedded out;
  out.protos = prototypes(g_support, support_labels);
  const std::size_t m = g_support.rows();
  Tensor g = g_query ? ops::concat_rows({g_support, *g_query}) : g_support;
  Tensor p;
  if (cfg.ablation.no_P) {
    p = g;
  } else {
    Tensor b = cfg.ablation.no_context ? g : context_attend(g, out.protos);
    p = project(g, b, params.projection, train, rng, cfg.projection_dropout);
  }
  if (!g_query) {
    out.p_support = p;
    return out;
  }
  out.p_support = ops::slice(p, 0, m, 0, p.cols());
  out.p_query = ops::slice(p, m, g_query->rows(), 0, p.cols());
  return out;
}

namespace {

PhaseOutput finish(const ModelConfig& cfg, Tensor logits, Tensor ce, Tensor reg) {
  PhaseOutput out;
  out.logits = std::move(logits);
  out.ce = std::move(ce);
  out.reg = std::move(reg);
  out.loss = cfg.ablation.no_reg ? out.ce : ops::add(out.ce, out.reg);
  return out;
}

}  // namespace

PhaseOutput support_phase(const ParameterStore& params, const ModelConfig& cfg, std::size_t k,
                          const Tensor& g_support, std::span<const int> support_labels, bool train,
                          std::mt19937_64& rng) {
  auto emb = embed(params, cfg, g_support, support_labels, nullptr, train, rng);
  auto rel = run_relation(emb.p_support, params.relation, cfg.relation(k), support_labels);
  Tensor logits = class_logits(rel.h, params.classifier);
  Tensor ce = ops::cross_entropy(logits, support_labels);
  return finish(cfg, logits, ce, rel.reg);
}

PhaseOutput query_phase(const ParameterStore& params, const ModelConfig& cfg, std::size_t k,
                        const Tensor& g_support, std::span<const int> support_labels, const Tensor& g_query,
                        std::span<const int> query_labels, bool train, std::mt19937_64& rng) {
  if (!query_labels.empty() && query_labels.size() != g_query.rows()) {
    throw ContractViolation("query_phase: one label per query required");
  }
  auto emb = embed(params, cfg, g_support, support_labels, &g_query, train, rng);
  const auto rc = cfg.relation(k);
  const std::size_t m = support_labels.size();
  const std::size_t nq = g_query.rows();
  const std::size_t d = emb.p_support.cols();
  Tensor logits, reg;
  if (rc.iterations == 0) {
    logits = class_logits(emb.p_query, params.classifier);
    reg = Tensor::scalar(0.0);
  } else {
    Tensor shared;
    if (!rc.cosine) shared = pair_scores(emb.p_support, upper_pairs(m), params.relation);
    std::vector<Tensor> rows, regs;
    rows.reserve(nq);
    regs.reserve(nq);
    for (std::size_t q = 0; q < nq; ++q) {
      Tensor nodes = ops::concat_rows({emb.p_support, ops::slice(emb.p_query, q, 1, 0, d)});
      auto rel = run_relation(nodes, params.relation, rc, support_labels, rc.cosine ? nullptr : &shared);
      rows.push_back(ops::slice(rel.h, m, 1, 0, rel.h.cols()));
      regs.push_back(rel.reg);
    }
    logits = class_logits(ops::concat_rows(rows), params.classifier);
    reg = ops::scale(ops::sum(ops::concat_rows(regs)), 1.0 / static_cast<double>(nq));
  }
  Tensor ce = query_labels.empty() ? Tensor::scalar(0.0) : ops::cross_entropy(logits, query_labels);
  return finish(cfg, logits, ce, reg);
}

namespace {

std::vector<const chem::MolecularGraph*> graphs_of(const chem::PropertyDataset& data,
                                                   std::span<const std::size_t> ids) {
  std::vector<const chem::MolecularGraph*> out;
  out.reserve(ids.size());
  for (auto i : ids) out.push_back(&data.molecules.at(i));
  return out;
}

struct EncodedEpisode {
  Tensor g_support;
  Tensor g_query;
};

EncodedEpisode encode_episode(const chem::PropertyDataset& data, const Episode& ep, const ParameterStore& params,
                              const TrainConfig& cfg, bool train, std::mt19937_64& rng) {
  std::vector<std::size_t> ids = ep.support;
  ids.insert(ids.end(), ep.query.begin(), ep.query.end());
  auto graphs = graphs_of(data, ids);
  Tensor g = encode_batch(graphs, cfg.model.encoder, params.encoder, train, rng);
  EncodedEpisode out;
  const std::size_t m = ep.support.size();
  if (ep.query.empty()) {
    out.g_support = g;
  } else {
    out.g_support = ops::slice(g, 0, m, 0, g.cols());
    out.g_query = ops::slice(g, m, ep.query.size(), 0, g.cols());
  }
  return out;
}

RelationWeights detached(const RelationWeights& w) {
  return {w.wa1.detach(), w.ba1.detach(), w.wa2.detach(), w.ba2.detach(), w.wr.detach()};
}

/// Adapted store plus the support loss seen at the first inner step.
std::pair<ParameterStore, double> finetune(const chem::PropertyDataset& data, const Episode& ep,
                                           const ParameterStore& params, const TrainConfig& cfg,
                                           std::mt19937_64& rng) {
  const bool tune_all = cfg.model.ablation.tune_all;
  ParameterStore cur = params;
  double first_loss = 0.0;
  Episode support_only = ep;
  support_only.query.clear();
  support_only.query_labels.clear();
  for (std::size_t step = 0; step < cfg.inner_steps; ++step) {
    Tape tape;
    GradientMap grads;
    std::vector<Tensor> phi = cur.phi();
    std::vector<Tensor> theta = cur.theta();
    Tensor g_support;
    if (!tune_all) g_support = encode_episode(data, support_only, cur, cfg, true, rng).g_support.detach();
    {
      Tape::Scope scope(tape);
      ParameterStore view = cur;
      if (tune_all) {
        g_support = encode_episode(data, support_only, cur, cfg, true, rng).g_support;
      } else {
        view.relation = detached(cur.relation);
      }
      auto out = support_phase(view, cfg.model, cfg.k, g_support, ep.support_labels, true, rng);
      if (step == 0) first_loss = out.loss.item();
      std::vector<Tensor> wrt = phi;
      if (tune_all) wrt.insert(wrt.end(), theta.begin(), theta.end());
      grads = tape.backward(out.loss, wrt);
    }
    cur = cur.with_phi(sgd_step(phi, grads, cfg.inner_lr));
    if (tune_all) cur = cur.with_theta(sgd_step(theta, grads, cfg.inner_lr));
  }
  return {cur, first_loss};
}

}  // namespace

Tensor episode_loss(const chem::PropertyDataset& data, const Episode& ep, const ParameterStore& params,
                    const TrainConfig& cfg, Phase phase, bool train, std::mt19937_64& rng) {
  if (phase == Phase::kSupport) {
    Episode support_only = ep;
    support_only.query.clear();
    auto enc = encode_episode(data, support_only, params, cfg, train, rng);
    return support_phase(params, cfg.model, cfg.k, enc.g_support, ep.support_labels, train, rng).loss;
  }
  if (ep.query.empty()) throw ContractViolation("episode_loss: episode has no query molecules");
  auto enc = encode_episode(data, ep, params, cfg, train, rng);
  return query_phase(params, cfg.model, cfg.k, enc.g_support, ep.support_labels, enc.g_query, ep.query_labels, train,
                     rng)
      .loss;
}

ParameterStore inner_finetune(const chem::PropertyDataset& data, const Episode& ep, const ParameterStore& params,
                              const TrainConfig& cfg, std::mt19937_64& rng) {
  return finetune(data, ep, params, cfg, rng).first;
}

// ---------------------------------------------------------------------------
// Meta-training

namespace {

struct TaskOutcome {
  std::vector<std::vector<double>> grads;  // theta then phi
  double support_loss = 0.0;
  double query_loss = 0.0;
  double reg = 0.0;
};

TaskOutcome run_task(const chem::PropertyDataset& data, const Episode& ep, const ParameterStore& params,
                     const TrainConfig& cfg, std::mt19937_64& rng) {
  auto [adapted, support_loss] = finetune(data, ep, params, cfg, rng);
  TaskOutcome out;
  out.support_loss = support_loss;
  Tape tape;
  Tape::Scope scope(tape);
  auto enc = encode_episode(data, ep, adapted, cfg, true, rng);
  auto q = query_phase(adapted, cfg.model, cfg.k, enc.g_support, ep.support_labels, enc.g_query, ep.query_labels, true,
                       rng);
  out.query_loss = q.loss.item();
  out.reg = q.reg.item();
  std::vector<Tensor> wrt = adapted.theta();
  auto phi = adapted.phi();
  wrt.insert(wrt.end(), phi.begin(), phi.end());
  auto grads = tape.backward(q.loss, wrt);
  out.grads.reserve(wrt.size());
  for (const auto& t : wrt) out.grads.push_back(grads.get(t));
  return out;
}

template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

double validation_loss(const chem::PropertyDataset& data, std::span<const Episode> episodes,
                       const ParameterStore& params, const TrainConfig& cfg) {
  std::vector<double> losses(episodes.size());
  parallel_for(episodes.size(), cfg.threads, [&](std::size_t i) {
    auto rng = substream(cfg.seed, Stream::kValidation, i + 1);
    auto adapted = inner_finetune(data, episodes[i], params, cfg, rng);
    losses[i] = episode_loss(data, episodes[i], adapted, cfg, Phase::kQuery, false, rng).item();
  });
  double total = 0.0;
  for (double l : losses) total += l;
  return total / static_cast<double>(episodes.size());
}

}  // namespace

TrainResult meta_train(const chem::PropertyDataset& data, const TrainConfig& cfg) {
  return meta_train(data, cfg, init_parameters(cfg.model, cfg.seed));
}

TrainResult meta_train(const chem::PropertyDataset& data, const TrainConfig& cfg, ParameterStore init) {
  cfg.validate();
  TrainResult result;
  result.params = std::move(init);
  if (cfg.max_episodes == 0) return result;

  std::vector<std::size_t> tasks;
  for (auto p : data.train_properties) {
    const bool ok = data.count_label(p, 0) >= cfg.k && data.count_label(p, 1) >= cfg.k;
    if (ok) tasks.push_back(p);
  }
  if (tasks.empty()) throw ConfigError("no usable meta-train properties for k=" + std::to_string(cfg.k));

  std::vector<Episode> val_episodes;
  if (tasks.size() >= 2 && cfg.val_episodes > 0) {
    const std::size_t pick = static_cast<std::size_t>(cfg.seed % tasks.size());
    result.validation_property = tasks[pick];
    tasks.erase(tasks.begin() + static_cast<std::ptrdiff_t>(pick));
    auto vrng = substream(cfg.seed, Stream::kValidation);
    for (std::size_t i = 0; i < cfg.val_episodes; ++i)
      val_episodes.push_back(sample_episode(data, *result.validation_property, cfg.k, cfg.query_size, vrng));
  }

  ParameterStore& params = result.params;
  std::vector<Tensor> all = params.theta();
  {
    auto phi = params.phi();
    all.insert(all.end(), phi.begin(), phi.end());
  }
  AdamState adam = make_adam_state(all, cfg.meta_lr);
  auto sampler = substream(cfg.seed, Stream::kSampling);
  std::uniform_int_distribution<std::size_t> pick_task(0, tasks.size() - 1);

  std::optional<ParameterStore> best;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t e = 0; e < cfg.max_episodes; ++e) {
    std::vector<Episode> batch;
    for (std::size_t t = 0; t < cfg.meta_batch; ++t)
      batch.push_back(sample_episode(data, tasks[pick_task(sampler)], cfg.k, cfg.query_size, sampler));

    std::vector<TaskOutcome> outcomes(batch.size());
    parallel_for(batch.size(), cfg.threads, [&](std::size_t t) {
      auto rng = substream(cfg.seed, Stream::kDropout, e, t);
      outcomes[t] = run_task(data, batch[t], params, cfg, rng);
    });

    std::vector<std::vector<double>> total(all.size());
    for (std::size_t i = 0; i < all.size(); ++i) total[i].assign(all[i].numel(), 0.0);
    for (std::size_t t = 0; t < batch.size(); ++t) {
      const auto& o = outcomes[t];
      for (std::size_t i = 0; i < all.size(); ++i)
        for (std::size_t j = 0; j < total[i].size(); ++j) total[i][j] += o.grads[i][j];
      result.steps.push_back({e, data.property_names[batch[t].property], o.support_loss, o.query_loss, o.reg});
    }
    adam_step(all, total, adam);
    result.episodes_run = e + 1;

    if (!val_episodes.empty() && (e + 1) % cfg.val_every == 0) {
      const double v = validation_loss(data, val_episodes, params, cfg);
      result.validation.push_back({e, v});
      if (v < best_loss) {
        best_loss = v;
        best = params.clone();
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        result.early_stopped = true;
        break;
      }
    }
  }
  if (best) result.params = std::move(*best);
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ContractViolation("roc_auc: one label per score required");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] == 1) {
        rank_sum += avg_rank;
        ++n_pos;
      } else if (labels[order[t]] != 0) {
        throw ContractViolation("roc_auc: labels must be 0 or 1");
      }
    }
    i = j;
  }
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ContractViolation("roc_auc: both classes are required");
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

EvalResult evaluate(const chem::PropertyDataset& data, const ParameterStore& params, const TrainConfig& cfg,
                    std::uint64_t eval_seed) {
  cfg.validate();
  EvalResult result;
  const auto& props = data.test_properties;
  std::vector<std::optional<double>> aucs(props.size());
  std::vector<std::string> reasons(props.size());
  parallel_for(props.size(), cfg.threads, [&](std::size_t i) {
    const auto p = props[i];
    auto rng = substream(eval_seed, Stream::kEval, p);
    Episode ep;
    try {
      ep = sample_episode(data, p, cfg.k, kAllRemaining, rng);
    } catch (const TaskUnusable& e) {
      reasons[i] = e.what();
      return;
    }
    const auto n_pos = std::count(ep.query_labels.begin(), ep.query_labels.end(), 1);
    if (n_pos == 0 || n_pos == static_cast<std::ptrdiff_t>(ep.query_labels.size())) {
      reasons[i] = "property '" + data.property_names[p] + "' has a single-class query set";
      return;
    }
    auto adapted = inner_finetune(data, ep, params, cfg, rng);
    auto enc = encode_episode(data, ep, adapted, cfg, false, rng);
    auto out =
        query_phase(adapted, cfg.model, cfg.k, enc.g_support, ep.support_labels, enc.g_query, {}, false, rng);
    Tensor prob = ops::softmax_rows(out.logits);
    std::vector<double> scores(prob.rows());
    for (std::size_t r = 0; r < scores.size(); ++r) scores[r] = prob(r, 1);
    aucs[i] = roc_auc(scores, ep.query_labels);
  });
  for (std::size_t i = 0; i < props.size(); ++i) {
    if (aucs[i]) {
      result.per_task.push_back({data.property_names[props[i]], *aucs[i]});
    } else {
      std::clog << "evaluate: skipping task: " << reasons[i] << '\n';
      result.skipped.push_back(data.property_names[props[i]]);
    }
  }
  if (result.per_task.empty()) throw TaskUnusable("no usable meta-test tasks");
  double s = 0.0;
  for (const auto& t : result.per_task) s += t.auc;
  result.mean = s / static_cast<double>(result.per_task.size());
  double v = 0.0;
  for (const auto& t : result.per_task) v += (t.auc - result.mean) * (t.auc - result.mean);
  result.std = std::sqrt(v / static_cast<double>(result.per_task.size()));
  return result;
}

TaskDump dump_task(const chem::PropertyDataset& data, const ParameterStore& params, const TrainConfig& cfg,
                   const std::string& task, std::span<const std::size_t> molecules, std::span<const int> labels,
                   std::uint64_t seed) {
  if (molecules.size() != labels.size()) throw ContractViolation("dump_task: one label per molecule required");
  for (auto m : molecules)
    if (m >= data.num_molecules()) throw ContractViolation("dump_task: unknown molecule id " + std::to_string(m));
  Episode ep;
  ep.support.assign(molecules.begin(), molecules.end());
  ep.support_labels.assign(labels.begin(), labels.end());
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a keeps the stream stable across platforms
  for (unsigned char c : task) h = (h ^ c) * 1099511628211ULL;
  auto rng = substream(seed, Stream::kDump, h);
  auto adapted = inner_finetune(data, ep, params, cfg, rng);

  TaskDump out;
  out.task = task;
  out.nodes = ep.support;
  out.labels = ep.support_labels;
  auto enc = encode_episode(data, ep, adapted, cfg, false, rng);
  auto emb = embed(adapted, cfg.model, enc.g_support, ep.support_labels, nullptr, false, rng);
  auto rel = run_relation(emb.p_support, adapted.relation, cfg.model.relation(cfg.k), ep.support_labels);
  out.g = enc.g_support;
  out.p = emb.p_support;
  out.h = rel.h;
  out.a_hat = rel.a_hat;
  out.a_star = rel.a_star;
  return out;
}

}  // namespace par
