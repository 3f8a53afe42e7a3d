#include "par/encoder.hpp"

#include "par/init.hpp"
#include "par/ops.hpp"

namespace par {

void EncoderConfig::validate() const {
  if (num_layers == 0) throw ContractViolation("encoder: num_layers must be positive");
  if (hidden_dim == 0) throw ContractViolation("encoder: hidden_dim must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ContractViolation("encoder: dropout must be in [0, 1)");
}

std::vector<std::pair<std::string, Tensor>> EncoderWeights::named() const {
  std::vector<std::pair<std::string, Tensor>> out = {{"encoder.atom_number", atom_number},
                                                     {"encoder.chirality", chirality}};
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "encoder.layer" + std::to_string(l) + ".";
    const auto& L = layers[l];
    out.emplace_back(p + "bond_type", L.bond_type);
    out.emplace_back(p + "bond_direction", L.bond_direction);
    out.emplace_back(p + "w1", L.w1);
    out.emplace_back(p + "b1", L.b1);
    out.emplace_back(p + "w2", L.w2);
    out.emplace_back(p + "b2", L.b2);
    out.emplace_back(p + "epsilon", L.epsilon);
  }
  return out;
}

EncoderWeights init_encoder(const EncoderConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const std::size_t d = cfg.hidden_dim;
  EncoderWeights w;
  w.atom_number = xavier_uniform(chem::kNumAtomicNumbers, d, rng);
  w.chirality = xavier_uniform(chem::kNumChiralTags, d, rng);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    EncoderLayer L;
    L.bond_type = xavier_uniform(chem::kNumBondTypes, d, rng);
    L.bond_direction = xavier_uniform(chem::kNumBondDirs, d, rng);
    L.w1 = xavier_uniform(d, 2 * d, rng);
    L.b1 = Tensor::zeros({1, 2 * d});
    L.w2 = xavier_uniform(2 * d, d, rng);
    L.b2 = Tensor::zeros({1, d});
    L.epsilon = Tensor::scalar(cfg.epsilon_init);
    w.layers.push_back(std::move(L));
  }
  return w;
}

Tensor encode_batch(std::span<const chem::MolecularGraph* const> graphs, const EncoderConfig& cfg,
                    const EncoderWeights& w, bool train, std::mt19937_64& rng) {
  if (graphs.empty()) throw ContractViolation("encode: no graphs");
  std::vector<std::size_t> z, chir, offsets{0};
  // Directed message edges src -> dst with features seen along that orientation.
  std::vector<std::size_t> src, dst, btype, bdir;
  for (const auto* g : graphs) {
    if (g->num_atoms() == 0) throw ContractViolation("encode: empty graph");
    const std::size_t base = offsets.back();
    for (const auto& a : g->atoms) {
      z.push_back(static_cast<std::size_t>(a.atomic_number));
      chir.push_back(static_cast<std::size_t>(a.chirality));
    }
    for (const auto& b : g->bonds) {
      // Message into v from u travels u -> v.
      src.push_back(base + b.u);
      dst.push_back(base + b.v);
      btype.push_back(static_cast<std::size_t>(b.feature.type));
      bdir.push_back(static_cast<std::size_t>(b.feature.direction));
      src.push_back(base + b.v);
      dst.push_back(base + b.u);
      btype.push_back(static_cast<std::size_t>(b.feature.type));
      bdir.push_back(static_cast<std::size_t>(chem::reversed(b.feature.direction)));
    }
    offsets.push_back(base + g->num_atoms());
  }
  const std::size_t n = offsets.back();
  const double keep = 1.0 - cfg.dropout;

  Tensor h = ops::add(ops::embedding(w.atom_number, z), ops::embedding(w.chirality, chir));
  for (const auto& L : w.layers) {
    Tensor self = ops::add(h, ops::mul_scalar(h, L.epsilon));
    Tensor agg;
    if (!src.empty()) {
      Tensor bond = ops::add(ops::embedding(L.bond_type, btype), ops::embedding(L.bond_direction, bdir));
      Tensor msg = ops::relu(ops::add(ops::gather_rows(h, src), bond));
      agg = ops::add(self, ops::scatter_add_rows(msg, dst, n));
    } else {
      agg = self;
    }
    Tensor hidden = ops::relu(ops::add_row_bias(ops::matmul(agg, L.w1), L.b1));
    h = ops::add_row_bias(ops::matmul(hidden, L.w2), L.b2);
    h = ops::dropout(h, keep, rng, train);
  }
  return ops::segment_mean_rows(h, offsets);
}

Tensor encode(const chem::MolecularGraph& graph, const EncoderConfig& cfg, const EncoderWeights& w, bool train,
              std::mt19937_64& rng) {
  const chem::MolecularGraph* one[] = {&graph};
  return encode_batch(one, cfg, w, train, rng);
}

}  // namespace par
