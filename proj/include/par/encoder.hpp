#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "par/chem.hpp"
#include "par/tensor.hpp"

namespace par {

struct EncoderConfig {
  std::size_t num_layers = 5;
  std::size_t hidden_dim = 300;
  double dropout = 0.5;
  double epsilon_init = 0.0;

  void validate() const;
};

struct EncoderLayer {
  Tensor bond_type;       // kNumBondTypes x d
  Tensor bond_direction;  // kNumBondDirs x d
  Tensor w1, b1;          // d x 2d, 1 x 2d
  Tensor w2, b2;          // 2d x d, 1 x d
  Tensor epsilon;         // 1 x 1
};

struct EncoderWeights {
  Tensor atom_number;  // kNumAtomicNumbers x d
  Tensor chirality;    // kNumChiralTags x d
  std::vector<EncoderLayer> layers;

  std::vector<std::pair<std::string, Tensor>> named() const;
};

/// Xavier-uniform tables and linear maps, zero biases, epsilon = cfg.epsilon_init.
EncoderWeights init_encoder(const EncoderConfig& cfg, std::mt19937_64& rng);

/// Generic embedding g of one molecule: 1 x d.
Tensor encode(const chem::MolecularGraph& graph, const EncoderConfig& cfg, const EncoderWeights& w, bool train,
              std::mt19937_64& rng);

/// Row i is the embedding of graphs[i]. Graphs are batched into one disjoint
/// union, so the result equals stacking per-graph encode() calls in eval mode.
Tensor encode_batch(std::span<const chem::MolecularGraph* const> graphs, const EncoderConfig& cfg,
                    const EncoderWeights& w, bool train, std::mt19937_64& rng);

}  // namespace par
