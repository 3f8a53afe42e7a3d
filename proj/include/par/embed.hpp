#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "par/tensor.hpp"

namespace par {

struct PrototypePair {
  Tensor c0;  // 1 x d
  Tensor c1;  // 1 x d
};

/// Class means of the rows of `support` (2K x d); labels in {0, 1}.
PrototypePair prototypes(const Tensor& support, std::span<const int> labels);

/// Row i of the result is row 0 of softmax(C C^T / sqrt(d)) C with
/// C = [g_i; c0; c1]. `g` is n x d.
Tensor context_attend(const Tensor& g, const PrototypePair& protos);

/// Attention weights of row 0 for every g_i: n x 3, columns (g_i, c0, c1).
Tensor context_weights(const Tensor& g, const PrototypePair& protos);

inline constexpr std::size_t kMlpHidden = 128;
inline constexpr std::size_t kProjectionDim = 128;
inline constexpr double kProjectionDropout = 0.1;

struct ProjectionWeights {
  Tensor w1, b1;  // 2d x hidden, 1 x hidden
  Tensor w2, b2;  // hidden x out, 1 x out

  std::vector<Tensor> tensors() const { return {w1, b1, w2, b2}; }
  static ProjectionWeights from(std::span<const Tensor> t) { return {t[0], t[1], t[2], t[3]}; }
};

ProjectionWeights init_projection(std::size_t in_dim, std::size_t hidden, std::size_t out_dim, std::mt19937_64& rng);

/// p = MLP(concat[g, b]) with ReLU and dropout between the two layers.
Tensor project(const Tensor& g, const Tensor& b, const ProjectionWeights& w, bool train, std::mt19937_64& rng,
               double dropout = kProjectionDropout);

}  // namespace par
