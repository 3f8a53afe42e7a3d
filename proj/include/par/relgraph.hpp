#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "par/ops.hpp"
#include "par/tensor.hpp"

namespace par {

struct RelationWeights {
  Tensor wa1, ba1;  // d x hidden, 1 x hidden
  Tensor wa2, ba2;  // hidden x 1, 1 x 1
  Tensor wr;        // d x d

  std::vector<Tensor> tensors() const { return {wa1, ba1, wa2, ba2, wr}; }
};

RelationWeights init_relation(std::size_t dim, std::size_t hidden, std::mt19937_64& rng);

struct RelationConfig {
  std::size_t iterations = 2;  // T; 0 disables the relation module
  std::size_t k = 10;          // neighbours kept per row
  bool knn = true;             // false keeps every j != i
  bool cosine = false;         // cosine similarity instead of the adjacency MLP
  ops::RowNorm normalization = ops::RowNorm::kSoftmax;
};

using IndexPair = std::pair<std::size_t, std::size_t>;

/// Pairs (i, j) with i <= j < n, row-major.
std::vector<IndexPair> upper_pairs(std::size_t n);

/// MLP_{W_a}(exp(-|h_i - h_j|)) for each listed pair: P x 1.
Tensor pair_scores(const Tensor& h, std::span<const IndexPair> pairs, const RelationWeights& w);

/// Dense n x n similarity matrix built from the upper triangle (symmetric).
Tensor estimate_adjacency(const Tensor& h, const RelationWeights& w);

struct KnnSelection {
  std::vector<std::uint8_t> keep;                  // n x n mask
  std::vector<std::vector<std::size_t>> neighbors;  // per row, best first
};

/// Keeps the k largest entries of each row over j != i; ties go to the lower index.
KnnSelection knn_select(const Tensor& a, std::size_t k);
/// Mask keeping every off-diagonal entry.
KnnSelection all_neighbors(std::size_t n);

/// Masked row normalization (softmax by default); masked entries are exactly 0.
Tensor normalize_rows(const Tensor& a, const KnnSelection& sel, ops::RowNorm mode = ops::RowNorm::kSoftmax);

/// LeakyReLU(a_hat * h_prev * w_r).
Tensor refine(const Tensor& h_prev, const Tensor& a_hat, const Tensor& w_r);

/// n x n label-agreement matrix over the first labels.size() nodes; other
/// rows and columns are 0. The diagonal of the labelled block is 1.
Tensor ground_truth_adjacency(std::span<const int> support_labels, std::size_t n);

/// Squared difference between a_hat and a_star over the labelled block.
Tensor neighbor_alignment(const Tensor& a_hat, const Tensor& a_star, std::size_t n_support);

struct RelationResult {
  Tensor h;                  // n x d final embeddings
  Tensor a_hat;              // final normalized adjacency (undefined when T = 0)
  Tensor a_star;             // n x n
  Tensor reg;                // 1 x 1
  std::vector<Tensor> a;     // raw similarity per iteration
  std::vector<Tensor> a_hats;
  std::vector<std::vector<std::vector<std::size_t>>> neighbors;
};

/// Runs T rounds of estimate -> sparsify -> normalize -> refine from H0 = p.
/// Nodes 0..labels.size()-1 are labelled support nodes. `shared_block`, when
/// given, holds pair_scores of the support nodes (upper_pairs order) at t = 1
/// and is reused instead of being recomputed.
RelationResult run_relation(const Tensor& p, const RelationWeights& w, const RelationConfig& cfg,
                            std::span<const int> support_labels, const Tensor* shared_block = nullptr);

}  // namespace par
