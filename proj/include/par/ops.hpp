#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "par/tensor.hpp"

// Differentiable ops over rank-2 tensors. No implicit broadcasting: the only
// row-vector expansion is the explicit add_row_bias.
namespace par::ops {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// a + b for every row of a; b is 1 x cols(a).
Tensor add_row_bias(const Tensor& a, const Tensor& bias);
Tensor scale(const Tensor& a, double factor);
/// a * s where s is a 1 x 1 tensor that may itself require a gradient.
Tensor mul_scalar(const Tensor& a, const Tensor& s);

Tensor exp(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
inline constexpr double kLeakySlope = 0.01;
Tensor leaky_relu(const Tensor& a, double slope = kLeakySlope);

Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice(const Tensor& a, std::size_t row0, std::size_t nrows, std::size_t col0, std::size_t ncols);

Tensor softmax_rows(const Tensor& a);
/// Softmax over entries with keep[i*cols+j] != 0; other entries are exactly 0.
Tensor masked_softmax_rows(const Tensor& a, std::span<const std::uint8_t> keep);

enum class RowNorm { kSoftmax, kZScore, kMinMax, kSigmoid };

/// Row normalization over kept entries; every kept row sums to 1.
/// kZScore and kMinMax rescale the kept values before a masked softmax;
/// kSigmoid divides sigmoid(x) by its kept row sum.
Tensor masked_normalize_rows(const Tensor& a, std::span<const std::uint8_t> keep, RowNorm mode);

/// Column-wise mean over rows: n x m -> 1 x m.
Tensor mean_rows(const Tensor& a);
/// Row-wise mean over columns: n x m -> n x 1.
Tensor mean_cols(const Tensor& a);
Tensor sum(const Tensor& a);

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index);
/// Embedding-table lookup: one table row per index.
Tensor embedding(const Tensor& table, std::span<const std::size_t> index);
/// out[index[k]] += a[k]; out has n_out rows.
Tensor scatter_add_rows(const Tensor& a, std::span<const std::size_t> index, std::size_t n_out);
/// Mean of consecutive row segments; offsets has one more entry than segments.
Tensor segment_mean_rows(const Tensor& a, std::span<const std::size_t> offsets);
/// out[i][j] = out[j][i] = v[k] for pairs[k] = (i, j); unlisted entries 0.
Tensor scatter_symmetric(const Tensor& v, std::span<const std::pair<std::size_t, std::size_t>> pairs,
                         std::size_t n);

/// Inverted dropout: zeroes entries with probability 1 - keep_prob and scales
/// survivors by 1 / keep_prob. Identity when train is false.
Tensor dropout(const Tensor& a, double keep_prob, std::mt19937_64& rng, bool train);

/// Sum over rows of -log softmax(logits)[row][target[row]].
Tensor cross_entropy(const Tensor& logits, std::span<const int> target);
/// Sum over rows of the squared L2 norm of (a_i - b_i).
Tensor squared_l2_rows(const Tensor& a, const Tensor& b);
/// out[i][j] = <h_i, h_j> / (|h_i| |h_j|).
Tensor cosine_matrix(const Tensor& h);

}  // namespace par::ops
