#include "par/relgraph.hpp"

#include <algorithm>
#include <numeric>

#include "par/init.hpp"
#include "par/ops.hpp"

namespace par {

RelationWeights init_relation(std::size_t dim, std::size_t hidden, std::mt19937_64& rng) {
  RelationWeights w;
  w.wa1 = xavier_uniform(dim, hidden, rng);
  w.ba1 = Tensor::zeros({1, hidden});
  w.wa2 = xavier_uniform(hidden, 1, rng);
  w.ba2 = Tensor::zeros({1, 1});
  w.wr = xavier_uniform(dim, dim, rng);
  return w;
}

std::vector<IndexPair> upper_pairs(std::size_t n) {
  std::vector<IndexPair> out;
  out.reserve(n * (n + 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) out.emplace_back(i, j);
  return out;
}

Tensor pair_scores(const Tensor& h, std::span<const IndexPair> pairs, const RelationWeights& w) {
  std::vector<std::size_t> left(pairs.size()), right(pairs.size());
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    left[k] = pairs[k].first;
    right[k] = pairs[k].second;
  }
  Tensor x = ops::exp(ops::neg(ops::abs(ops::sub(ops::gather_rows(h, left), ops::gather_rows(h, right)))));
  Tensor hidden = ops::relu(ops::add_row_bias(ops::matmul(x, w.wa1), w.ba1));
  return ops::add_row_bias(ops::matmul(hidden, w.wa2), w.ba2);
}

Tensor estimate_adjacency(const Tensor& h, const RelationWeights& w) {
  const std::size_t n = h.rows();
  if (n < 2) throw ContractViolation("estimate_adjacency: need at least 2 nodes");
  const auto pairs = upper_pairs(n);
  return ops::scatter_symmetric(pair_scores(h, pairs, w), pairs, n);
}

KnnSelection knn_select(const Tensor& a, std::size_t k) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw ContractViolation("knn_select: matrix must be square, got " + shape_str(a.shape()));
  if (k < 1 || k > n - 1) {
    throw ContractViolation("knn_select: k=" + std::to_string(k) + " outside [1, " + std::to_string(n - 1) + "]");
  }
  KnnSelection sel;
  sel.keep.assign(n * n, 0);
  sel.neighbors.resize(n);
  std::vector<std::size_t> cand;
  for (std::size_t i = 0; i < n; ++i) {
    cand.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) cand.push_back(j);
    std::stable_sort(cand.begin(), cand.end(), [&](std::size_t x, std::size_t y) { return a(i, x) > a(i, y); });
    cand.resize(k);
    for (auto j : cand) sel.keep[i * n + j] = 1;
    sel.neighbors[i] = cand;
  }
  return sel;
}

KnnSelection all_neighbors(std::size_t n) {
  KnnSelection sel;
  sel.keep.assign(n * n, 1);
  sel.neighbors.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    sel.keep[i * n + i] = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) sel.neighbors[i].push_back(j);
  }
  return sel;
}

Tensor normalize_rows(const Tensor& a, const KnnSelection& sel, ops::RowNorm mode) {
  return ops::masked_normalize_rows(a, sel.keep, mode);
}

Tensor refine(const Tensor& h_prev, const Tensor& a_hat, const Tensor& w_r) {
  return ops::leaky_relu(ops::matmul(ops::matmul(a_hat, h_prev), w_r));
}

Tensor ground_truth_adjacency(std::span<const int> support_labels, std::size_t n) {
  const std::size_t m = support_labels.size();
  if (m > n) throw ContractViolation("ground_truth_adjacency: more labels than nodes");
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) v[i * n + j] = support_labels[i] == support_labels[j] ? 1.0 : 0.0;
  return Tensor::matrix(n, n, std::move(v));
}

Tensor neighbor_alignment(const Tensor& a_hat, const Tensor& a_star, std::size_t n_support) {
  if (a_hat.shape() != a_star.shape()) {
    throw ContractViolation("neighbor_alignment: shape mismatch " + shape_str(a_hat.shape()) + " vs " +
                            shape_str(a_star.shape()));
  }
  if (n_support == 0 || n_support > a_hat.rows()) throw ContractViolation("neighbor_alignment: bad support count");
  return ops::squared_l2_rows(ops::slice(a_hat, 0, n_support, 0, n_support),
                              ops::slice(a_star, 0, n_support, 0, n_support));
}

RelationResult run_relation(const Tensor& p, const RelationWeights& w, const RelationConfig& cfg,
                            std::span<const int> support_labels, const Tensor* shared_block) {
  const std::size_t n = p.rows();
  const std::size_t m = support_labels.size();
  if (m == 0 || m > n) throw ContractViolation("run_relation: support count must be in [1, n]");
  RelationResult out;
  out.h = p;
  out.a_star = ground_truth_adjacency(support_labels, n);
  out.reg = Tensor::scalar(0.0);
  if (cfg.iterations == 0) return out;
  if (n < 2) throw ContractViolation("run_relation: need at least 2 nodes");
  const std::size_t k = std::min(cfg.k, n - 1);

  Tensor h = p;
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    Tensor a;
    if (cfg.cosine) {
      a = ops::cosine_matrix(h);
    } else if (t == 0 && shared_block != nullptr && m < n) {
      // Support-support scores are shared; only pairs touching the extra nodes are new.
      std::vector<IndexPair> pairs = upper_pairs(m);
      if (shared_block->rows() != pairs.size()) throw ContractViolation("run_relation: shared block size mismatch");
      std::vector<IndexPair> extra;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = std::max(i, m); j < n; ++j) extra.emplace_back(i, j);
      Tensor scores = ops::concat_rows({*shared_block, pair_scores(h, extra, w)});
      pairs.insert(pairs.end(), extra.begin(), extra.end());
      a = ops::scatter_symmetric(scores, pairs, n);
    } else {
      a = estimate_adjacency(h, w);
    }
    const auto sel = cfg.knn ? knn_select(a, k) : all_neighbors(n);
    Tensor a_hat = normalize_rows(a, sel, cfg.normalization);
    h = refine(h, a_hat, w.wr);
    out.a.push_back(a);
    out.a_hats.push_back(a_hat);
    out.neighbors.push_back(sel.neighbors);
  }
  out.h = h;
  out.a_hat = out.a_hats.back();
  out.reg = neighbor_alignment(out.a_hat, out.a_star, m);
  return out;
}

}  // namespace par
