#include "par/embed.hpp"

#include <cmath>

#include "par/init.hpp"
#include "par/ops.hpp"

namespace par {

PrototypePair prototypes(const Tensor& support, std::span<const int> labels) {
  if (labels.size() != support.rows()) throw ContractViolation("prototypes: one label per support row required");
  std::vector<std::size_t> idx0, idx1;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 0) {
      idx0.push_back(i);
    } else if (labels[i] == 1) {
      idx1.push_back(i);
    } else {
      throw ContractViolation("prototypes: labels must be 0 or 1");
    }
  }
  if (idx0.empty() || idx1.empty()) throw ContractViolation("prototypes: both classes must be present in the support");
  return {ops::mean_rows(ops::gather_rows(support, idx0)), ops::mean_rows(ops::gather_rows(support, idx1))};
}

Tensor context_weights(const Tensor& g, const PrototypePair& protos) {
  const std::size_t d = g.cols();
  if (protos.c0.cols() != d || protos.c1.cols() != d) {
    throw ContractViolation("context_attend: prototype width " + shape_str(protos.c0.shape()) + " vs embeddings " +
                            shape_str(g.shape()));
  }
  // Scores of row 0: <g_i, g_i>, <g_i, c0>, <g_i, c1>.
  Tensor self = ops::scale(ops::mean_cols(ops::mul(g, g)), static_cast<double>(d));
  Tensor cross = ops::matmul(g, ops::transpose(ops::concat_rows({protos.c0, protos.c1})));
  return ops::softmax_rows(ops::scale(ops::concat_cols(self, cross), 1.0 / std::sqrt(static_cast<double>(d))));
}

Tensor context_attend(const Tensor& g, const PrototypePair& protos) {
  const std::size_t d = g.cols();
  Tensor a = context_weights(g, protos);
  Tensor spread = ops::matmul(ops::slice(a, 0, a.rows(), 0, 1), Tensor::filled({1, d}, 1.0));
  Tensor mix = ops::matmul(ops::slice(a, 0, a.rows(), 1, 2), ops::concat_rows({protos.c0, protos.c1}));
  return ops::add(ops::mul(spread, g), mix);
}

ProjectionWeights init_projection(std::size_t in_dim, std::size_t hidden, std::size_t out_dim, std::mt19937_64& rng) {
  ProjectionWeights w;
  w.w1 = xavier_uniform(in_dim, hidden, rng);
  w.b1 = Tensor::zeros({1, hidden});
  w.w2 = xavier_uniform(hidden, out_dim, rng);
  w.b2 = Tensor::zeros({1, out_dim});
  return w;
}

Tensor project(const Tensor& g, const Tensor& b, const ProjectionWeights& w, bool train, std::mt19937_64& rng,
               double dropout) {
  Tensor x = ops::concat_cols(g, b);
  Tensor h = ops::relu(ops::add_row_bias(ops::matmul(x, w.w1), w.b1));
  h = ops::dropout(h, 1.0 - dropout, rng, train);
  return ops::add_row_bias(ops::matmul(h, w.w2), w.b2);
}

}  // namespace par
