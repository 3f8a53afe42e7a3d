#include "par/optim.hpp"

#include <cmath>
#include <string>

namespace par {

AdamState make_adam_state(std::span<const Tensor> params, double lr, double beta1, double beta2, double epsilon) {
  AdamState s;
  s.lr = lr;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.epsilon = epsilon;
  for (const auto& p : params) {
    s.m.emplace_back(p.numel(), 0.0);
    s.v.emplace_back(p.numel(), 0.0);
  }
  return s;
}

void adam_step(std::span<Tensor> params, std::span<const std::vector<double>> grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ContractViolation("adam_step: " + std::to_string(params.size()) + " params, " +
                            std::to_string(grads.size()) + " grads, " + std::to_string(state.m.size()) +
                            " moment buffers");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (grads[k].size() != params[k].numel() || state.m[k].size() != params[k].numel()) {
      throw ContractViolation("adam_step: shape mismatch for parameter " + std::to_string(k) + " " +
                              shape_str(params[k].shape()));
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k].mutable_data();
    auto& m = state.m[k];
    auto& v = state.v[k];
    const auto& g = grads[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= state.lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

std::vector<Tensor> sgd_step(std::span<const Tensor> params, std::span<const std::vector<double>> grads, double lr) {
  if (!(lr >= 0.0)) throw ContractViolation("sgd_step: learning rate must be non-negative");
  if (params.size() != grads.size()) throw ContractViolation("sgd_step: one gradient per parameter required");
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (grads[k].size() != params[k].numel()) {
      throw ContractViolation("sgd_step: gradient size mismatch for " + shape_str(params[k].shape()));
    }
    Tensor next = params[k].clone();
    auto d = next.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] -= lr * grads[k][i];
    out.push_back(std::move(next));
  }
  return out;
}

std::vector<Tensor> sgd_step(std::span<const Tensor> params, const GradientMap& grads, double lr) {
  std::vector<std::vector<double>> g;
  g.reserve(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto* found = grads.find(params[k]);
    if (!found) throw ContractViolation("sgd_step: missing gradient for parameter " + std::to_string(k));
    g.push_back(*found);
  }
  return sgd_step(params, std::span<const std::vector<double>>(g), lr);
}

}  // namespace par
