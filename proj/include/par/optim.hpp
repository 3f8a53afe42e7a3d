#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "par/tensor.hpp"

namespace par {

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::int64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Zeroed moment buffers shaped like `params`.
AdamState make_adam_state(std::span<const Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
                          double epsilon = 1e-8);

/// In-place Adam update with bias correction; increments state.step.
void adam_step(std::span<Tensor> params, std::span<const std::vector<double>> grads, AdamState& state);

/// Returns fresh leaves p - lr * grad; the inputs are left untouched.
std::vector<Tensor> sgd_step(std::span<const Tensor> params, std::span<const std::vector<double>> grads, double lr);
std::vector<Tensor> sgd_step(std::span<const Tensor> params, const GradientMap& grads, double lr);

}  // namespace par
