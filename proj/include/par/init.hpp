#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "par/tensor.hpp"

namespace par {

inline Tensor xavier_uniform(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = u(rng);
  return Tensor::matrix(rows, cols, std::move(v));
}

}  // namespace par
