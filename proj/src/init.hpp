#pragma once

#include <random>

#include "xabr/tensor.hpp"

namespace xabr::detail {

inline Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<Scalar> data(shape_numel(shape));
  for (auto& x : data) x = Scalar(dist(rng));
  return Tensor(std::move(shape), std::move(data), true);
}

}  // namespace xabr::detail
