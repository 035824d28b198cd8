#pragma once

#include <cstdint>
#include <span>

#include "xabr/tensor.hpp"

namespace xabr {

// Mean over non-ignored rows of −log softmax(logits)[label], log-sum-exp
// stabilized. logits [..., V]; one label per row, `ignore` skips a row.
Tensor cross_entropy_loss(const Tensor& logits, std::span<const std::int32_t> labels, std::int32_t ignore = -1);

std::size_t count_targets(std::span<const std::int32_t> labels, std::int32_t ignore = -1);

}  // namespace xabr
