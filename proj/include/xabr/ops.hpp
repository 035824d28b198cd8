#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "xabr/kernels.hpp"
#include "xabr/tensor.hpp"

// Differentiable operations. Each one allocates a fresh output, leaves its
// inputs untouched and, under an active TapeScope, records its backward.
// Broadcasting is limited to a trailing-dim bias vector (add_bias).
namespace xabr {

// a[..., k] · b[k, n] -> [..., n]; leading axes of `a` are flattened.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, Scalar factor);
// x[..., d] + bias[d]
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor sigmoid(const Tensor& x);
// Tanh approximation: 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))
Tensor gelu(const Tensor& x);
Tensor softmax_lastdim(const Tensor& x);
// Per trailing slice: (x − mean)/sqrt(var + eps)·gain + bias, biased variance.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Scalar eps = Scalar(1e-5));

// Row gather: table[V, d], ids[n] -> [n, d]. Backward scatter-adds.
Tensor embedding_lookup(const Tensor& table, std::span<const std::int32_t> ids);

Tensor concat_lastdim(const Tensor& a, const Tensor& b);
Tensor reshape(const Tensor& x, Shape shape);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Which query/key pairs may attend, for a batch of B rows.
struct AttentionMask {
  std::size_t batch = 1;
  std::size_t q_len = 0;
  std::size_t kv_len = 0;
  std::vector<std::uint8_t> key_valid;  // batch × kv_len; empty = every key valid
  bool causal = false;
  std::ptrdiff_t causal_offset = 0;  // query i may see keys j <= i + offset

  bool permits(std::size_t b, std::size_t i, std::size_t j) const;
  std::size_t permitted_count() const;
  // Multiplicative combination with a key padding mask (1 = padding).
  AttentionMask with_padding(std::span<const std::uint8_t> pad, std::size_t rows) const;
  kernels::MaskRule rule() const;
};

// Softmax weights captured from an attention call: [B, heads, q_len, kv_len].
struct AttentionProbs {
  Shape shape;
  std::vector<Scalar> values;
};

// Multi-head scaled dot-product attention, q[B, n, d], k/v[B, m, d].
// Forbidden pairs get a −1e9 logit before the softmax.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                 const AttentionMask& mask, AttentionProbs* probs_out = nullptr);

}  // namespace xabr
