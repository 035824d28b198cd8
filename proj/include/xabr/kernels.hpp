#pragma once

#include <cstddef>
#include <cstdint>

#include "xabr/scalar.hpp"

// Dense kernels behind the autograd ops. The functions in `xabr::kernels`
// are OpenMP-parallel; `xabr::kernels::reference` holds plain serial loops
// with the same summation order, kept for testing and benchmarking. Every
// output element is owned by exactly one thread and summed in a fixed order,
// so the parallel results are bitwise identical to the reference for any
// thread count.
namespace xabr::kernels {

struct AttentionShape {
  std::size_t batch = 1;
  std::size_t q_len = 0;
  std::size_t kv_len = 0;
  std::size_t width = 0;  // model width; split evenly across heads
  std::size_t heads = 1;

  std::size_t head_dim() const { return width / heads; }
};

// Which (query, key) pairs may interact. A pair is permitted when the key is
// valid for its batch row and, if causal, key <= query + offset.
struct MaskRule {
  const std::uint8_t* key_valid = nullptr;  // batch × kv_len, 1 = attend; null = all valid
  bool causal = false;
  std::ptrdiff_t offset = 0;

  bool permits(std::size_t b, std::size_t kv_len, std::size_t i, std::size_t j) const {
    if (key_valid != nullptr && key_valid[b * kv_len + j] == 0) return false;
    if (causal && static_cast<std::ptrdiff_t>(j) > static_cast<std::ptrdiff_t>(i) + offset) return false;
    return true;
  }
};

// Logit assigned to forbidden pairs before the softmax.
inline constexpr Accum kMaskedLogit = -1e9;

// c[m×n] = a[m×k] · b[k×n]
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const Scalar* a, const Scalar* b, Scalar* c);
// c[m×n] = a[m×k] · b[n×k]ᵀ
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const Scalar* a, const Scalar* b, Scalar* c);
// c[m×n] = a[k×m]ᵀ · b[k×n]
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const Scalar* a, const Scalar* b, Scalar* c);

void softmax_rows(std::size_t rows, std::size_t n, const Scalar* in, Scalar* out);

// q: batch×q_len×width, k/v: batch×kv_len×width, probs: batch×heads×q_len×kv_len.
void attention_forward(const AttentionShape& shape, const MaskRule& mask, const Scalar* q,
                       const Scalar* k, const Scalar* v, Scalar* probs, Scalar* out);
// Overwrites dq, dk, dv.
void attention_backward(const AttentionShape& shape, const Scalar* q, const Scalar* k,
                        const Scalar* v, const Scalar* probs, const Scalar* dout, Scalar* dq,
                        Scalar* dk, Scalar* dv);

namespace reference {

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const Scalar* a, const Scalar* b, Scalar* c);
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const Scalar* a, const Scalar* b, Scalar* c);
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const Scalar* a, const Scalar* b, Scalar* c);
void softmax_rows(std::size_t rows, std::size_t n, const Scalar* in, Scalar* out);
void attention_forward(const AttentionShape& shape, const MaskRule& mask, const Scalar* q,
                       const Scalar* k, const Scalar* v, Scalar* probs, Scalar* out);
void attention_backward(const AttentionShape& shape, const Scalar* q, const Scalar* k,
                        const Scalar* v, const Scalar* probs, const Scalar* dout, Scalar* dq,
                        Scalar* dk, Scalar* dv);

}  // namespace reference
}  // namespace xabr::kernels
