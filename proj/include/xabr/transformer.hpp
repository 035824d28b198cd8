#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xabr/ops.hpp"
#include "xabr/tensor.hpp"

namespace xabr {

inline constexpr Scalar kLayerNormEps = Scalar(1e-5);
inline constexpr double kInitStd = 0.02;

struct StackConfig {
  std::size_t n_layers = 2;
  std::size_t d_model = 32;
  std::size_t n_heads = 2;
  std::size_t d_ff = 128;
  std::size_t vocab_size = 259;
  std::size_t max_len = 64;

  // Throws ConfigError on a violated invariant.
  void validate() const;
  bool operator==(const StackConfig&) const = default;
};

struct NamedParam {
  std::string name;
  Tensor tensor;
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;
};

struct TransformerBlock {
  LayerNormParams ln_attn;
  Tensor wq, wk, wv, wo;  // d_model × d_model
  LayerNormParams ln_mlp;
  Tensor w1;  // d_model × d_ff
  Tensor w2;  // d_ff × d_model
};

// Right-padded B×T grid of token ids.
struct TokenGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int32_t> ids;
  std::vector<std::uint8_t> pad_mask;  // 1 = padding

  static TokenGrid single(std::span<const std::int32_t> ids);
  std::size_t real_length(std::size_t row) const;
};

enum class FreezeSelector { all, embeddings_only };

// Pre-norm causal transformer with learned absolute positions. The same class
// serves as frozen donor and as trainable receiver.
class TransformerStack {
 public:
  TransformerStack(const StackConfig& config, std::uint64_t seed);
  TransformerStack(TransformerStack&&) = default;
  TransformerStack& operator=(TransformerStack&&) = default;

  // Deep copy with independent storage.
  TransformerStack clone() const;

  const StackConfig& config() const { return config_; }
  std::size_t vocab_out() const { return lm_head.dim(1); }

  // Canonical order: embeddings, blocks, final norm, head.
  std::vector<NamedParam> parameters() const;
  std::vector<NamedParam> trainable_parameters() const;
  std::size_t parameter_count() const;

  bool is_frozen(std::string_view name) const { return frozen_.count(std::string(name)) != 0; }
  const std::set<std::string>& frozen_names() const { return frozen_; }
  void set_frozen(const std::string& name, bool frozen);

  Tensor token_embedding;     // vocab_size × d_model
  Tensor position_embedding;  // max_len × d_model
  std::vector<TransformerBlock> blocks;
  LayerNormParams final_norm;
  Tensor lm_head;  // d_model × vocab_out

 private:
  TransformerStack() = default;
  Tensor* find(const std::string& name);

  StackConfig config_;
  std::set<std::string> frozen_;
};

void freeze(TransformerStack& stack, FreezeSelector selector);

// Lower-triangular permit matrix for `len` positions.
AttentionMask causal_mask(std::size_t len, std::size_t max_len);

// h + MultiHead(LayerNorm(h)); h is [n, d] or [B, n, d].
Tensor self_attention_block(const TransformerBlock& block, const Tensor& h, const AttentionMask& mask,
                            std::size_t n_heads, AttentionProbs* probs = nullptr);
// h + W2·gelu(W1·LayerNorm(h))
Tensor feed_forward_block(const TransformerBlock& block, const Tensor& h);

// Token + position embeddings, [B, T, d].
Tensor embed(const TransformerStack& stack, const TokenGrid& tokens);
// Causal mask for a grid, combined with its key padding.
AttentionMask grid_mask(const TransformerStack& stack, const TokenGrid& tokens);
Tensor run_block(const TransformerStack& stack, std::size_t layer, const Tensor& h, const AttentionMask& mask);
Tensor apply_final_norm(const TransformerStack& stack, const Tensor& h);

// Final-norm hidden states (not logits): [n, d_model] / [B, T, d_model].
Tensor forward_hidden(const TransformerStack& stack, std::span<const std::int32_t> ids);
Tensor forward_hidden(const TransformerStack& stack, const TokenGrid& tokens);

Tensor lm_logits(const TransformerStack& stack, const Tensor& hidden);

}  // namespace xabr
