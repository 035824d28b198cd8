#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "xabr/ops.hpp"
#include "xabr/transformer.hpp"

namespace xabr {

struct BridgeConfig {
  std::vector<std::size_t> placement;  // receiver layers followed by a bridge
  std::size_t d_adapter = 8;
  std::size_t n_bridge_heads = 2;
  Scalar gate_bias_init = Scalar(-2.0);

  // One bridge after every receiver layer, d_adapter = d_recv / 4.
  static BridgeConfig defaults_for(const StackConfig& receiver);
  void validate(std::size_t receiver_layers, std::size_t d_recv) const;
  bool operator==(const BridgeConfig&) const = default;
};

// Enhanced cross-attention connecting donor memory to the receiver's
// residual stream: project → adapt → cross-attend → gated blend.
struct BridgeLayer {
  BridgeLayer(std::size_t d_donor, std::size_t d_recv, const BridgeConfig& config, std::mt19937_64& rng);

  std::size_t d_donor() const { return proj_w.dim(0); }
  std::size_t d_recv() const { return proj_w.dim(1); }
  std::vector<NamedParam> parameters() const;

  std::size_t n_heads;
  Tensor proj_w, proj_b;              // d_donor × d_recv, d_recv
  Tensor adapter_down, adapter_down_b;  // d_recv × d_adapter, d_adapter
  Tensor adapter_up, adapter_up_b;      // d_adapter × d_recv, d_recv (up is zero-initialized)
  LayerNormParams ln_query;
  Tensor wq, wk, wv, wo;  // d_recv × d_recv (wo is zero-initialized)
  Tensor gate_w, gate_b;  // 2·d_recv × d_recv, d_recv
};

// Padding mask over donor memory positions, 1 = padding.
struct MemoryMask {
  std::vector<std::uint8_t> pad;  // batch × m; empty = no padding
  // Receiver position i corresponds to memory position i + causal_offset and
  // may read memory positions up to it. Empty = unrestricted.
  std::optional<std::ptrdiff_t> causal_offset;
};

Tensor project_donor(const BridgeLayer& layer, const Tensor& h_donor);
Tensor adapter_transform(const BridgeLayer& layer, const Tensor& x);
// MultiHead(Q from LayerNorm(h_recv), K/V from mem)·Wo. h_recv [n, d] or [B, n, d].
Tensor cross_attend(const BridgeLayer& layer, const Tensor& h_recv, const Tensor& mem, const MemoryMask& mask,
                    AttentionProbs* probs = nullptr);
// sigmoid([h_self ‖ h_ext]·gate_W + gate_b), elementwise.
Tensor gate_values(const BridgeLayer& layer, const Tensor& h_self, const Tensor& h_ext);
// g⊙h_ext + (1−g)⊙h_self
Tensor gated_blend(const BridgeLayer& layer, const Tensor& h_self, const Tensor& h_ext);

// Full bridge: h_ext = h_recv + cross_attend(h_recv, adapter(project(H_donor))),
// output = gated_blend(h_recv, h_ext).
Tensor bridge_forward(const BridgeLayer& layer, const Tensor& h_recv, const Tensor& h_donor,
                      const MemoryMask& mask, AttentionProbs* probs = nullptr);

}  // namespace xabr
