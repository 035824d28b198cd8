#include "xabr/bridge.hpp"

#include <algorithm>

#include "init.hpp"
#include "xabr/errors.hpp"

namespace xabr {

BridgeConfig BridgeConfig::defaults_for(const StackConfig& receiver) {
  BridgeConfig c;
  for (std::size_t l = 0; l < receiver.n_layers; ++l) c.placement.push_back(l);
  c.d_adapter = std::max<std::size_t>(1, receiver.d_model / 4);
  c.n_bridge_heads = receiver.n_heads;
  return c;
}

void BridgeConfig::validate(std::size_t receiver_layers, std::size_t d_recv) const {
  auto fail = [](const std::string& what) { throw ConfigError("bridge config: " + what); };
  for (std::size_t i = 0; i < placement.size(); ++i) {
    if (placement[i] >= receiver_layers)
      fail("placement index " + std::to_string(placement[i]) + " >= receiver n_layers " +
           std::to_string(receiver_layers));
    if (i > 0 && placement[i] <= placement[i - 1]) fail("placement must be sorted without duplicates");
  }
  if (d_adapter == 0 || d_adapter >= d_recv)
    fail("d_adapter " + std::to_string(d_adapter) + " must be in [1, d_recv=" + std::to_string(d_recv) + ")");
  if (n_bridge_heads == 0 || d_recv % n_bridge_heads != 0)
    fail("n_bridge_heads " + std::to_string(n_bridge_heads) + " does not divide d_recv " + std::to_string(d_recv));
}

BridgeLayer::BridgeLayer(std::size_t d_donor, std::size_t d_recv, const BridgeConfig& config, std::mt19937_64& rng)
    : n_heads(config.n_bridge_heads) {
  const std::size_t da = config.d_adapter;
  proj_w = detail::normal_tensor({d_donor, d_recv}, kInitStd, rng);
  proj_b = Tensor::zeros({d_recv}, true);
  adapter_down = detail::normal_tensor({d_recv, da}, kInitStd, rng);
  adapter_down_b = Tensor::zeros({da}, true);
  adapter_up = Tensor::zeros({da, d_recv}, true);
  adapter_up_b = Tensor::zeros({d_recv}, true);
  ln_query = {Tensor::full({d_recv}, Scalar(1), true), Tensor::zeros({d_recv}, true)};
  wq = detail::normal_tensor({d_recv, d_recv}, kInitStd, rng);
  wk = detail::normal_tensor({d_recv, d_recv}, kInitStd, rng);
  wv = detail::normal_tensor({d_recv, d_recv}, kInitStd, rng);
  wo = Tensor::zeros({d_recv, d_recv}, true);
  gate_w = detail::normal_tensor({2 * d_recv, d_recv}, kInitStd, rng);
  gate_b = Tensor::full({d_recv}, config.gate_bias_init, true);
}

std::vector<NamedParam> BridgeLayer::parameters() const {
  return {{"proj.w", proj_w},           {"proj.b", proj_b},
          {"adapter.down.w", adapter_down}, {"adapter.down.b", adapter_down_b},
          {"adapter.up.w", adapter_up},     {"adapter.up.b", adapter_up_b},
          {"ln_query.gain", ln_query.gain}, {"ln_query.bias", ln_query.bias},
          {"xattn.wq", wq},                 {"xattn.wk", wk},
          {"xattn.wv", wv},                 {"xattn.wo", wo},
          {"gate.w", gate_w},               {"gate.b", gate_b}};
}

Tensor project_donor(const BridgeLayer& layer, const Tensor& h_donor) {
  if (h_donor.last_dim() != layer.d_donor())
    throw DimensionError("project_donor: donor width " + std::to_string(h_donor.last_dim()) + " != " +
                         std::to_string(layer.d_donor()));
  return add_bias(matmul(h_donor, layer.proj_w), layer.proj_b);
}

Tensor adapter_transform(const BridgeLayer& layer, const Tensor& x) {
  const Tensor hidden = gelu(add_bias(matmul(x, layer.adapter_down), layer.adapter_down_b));
  return add(x, add_bias(matmul(hidden, layer.adapter_up), layer.adapter_up_b));
}

Tensor cross_attend(const BridgeLayer& layer, const Tensor& h_recv, const Tensor& mem, const MemoryMask& mask,
                    AttentionProbs* probs) {
  const bool unbatched = h_recv.rank() == 2;
  const Tensor h = unbatched ? reshape(h_recv, {1, h_recv.dim(0), h_recv.dim(1)}) : h_recv;
  const Tensor m = mem.rank() == 2 ? reshape(mem, {1, mem.dim(0), mem.dim(1)}) : mem;
  if (h.rank() != 3 || m.rank() != 3 || h.dim(0) != m.dim(0) || h.dim(2) != layer.d_recv() ||
      m.dim(2) != layer.d_recv())
    throw DimensionError("cross_attend: receiver " + shape_str(h_recv.shape()) + " and memory " +
                         shape_str(mem.shape()) + " are incompatible with width " + std::to_string(layer.d_recv()));
  const std::size_t batch = h.dim(0), n = h.dim(1), len = m.dim(1);

  AttentionMask am;
  am.batch = batch;
  am.q_len = n;
  am.kv_len = len;
  if (!mask.pad.empty()) {
    if (mask.pad.size() != batch * len)
      throw DimensionError("cross_attend: memory mask has " + std::to_string(mask.pad.size()) +
                           " entries, expected " + std::to_string(batch * len));
    am.key_valid.resize(batch * len);
    for (std::size_t i = 0; i < am.key_valid.size(); ++i) am.key_valid[i] = mask.pad[i] ? 0 : 1;
  }
  if (mask.causal_offset) {
    am.causal = true;
    am.causal_offset = *mask.causal_offset;
  }
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < n; ++i) {
      bool any = false;
      for (std::size_t j = 0; j < len && !any; ++j) any = am.permits(b, i, j);
      if (!any)
        throw ContractError("cross_attend: every memory position is masked for batch row " + std::to_string(b) +
                            ", query " + std::to_string(i));
    }

  const Tensor normed = layer_norm(h, layer.ln_query.gain, layer.ln_query.bias, kLayerNormEps);
  const Tensor q = matmul(normed, layer.wq), k = matmul(m, layer.wk), v = matmul(m, layer.wv);
  Tensor out = matmul(attention(q, k, v, layer.n_heads, am, probs), layer.wo);
  return unbatched ? reshape(out, h_recv.shape()) : out;
}

Tensor gate_values(const BridgeLayer& layer, const Tensor& h_self, const Tensor& h_ext) {
  if (h_self.shape() != h_ext.shape())
    throw DimensionError("gated_blend: shapes " + shape_str(h_self.shape()) + " and " + shape_str(h_ext.shape()) +
                         " differ");
  return sigmoid(add_bias(matmul(concat_lastdim(h_self, h_ext), layer.gate_w), layer.gate_b));
}

Tensor gated_blend(const BridgeLayer& layer, const Tensor& h_self, const Tensor& h_ext) {
  const Tensor g = gate_values(layer, h_self, h_ext);
  // h_self + g⊙(h_ext − h_self): exact h_self whenever h_ext == h_self.
  return add(h_self, mul(g, sub(h_ext, h_self)));
}

Tensor bridge_forward(const BridgeLayer& layer, const Tensor& h_recv, const Tensor& h_donor, const MemoryMask& mask,
                      AttentionProbs* probs) {
  const Tensor memory = adapter_transform(layer, project_donor(layer, h_donor));
  const Tensor external = add(h_recv, cross_attend(layer, h_recv, memory, mask, probs));
  return gated_blend(layer, h_recv, external);
}

}  // namespace xabr
