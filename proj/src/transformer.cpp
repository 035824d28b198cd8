#include "xabr/transformer.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "init.hpp"
#include "xabr/errors.hpp"

namespace xabr {

void StackConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("stack config: " + what); };
  if (d_model == 0 || n_heads == 0 || d_ff == 0 || vocab_size == 0) fail("dimensions must be positive");
  if (d_model % n_heads != 0)
    fail("n_heads " + std::to_string(n_heads) + " does not divide d_model " + std::to_string(d_model));
  if (max_len < 1) fail("max_len must be >= 1");
}

TokenGrid TokenGrid::single(std::span<const std::int32_t> ids) {
  TokenGrid g;
  g.rows = 1;
  g.cols = ids.size();
  g.ids.assign(ids.begin(), ids.end());
  g.pad_mask.assign(ids.size(), 0);
  return g;
}

std::size_t TokenGrid::real_length(std::size_t row) const {
  std::size_t n = 0;
  for (std::size_t t = 0; t < cols; ++t) n += pad_mask[row * cols + t] == 0 ? 1 : 0;
  return n;
}

TransformerStack::TransformerStack(const StackConfig& config, std::uint64_t seed) : config_(config) {
  config.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = config.d_model;
  auto ones = [d] { return Tensor::full({d}, Scalar(1), true); };
  auto zeros = [d] { return Tensor::zeros({d}, true); };
  token_embedding = detail::normal_tensor({config.vocab_size, d}, kInitStd, rng);
  position_embedding = detail::normal_tensor({config.max_len, d}, kInitStd, rng);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    TransformerBlock b;
    b.ln_attn = {ones(), zeros()};
    b.wq = detail::normal_tensor({d, d}, kInitStd, rng);
    b.wk = detail::normal_tensor({d, d}, kInitStd, rng);
    b.wv = detail::normal_tensor({d, d}, kInitStd, rng);
    b.wo = detail::normal_tensor({d, d}, kInitStd, rng);
    b.ln_mlp = {ones(), zeros()};
    b.w1 = detail::normal_tensor({d, config.d_ff}, kInitStd, rng);
    b.w2 = detail::normal_tensor({config.d_ff, d}, kInitStd, rng);
    blocks.push_back(std::move(b));
  }
  final_norm = {ones(), zeros()};
  lm_head = detail::normal_tensor({d, config.vocab_size}, kInitStd, rng);
}

std::vector<NamedParam> TransformerStack::parameters() const {
  std::vector<NamedParam> out{{"tok_emb", token_embedding}, {"pos_emb", position_embedding}};
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const auto& b = blocks[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    out.push_back({p + "ln_attn.gain", b.ln_attn.gain});
    out.push_back({p + "ln_attn.bias", b.ln_attn.bias});
    out.push_back({p + "attn.wq", b.wq});
    out.push_back({p + "attn.wk", b.wk});
    out.push_back({p + "attn.wv", b.wv});
    out.push_back({p + "attn.wo", b.wo});
    out.push_back({p + "ln_mlp.gain", b.ln_mlp.gain});
    out.push_back({p + "ln_mlp.bias", b.ln_mlp.bias});
    out.push_back({p + "mlp.w1", b.w1});
    out.push_back({p + "mlp.w2", b.w2});
  }
  out.push_back({"ln_f.gain", final_norm.gain});
  out.push_back({"ln_f.bias", final_norm.bias});
  out.push_back({"lm_head", lm_head});
  return out;
}

std::vector<NamedParam> TransformerStack::trainable_parameters() const {
  auto all = parameters();
  std::erase_if(all, [this](const NamedParam& p) { return is_frozen(p.name); });
  return all;
}

std::size_t TransformerStack::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

TransformerStack TransformerStack::clone() const {
  TransformerStack copy;
  copy.config_ = config_;
  copy.frozen_ = frozen_;
  auto dup = [](const Tensor& t) {
    Tensor c = t.detach();
    c.set_requires_grad(t.requires_grad());
    return c;
  };
  copy.token_embedding = dup(token_embedding);
  copy.position_embedding = dup(position_embedding);
  for (const auto& b : blocks) {
    copy.blocks.push_back({{dup(b.ln_attn.gain), dup(b.ln_attn.bias)},
                           dup(b.wq), dup(b.wk), dup(b.wv), dup(b.wo),
                           {dup(b.ln_mlp.gain), dup(b.ln_mlp.bias)},
                           dup(b.w1), dup(b.w2)});
  }
  copy.final_norm = {dup(final_norm.gain), dup(final_norm.bias)};
  copy.lm_head = dup(lm_head);
  return copy;
}

Tensor* TransformerStack::find(const std::string& name) {
  if (name == "tok_emb") return &token_embedding;
  if (name == "pos_emb") return &position_embedding;
  if (name == "ln_f.gain") return &final_norm.gain;
  if (name == "ln_f.bias") return &final_norm.bias;
  if (name == "lm_head") return &lm_head;
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    if (name.rfind(p, 0) != 0) continue;
    auto& b = blocks[l];
    const std::string rest = name.substr(p.size());
    if (rest == "ln_attn.gain") return &b.ln_attn.gain;
    if (rest == "ln_attn.bias") return &b.ln_attn.bias;
    if (rest == "attn.wq") return &b.wq;
    if (rest == "attn.wk") return &b.wk;
    if (rest == "attn.wv") return &b.wv;
    if (rest == "attn.wo") return &b.wo;
    if (rest == "ln_mlp.gain") return &b.ln_mlp.gain;
    if (rest == "ln_mlp.bias") return &b.ln_mlp.bias;
    if (rest == "mlp.w1") return &b.w1;
    if (rest == "mlp.w2") return &b.w2;
  }
  return nullptr;
}

void TransformerStack::set_frozen(const std::string& name, bool frozen) {
  Tensor* t = find(name);
  if (t == nullptr) throw ContractError("unknown stack parameter '" + name + "'");
  t->set_requires_grad(!frozen);
  if (frozen)
    frozen_.insert(name);
  else
    frozen_.erase(name);
}

void freeze(TransformerStack& stack, FreezeSelector selector) {
  if (selector == FreezeSelector::embeddings_only) {
    stack.set_frozen("tok_emb", true);
    stack.set_frozen("pos_emb", true);
    return;
  }
  for (const auto& p : stack.parameters()) stack.set_frozen(p.name, true);
}

AttentionMask causal_mask(std::size_t len, std::size_t max_len) {
  if (len < 1) throw ContractError("causal_mask: length must be >= 1");
  if (len > max_len)
    throw CapacityError("sequence length " + std::to_string(len) + " exceeds max_len " + std::to_string(max_len));
  AttentionMask m;
  m.batch = 1;
  m.q_len = len;
  m.kv_len = len;
  m.causal = true;
  m.causal_offset = 0;
  return m;
}

namespace {

// Runs `fn` on a [B, n, d] view of h and restores h's rank.
template <typename Fn>
Tensor batched(const Tensor& h, Fn&& fn) {
  if (h.rank() == 3) return fn(h);
  if (h.rank() != 2) throw DimensionError("expected [n, d] or [B, n, d], got " + shape_str(h.shape()));
  Tensor out = fn(reshape(h, {1, h.dim(0), h.dim(1)}));
  return reshape(out, h.shape());
}

}  // namespace

Tensor self_attention_block(const TransformerBlock& block, const Tensor& h, const AttentionMask& mask,
                            std::size_t n_heads, AttentionProbs* probs) {
  return batched(h, [&](const Tensor& x) {
    const Tensor n = layer_norm(x, block.ln_attn.gain, block.ln_attn.bias, kLayerNormEps);
    const Tensor q = matmul(n, block.wq), k = matmul(n, block.wk), v = matmul(n, block.wv);
    const Tensor mixed = attention(q, k, v, n_heads, mask, probs);
    return add(x, matmul(mixed, block.wo));
  });
}

Tensor feed_forward_block(const TransformerBlock& block, const Tensor& h) {
  const Tensor n = layer_norm(h, block.ln_mlp.gain, block.ln_mlp.bias, kLayerNormEps);
  return add(h, matmul(gelu(matmul(n, block.w1)), block.w2));
}

Tensor embed(const TransformerStack& stack, const TokenGrid& tokens) {
  const auto& cfg = stack.config();
  if (tokens.cols > cfg.max_len)
    throw CapacityError("sequence length " + std::to_string(tokens.cols) + " exceeds max_len " +
                        std::to_string(cfg.max_len));
  if (tokens.rows == 0 || tokens.cols == 0) throw ContractError("embed: empty token grid");
  std::vector<std::int32_t> positions(tokens.rows * tokens.cols);
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<std::int32_t>(i % tokens.cols);
  const Tensor tok = embedding_lookup(stack.token_embedding, tokens.ids);
  const Tensor pos = embedding_lookup(stack.position_embedding, positions);
  return reshape(add(tok, pos), {tokens.rows, tokens.cols, cfg.d_model});
}

AttentionMask grid_mask(const TransformerStack& stack, const TokenGrid& tokens) {
  return causal_mask(tokens.cols, stack.config().max_len).with_padding(tokens.pad_mask, tokens.rows);
}

Tensor run_block(const TransformerStack& stack, std::size_t layer, const Tensor& h, const AttentionMask& mask) {
  const auto& block = stack.blocks.at(layer);
  return feed_forward_block(block, self_attention_block(block, h, mask, stack.config().n_heads));
}

Tensor apply_final_norm(const TransformerStack& stack, const Tensor& h) {
  return layer_norm(h, stack.final_norm.gain, stack.final_norm.bias, kLayerNormEps);
}

Tensor forward_hidden(const TransformerStack& stack, const TokenGrid& tokens) {
  Tensor h = embed(stack, tokens);
  const AttentionMask mask = grid_mask(stack, tokens);
  for (std::size_t l = 0; l < stack.blocks.size(); ++l) h = run_block(stack, l, h, mask);
  return apply_final_norm(stack, h);
}

Tensor forward_hidden(const TransformerStack& stack, std::span<const std::int32_t> ids) {
  const Tensor h = forward_hidden(stack, TokenGrid::single(ids));
  return reshape(h, {ids.size(), stack.config().d_model});
}

Tensor lm_logits(const TransformerStack& stack, const Tensor& hidden) {
  if (hidden.last_dim() != stack.config().d_model)
    throw DimensionError("lm_logits: hidden width " + std::to_string(hidden.last_dim()) + " != d_model " +
                         std::to_string(stack.config().d_model));
  return matmul(hidden, stack.lm_head);
}

}  // namespace xabr
