#include "xabr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "xabr/bridge.hpp"
#include "xabr/combined.hpp"
#include "xabr/errors.hpp"
#include "xabr/loss.hpp"
#include "xabr/ops.hpp"

namespace xabr {
namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double stddev = 1.0, bool requires_grad = true) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<Scalar> data(shape_numel(shape));
  for (auto& x : data) x = Scalar(dist(rng));
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

// Reduces any tensor to a scalar through fixed random weights, so every
// output entry contributes a distinct gradient.
class Probe {
 public:
  Probe(const Shape& shape, std::mt19937_64& rng) : w_(random_tensor(shape, rng, 1.0, false)) {}
  Tensor operator()(const Tensor& y) const { return sum(mul(y, w_)); }

 private:
  Tensor w_;
};

std::vector<std::int32_t> random_labels(std::size_t n, std::size_t vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::int32_t> pick(0, std::int32_t(vocab) - 1);
  std::vector<std::int32_t> out(n);
  for (auto& l : out) l = pick(rng);
  return out;
}

// Moves every parameter away from its (possibly degenerate) initial value.
void jitter(const std::vector<NamedParam>& params, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (const auto& p : params) {
    Tensor t = p.tensor;
    for (auto& x : t.mutable_data()) x = Scalar(double(x) + dist(rng));
  }
}

using Suite = std::vector<GradCheckResult>;

void tensor_suite(Suite& out, const GradCheckOptions& o) {
  std::mt19937_64 rng(11);
  auto a = random_tensor({2, 3, 4}, rng), b = random_tensor({4, 5}, rng), c = random_tensor({2, 3, 4}, rng);
  auto bias = random_tensor({4}, rng);
  {
    Probe p({2, 3, 5}, rng);
    out.push_back(check_gradients("matmul", [&] { return p(matmul(a, b)); }, {{"a", a}, {"b", b}}, o));
  }
  Probe p3({2, 3, 4}, rng);
  out.push_back(check_gradients("add", [&] { return p3(add(a, c)); }, {{"a", a}, {"c", c}}, o));
  out.push_back(check_gradients("sub", [&] { return p3(sub(a, c)); }, {{"a", a}, {"c", c}}, o));
  out.push_back(check_gradients("mul", [&] { return p3(mul(a, c)); }, {{"a", a}, {"c", c}}, o));
  out.push_back(check_gradients("scale", [&] { return p3(scale(a, Scalar(-1.5))); }, {{"a", a}}, o));
  out.push_back(check_gradients("add_bias", [&] { return p3(add_bias(a, bias)); }, {{"a", a}, {"bias", bias}}, o));
  out.push_back(check_gradients("sigmoid", [&] { return p3(sigmoid(a)); }, {{"a", a}}, o));
  out.push_back(check_gradients("gelu", [&] { return p3(gelu(a)); }, {{"a", a}}, o));
  out.push_back(check_gradients("softmax_lastdim", [&] { return p3(softmax_lastdim(a)); }, {{"a", a}}, o));
  {
    auto gain = random_tensor({4}, rng);
    out.push_back(check_gradients("layer_norm", [&] { return p3(layer_norm(a, gain, bias)); },
                                  {{"x", a}, {"gain", gain}, {"bias", bias}}, o));
  }
  {
    auto table = random_tensor({7, 4}, rng);
    const std::vector<std::int32_t> ids{3, 0, 3, 6, 1, 3};
    Probe p({6, 4}, rng);
    out.push_back(check_gradients("embedding_lookup", [&] { return p(embedding_lookup(table, ids)); },
                                  {{"table", table}}, o));
  }
  {
    auto d = random_tensor({2, 3, 2}, rng);
    Probe p({2, 3, 6}, rng);
    out.push_back(check_gradients("concat_lastdim", [&] { return p(concat_lastdim(a, d)); }, {{"a", a}, {"d", d}}, o));
  }
  {
    Probe p({6, 4}, rng);
    out.push_back(check_gradients("reshape", [&] { return p(reshape(a, {6, 4})); }, {{"a", a}}, o));
  }
  out.push_back(check_gradients("sum", [&] { return sum(mul(a, a)); }, {{"a", a}}, o));
  out.push_back(check_gradients("mean", [&] { return mean(mul(a, c)); }, {{"a", a}, {"c", c}}, o));
  {
    auto q = random_tensor({2, 5, 4}, rng), k = random_tensor({2, 6, 4}, rng), v = random_tensor({2, 6, 4}, rng);
    Probe p({2, 5, 4}, rng);
    AttentionMask m;
    m.batch = 2;
    m.q_len = 5;
    m.kv_len = 6;
    m.key_valid = {1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0};
    out.push_back(check_gradients("attention.padded", [&] { return p(attention(q, k, v, 2, m)); },
                                  {{"q", q}, {"k", k}, {"v", v}}, o));
    m.causal = true;
    m.causal_offset = 1;
    out.push_back(check_gradients("attention.causal", [&] { return p(attention(q, k, v, 2, m)); },
                                  {{"q", q}, {"k", k}, {"v", v}}, o));
  }
}

void loss_suite(Suite& out, const GradCheckOptions& o) {
  std::mt19937_64 rng(12);
  auto logits = random_tensor({2, 4, 9}, rng, 2.0);
  std::vector<std::int32_t> labels{3, -1, 0, 8, -1, -1, 5, 2};
  out.push_back(check_gradients("cross_entropy_loss", [&] { return cross_entropy_loss(logits, labels); },
                                {{"logits", logits}}, o));
}

StackConfig small_stack(std::size_t layers, std::size_t d, std::size_t heads, std::size_t max_len) {
  return StackConfig{layers, d, heads, 4 * d, ByteTokenizer::kVocabSize, max_len};
}

TokenGrid sample_grid(std::size_t rows, std::size_t cols, std::size_t pad_last, std::mt19937_64& rng) {
  TokenGrid g;
  g.rows = rows;
  g.cols = cols;
  std::uniform_int_distribution<std::int32_t> pick(0, 255);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const bool pad = r == rows - 1 && c + pad_last >= cols;
      g.ids.push_back(pad ? ByteTokenizer::kPad : pick(rng));
      g.pad_mask.push_back(pad ? 1 : 0);
    }
  return g;
}

std::vector<std::int32_t> masked_labels(const TokenGrid& g, std::size_t vocab, std::mt19937_64& rng) {
  auto labels = random_labels(g.rows * g.cols, vocab, rng);
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (g.pad_mask[i]) labels[i] = -1;
  return labels;
}

void transformer_suite(Suite& out, const GradCheckOptions& o) {
  std::mt19937_64 rng(13);
  TransformerStack stack(small_stack(2, 8, 2, 16), 5);
  const auto params = stack.parameters();
  jitter(params, rng, 0.2);
  const auto& block = stack.blocks[0];
  auto h = random_tensor({2, 5, 8}, rng);
  Probe p({2, 5, 8}, rng);
  const AttentionMask mask = causal_mask(5, 16);
  AttentionMask batched = mask;
  batched.batch = 2;
  out.push_back(check_gradients(
      "self_attention_block", [&] { return p(self_attention_block(block, h, batched, 2)); },
      {{"h", h}, {"ln.gain", block.ln_attn.gain}, {"ln.bias", block.ln_attn.bias}, {"wq", block.wq},
       {"wk", block.wk}, {"wv", block.wv}, {"wo", block.wo}},
      o));
  out.push_back(check_gradients(
      "feed_forward_block", [&] { return p(feed_forward_block(block, h)); },
      {{"h", h}, {"ln.gain", block.ln_mlp.gain}, {"ln.bias", block.ln_mlp.bias}, {"w1", block.w1}, {"w2", block.w2}},
      o));
  const TokenGrid grid = sample_grid(2, 6, 2, rng);
  const auto labels = masked_labels(grid, stack.vocab_out(), rng);
  out.push_back(check_gradients(
      "transformer_stack",
      [&] { return cross_entropy_loss(lm_logits(stack, forward_hidden(stack, grid)), labels); }, params, o));
}

void bridge_suite(Suite& out, const GradCheckOptions& o) {
  std::mt19937_64 rng(14);
  BridgeConfig cfg;
  cfg.placement = {0};
  cfg.d_adapter = 4;
  cfg.n_bridge_heads = 2;
  BridgeLayer layer(12, 8, cfg, rng);
  jitter(layer.parameters(), rng, 0.2);
  auto donor = random_tensor({2, 7, 12}, rng), recv = random_tensor({2, 5, 8}, rng);
  auto mem = random_tensor({2, 7, 8}, rng);
  Probe p({2, 5, 8}, rng), pm({2, 7, 8}, rng);
  auto named = [&](std::initializer_list<std::pair<const char*, Tensor>> extra) {
    std::vector<NamedParam> v;
    for (const auto& [n, t] : extra) v.push_back({n, t});
    return v;
  };
  out.push_back(check_gradients("project_donor", [&] { return pm(project_donor(layer, donor)); },
                                named({{"h_donor", donor}, {"proj.w", layer.proj_w}, {"proj.b", layer.proj_b}}), o));
  out.push_back(check_gradients("adapter_transform", [&] { return pm(adapter_transform(layer, mem)); },
                                named({{"x", mem},
                                       {"down.w", layer.adapter_down},
                                       {"down.b", layer.adapter_down_b},
                                       {"up.w", layer.adapter_up},
                                       {"up.b", layer.adapter_up_b}}),
                                o));
  MemoryMask open;
  open.pad.assign(14, 0);
  open.pad[13] = 1;
  MemoryMask causal;
  causal.causal_offset = 2;
  const auto xattn_params = named({{"h_recv", recv},
                                   {"mem", mem},
                                   {"ln.gain", layer.ln_query.gain},
                                   {"ln.bias", layer.ln_query.bias},
                                   {"wq", layer.wq},
                                   {"wk", layer.wk},
                                   {"wv", layer.wv},
                                   {"wo", layer.wo}});
  out.push_back(check_gradients("cross_attend.unrestricted", [&] { return p(cross_attend(layer, recv, mem, open)); },
                                xattn_params, o));
  out.push_back(check_gradients("cross_attend.causal", [&] { return p(cross_attend(layer, recv, mem, causal)); },
                                xattn_params, o));
  auto ext = random_tensor({2, 5, 8}, rng);
  const auto gate_params = named({{"h_self", recv}, {"h_ext", ext}, {"gate.w", layer.gate_w}, {"gate.b", layer.gate_b}});
  out.push_back(check_gradients("gate_values", [&] { return p(gate_values(layer, recv, ext)); }, gate_params, o));
  out.push_back(check_gradients("gated_blend", [&] { return p(gated_blend(layer, recv, ext)); }, gate_params, o));
  auto all = layer.parameters();
  all.push_back({"h_recv", recv});
  all.push_back({"h_donor", donor});
  out.push_back(check_gradients("bridge_forward", [&] { return p(bridge_forward(layer, recv, donor, causal)); },
                                all, o));
}

void combined_suite(Suite& out, const GradCheckOptions& o) {
  std::mt19937_64 rng(15);
  const StackConfig donor_cfg = small_stack(2, 16, 2, 32), recv_cfg = small_stack(2, 16, 2, 32);
  BridgeConfig bridge = BridgeConfig::defaults_for(recv_cfg);
  bridge.placement = {1};
  CombinedModel model(TransformerStack(donor_cfg, 3), recv_cfg, bridge, 4);
  auto trainable = model.trainable_parameters();
  jitter(trainable, rng, 0.15);
  const TokenGrid grid = sample_grid(2, 7, 3, rng);
  const auto labels = masked_labels(grid, model.vocab_size(), rng);
  out.push_back(check_gradients(
      "combined_model", [&] { return cross_entropy_loss(model.logits(grid), labels); }, trainable, o));
}

}  // namespace

GradCheckResult check_gradients(std::string name, const std::function<Tensor()>& objective,
                                const std::vector<NamedParam>& inputs, const GradCheckOptions& options) {
  GradCheckResult result;
  result.name = std::move(name);
  std::vector<Tensor> handles;
  for (const auto& in : inputs) {
    Tensor t = in.tensor;
    if (!t.requires_grad()) throw ContractError("check_gradients: input '" + in.name + "' does not require grad");
    t.clear_grad();
    handles.push_back(t);
  }
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(objective());
  }
  std::vector<std::vector<Scalar>> analytic;
  for (auto& t : handles) {
    if (t.has_grad())
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    else
      analytic.emplace_back(t.numel(), Scalar(0));
    t.clear_grad();
  }

  NoGradScope no_grad;
  for (std::size_t i = 0; i < handles.size(); ++i) {
    auto data = handles[i].mutable_data();
    for (std::size_t j = 0; j < data.size(); ++j) {
      const Scalar original = data[j];
      auto at = [&](double offset) {
        data[j] = Scalar(double(original) + offset);
        return double(objective().item());
      };
      const double h = options.step;
      const double numeric = (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h);
      data[j] = original;
      const double a = analytic[i][j];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double rel = std::abs(a - numeric) / denom;
      ++result.entries;
      if (rel > result.max_rel_error || result.worst.empty()) {
        result.max_rel_error = rel;
        result.worst = inputs[i].name + "[" + std::to_string(j) + "]";
      }
    }
  }
  result.passed = result.max_rel_error <= options.tolerance;
  return result;
}

std::vector<GradCheckResult> run_gradcheck_suite(std::string_view module, const GradCheckOptions& options) {
  const bool all = module.empty();
  if (!all && std::find(std::begin(kGradcheckModules), std::end(kGradcheckModules), module) ==
                  std::end(kGradcheckModules))
    throw ConfigError("unknown gradcheck module '" + std::string(module) + "'");
  Suite out;
  if (all || module == "tensor") tensor_suite(out, options);
  if (all || module == "loss") loss_suite(out, options);
  if (all || module == "transformer") transformer_suite(out, options);
  if (all || module == "bridge") bridge_suite(out, options);
  if (all || module == "combined") combined_suite(out, options);
  return out;
}

}  // namespace xabr
