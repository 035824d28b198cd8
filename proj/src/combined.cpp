#include "xabr/combined.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "init.hpp"
#include "xabr/data.hpp"
#include "xabr/errors.hpp"

namespace xabr {
namespace {

std::vector<NamedParam> prefixed(const std::string& prefix, std::vector<NamedParam> params) {
  for (auto& p : params) p.name = prefix + p.name;
  return params;
}

std::vector<Scalar> last_row(const Tensor& logits) {
  const std::size_t v = logits.last_dim();
  const auto data = logits.data();
  return {data.end() - static_cast<std::ptrdiff_t>(v), data.end()};
}

}  // namespace

std::vector<NamedParam> LanguageModel::trainable_parameters() const {
  std::vector<NamedParam> out;
  for (auto& g : trainable_groups())
    for (auto& p : g.params) out.push_back(std::move(p));
  return out;
}

StackModel::StackModel(TransformerStack stack, std::string group_name)
    : stack_(std::move(stack)), group_name_(std::move(group_name)) {}

Tensor StackModel::logits(const TokenGrid& tokens) const { return lm_logits(stack_, forward_hidden(stack_, tokens)); }

Tensor StackModel::logits(std::span<const std::int32_t> ids) const {
  const std::size_t keep = std::min(ids.size(), stack_.config().max_len);
  return lm_logits(stack_, forward_hidden(stack_, ids.subspan(ids.size() - keep)));
}

std::size_t StackModel::max_context() const { return std::numeric_limits<std::size_t>::max(); }

std::vector<ParamMembers> StackModel::trainable_groups() const {
  return {{group_name_, stack_.trainable_parameters()}};
}

void replace_head(TransformerStack& receiver, std::size_t vocab_out, std::uint64_t seed) {
  if (vocab_out < 1) throw ContractError("replace_head: vocab_out must be >= 1");
  std::mt19937_64 rng(seed);
  receiver.lm_head = detail::normal_tensor({receiver.config().d_model, vocab_out}, kInitStd, rng);
  receiver.set_frozen("lm_head", false);
}

CombinedModel::CombinedModel(TransformerStack donor_stack, StackConfig receiver_config,
                             const BridgeConfig& bridge_config, std::uint64_t seed)
    : donor(std::move(donor_stack)),
      receiver([&] {
        receiver_config.vocab_size = ByteTokenizer::kVocabSize;
        return TransformerStack(receiver_config, seed);
      }()),
      bridge_config_(bridge_config) {
  bridge_config_.validate(receiver.config().n_layers, receiver.config().d_model);
  if (donor.config().vocab_size != tokenizer.vocab_size())
    throw ConfigError("donor vocabulary " + std::to_string(donor.config().vocab_size) +
                      " differs from the shared tokenizer's " + std::to_string(tokenizer.vocab_size()));
  freeze(donor, FreezeSelector::all);
  replace_head(receiver, tokenizer.vocab_size(), seed + 1);
  freeze(receiver, FreezeSelector::embeddings_only);
  std::mt19937_64 rng(seed + 2);
  for (std::size_t i = 0; i < bridge_config_.placement.size(); ++i)
    bridges.emplace_back(donor.config().d_model, receiver.config().d_model, bridge_config_, rng);
}

const BridgeLayer* CombinedModel::bridge_after(std::size_t layer) const {
  const auto& p = bridge_config_.placement;
  const auto it = std::find(p.begin(), p.end(), layer);
  return it == p.end() ? nullptr : &bridges[static_cast<std::size_t>(it - p.begin())];
}

std::vector<NamedParam> CombinedModel::bridge_parameters() const {
  std::vector<NamedParam> out;
  for (std::size_t i = 0; i < bridges.size(); ++i) {
    auto ps = prefixed("bridges." + std::to_string(i) + ".", bridges[i].parameters());
    out.insert(out.end(), ps.begin(), ps.end());
  }
  return out;
}

std::vector<NamedParam> CombinedModel::parameters() const {
  auto out = prefixed("donor.", donor.parameters());
  auto rec = prefixed("receiver.", receiver.parameters());
  auto br = bridge_parameters();
  out.insert(out.end(), rec.begin(), rec.end());
  out.insert(out.end(), br.begin(), br.end());
  return out;
}

bool CombinedModel::is_frozen(const std::string& name) const {
  if (name.rfind("donor.", 0) == 0) return donor.is_frozen(name.substr(6));
  if (name.rfind("receiver.", 0) == 0) return receiver.is_frozen(name.substr(9));
  return false;
}

std::vector<ParamMembers> CombinedModel::trainable_groups() const {
  return {{"bridge", bridge_parameters()}, {"receiver", prefixed("receiver.", receiver.trainable_parameters())}};
}

Tensor CombinedModel::logits(const TokenGrid& tokens) const { return combined_forward(*this, tokens); }

Tensor CombinedModel::logits(std::span<const std::int32_t> ids) const { return combined_forward(*this, ids); }

Tensor combined_forward(const CombinedModel& model, const TokenGrid& tokens, ForwardTrace* trace) {
  const std::size_t donor_max = model.donor.config().max_len, recv_max = model.receiver.config().max_len;
  if (tokens.cols > donor_max)
    throw CapacityError("sequence of " + std::to_string(tokens.cols) + " tokens exceeds donor max_len " +
                        std::to_string(donor_max) + " (receiver max_len " + std::to_string(recv_max) + ")");
  const std::size_t keep = std::min(tokens.cols, recv_max), offset = tokens.cols - keep;
  const bool padded = std::any_of(tokens.pad_mask.begin(), tokens.pad_mask.end(), [](auto p) { return p != 0; });
  if (offset > 0 && padded)
    throw ContractError("combined_forward: padded batches must fit the receiver's max_len");

  Tensor memory;
  {
    NoGradScope no_grad;
    memory = forward_hidden(model.donor, tokens);
  }

  TokenGrid recv = tokens;
  if (offset > 0) {
    recv.cols = keep;
    recv.ids.clear();
    recv.pad_mask.clear();
    for (std::size_t r = 0; r < tokens.rows; ++r)
      for (std::size_t t = offset; t < tokens.cols; ++t) {
        recv.ids.push_back(tokens.ids[r * tokens.cols + t]);
        recv.pad_mask.push_back(tokens.pad_mask[r * tokens.cols + t]);
      }
  }
  MemoryMask mem_mask;
  if (padded) mem_mask.pad = tokens.pad_mask;
  mem_mask.causal_offset = static_cast<std::ptrdiff_t>(offset);

  if (trace != nullptr) {
    trace->memory_length = tokens.cols;
    trace->receiver_length = keep;
    trace->bridge_attention.clear();
  }
  Tensor h = embed(model.receiver, recv);
  const AttentionMask mask = grid_mask(model.receiver, recv);
  for (std::size_t l = 0; l < model.receiver.blocks.size(); ++l) {
    h = run_block(model.receiver, l, h, mask);
    if (const BridgeLayer* bridge = model.bridge_after(l)) {
      AttentionProbs probs;
      h = bridge_forward(*bridge, h, memory, mem_mask, trace != nullptr ? &probs : nullptr);
      if (trace != nullptr) trace->bridge_attention.push_back(probs.shape);
    }
  }
  return lm_logits(model.receiver, apply_final_norm(model.receiver, h));
}

Tensor combined_forward(const CombinedModel& model, std::span<const std::int32_t> ids, ForwardTrace* trace) {
  if (ids.empty()) throw ContractError("combined_forward: empty id sequence");
  const Tensor logits = combined_forward(model, TokenGrid::single(ids), trace);
  return reshape(logits, {logits.dim(1), logits.dim(2)});
}

Tensor receiver_only_forward(const CombinedModel& model, std::span<const std::int32_t> ids) {
  const std::size_t keep = std::min(ids.size(), model.receiver.config().max_len);
  return lm_logits(model.receiver, forward_hidden(model.receiver, ids.subspan(ids.size() - keep)));
}

std::vector<std::int32_t> prompt_ids(const ByteTokenizer& tokenizer, std::string_view prompt) {
  std::vector<std::int32_t> ids{ByteTokenizer::kBos};
  for (auto id : tokenizer.encode_bytes(prompt)) ids.push_back(id);
  for (auto id : tokenizer.encode_bytes(kSeparator)) ids.push_back(id);
  return ids;
}

std::vector<std::int32_t> generate(const LanguageModel& model, std::span<const std::int32_t> prompt,
                                   const GenerationParams& params) {
  if (prompt.empty()) throw ContractError("generate: empty prompt");
  if (params.max_new_tokens < 1) throw ContractError("generate: max_new_tokens must be >= 1");
  if (prompt.size() > model.max_context())
    throw CapacityError("prompt of " + std::to_string(prompt.size()) + " tokens exceeds the model context of " +
                        std::to_string(model.max_context()));
  NoGradScope no_grad;
  std::mt19937_64 rng(params.seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<std::int32_t> seq(prompt.begin(), prompt.end()), out;
  while (out.size() < params.max_new_tokens && seq.size() <= model.max_context()) {
    const std::vector<Scalar> row = last_row(model.logits(std::span<const std::int32_t>(seq)));
    std::int32_t next = 0;
    if (params.temperature <= 0.0) {
      next = static_cast<std::int32_t>(std::max_element(row.begin(), row.end()) - row.begin());
    } else {
      const double mx = *std::max_element(row.begin(), row.end());
      std::vector<double> w(row.size());
      double total = 0;
      for (std::size_t i = 0; i < row.size(); ++i) total += w[i] = std::exp((row[i] - mx) / params.temperature);
      double u = uniform(rng) * total;
      next = static_cast<std::int32_t>(row.size() - 1);
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (u < w[i]) {
          next = static_cast<std::int32_t>(i);
          break;
        }
        u -= w[i];
      }
    }
    out.push_back(next);
    if (next == params.eos_id) break;
    seq.push_back(next);
  }
  return out;
}

}  // namespace xabr
