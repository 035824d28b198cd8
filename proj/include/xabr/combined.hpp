#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "xabr/bridge.hpp"
#include "xabr/tokenizer.hpp"
#include "xabr/transformer.hpp"

namespace xabr {

// A trainable parameter set under one learning rate. `name` is "bridge" or
// "receiver".
struct ParamMembers {
  std::string name;
  std::vector<NamedParam> params;
};

// Anything the trainer, evaluator and generator can drive.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  // Logits aligned with the grid's columns: [B, T, V].
  virtual Tensor logits(const TokenGrid& tokens) const = 0;
  // Logits for the positions the model actually reads: [n_out, V]; the last
  // row predicts the token after `ids`.
  virtual Tensor logits(std::span<const std::int32_t> ids) const = 0;

  // Longest id sequence accepted by logits(ids).
  virtual std::size_t max_context() const = 0;
  // Longest sequence a training batch may have.
  virtual std::size_t max_train_length() const = 0;
  virtual std::size_t vocab_size() const = 0;

  // Every parameter with a model-unique name, frozen or not.
  virtual std::vector<NamedParam> parameters() const = 0;
  virtual bool is_frozen(const std::string& name) const = 0;
  // Disjoint groups covering exactly the trainable parameters.
  virtual std::vector<ParamMembers> trainable_groups() const = 0;

  std::vector<NamedParam> trainable_parameters() const;
};

// A single stack used on its own: donor pretraining and receiver-only baselines.
class StackModel final : public LanguageModel {
 public:
  explicit StackModel(TransformerStack stack, std::string group_name = "receiver");

  Tensor logits(const TokenGrid& tokens) const override;
  // Reads the last max_len ids.
  Tensor logits(std::span<const std::int32_t> ids) const override;
  std::size_t max_context() const override;
  std::size_t max_train_length() const override { return stack_.config().max_len; }
  std::size_t vocab_size() const override { return stack_.vocab_out(); }
  std::vector<NamedParam> parameters() const override { return stack_.parameters(); }
  bool is_frozen(const std::string& name) const override { return stack_.is_frozen(name); }
  std::vector<ParamMembers> trainable_groups() const override;

  TransformerStack& stack() { return stack_; }
  const TransformerStack& stack() const { return stack_; }

 private:
  TransformerStack stack_;
  std::string group_name_;
};

// Shapes observed during one combined forward.
struct ForwardTrace {
  std::size_t memory_length = 0;
  std::size_t receiver_length = 0;
  std::vector<Shape> bridge_attention;  // [B, heads, n_recv, m] per bridge
};

// Frozen donor → bridges → receiver with replaced head.
class CombinedModel final : public LanguageModel {
 public:
  // Takes ownership of the donor and freezes it completely. The receiver is
  // freshly initialized from `receiver_config`, its head replaced to the
  // shared tokenizer's vocabulary and its embeddings frozen.
  CombinedModel(TransformerStack donor, StackConfig receiver_config, const BridgeConfig& bridge_config,
                std::uint64_t seed);

  Tensor logits(const TokenGrid& tokens) const override;
  Tensor logits(std::span<const std::int32_t> ids) const override;
  std::size_t max_context() const override { return donor.config().max_len; }
  std::size_t max_train_length() const override { return receiver.config().max_len; }
  std::size_t vocab_size() const override { return receiver.vocab_out(); }
  std::vector<NamedParam> parameters() const override;
  bool is_frozen(const std::string& name) const override;
  std::vector<ParamMembers> trainable_groups() const override;

  std::vector<NamedParam> bridge_parameters() const;
  const BridgeConfig& bridge_config() const { return bridge_config_; }
  // Bridge applied after receiver layer `layer`, or null.
  const BridgeLayer* bridge_after(std::size_t layer) const;

  TransformerStack donor;
  TransformerStack receiver;
  std::vector<BridgeLayer> bridges;
  ByteTokenizer tokenizer;

 private:
  BridgeConfig bridge_config_;
};

// Reinitializes the head to d_model × vocab_out, trainable, normal(0, 0.02).
void replace_head(TransformerStack& receiver, std::size_t vocab_out, std::uint64_t seed);

// The donor reads every id; the receiver reads the last
// min(n, receiver.max_len) ids and returns logits for those positions.
Tensor combined_forward(const CombinedModel& model, std::span<const std::int32_t> ids, ForwardTrace* trace = nullptr);
// Batched form over a right-padded grid.
Tensor combined_forward(const CombinedModel& model, const TokenGrid& tokens, ForwardTrace* trace = nullptr);
// The receiver alone (bridges skipped) on the same suffix of ids.
Tensor receiver_only_forward(const CombinedModel& model, std::span<const std::int32_t> ids);

struct GenerationParams {
  std::size_t max_new_tokens = 64;
  double temperature = 0.0;  // 0 = greedy
  std::uint64_t seed = 0;
  std::int32_t eos_id = ByteTokenizer::kEos;
};

// Appends tokens until eos_id or max_new_tokens; returns the new tokens only.
std::vector<std::int32_t> generate(const LanguageModel& model, std::span<const std::int32_t> prompt,
                                   const GenerationParams& params);

// Prompt ids in training format: BOS + prompt + separator.
std::vector<std::int32_t> prompt_ids(const ByteTokenizer& tokenizer, std::string_view prompt);

}  // namespace xabr
