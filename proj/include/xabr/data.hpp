#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xabr/tokenizer.hpp"
#include "xabr/transformer.hpp"

namespace xabr {

// Bytes placed between prompt and response.
inline constexpr std::string_view kSeparator = "\n#";
inline constexpr std::int32_t kIgnoreLabel = -1;

struct Example {
  std::string prompt;
  std::string response;
  bool operator==(const Example&) const = default;
};

// Padded ids plus next-token labels (kIgnoreLabel on prompt and padding).
struct TokenBatch : TokenGrid {
  std::vector<std::int32_t> labels;
};

enum class LabelScope {
  response_only,  // fine-tuning: loss on response tokens
  full_sequence,  // language-model pretraining: loss on every next token
};

// BOS + prompt + separator + response + EOS, and the index of the first
// response token.
struct EncodedExample {
  std::vector<std::int32_t> ids;
  std::size_t response_start = 0;
};
EncodedExample encode_example(const Example& ex, const ByteTokenizer& tokenizer);
std::size_t encoded_length(const Example& ex);

// One JSON object per line with string fields "prompt" and "response".
std::vector<Example> load_jsonl(const std::filesystem::path& path);
std::vector<Example> parse_jsonl(std::istream& in);
void save_jsonl(const std::filesystem::path& path, std::span<const Example> examples);

struct FilterResult {
  std::vector<Example> kept;
  std::size_t dropped = 0;
};
// Keeps examples whose joint encoded length is <= max_tokens.
FilterResult filter_by_length(std::span<const Example> examples, std::size_t max_tokens);

struct Split {
  std::vector<Example> train;
  std::vector<Example> val;
};
// Seeded shuffle; the first ⌈N·val_fraction⌉ go to validation.
Split split_train_val(std::span<const Example> examples, double val_fraction, std::uint64_t seed);

TokenBatch collate(std::span<const Example> batch, const ByteTokenizer& tokenizer,
                   LabelScope scope = LabelScope::response_only);

enum class TaskMix { sum, rem, mixed };

// Templated arithmetic tasks: "sum of a and b" / "find the remainder by
// dividing a by b", answered step by step.
std::vector<Example> gen_synthetic(std::size_t n, std::uint64_t seed, TaskMix mix = TaskMix::mixed);
Example make_sum_example(int a, int b);
Example make_rem_example(int a, int b);

}  // namespace xabr
