#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "xabr/combined.hpp"
#include "xabr/config.hpp"
#include "xabr/data.hpp"
#include "xabr/trainer.hpp"

namespace xabr {

enum class Variant {
  donor_only,          // the frozen pretrained donor, evaluated as is
  receiver_clean,      // receiver trained from scratch on the task data
  receiver_finetuned,  // receiver first trained as a plain LM on the train split, then on responses
  combined,            // donor + bridges + receiver
};

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);
inline constexpr Variant kAllVariants[] = {Variant::donor_only, Variant::receiver_clean, Variant::receiver_finetuned,
                                           Variant::combined};

struct SampleOutput {
  std::string query;
  std::string response;
};

struct VariantResult {
  Variant variant = Variant::combined;
  double initial_loss = 0;  // NaN for donor_only
  double train_loss = 0;    // last epoch; NaN for donor_only
  double val_loss = 0;
  double perplexity = 0;
  std::size_t steps = 0;
  std::vector<EpochRecord> history;
  std::optional<double> accuracy;
  std::vector<SampleOutput> samples;
};

struct ComparisonReport {
  std::size_t train_examples = 0;
  std::size_t val_examples = 0;
  std::size_t dropped = 0;
  std::size_t accuracy_queries = 0;
  std::vector<VariantResult> rows;
};

struct CompareOptions {
  std::vector<Variant> variants{std::begin(kAllVariants), std::end(kAllVariants)};
  std::vector<std::string> sample_queries{"sum of 5 and 5", "find the remainder by dividing 7 by 4"};
  // Examples whose response ends in "... is <n>."; accuracy is the fraction
  // whose greedy generation states the same number.
  std::vector<Example> accuracy_queries;
  std::size_t max_new_tokens = 48;
  std::size_t finetune_pretrain_epochs = 3;
};

// Trains and evaluates each requested variant on one shared filter/split of
// `corpus`. The donor is cloned, never modified.
ComparisonReport compare_models(const TransformerStack& donor, std::span<const Example> corpus,
                                const ExperimentConfig& config, const CompareOptions& options = {});

// The integer after the last " is " in `text`, if any.
std::optional<long> extract_answer(std::string_view text);

// Greedy answer accuracy over `queries` (see CompareOptions::accuracy_queries).
double answer_accuracy(const LanguageModel& model, std::span<const Example> queries, std::size_t max_new_tokens = 48);

// Greedy completion of `prompt` in the training template, as text.
std::string complete(const LanguageModel& model, std::string_view prompt, std::size_t max_new_tokens = 48);

// `n` SUM examples whose operand pairs occur in none of `exclude`.
std::vector<Example> held_out_sum_queries(std::size_t n, std::uint64_t seed, std::span<const Example> exclude);

std::string to_markdown(const ComparisonReport& report);
nlohmann::json to_json(const ComparisonReport& report);

}  // namespace xabr
