#include "xabr/compare.hpp"

#include <charconv>
#include <cmath>
#include <iomanip>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "xabr/errors.hpp"

namespace xabr {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

StackConfig receiver_stack_config(const ExperimentConfig& config) {
  StackConfig c = config.receiver;
  c.vocab_size = ByteTokenizer::kVocabSize;
  return c;
}

VariantResult finish_row(Variant v, const LanguageModel& model, const TrainState* state,
                         std::span<const Example> val, const TrainConfig& tc, const CompareOptions& options) {
  VariantResult row;
  row.variant = v;
  row.initial_loss = kNaN;
  row.train_loss = kNaN;
  if (state != nullptr) {
    row.initial_loss = state->initial_loss;
    row.train_loss = state->history.empty() ? kNaN : state->history.back().train_loss;
    row.steps = state->optimizer.step;
    row.history = state->history;
  }
  const EvalResult ev = eval_perplexity(model, val, tc.batch_size);
  row.val_loss = ev.mean_loss;
  row.perplexity = ev.perplexity;
  if (!options.accuracy_queries.empty())
    row.accuracy = answer_accuracy(model, options.accuracy_queries, options.max_new_tokens);
  for (const auto& q : options.sample_queries) row.samples.push_back({q, complete(model, q, options.max_new_tokens)});
  return row;
}

std::string fmt(double x, int precision = 4) {
  if (std::isnan(x)) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << x;
  return os.str();
}

std::string escape_cell(std::string s) {
  std::string out;
  for (char c : s) {
    if (c == '\n')
      out += "\\n";
    else if (c == '|')
      out += "\\|";
    else
      out += c;
  }
  return out;
}

nlohmann::json number_or_null(double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr); }

}  // namespace

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::donor_only: return "donor_only";
    case Variant::receiver_clean: return "receiver_clean";
    case Variant::receiver_finetuned: return "receiver_finetuned";
    case Variant::combined: return "combined";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants)
    if (variant_name(v) == name) return v;
  throw ConfigError("unknown variant '" + std::string(name) + "'");
}

std::optional<long> extract_answer(std::string_view text) {
  const auto at = text.rfind(" is ");
  if (at == std::string_view::npos) return std::nullopt;
  const char* first = text.data() + at + 4;
  const char* last = text.data() + text.size();
  long value = 0;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr == first) return std::nullopt;
  return value;
}

std::string complete(const LanguageModel& model, std::string_view prompt, std::size_t max_new_tokens) {
  ByteTokenizer tokenizer;
  const auto ids = prompt_ids(tokenizer, prompt);
  GenerationParams params;
  params.max_new_tokens = max_new_tokens;
  return tokenizer.detokenize(generate(model, ids, params));
}

double answer_accuracy(const LanguageModel& model, std::span<const Example> queries, std::size_t max_new_tokens) {
  if (queries.empty()) throw ContractError("answer_accuracy: no queries");
  std::size_t correct = 0;
  for (const auto& q : queries) {
    const auto expected = extract_answer(q.response);
    if (!expected) throw ContractError("answer_accuracy: reference response has no answer: " + q.response);
    const auto got = extract_answer(complete(model, q.prompt, max_new_tokens));
    if (got && *got == *expected) ++correct;
  }
  return double(correct) / double(queries.size());
}

std::vector<Example> held_out_sum_queries(std::size_t n, std::uint64_t seed, std::span<const Example> exclude) {
  std::set<std::string> seen;
  for (const auto& e : exclude) seen.insert(e.prompt);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> operand(0, 99);
  std::vector<Example> out;
  for (std::size_t tries = 0; out.size() < n; ++tries) {
    if (tries > 100 * n + 10000) throw ContractError("held_out_sum_queries: operand space exhausted");
    Example e = make_sum_example(operand(rng), operand(rng));
    if (seen.insert(e.prompt).second) out.push_back(std::move(e));
  }
  return out;
}

ComparisonReport compare_models(const TransformerStack& donor, std::span<const Example> corpus,
                                const ExperimentConfig& config, const CompareOptions& options) {
  config.validate();
  if (options.variants.empty()) throw ContractError("compare_models: no variants requested");
  const TrainConfig& tc = config.train;
  const std::size_t limit = std::min(tc.max_tokens, std::size_t(config.receiver.max_len));
  FilterResult filtered = filter_by_length(corpus, limit);
  if (filtered.kept.size() < 2)
    throw ContractError("compare_models: need at least two examples within " + std::to_string(limit) + " tokens");
  const Split split = split_train_val(filtered.kept, tc.val_fraction, tc.seed);

  ComparisonReport report;
  report.train_examples = split.train.size();
  report.val_examples = split.val.size();
  report.dropped = filtered.dropped;
  report.accuracy_queries = options.accuracy_queries.size();

  for (Variant v : options.variants) {
    switch (v) {
      case Variant::donor_only: {
        StackModel model(donor.clone(), "donor");
        freeze(model.stack(), FreezeSelector::all);
        report.rows.push_back(finish_row(v, model, nullptr, split.val, tc, options));
        break;
      }
      case Variant::receiver_clean: {
        StackModel model(TransformerStack(receiver_stack_config(config), tc.seed + 1));
        const TrainState st = train(model, split.train, split.val, tc);
        report.rows.push_back(finish_row(v, model, &st, split.val, tc, options));
        break;
      }
      case Variant::receiver_finetuned: {
        StackModel model(TransformerStack(receiver_stack_config(config), tc.seed + 1));
        TrainConfig pre = tc;
        pre.epochs = options.finetune_pretrain_epochs;
        TrainOptions lm;
        lm.scope = LabelScope::full_sequence;
        lm.restore_best = false;
        if (pre.epochs > 0) train(model, split.train, {}, pre, lm);
        const TrainState st = train(model, split.train, split.val, tc);
        report.rows.push_back(finish_row(v, model, &st, split.val, tc, options));
        break;
      }
      case Variant::combined: {
        CombinedModel model(donor.clone(), config.receiver, config.bridge, tc.seed);
        const TrainState st = train(model, split.train, split.val, tc);
        report.rows.push_back(finish_row(v, model, &st, split.val, tc, options));
        break;
      }
    }
  }
  return report;
}

std::string to_markdown(const ComparisonReport& report) {
  std::ostringstream os;
  os << "# Model comparison\n\n";
  os << "train examples: " << report.train_examples << ", validation examples: " << report.val_examples
     << ", dropped by length filter: " << report.dropped << "\n\n";
  os << "| variant | steps | initial loss | train loss | val loss | perplexity | accuracy |\n";
  os << "|---|---:|---:|---:|---:|---:|---:|\n";
  for (const auto& r : report.rows) {
    os << "| " << variant_name(r.variant) << " | " << r.steps << " | " << fmt(r.initial_loss) << " | "
       << fmt(r.train_loss) << " | " << fmt(r.val_loss) << " | " << fmt(r.perplexity, 3) << " | "
       << (r.accuracy ? fmt(*r.accuracy, 3) : std::string("-")) << " |\n";
  }
  os << "\n## Sample generations\n\n| variant | query | response |\n|---|---|---|\n";
  for (const auto& r : report.rows)
    for (const auto& s : r.samples)
      os << "| " << variant_name(r.variant) << " | " << escape_cell(s.query) << " | " << escape_cell(s.response)
         << " |\n";
  return os.str();
}

nlohmann::json to_json(const ComparisonReport& report) {
  nlohmann::json j;
  j["train_examples"] = report.train_examples;
  j["val_examples"] = report.val_examples;
  j["dropped"] = report.dropped;
  j["accuracy_queries"] = report.accuracy_queries;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : report.rows) {
    nlohmann::json row;
    row["variant"] = variant_name(r.variant);
    row["steps"] = r.steps;
    row["initial_loss"] = number_or_null(r.initial_loss);
    row["train_loss"] = number_or_null(r.train_loss);
    row["val_loss"] = number_or_null(r.val_loss);
    row["perplexity"] = number_or_null(r.perplexity);
    row["accuracy"] = r.accuracy ? nlohmann::json(*r.accuracy) : nlohmann::json(nullptr);
    row["history"] = nlohmann::json::array();
    for (const auto& e : r.history)
      row["history"].push_back({{"epoch", e.epoch},
                                {"train_loss", number_or_null(e.train_loss)},
                                {"val_loss", number_or_null(e.val_loss)},
                                {"steps", e.steps}});
    row["samples"] = nlohmann::json::array();
    for (const auto& s : r.samples) row["samples"].push_back({{"query", s.query}, {"response", s.response}});
    j["rows"].push_back(std::move(row));
  }
  return j;
}

}  // namespace xabr
