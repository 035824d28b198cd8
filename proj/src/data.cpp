#include "xabr/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "xabr/errors.hpp"

namespace xabr {
namespace {

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

}  // namespace

EncodedExample encode_example(const Example& ex, const ByteTokenizer& tokenizer) {
  EncodedExample out;
  out.ids.push_back(ByteTokenizer::kBos);
  for (auto id : tokenizer.encode_bytes(ex.prompt)) out.ids.push_back(id);
  for (auto id : tokenizer.encode_bytes(kSeparator)) out.ids.push_back(id);
  out.response_start = out.ids.size();
  for (auto id : tokenizer.encode_bytes(ex.response)) out.ids.push_back(id);
  out.ids.push_back(ByteTokenizer::kEos);
  return out;
}

std::size_t encoded_length(const Example& ex) {
  return ex.prompt.size() + kSeparator.size() + ex.response.size() + 2;
}

std::vector<Example> parse_jsonl(std::istream& in) {
  std::vector<Example> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("line " + std::to_string(line_no) + ": malformed JSON: " + e.what(), line_no);
    }
    if (!obj.is_object()) throw SchemaError("line " + std::to_string(line_no) + ": expected a JSON object", line_no);
    Example ex;
    for (const char* field : {"prompt", "response"}) {
      auto it = obj.find(field);
      if (it == obj.end())
        throw SchemaError("line " + std::to_string(line_no) + ": missing field \"" + field + "\"", line_no);
      if (!it->is_string())
        throw SchemaError("line " + std::to_string(line_no) + ": field \"" + field + "\" must be a string", line_no);
      const auto value = it->get<std::string>();
      if (blank(value))
        throw SchemaError("line " + std::to_string(line_no) + ": field \"" + field + "\" is empty", line_no);
      (std::string_view(field) == "prompt" ? ex.prompt : ex.response) = value;
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<Example> load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open corpus " + path.string(), 0);
  return parse_jsonl(in);
}

void save_jsonl(const std::filesystem::path& path, std::span<const Example> examples) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& ex : examples) out << nlohmann::json{{"prompt", ex.prompt}, {"response", ex.response}}.dump() << '\n';
}

FilterResult filter_by_length(std::span<const Example> examples, std::size_t max_tokens) {
  if (max_tokens < 2) throw ContractError("filter_by_length: max_tokens must be >= 2");
  FilterResult r;
  for (const auto& ex : examples) {
    if (encoded_length(ex) <= max_tokens)
      r.kept.push_back(ex);
    else
      ++r.dropped;
  }
  return r;
}

Split split_train_val(std::span<const Example> examples, double val_fraction, std::uint64_t seed) {
  if (examples.size() < 2) throw ContractError("split_train_val: need at least 2 examples");
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw ContractError("split_train_val: val_fraction must lie in (0, 1)");
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const double raw = static_cast<double>(examples.size()) * val_fraction;
  std::size_t n_val = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  n_val = std::clamp<std::size_t>(n_val, 1, examples.size() - 1);
  Split s;
  for (std::size_t i = 0; i < order.size(); ++i) (i < n_val ? s.val : s.train).push_back(examples[order[i]]);
  return s;
}

TokenBatch collate(std::span<const Example> batch, const ByteTokenizer& tokenizer, LabelScope scope) {
  if (batch.empty()) throw ContractError("collate: empty batch");
  std::vector<EncodedExample> enc;
  std::size_t len = 0;
  for (const auto& ex : batch) {
    enc.push_back(encode_example(ex, tokenizer));
    len = std::max(len, enc.back().ids.size());
  }
  TokenBatch tb;
  tb.rows = batch.size();
  tb.cols = len;
  tb.ids.assign(tb.rows * len, ByteTokenizer::kPad);
  tb.pad_mask.assign(tb.rows * len, 1);
  tb.labels.assign(tb.rows * len, kIgnoreLabel);
  for (std::size_t r = 0; r < tb.rows; ++r) {
    const auto& e = enc[r];
    for (std::size_t t = 0; t < e.ids.size(); ++t) {
      tb.ids[r * len + t] = e.ids[t];
      tb.pad_mask[r * len + t] = 0;
      const std::size_t next = t + 1;
      if (next < e.ids.size() && (scope == LabelScope::full_sequence || next >= e.response_start))
        tb.labels[r * len + t] = e.ids[next];
    }
  }
  return tb;
}

Example make_sum_example(int a, int b) {
  const int c = a + b;
  std::ostringstream prompt, response;
  prompt << "sum of " << a << " and " << b;
  response << a << " + " << b << " = " << c << ". The answer is " << c << ".";
  return {prompt.str(), response.str()};
}

Example make_rem_example(int a, int b) {
  const int q = a / b, r = a % b;
  std::ostringstream prompt, response;
  prompt << "find the remainder by dividing " << a << " by " << b;
  response << a << " = " << q << "*" << b << " + " << r << ". The remainder is " << r << ".";
  return {prompt.str(), response.str()};
}

std::vector<Example> gen_synthetic(std::size_t n, std::uint64_t seed, TaskMix mix) {
  if (n < 1) throw ContractError("gen_synthetic: n must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> operand(0, 99), divisor(2, 9), coin(0, 1);
  std::vector<Example> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool use_sum = mix == TaskMix::sum || (mix == TaskMix::mixed && coin(rng) == 0);
    if (use_sum) {
      const int a = operand(rng), b = operand(rng);
      out.push_back(make_sum_example(a, b));
    } else {
      const int a = operand(rng), b = divisor(rng);
      out.push_back(make_rem_example(a, b));
    }
  }
  return out;
}

}  // namespace xabr
