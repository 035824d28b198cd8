// Command-line front end: data generation, donor pretraining, bridged
// training, evaluation, generation, model comparison and gradient checks.
#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "xabr/checkpoint.hpp"
#include "xabr/compare.hpp"
#include "xabr/errors.hpp"
#include "xabr/gradcheck.hpp"
#include "xabr/trainer.hpp"

namespace {

using namespace xabr;

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitCheckpoint = 4;

struct DataProblem : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<Example> load_corpus(const std::string& path) {
  auto corpus = load_jsonl(path);
  if (corpus.empty()) throw DataProblem("corpus " + path + " has no examples");
  return corpus;
}

void require_fit(std::span<const Example> corpus, std::size_t limit, const std::string& path) {
  if (filter_by_length(corpus, limit).kept.empty())
    throw DataProblem("no example in " + path + " fits within " + std::to_string(limit) + " tokens");
}

void print_history(const TrainState& st) {
  std::printf("initial batch loss %.4f\n", st.initial_loss);
  for (const auto& e : st.history)
    std::printf("epoch %zu  steps %zu  train %.4f  val %.4f\n", e.epoch, e.steps, e.train_loss, e.val_loss);
  if (st.stopped_early) std::printf("early stop; best val %.4f at epoch %zu\n", st.best_val_loss, st.best_epoch);
}

StackConfig donor_stack_config(const ExperimentConfig& cfg) {
  StackConfig c = cfg.donor;
  c.vocab_size = ByteTokenizer::kVocabSize;
  return c;
}

TransformerStack pretrain(const ExperimentConfig& cfg, std::span<const Example> corpus, const std::string& data_path,
                          TrainConfig tc) {
  StackModel donor(TransformerStack(donor_stack_config(cfg), tc.seed), "donor");
  require_fit(corpus, std::min(tc.max_tokens, donor.max_train_length()), data_path);
  TrainOptions opts;
  opts.scope = LabelScope::full_sequence;
  const CorpusRun run = train_on_corpus(donor, corpus, tc, opts);
  print_history(run.state);
  return std::move(donor.stack());
}

int run_gen_data(std::size_t n, std::uint64_t seed, const std::string& task, const std::string& out) {
  const TaskMix mix = task == "sum" ? TaskMix::sum : task == "rem" ? TaskMix::rem : TaskMix::mixed;
  const auto examples = gen_synthetic(n, seed, mix);
  save_jsonl(out, examples);
  std::printf("wrote %zu examples to %s\n", examples.size(), out.c_str());
  return 0;
}

int run_pretrain(const std::string& config_path, const std::string& data, const std::string& out,
                 std::optional<double> lr, std::optional<std::size_t> epochs) {
  const ExperimentConfig cfg = load_config(config_path);
  TrainConfig tc = cfg.train;
  if (lr) tc.lr_receiver = *lr;
  if (epochs) tc.epochs = *epochs;
  tc.validate();
  const auto corpus = load_corpus(data);
  StackModel donor(pretrain(cfg, corpus, data, tc), "donor");
  save_checkpoint(out, donor, cfg);
  std::printf("saved donor to %s\n", out.c_str());
  return 0;
}

int run_train(const std::string& config_path, const std::string& data, const std::string& donor_ckpt,
              const std::string& out) {
  const ExperimentConfig cfg = load_config(config_path);
  TransformerStack donor = load_stack(donor_ckpt);
  StackConfig expected = donor_stack_config(cfg);
  if (!(donor.config() == expected))
    throw ConfigError("donor checkpoint " + donor_ckpt + " does not match the config's donor section");
  const auto corpus = load_corpus(data);
  CombinedModel model(std::move(donor), cfg.receiver, cfg.bridge, cfg.train.seed);
  require_fit(corpus, std::min(cfg.train.max_tokens, model.max_train_length()), data);
  const CorpusRun run = train_on_corpus(model, corpus, cfg.train);
  std::printf("train %zu  val %zu  dropped %zu\n", run.split.train.size(), run.split.val.size(), run.dropped);
  print_history(run.state);
  save_checkpoint(out, model, cfg, &run.state.optimizer);
  std::printf("saved combined model to %s\n", out.c_str());
  return 0;
}

int run_eval(const std::string& ckpt, const std::string& data) {
  const LoadedModel loaded = load_checkpoint(ckpt);
  const auto corpus = load_corpus(data);
  const std::size_t limit = std::min(loaded.config.train.max_tokens, loaded.model->max_train_length());
  const FilterResult kept = filter_by_length(corpus, limit);
  if (kept.kept.empty()) throw DataProblem("no example in " + data + " fits within " + std::to_string(limit) + " tokens");
  const EvalResult r = eval_perplexity(*loaded.model, kept.kept, loaded.config.train.batch_size);
  std::printf("examples %zu (dropped %zu)  tokens %zu  loss %.4f  perplexity %.4f\n", kept.kept.size(), kept.dropped,
              r.tokens, r.mean_loss, r.perplexity);
  return 0;
}

int run_generate(const std::string& ckpt, const std::string& prompt, std::size_t max_new, double temperature,
                 std::uint64_t seed) {
  const LoadedModel loaded = load_checkpoint(ckpt);
  ByteTokenizer tokenizer;
  GenerationParams params;
  params.max_new_tokens = max_new;
  params.temperature = temperature;
  params.seed = seed;
  const auto out = generate(*loaded.model, prompt_ids(tokenizer, prompt), params);
  std::printf("%s\n", tokenizer.detokenize(out).c_str());
  return 0;
}

int run_compare(const std::string& config_path, const std::string& data, const std::string& report_path,
                const std::string& donor_ckpt, std::size_t accuracy_queries, const std::vector<std::string>& variants) {
  const ExperimentConfig cfg = load_config(config_path);
  const auto corpus = load_corpus(data);
  require_fit(corpus, std::min<std::size_t>(cfg.train.max_tokens, cfg.receiver.max_len), data);
  CompareOptions opts;
  if (!variants.empty()) {
    opts.variants.clear();
    for (const auto& v : variants) opts.variants.push_back(parse_variant(v));
  }
  if (accuracy_queries > 0) opts.accuracy_queries = held_out_sum_queries(accuracy_queries, cfg.train.seed + 7, corpus);
  TransformerStack donor = donor_ckpt.empty() ? pretrain(cfg, corpus, data, cfg.train) : load_stack(donor_ckpt);
  const ComparisonReport report = compare_models(donor, corpus, cfg, opts);
  const std::string md = to_markdown(report);
  std::ofstream(report_path) << md;
  std::ofstream(report_path + ".json") << to_json(report).dump(2) << "\n";
  std::cout << md;
  return 0;
}

int run_gradcheck(const std::string& module) {
  bool ok = true;
  for (const auto& r : run_gradcheck_suite(module)) {
    std::printf("%-28s entries %6zu  max rel err %.3e  %s\n", r.name.c_str(), r.entries, r.max_rel_error,
                r.passed ? "ok" : ("FAIL at " + r.worst).c_str());
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bridged donor/receiver language models"};
  app.require_subcommand(1);

  std::size_t n = 1000;
  std::uint64_t seed = 0;
  std::string out, config, data, donor_ckpt, ckpt, prompt, report, module, task = "mixed";
  std::optional<double> lr;
  std::optional<std::size_t> epochs;
  std::size_t max_new = 64, accuracy = 0;
  double temperature = 0;
  std::vector<std::string> variants;

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic SUM/REM corpus as JSONL");
  gen->add_option("--n", n, "Number of examples")->check(CLI::PositiveNumber);
  gen->add_option("--seed", seed, "Generator seed");
  gen->add_option("--task", task, "sum, rem or mixed")->check(CLI::IsMember({"sum", "rem", "mixed"}));
  gen->add_option("--out", out, "Output path")->required();

  auto* pre = app.add_subcommand("pretrain-donor", "Train the donor as a plain language model");
  pre->add_option("--config", config)->required();
  pre->add_option("--data", data)->required();
  pre->add_option("--out", out)->required();
  pre->add_option("--lr", lr, "Learning rate (default train.lr_receiver)");
  pre->add_option("--epochs", epochs, "Epochs (default train.epochs)");

  auto* tr = app.add_subcommand("train", "Train bridges and receiver on top of a frozen donor");
  tr->add_option("--config", config)->required();
  tr->add_option("--data", data)->required();
  tr->add_option("--donor-ckpt", donor_ckpt)->required();
  tr->add_option("--out", out)->required();

  auto* ev = app.add_subcommand("eval", "Validation loss and perplexity of a checkpoint");
  ev->add_option("--ckpt", ckpt)->required();
  ev->add_option("--data", data)->required();

  auto* gn = app.add_subcommand("generate", "Complete a prompt");
  gn->add_option("--ckpt", ckpt)->required();
  gn->add_option("--prompt", prompt)->required();
  gn->add_option("--max-new", max_new)->check(CLI::PositiveNumber);
  gn->add_option("--temperature", temperature)->check(CLI::NonNegativeNumber);
  gn->add_option("--seed", seed);

  auto* cmp = app.add_subcommand("compare", "Train and compare donor, receiver and combined variants");
  cmp->add_option("--config", config)->required();
  cmp->add_option("--data", data)->required();
  cmp->add_option("--out-report", report, "Markdown report; a .json sidecar is written next to it")->required();
  cmp->add_option("--donor-ckpt", donor_ckpt, "Pretrained donor (default: pretrain on --data)");
  cmp->add_option("--accuracy-queries", accuracy, "Held-out SUM queries for answer accuracy");
  cmp->add_option("--variants", variants, "Subset of donor_only, receiver_clean, receiver_finetuned, combined");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gc->add_option("--module", module, "tensor, loss, transformer, bridge or combined (default: all)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*gen) return run_gen_data(n, seed, task, out);
    if (*pre) return run_pretrain(config, data, out, lr, epochs);
    if (*tr) return run_train(config, data, donor_ckpt, out);
    if (*ev) return run_eval(ckpt, data);
    if (*gn) return run_generate(ckpt, prompt, max_new, temperature, seed);
    if (*cmp) return run_compare(config, data, report, donor_ckpt, accuracy, variants);
    if (*gc) return run_gradcheck(module);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const SchemaError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const DataProblem& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "checkpoint error: %s\n", e.what());
    return kExitCheckpoint;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
