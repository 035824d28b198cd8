#include "xabr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "xabr/errors.hpp"
#include "xabr/loss.hpp"

namespace xabr {
namespace {

std::vector<std::vector<Scalar>> snapshot(const std::vector<NamedParam>& params) {
  std::vector<std::vector<Scalar>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

void restore_snapshot(std::vector<NamedParam>& params, const std::vector<std::vector<Scalar>>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) std::ranges::copy(values[i], params[i].tensor.mutable_data().begin());
}

}  // namespace

Tensor batch_loss(const LanguageModel& model, const TokenBatch& batch) {
  const Tensor logits = model.logits(static_cast<const TokenGrid&>(batch));
  return cross_entropy_loss(logits, batch.labels, kIgnoreLabel);
}

TrainState train(LanguageModel& model, std::span<const Example> train_set, std::span<const Example> val_set,
                 const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  if (train_set.empty()) throw ContractError("train: empty training set");

  ByteTokenizer tokenizer;
  auto groups = make_param_groups(model, config);
  auto trainable = model.trainable_parameters();
  if (trainable.empty()) throw ContractError("train: model has no trainable parameters");
  const AdamWHyper hyper{config.beta1, config.beta2, config.eps, config.weight_decay};

  TrainState state;
  state.best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<std::vector<Scalar>> best;
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  bool first_batch = true;
  bool stop = false;

  for (std::size_t epoch = 1; epoch <= config.epochs && !stop; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch;
    Accum loss_sum = 0;
    for (std::size_t start = 0; start < order.size() && !stop; start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<Example> chunk;
      for (std::size_t i = start; i < end; ++i) chunk.push_back(train_set[order[i]]);
      const TokenBatch batch = collate(chunk, tokenizer, options.scope);

      Tape tape;
      double loss_value = 0;
      {
        TapeScope scope(tape);
        const Tensor loss = batch_loss(model, batch);
        loss_value = loss.item();
        tape.backward(loss);
      }
      if (first_batch) {
        state.initial_loss = loss_value;
        first_batch = false;
      }
      clip_grad_norm(groups, config.grad_clip);
      adamw_step(state.optimizer, groups, hyper);
      loss_sum += loss_value;
      ++rec.steps;

      if (options.on_step && !options.on_step(state.optimizer.step, loss_value)) stop = true;
      if (options.max_steps != 0 && state.optimizer.step >= options.max_steps) {
        state.hit_step_limit = true;
        stop = true;
      }
    }
    rec.train_loss = loss_sum / double(rec.steps);
    rec.val_loss = std::numeric_limits<double>::quiet_NaN();
    if (!val_set.empty()) {
      rec.val_loss = eval_perplexity(model, val_set, config.batch_size, options.scope).mean_loss;
      if (rec.val_loss < state.best_val_loss - config.min_delta) {
        state.best_val_loss = rec.val_loss;
        state.best_epoch = epoch;
        state.epochs_since_improvement = 0;
        if (options.restore_best) best = snapshot(trainable);
      } else if (++state.epochs_since_improvement >= config.patience) {
        state.stopped_early = true;
        stop = true;
      }
    }
    state.history.push_back(rec);
  }
  if (options.restore_best && !best.empty()) restore_snapshot(trainable, best);
  return state;
}

CorpusRun train_on_corpus(LanguageModel& model, std::span<const Example> corpus, const TrainConfig& config,
                          const TrainOptions& options) {
  const std::size_t limit = std::min(config.max_tokens, model.max_train_length());
  FilterResult filtered = filter_by_length(corpus, limit);
  if (filtered.kept.empty())
    throw ContractError("train: no example fits within " + std::to_string(limit) + " tokens");
  CorpusRun run;
  run.dropped = filtered.dropped;
  if (filtered.kept.size() == 1)
    run.split.train = filtered.kept;
  else
    run.split = split_train_val(filtered.kept, config.val_fraction, config.seed);
  run.state = train(model, run.split.train, run.split.val, config, options);
  return run;
}

EvalResult eval_perplexity(const LanguageModel& model, std::span<const Example> corpus, std::size_t batch_size,
                           LabelScope scope) {
  if (corpus.empty()) throw ContractError("eval_perplexity: empty corpus");
  if (batch_size == 0) batch_size = 1;
  NoGradScope no_grad;
  ByteTokenizer tokenizer;
  Accum total = 0;
  std::size_t tokens = 0;
  for (std::size_t start = 0; start < corpus.size(); start += batch_size) {
    const auto chunk = corpus.subspan(start, std::min(batch_size, corpus.size() - start));
    const TokenBatch batch = collate(chunk, tokenizer, scope);
    const std::size_t n = count_targets(batch.labels, kIgnoreLabel);
    if (n == 0) continue;
    total += batch_loss(model, batch).item() * double(n);
    tokens += n;
  }
  if (tokens == 0) throw ContractError("eval_perplexity: corpus has no target tokens");
  EvalResult r;
  r.tokens = tokens;
  r.mean_loss = total / double(tokens);
  r.perplexity = std::exp(r.mean_loss);
  return r;
}

}  // namespace xabr
