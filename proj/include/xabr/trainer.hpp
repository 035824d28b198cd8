#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "xabr/combined.hpp"
#include "xabr/config.hpp"
#include "xabr/data.hpp"
#include "xabr/optim.hpp"

namespace xabr {

struct EpochRecord {
  std::size_t epoch = 0;     // 1-based
  double train_loss = 0;     // mean batch loss over the epoch
  double val_loss = 0;       // NaN when there is no validation set
  std::size_t steps = 0;     // optimizer steps taken in this epoch
};

struct TrainState {
  OptimizerState optimizer;
  double initial_loss = 0;   // loss of the very first batch, before any update
  double best_val_loss = 0;
  std::size_t best_epoch = 0;
  std::size_t epochs_since_improvement = 0;
  std::vector<EpochRecord> history;
  bool stopped_early = false;
  bool hit_step_limit = false;
};

struct TrainOptions {
  LabelScope scope = LabelScope::response_only;
  std::size_t max_steps = 0;  // 0 = no limit
  // Called after every optimizer step with the global step and batch loss.
  // Returning false stops training after the current step.
  std::function<bool(std::uint64_t step, double loss)> on_step;
  // Copy the best-validation parameters back when training ends.
  bool restore_best = true;
};

// Epoch loop: seeded shuffle, batches, forward, loss, backward, clip, AdamW.
// Validation after every epoch drives early stopping. An empty validation
// set disables early stopping.
TrainState train(LanguageModel& model, std::span<const Example> train_set, std::span<const Example> val_set,
                 const TrainConfig& config, const TrainOptions& options = {});

struct CorpusRun {
  TrainState state;
  Split split;
  std::size_t dropped = 0;
};

// Filters by min(max_tokens, model.max_train_length()), splits and trains.
// Throws ContractError when nothing survives the filter.
CorpusRun train_on_corpus(LanguageModel& model, std::span<const Example> corpus, const TrainConfig& config,
                          const TrainOptions& options = {});

struct EvalResult {
  double mean_loss = 0;
  double perplexity = 0;
  std::size_t tokens = 0;
};

// Token-weighted mean cross-entropy without recording gradients.
EvalResult eval_perplexity(const LanguageModel& model, std::span<const Example> corpus, std::size_t batch_size = 16,
                           LabelScope scope = LabelScope::response_only);

// Mean cross-entropy of one collated batch, recorded on the active tape.
Tensor batch_loss(const LanguageModel& model, const TokenBatch& batch);

}  // namespace xabr
