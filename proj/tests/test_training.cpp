#include <gtest/gtest.h>

#include <cmath>

#include "xabr/checkpoint.hpp"
#include "xabr/compare.hpp"
#include "xabr/errors.hpp"
#include "xabr/loss.hpp"
#include "xabr/trainer.hpp"

using namespace xabr;

namespace {

StackConfig stack_cfg(std::size_t layers, std::size_t d, std::size_t max_len = 96) {
  return StackConfig{layers, d, 2, 4 * d, 259, max_len};
}

CombinedModel small_combined(std::uint64_t seed = 3) {
  const StackConfig recv = stack_cfg(1, 16);
  return CombinedModel(TransformerStack(stack_cfg(1, 16, 128), 1), recv, BridgeConfig::defaults_for(recv), seed);
}

TrainConfig quick_config() {
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 4;
  tc.lr_bridge = 2e-3;
  tc.lr_receiver = 1e-3;
  tc.seed = 5;
  return tc;
}

void give_grad(Tensor t, Scalar value) {
  t.clear_grad();
  std::vector<Scalar> g(t.numel(), value);
  t.impl()->accumulate_grad(g);
}

std::uint64_t frozen_checksum(const CombinedModel& m) {
  auto params = m.donor.parameters();
  for (const auto& p : m.receiver.parameters())
    if (m.receiver.is_frozen(p.name)) params.push_back(p);
  return parameter_checksum(params);
}

}  // namespace

TEST(AdamW, ClosedFormFirstStep) {
  for (const auto& [wd, want] : {std::pair{0.0, 0.9}, std::pair{0.01, 0.899}}) {
    Tensor theta({1, 1}, {1}, true);
    give_grad(theta, 1);
    std::vector<ParamGroup> groups{{"receiver", 0.1, {{"w", theta}}}};
    OptimizerState state;
    adamw_step(state, groups, AdamWHyper{0.9, 0.999, 1e-8, wd});
    EXPECT_NEAR(theta.item(), want, 1e-6) << "wd " << wd;
    EXPECT_EQ(state.step, 1u);
    EXPECT_FALSE(theta.has_grad());  // cleared after the step
  }
}

TEST(AdamW, NoDecayOnBiasesGainsAndEmbeddings) {
  const Tensor m({2, 2}, std::vector<Scalar>(4)), v({2}, std::vector<Scalar>(2));
  EXPECT_TRUE(decays({"layers.0.attn.wq", m}));
  EXPECT_FALSE(decays({"ln_f.bias", v}));
  EXPECT_FALSE(decays({"tok_emb", m}));
  EXPECT_FALSE(decays({"receiver.pos_emb", m}));
}

TEST(AdamW, MissingGradientNamesParameter) {
  Tensor a({1}, {1}, true), b({1}, {1}, true);
  give_grad(a, 1);
  std::vector<ParamGroup> groups{{"receiver", 0.1, {{"first", a}, {"second", b}}}};
  OptimizerState state;
  try {
    adamw_step(state, groups, {});
    FAIL() << "expected ContractError";
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("second"), std::string::npos);
  }
  EXPECT_EQ(a.item(), 1);  // nothing updated
}

TEST(ParamGroups, LearningRatesFollowGroup) {
  CombinedModel m = small_combined();
  TrainConfig tc;
  tc.lr_bridge = 1e-2;
  tc.lr_receiver = 1e-3;
  auto groups = make_param_groups(m, tc);
  ASSERT_EQ(groups.size(), 2u);
  std::map<std::string, std::vector<Scalar>> before;
  for (auto& g : groups)
    for (auto& p : g.params) {
      before[p.name].assign(p.tensor.data().begin(), p.tensor.data().end());
      give_grad(p.tensor, 1);
    }
  OptimizerState state;
  adamw_step(state, groups, AdamWHyper{0.9, 0.999, 1e-8, 0.0});
  for (const auto& g : groups) {
    const double lr = g.name == "bridge" ? tc.lr_bridge : tc.lr_receiver;
    for (const auto& p : g.params)
      for (std::size_t i = 0; i < p.tensor.numel(); ++i)
        ASSERT_NEAR(before[p.name][i] - p.tensor.at(i), lr, lr * 1e-3) << p.name;
  }
}

TEST(ParamGroups, FrozenParametersInNoGroup) {
  const CombinedModel m = small_combined();
  for (const auto& g : make_param_groups(m, TrainConfig{}))
    for (const auto& p : g.params) EXPECT_FALSE(m.is_frozen(p.name)) << p.name;
}

TEST(ClipGradNorm, ScalesToMaxNorm) {
  Tensor a({2}, {0, 0}, true);
  give_grad(a, 3);  // norm 3·√2
  std::vector<ParamGroup> groups{{"receiver", 0.1, {{"a", a}}}};
  const double norm = clip_grad_norm(groups, 1.0);
  EXPECT_NEAR(norm, 3 * std::sqrt(2.0), 1e-5);
  EXPECT_NEAR(std::hypot(a.grad()[0], a.grad()[1]), 1.0, 1e-5);
}

TEST(Train, FreezingHoldsAcrossSteps) {
  CombinedModel m = small_combined();
  const auto before = frozen_checksum(m);
  const auto bridges_before = parameter_checksum(m.bridge_parameters());
  TrainOptions opts;
  opts.max_steps = 10;
  train(m, gen_synthetic(40, 1), {}, quick_config(), opts);
  EXPECT_EQ(frozen_checksum(m), before);
  EXPECT_NE(parameter_checksum(m.bridge_parameters()), bridges_before);
}

TEST(Train, DeterministicHistory) {
  const auto data = gen_synthetic(24, 2), val = gen_synthetic(8, 3);
  std::vector<double> runs[2];
  for (auto& r : runs) {
    CombinedModel m = small_combined();
    for (const auto& e : train(m, data, val, quick_config()).history) {
      r.push_back(e.train_loss);
      r.push_back(e.val_loss);
    }
  }
  EXPECT_EQ(runs[0], runs[1]);
}

TEST(Train, EarlyStopAfterPatienceEpochsWithoutImprovement) {
  CombinedModel m = small_combined();
  TrainConfig tc = quick_config();
  tc.epochs = 10;
  tc.patience = 2;
  tc.min_delta = 1e9;  // nothing after the first epoch counts as improvement
  const auto state = train(m, gen_synthetic(8, 4), gen_synthetic(4, 5), tc);
  EXPECT_TRUE(state.stopped_early);
  EXPECT_EQ(state.history.size(), 3u);
  EXPECT_EQ(state.best_epoch, 1u);
}

TEST(Train, RestoresBestParameters) {
  CombinedModel m = small_combined();
  TrainConfig tc = quick_config();
  tc.epochs = 3;
  tc.patience = 5;
  tc.min_delta = 1e9;
  const auto val = gen_synthetic(4, 7);
  const auto state = train(m, gen_synthetic(8, 6), val, tc);
  ASSERT_EQ(state.best_epoch, 1u);
  EXPECT_DOUBLE_EQ(eval_perplexity(m, val, tc.batch_size).mean_loss, state.history[0].val_loss);
}

TEST(Train, EmptyCorpusAfterFilterIsContractError) {
  CombinedModel m = small_combined();
  TrainConfig tc = quick_config();
  tc.max_tokens = 5;
  EXPECT_THROW(train_on_corpus(m, gen_synthetic(10, 1), tc), ContractError);
  EXPECT_THROW(train(m, std::vector<Example>{}, {}, tc), ContractError);
}

TEST(Train, StepLimitAndCallback) {
  CombinedModel m = small_combined();
  std::vector<std::uint64_t> steps;
  TrainOptions opts;
  opts.max_steps = 3;
  opts.on_step = [&](std::uint64_t s, double) {
    steps.push_back(s);
    return true;
  };
  const auto state = train(m, gen_synthetic(40, 1), {}, quick_config(), opts);
  EXPECT_EQ(steps, (std::vector<std::uint64_t>{1, 2, 3}));
  EXPECT_TRUE(state.hit_step_limit);
}

TEST(Loss, InvariantToExtraPadColumns) {
  CombinedModel m = small_combined();
  for (auto& b : m.bridges)
    for (auto& x : b.wo.mutable_data()) x = 0.05f;
  const auto data = gen_synthetic(4, 8);
  TokenBatch batch = collate(data, ByteTokenizer{});
  const double base = batch_loss(m, batch).item();
  TokenBatch wide = batch;
  wide.cols = batch.cols + 3;
  wide.ids.clear();
  wide.pad_mask.clear();
  wide.labels.clear();
  for (std::size_t r = 0; r < batch.rows; ++r)
    for (std::size_t t = 0; t < wide.cols; ++t) {
      const bool old = t < batch.cols;
      wide.ids.push_back(old ? batch.ids[r * batch.cols + t] : ByteTokenizer::kPad);
      wide.pad_mask.push_back(old ? batch.pad_mask[r * batch.cols + t] : 1);
      wide.labels.push_back(old ? batch.labels[r * batch.cols + t] : kIgnoreLabel);
    }
  EXPECT_NEAR(batch_loss(m, wide).item(), base, 1e-5);
}

TEST(Eval, UniformModelGivesLogVocab) {
  StackModel model(TransformerStack(stack_cfg(1, 8), 1));
  for (auto& x : model.stack().lm_head.mutable_data()) x = 0;
  const auto data = gen_synthetic(10, 9);
  const EvalResult r = eval_perplexity(model, data, 4);
  EXPECT_NEAR(r.mean_loss, std::log(259.0), 1e-5);
  EXPECT_DOUBLE_EQ(r.perplexity, std::exp(r.mean_loss));
  const EvalResult again = eval_perplexity(model, data, 4);
  EXPECT_EQ(again.mean_loss, r.mean_loss);
  EXPECT_THROW(eval_perplexity(model, std::vector<Example>{}), ContractError);
}

TEST(Config, DefaultsAndOverrides) {
  const ExperimentConfig d = parse_config(nlohmann::json::object());
  EXPECT_EQ(d.train.epochs, 15u);
  EXPECT_DOUBLE_EQ(d.train.lr_bridge, 1e-4);
  EXPECT_DOUBLE_EQ(d.train.lr_receiver, 5e-5);
  const ExperimentConfig c = parse_config(
      nlohmann::json::parse(R"({"receiver": {"d_model": 16, "n_heads": 2}, "train.patience": 5})"));
  EXPECT_EQ(c.receiver.d_model, 16u);
  EXPECT_EQ(c.train.patience, 5u);
  EXPECT_EQ(c.bridge.d_adapter, 4u);  // follows the receiver when not given
  EXPECT_EQ(parse_config(to_json(c)).receiver, c.receiver);
}

TEST(Config, Rejections) {
  EXPECT_THROW(parse_config(nlohmann::json::parse(R"({"train": {"momentum": 0.9}})")), ConfigError);
  EXPECT_THROW(parse_config(nlohmann::json::parse(R"({"donor.width": 3})")), ConfigError);
  EXPECT_THROW(parse_config(nlohmann::json::parse(R"({"train": {"lr_bridge": 0}})")), ConfigError);
  EXPECT_THROW(parse_config(nlohmann::json::parse(R"({"train": {"patience": 0}})")), ConfigError);
  EXPECT_THROW(parse_config(nlohmann::json::parse(R"({"train": {"epochs": "many"}})")), ConfigError);
  EXPECT_THROW(parse_config(nlohmann::json::parse(R"({"bridge": {"d_adapter": 64}})")), ConfigError);
}

TEST(Compare, AnswerExtraction) {
  EXPECT_EQ(extract_answer("5 + 5 = 10. The answer is 10."), 10);
  EXPECT_EQ(extract_answer("7 = 1*4 + 3. The remainder is 3."), 3);
  EXPECT_FALSE(extract_answer("no number here").has_value());
  EXPECT_FALSE(extract_answer("The answer is ?").has_value());
}

TEST(Compare, HeldOutQueriesAvoidExcluded) {
  const auto train = gen_synthetic(500, 1, TaskMix::sum);
  const auto held = held_out_sum_queries(100, 2, train);
  ASSERT_EQ(held.size(), 100u);
  for (const auto& h : held)
    for (const auto& t : train) ASSERT_NE(h.prompt, t.prompt);
}

TEST(Compare, OneRowPerVariantWithPaperQueries) {
  ExperimentConfig cfg;
  cfg.donor = stack_cfg(1, 16, 128);
  cfg.receiver = stack_cfg(1, 16, 96);
  cfg.bridge = BridgeConfig::defaults_for(cfg.receiver);
  cfg.train = quick_config();
  cfg.train.epochs = 1;
  CompareOptions opts;
  opts.max_new_tokens = 4;
  opts.finetune_pretrain_epochs = 1;
  opts.accuracy_queries = held_out_sum_queries(3, 1, {});
  const TransformerStack donor(cfg.donor, 1);
  const auto report = compare_models(donor, gen_synthetic(12, 1), cfg, opts);
  ASSERT_EQ(report.rows.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(report.rows[i].variant, kAllVariants[i]);
    ASSERT_EQ(report.rows[i].samples.size(), 2u);
    EXPECT_EQ(report.rows[i].samples[0].query, "sum of 5 and 5");
    EXPECT_EQ(report.rows[i].samples[1].query, "find the remainder by dividing 7 by 4");
    EXPECT_TRUE(report.rows[i].accuracy.has_value());
  }
  EXPECT_EQ(report.rows[0].steps, 0u);
  const auto md = to_markdown(report);
  EXPECT_NE(md.find("| combined |"), std::string::npos);
  EXPECT_EQ(to_json(report)["rows"].size(), 4u);

  opts.variants = {Variant::combined};
  EXPECT_EQ(compare_models(donor, gen_synthetic(12, 1), cfg, opts).rows.size(), 1u);
}
