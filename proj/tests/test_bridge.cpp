#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "xabr/bridge.hpp"
#include "xabr/errors.hpp"
#include "xabr/gradcheck.hpp"

using namespace xabr;

namespace {

BridgeConfig config_for(std::size_t d_recv, std::size_t d_adapter = 2, std::size_t heads = 2) {
  BridgeConfig c;
  c.placement = {0};
  c.d_adapter = d_adapter;
  c.n_bridge_heads = heads;
  return c;
}

void set(Tensor t, std::vector<Scalar> values) {
  ASSERT_EQ(t.numel(), values.size());
  std::ranges::copy(values, t.mutable_data().begin());
}

void fill(Tensor t, Scalar value) {
  for (auto& x : t.mutable_data()) x = value;
}

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  std::vector<Scalar> v(shape_numel(shape));
  for (auto& x : v) x = Scalar(d(rng));
  return Tensor(std::move(shape), std::move(v));
}

double gelu_ref(double x) {
  return 0.5 * x * (1 + std::tanh(std::sqrt(2 / M_PI) * (x + 0.044715 * x * x * x)));
}

}  // namespace

TEST(BridgeConfig, Validation) {
  EXPECT_NO_THROW(config_for(8).validate(2, 8));
  EXPECT_THROW(config_for(8, 8).validate(2, 8), ConfigError);  // not a bottleneck
  EXPECT_THROW(config_for(8, 2, 3).validate(2, 8), ConfigError);
  BridgeConfig c = config_for(8);
  c.placement = {2};
  EXPECT_THROW(c.validate(2, 8), ConfigError);
  c.placement = {1, 0};
  EXPECT_THROW(c.validate(2, 8), ConfigError);
}

TEST(BridgeLayer, AllParametersTrainable) {
  std::mt19937_64 rng(1);
  BridgeLayer layer(8, 4, config_for(4), rng);
  for (const auto& p : layer.parameters()) EXPECT_TRUE(p.tensor.requires_grad()) << p.name;
}

TEST(ProjectDonor, IdentityWeights) {
  std::mt19937_64 rng(2);
  BridgeLayer layer(3, 3, config_for(3, 1, 1), rng);
  set(layer.proj_w, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor h = random_tensor({4, 3}, 3);
  const Tensor out = project_donor(layer, h);
  for (std::size_t i = 0; i < h.numel(); ++i) EXPECT_EQ(out.at(i), h.at(i));
}

TEST(ProjectDonor, WidthContract) {
  std::mt19937_64 rng(4);
  BridgeLayer layer(64, 32, config_for(32), rng);
  for (std::size_t m : {1u, 5u, 96u}) EXPECT_EQ(project_donor(layer, random_tensor({m, 64}, m)).shape(), (Shape{m, 32}));
  EXPECT_THROW(project_donor(layer, random_tensor({2, 32}, 5)), DimensionError);
}

TEST(Adapter, ZeroUpIsIdentity) {
  std::mt19937_64 rng(6);
  BridgeLayer layer(4, 4, config_for(4), rng);
  const Tensor x = random_tensor({3, 4}, 7);
  const Tensor out = adapter_transform(layer, x);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(out.at(i), x.at(i));
}

TEST(Adapter, HandComputedSingleUnit) {
  std::mt19937_64 rng(8);
  BridgeLayer layer(2, 2, config_for(2, 1, 1), rng);
  set(layer.adapter_down, {0.5f, -1});
  set(layer.adapter_down_b, {0.25f});
  set(layer.adapter_up, {2, -3});
  set(layer.adapter_up_b, {0.1f, 0.2f});
  const Tensor x({1, 2}, {1.5f, 0.5f});
  const double hidden = gelu_ref(1.5 * 0.5 + 0.5 * -1 + 0.25);
  const Tensor out = adapter_transform(layer, x);
  EXPECT_NEAR(out.at(0), 1.5 + hidden * 2 + 0.1, 1e-5);
  EXPECT_NEAR(out.at(1), 0.5 + hidden * -3 + 0.2, 1e-5);
}

TEST(CrossAttend, SingleMemorySlotGetsAllWeight) {
  std::mt19937_64 rng(9);
  BridgeLayer layer(4, 4, config_for(4), rng);
  AttentionProbs probs;
  cross_attend(layer, random_tensor({3, 4}, 10), random_tensor({1, 4}, 11), {}, &probs);
  EXPECT_EQ(probs.shape, (Shape{1, 2, 3, 1}));
  for (auto p : probs.values) EXPECT_EQ(p, 1);
}

TEST(CrossAttend, MaskedRowDoesNotMatter) {
  std::mt19937_64 rng(12);
  BridgeLayer layer(4, 4, config_for(4), rng);
  fill(layer.wo, 0.3f);
  const Tensor h = random_tensor({2, 4}, 13);
  Tensor mem_a = random_tensor({5, 4}, 14), mem_b = random_tensor({5, 4}, 14);
  for (std::size_t c = 0; c < 4; ++c) mem_b.mutable_data()[2 * 4 + c] = Scalar(100 + c);
  MemoryMask mask;
  mask.pad = {0, 0, 1, 0, 0};
  const Tensor a = cross_attend(layer, h, mem_a, mask), b = cross_attend(layer, h, mem_b, mask);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.at(i), b.at(i));
  const Tensor c = cross_attend(layer, h, mem_b, {});
  bool differs = false;
  for (std::size_t i = 0; i < a.numel(); ++i) differs |= a.at(i) != c.at(i);
  EXPECT_TRUE(differs);
}

TEST(CrossAttend, QueryAndMemoryLengthsIndependent) {
  std::mt19937_64 rng(15);
  BridgeLayer layer(8, 8, config_for(8), rng);
  EXPECT_EQ(cross_attend(layer, random_tensor({4, 8}, 16), random_tensor({7, 8}, 17), {}).shape(), (Shape{4, 8}));
  EXPECT_EQ(cross_attend(layer, random_tensor({7, 8}, 18), random_tensor({2, 8}, 19), {}).shape(), (Shape{7, 8}));
}

TEST(CrossAttend, FullyMaskedMemoryIsContractError) {
  std::mt19937_64 rng(20);
  BridgeLayer layer(4, 4, config_for(4), rng);
  MemoryMask mask;
  mask.pad = {1, 1, 1};
  EXPECT_THROW(cross_attend(layer, random_tensor({2, 4}, 21), random_tensor({3, 4}, 22), mask), ContractError);
}

TEST(CrossAttend, CausalOffsetLimitsVisibleMemory) {
  std::mt19937_64 rng(23);
  BridgeLayer layer(4, 4, config_for(4), rng);
  MemoryMask mask;
  mask.causal_offset = 2;
  AttentionProbs probs;
  cross_attend(layer, random_tensor({3, 4}, 24), random_tensor({5, 4}, 25), mask, &probs);
  // [B=1, heads=2, n=3, m=5]: query i sees memory j <= i + 2
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        const Scalar p = probs.values[(h * 3 + i) * 5 + j];
        if (j > i + 2)
          EXPECT_EQ(p, 0);
        else
          EXPECT_GT(p, 0);
      }
}

TEST(GatedBlend, ClosedGateReturnsSelf) {
  std::mt19937_64 rng(26);
  BridgeLayer layer(4, 4, config_for(4), rng);
  fill(layer.gate_w, 0);
  fill(layer.gate_b, Scalar(-1e9));
  const Tensor self = random_tensor({3, 4}, 27), ext = random_tensor({3, 4}, 28);
  const Tensor out = gated_blend(layer, self, ext);
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_EQ(out.at(i), self.at(i));
}

TEST(GatedBlend, HalfGateAverages) {
  std::mt19937_64 rng(29);
  BridgeLayer layer(4, 4, config_for(4), rng);
  fill(layer.gate_w, 0);
  fill(layer.gate_b, 0);
  const Tensor self = random_tensor({3, 4}, 30), ext = random_tensor({3, 4}, 31);
  const Tensor out = gated_blend(layer, self, ext);
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_NEAR(out.at(i), (self.at(i) + ext.at(i)) / 2, 1e-6);
}

TEST(GatedBlend, EqualInputsPassThroughForAnyGate) {
  std::mt19937_64 rng(32);
  BridgeLayer layer(4, 4, config_for(4), rng);
  fill(layer.gate_w, 0.7f);
  const Tensor h = random_tensor({3, 4}, 33);
  const Tensor out = gated_blend(layer, h, h);
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_EQ(out.at(i), h.at(i));
}

TEST(GatedBlend, ShapeMismatchIsDimensionError) {
  std::mt19937_64 rng(34);
  BridgeLayer layer(4, 4, config_for(4), rng);
  EXPECT_THROW(gated_blend(layer, random_tensor({3, 4}, 1), random_tensor({2, 4}, 2)), DimensionError);
}

TEST(GateValues, StrictlyInsideUnitIntervalForModerateInputs) {
  std::mt19937_64 rng(35);
  BridgeLayer layer(8, 8, config_for(8), rng);
  const Tensor g = gate_values(layer, random_tensor({6, 8}, 36), random_tensor({6, 8}, 37));
  for (auto v : g.data()) {
    EXPECT_GT(v, 0);
    EXPECT_LT(v, 1);
  }
}

TEST(BridgeForward, ZeroInitIsTransparent) {
  std::mt19937_64 rng(38);
  BridgeLayer layer(8, 4, config_for(4), rng);
  const Tensor h = random_tensor({2, 3, 4}, 39);
  MemoryMask mask;
  mask.causal_offset = 1;
  const Tensor out = bridge_forward(layer, h, random_tensor({2, 4, 8}, 40), mask);
  for (std::size_t i = 0; i < h.numel(); ++i) EXPECT_EQ(out.at(i), h.at(i));
}

TEST(BridgeForward, GradientReachesEveryBridgeParameter) {
  std::mt19937_64 rng(41);
  BridgeLayer layer(8, 4, config_for(4), rng);
  // Move off the zero init so no parameter sits behind a zero product.
  fill(layer.wo, 0.1f);
  fill(layer.adapter_up, 0.1f);
  const Tensor h = random_tensor({3, 4}, 42), donor = random_tensor({5, 8}, 43);
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum(mul(bridge_forward(layer, h, donor, {}), random_tensor({3, 4}, 44))));
  }
  for (const auto& p : layer.parameters()) {
    ASSERT_TRUE(p.tensor.has_grad()) << p.name;
    double norm = 0;
    for (auto g : p.tensor.grad()) norm += std::abs(g);
    EXPECT_GT(norm, 0) << p.name;
  }
}

TEST(Gradcheck, BridgeSuitePasses) {
  for (const auto& r : run_gradcheck_suite("bridge")) EXPECT_TRUE(r.passed) << r.name << " " << r.max_rel_error;
}
