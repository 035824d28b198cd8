#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "xabr/errors.hpp"
#include "xabr/gradcheck.hpp"
#include "xabr/loss.hpp"
#include "xabr/ops.hpp"

using namespace xabr;

namespace {

Tensor leaf(Shape shape, std::vector<Scalar> data) { return Tensor(std::move(shape), std::move(data), true); }

void expect_near(std::span<const Scalar> got, std::vector<double> want, double tol) {
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], tol) << "index " << i;
}

}  // namespace

TEST(Tensor, RejectsShapeDataMismatch) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<Scalar>(5)), DimensionError);
  EXPECT_THROW(Tensor({2, 0}, {}), DimensionError);
}

TEST(Tensor, NonGradTensorNeverAccumulates) {
  Tensor x({2}, {1, 2}, false);
  Tensor w = leaf({2}, {3, 4});
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum(mul(x, w)));
  }
  EXPECT_FALSE(x.has_grad());
  expect_near(w.grad(), {1, 2}, 0);
}

TEST(Autograd, SquareGradient) {
  Tensor x = leaf({1}, {3});
  Tape tape;
  TapeScope scope(tape);
  const Tensor y = mul(x, x);
  tape.backward(y);
  EXPECT_EQ(x.grad()[0], 6);
}

TEST(Autograd, SecondBackwardAccumulates) {
  Tensor x = leaf({1}, {3});
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(mul(x, x));
  }
  EXPECT_EQ(x.grad()[0], 12);
}

TEST(Autograd, NonScalarLossIsContractError) {
  Tensor x = leaf({2}, {1, 2});
  Tape tape;
  TapeScope scope(tape);
  const Tensor y = scale(x, 2);
  EXPECT_THROW(tape.backward(y), ContractError);
}

TEST(Autograd, NodesRecordedInTopologicalOrder) {
  Tensor a = leaf({2}, {1, 2}), b = leaf({2}, {3, 4});
  Tape tape;
  TapeScope scope(tape);
  const Tensor c = mul(a, b);
  const Tensor d = add(c, a);
  const Tensor e = sum(d);
  ASSERT_EQ(tape.size(), 3u);
  EXPECT_LT(*c.tape_id(), *d.tape_id());
  EXPECT_LT(*d.tape_id(), *e.tape_id());
  tape.backward(e);
  expect_near(a.grad(), {4, 5}, 0);
  expect_near(b.grad(), {1, 2}, 0);
}

TEST(Autograd, NoGradScopeRecordsNothing) {
  Tensor a = leaf({2}, {1, 2});
  Tape tape;
  TapeScope scope(tape);
  {
    NoGradScope off;
    const Tensor c = mul(a, a);
    EXPECT_FALSE(c.tape_id().has_value());
  }
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Ops, MatmulHandValues) {
  const Tensor a({2, 2}, {1, 2, 3, 4}), b({2, 1}, {1, 1});
  const Tensor c = matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  expect_near(c.data(), {3, 7}, 0);
  const Tensor eye({2, 2}, {1, 0, 0, 1});
  expect_near(matmul(a, eye).data(), {1, 2, 3, 4}, 0);
}

TEST(Ops, MatmulShapeMismatchNamesBothShapes) {
  const Tensor a({2, 3}, std::vector<Scalar>(6)), b({2, 2}, std::vector<Scalar>(4));
  try {
    matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2×3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2×2]"), std::string::npos) << msg;
  }
}

TEST(Ops, MatmulGradientOnRandom3x3) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> d;
  std::vector<Scalar> av(9), bv(9);
  for (auto& x : av) x = Scalar(d(rng));
  for (auto& x : bv) x = Scalar(d(rng));
  Tensor a = leaf({3, 3}, av), b = leaf({3, 3}, bv);
  GradCheckOptions o;
  o.tolerance = kDoubleEngine ? 1e-6 : 1e-3;
  const auto r = check_gradients("matmul", [&] { return sum(matmul(a, b)); }, {{"a", a}, {"b", b}}, o);
  EXPECT_TRUE(r.passed) << r.max_rel_error << " at " << r.worst;
}

TEST(Ops, SoftmaxExamples) {
  expect_near(softmax_lastdim(Tensor({4}, {1, 1, 1, 1})).data(), {0.25, 0.25, 0.25, 0.25}, 1e-7);
  expect_near(softmax_lastdim(Tensor({2}, {0, Scalar(std::log(3.0))})).data(), {0.25, 0.75}, 1e-6);
  const Tensor big = softmax_lastdim(Tensor({2}, {1000, 1000}));
  expect_near(big.data(), {0.5, 0.5}, 0);
}

TEST(Ops, LayerNormExamples) {
  const Tensor gain({3}, {1, 1, 1}), bias({3}, {0, 0, 0});
  expect_near(layer_norm(Tensor({3}, {5, 5, 5}), gain, bias).data(), {0, 0, 0}, 0);
  expect_near(layer_norm(Tensor({3}, {1, 2, 3}), gain, bias, 0).data(), {-1.22474, 0, 1.22474}, 1e-5);
}

TEST(Ops, LayerNormGradient) {
  Tensor x = leaf({2, 5}, {0.3f, -1.2f, 2.0f, 0.7f, -0.4f, 1.5f, 0.1f, -0.9f, 0.2f, 1.1f});
  const Tensor gain({5}, {1.0f, 0.5f, -1.5f, 2.0f, 0.8f}), bias({5}, {0, 0.1f, 0, -0.2f, 0});
  const Tensor w({2, 5}, {1, -2, 3, 0.5f, -1, 2, 1, -1, 0.3f, 1.7f});
  GradCheckOptions o;
  o.tolerance = kDoubleEngine ? 1e-6 : 1e-3;
  const auto r =
      check_gradients("layer_norm", [&] { return sum(mul(layer_norm(x, gain, bias), w)); }, {{"x", x}}, o);
  EXPECT_TRUE(r.passed) << r.max_rel_error << " at " << r.worst;
}

TEST(Ops, GeluExamples) {
  EXPECT_EQ(gelu(Tensor({1}, {0})).item(), 0);
  EXPECT_NEAR(gelu(Tensor({1}, {10})).item(), 10, 1e-4);
}

TEST(Ops, GeluGradientAtSamplePoints) {
  Tensor x = leaf({4}, {-2, -0.5f, 0.5f, 2});
  GradCheckOptions o;
  o.tolerance = kDoubleEngine ? 1e-6 : 1e-3;
  const auto r = check_gradients("gelu", [&] { return sum(gelu(x)); }, {{"x", x}}, o);
  EXPECT_TRUE(r.passed) << r.max_rel_error << " at " << r.worst;
}

TEST(Ops, EmbeddingLookup) {
  Tensor table = leaf({2, 2}, {1, 2, 3, 4});
  const std::vector<std::int32_t> first{0};
  expect_near(embedding_lookup(table, first).data(), {1, 2}, 0);

  const std::vector<std::int32_t> repeated{1, 1};
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum(embedding_lookup(table, repeated)));
  }
  expect_near(table.grad(), {0, 0, 2, 2}, 0);
}

TEST(Ops, EmbeddingOutOfRangeNamesId) {
  const Tensor table({2, 2}, {1, 2, 3, 4});
  const std::vector<std::int32_t> bad{0, 2};
  try {
    embedding_lookup(table, bad);
    FAIL() << "expected IndexError";
  } catch (const IndexError& e) {
    EXPECT_NE(std::string(e.what()).find('2'), std::string::npos);
  }
  const std::vector<std::int32_t> negative{-1};
  EXPECT_THROW(embedding_lookup(table, negative), IndexError);
}

TEST(Loss, UniformLogits) {
  const Tensor logits({1, 4}, {0, 0, 0, 0});
  const std::vector<std::int32_t> labels{2};
  EXPECT_NEAR(cross_entropy_loss(logits, labels).item(), std::log(4.0), 1e-6);
}

TEST(Loss, LargeMarginApproachesZero) {
  const std::vector<std::int32_t> labels{1};
  double previous = 1e9;
  for (Scalar margin : {1.0f, 5.0f, 20.0f, 80.0f}) {
    const double loss = cross_entropy_loss(Tensor({1, 3}, {0, margin, 0}), labels).item();
    EXPECT_LT(loss, previous);
    previous = loss;
  }
  EXPECT_LT(previous, 1e-6);
}

TEST(Loss, AllIgnoredIsContractError) {
  const Tensor logits({2, 3}, std::vector<Scalar>(6));
  const std::vector<std::int32_t> labels{-1, -1};
  EXPECT_THROW(cross_entropy_loss(logits, labels), ContractError);
}

TEST(Loss, GradientCheck) {
  Tensor logits = leaf({3, 5}, {0.1f, -0.4f, 1.2f, 0.3f, -2, 1, 0, 0.5f, -0.5f, 0.25f, 2, -1, 0.7f, 0.1f, -0.3f});
  const std::vector<std::int32_t> labels{2, -1, 0};
  GradCheckOptions o;
  o.tolerance = kDoubleEngine ? 1e-6 : 1e-3;
  const auto r = check_gradients("ce", [&] { return cross_entropy_loss(logits, labels); }, {{"logits", logits}}, o);
  EXPECT_TRUE(r.passed) << r.max_rel_error << " at " << r.worst;
}

TEST(Gradcheck, TensorAndLossSuitesPass) {
  for (const char* module : {"tensor", "loss"})
    for (const auto& r : run_gradcheck_suite(module)) EXPECT_TRUE(r.passed) << r.name << " " << r.max_rel_error;
}

TEST(Gradcheck, UnknownModuleIsConfigError) { EXPECT_THROW(run_gradcheck_suite("nope"), ConfigError); }

TEST(Gradcheck, DetectsAWrongGradient) {
  // Forward computes x², backward claims x.
  Tensor x = leaf({1}, {3});
  const auto wrong = [&] {
    return record_op("bad_square", {1}, {x.item() * x.item()}, {&x},
                     [x](const TensorImpl& out) mutable {
                       const Scalar g = out.grad[0] * x.item();
                       x.impl()->accumulate_grad(std::span<const Scalar>(&g, 1));
                     });
  };
  EXPECT_FALSE(check_gradients("bad", wrong, {{"x", x}}).passed);
}
