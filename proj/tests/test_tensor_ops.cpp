#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "test_support.hpp"
#include "trace/errors.hpp"
#include "trace/ops.hpp"

using namespace trace;
using trace::testing::check_gradients;
using trace::testing::random_tensor;
using trace::testing::weighted_sum;

namespace {

void expect_values(const Tensor& t, const std::vector<double>& expected, double tol = 0.0) {
  ASSERT_EQ(t.numel(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(t.data()[i], expected[i], tol) << i;
}

}  // namespace

TEST(Tensor, ConstructionChecksSize) {
  EXPECT_THROW(Tensor::from_vector({2, 2}, {1, 2, 3}), DimensionError);
  Tensor t = Tensor::full({2, 3}, 1.5);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(shape_string(t.shape()), "[2x3]");
  EXPECT_FALSE(t.requires_grad());
  EXPECT_TRUE(Tensor::parameter({2}, {1, 2}).has_grad());
}

TEST(Matmul, IdentityAndAnnihilation) {
  Tensor eye = Tensor::from_vector({2, 2}, {1, 0, 0, 1});
  Tensor m = Tensor::from_vector({2, 2}, {1, 2, 3, 4});
  expect_values(ops::matmul(eye, m), {1, 2, 3, 4});
  expect_values(ops::matmul(Tensor::from_vector({1, 2}, {1, 0}), Tensor::from_vector({2, 1}, {0, 5})),
                {0});
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL();
  } catch (const DimensionError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("[2x3]"), std::string::npos);
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  auto r = check_gradients([&] { return weighted_sum(ops::matmul(a, b)); }, {{"a", a}, {"b", b}});
  EXPECT_LT(r.max_relative_error, 1e-6) << r.worst;
}

TEST(Softmax, SymmetryAndStability) {
  expect_values(ops::softmax_rows(Tensor::zeros({3})), {1.0 / 3, 1.0 / 3, 1.0 / 3}, 1e-15);
  Tensor s = ops::softmax_rows(Tensor::from_vector({3}, {1000, 0, -1000}));
  EXPECT_NEAR(s.data()[0], 1.0, 1e-12);
  EXPECT_NEAR(s.data()[1], 0.0, 1e-12);
  EXPECT_TRUE(std::isfinite(s.data()[2]));
}

TEST(Softmax, RowsSumToOneAndArePositive) {
  std::mt19937_64 rng(2);
  Tensor x = random_tensor({6, 9}, rng, 5.0, false);
  Tensor s = ops::softmax_rows(x);
  for (std::size_t r = 0; r < 6; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < 9; ++c) {
      EXPECT_GT(s.data()[r * 9 + c], 0.0);
      total += s.data()[r * 9 + c];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Softmax, JacobianMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  Tensor x = random_tensor({2, 5}, rng);
  auto r = check_gradients([&] { return weighted_sum(ops::softmax_rows(x)); }, {{"x", x}});
  EXPECT_LT(r.max_relative_error, 1e-5);
}

TEST(MaskedSoftmax, MaskedKeysGetZeroWeight) {
  Tensor x = Tensor::from_vector({1, 2, 3}, {1, 2, 3, 4, 5, 6});
  std::vector<std::uint8_t> mask{1, 1, 0};
  Tensor s = ops::masked_softmax_rows(x, mask, 1);
  EXPECT_EQ(s.data()[2], 0.0);
  EXPECT_EQ(s.data()[5], 0.0);
  EXPECT_NEAR(s.data()[0] + s.data()[1], 1.0, 1e-15);
  std::vector<std::uint8_t> none{0, 0, 0};
  EXPECT_THROW(ops::masked_softmax_rows(x, none, 1), ContractError);
}

TEST(Elementwise, FixedPoints) {
  EXPECT_EQ(ops::tanh(Tensor::scalar(0.0)).item(), 0.0);
  EXPECT_EQ(ops::sigmoid(Tensor::scalar(0.0)).item(), 0.5);
  const double period = 24.0;
  EXPECT_NEAR(ops::sin(Tensor::scalar(2.0 * std::numbers::pi * 24.0 / period)).item(), 0.0, 1e-12);
}

TEST(Elementwise, BroadcastRules) {
  Tensor m = Tensor::from_vector({2, 3}, {1, 2, 3, 4, 5, 6});
  expect_values(ops::add(m, Tensor::from_vector({3}, {10, 20, 30})), {11, 22, 33, 14, 25, 36});
  expect_values(ops::mul(m, Tensor::scalar(2.0)), {2, 4, 6, 8, 10, 12});
  EXPECT_THROW(ops::add(m, Tensor::zeros({2})), DimensionError);
  EXPECT_THROW(ops::mul(Tensor::zeros({3}), m), DimensionError);
}

class ElementwiseGrad : public ::testing::TestWithParam<int> {};

TEST_P(ElementwiseGrad, EveryKindMatchesFiniteDifferences) {
  std::mt19937_64 rng(100 + GetParam());
  Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4}, rng), c = random_tensor({3, 4}, rng);
  const std::vector<std::pair<std::string, std::function<Tensor()>>> cases = {
      {"add", [&] { return ops::add(a, b); }},
      {"sub", [&] { return ops::sub(c, a); }},
      {"mul", [&] { return ops::mul(a, c); }},
      {"mul_row", [&] { return ops::mul(a, b); }},
      {"scale", [&] { return ops::scale(a, -1.7); }},
      {"add_scalar", [&] { return ops::add_scalar(a, 0.3); }},
      {"tanh", [&] { return ops::tanh(a); }},
      {"sin", [&] { return ops::sin(a); }},
      {"cos", [&] { return ops::cos(a); }},
      {"square", [&] { return ops::square(a); }},
      {"sigmoid", [&] { return ops::sigmoid(a); }},
      {"gelu", [&] { return ops::gelu(a); }},
      {"linear", [&] { return ops::linear(a, c); }},
      {"mean", [&] { return ops::mean(ops::square(a)); }},
      {"frobenius", [&] { return ops::frobenius_norm(a); }},
  };
  for (const auto& [name, fn] : cases) {
    auto r = check_gradients([&] { return weighted_sum(fn()); }, {{"a", a}, {"b", b}, {"c", c}});
    EXPECT_LT(r.max_relative_error, 1e-4) << name << " via " << r.worst;
  }
}

TEST_P(ElementwiseGrad, StructuralOpsMatchFiniteDifferences) {
  std::mt19937_64 rng(200 + GetParam());
  Tensor x = random_tensor({2, 3, 4}, rng), g = random_tensor({4}, rng), bias = random_tensor({4}, rng);
  Tensor table = random_tensor({5, 4}, rng), y = random_tensor({2, 4, 3}, rng);
  Tensor block = random_tensor({5, 5}, rng);
  std::vector<std::int64_t> ids{0, 3, 4, 3, 1, 2};
  std::vector<std::size_t> positions{2, 0};
  std::vector<std::uint8_t> mask{1, 1, 0, 1, 0, 1};
  const std::vector<std::pair<std::string, std::function<Tensor()>>> cases = {
      {"layer_norm", [&] { return ops::layer_norm(x, g, bias); }},
      {"embedding", [&] { return ops::embedding(table, ids, {2, 3}); }},
      {"bmm", [&] { return ops::bmm(x, y); }},
      {"bmm_nt", [&] { return ops::bmm_nt(x, x); }},
      {"slice_block", [&] { return ops::mul(ops::bmm_nt(x, x), ops::slice_block(block, 3, 3)); }},
      {"split_merge", [&] { return ops::merge_heads(ops::scale(ops::split_heads(x, 2), 1.5), 2); }},
      {"select_rows", [&] { return ops::select_rows(x, positions); }},
      {"masked_softmax", [&] { return ops::masked_softmax_rows(ops::bmm_nt(x, x), mask, 1); }},
      {"reshape", [&] { return ops::reshape(x, {6, 4}); }},
  };
  for (const auto& [name, fn] : cases) {
    auto r = check_gradients([&] { return weighted_sum(fn()); },
                             {{"x", x}, {"g", g}, {"bias", bias}, {"table", table}, {"y", y},
                              {"block", block}});
    EXPECT_LT(r.max_relative_error, 1e-4) << name << " via " << r.worst;
  }
}

TEST_P(ElementwiseGrad, BinaryCrossEntropyMatchesFiniteDifferences) {
  std::mt19937_64 rng(300 + GetParam());
  Tensor logits = random_tensor({3, 4}, rng);
  std::vector<double> y{1, 0, 0, 1, 0, 1, 1, 0, 0, 0, 1, 1};
  auto r = check_gradients([&] { return ops::binary_cross_entropy(ops::sigmoid(logits), y); },
                           {{"logits", logits}});
  EXPECT_LT(r.max_relative_error, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(TenSeeds, ElementwiseGrad, ::testing::Range(0, 10));

TEST(LayerNorm, ConstantRowAndUnitRow) {
  Tensor gain = Tensor::full({4}, 1.0), bias = Tensor::zeros({4});
  expect_values(ops::layer_norm(Tensor::full({4}, 3.0), gain, bias), {0, 0, 0, 0});
  Tensor two = ops::layer_norm(Tensor::from_vector({2}, {1, -1}), Tensor::full({2}, 1.0),
                               Tensor::zeros({2}));
  // Variance is 1, so only epsilon separates the result from [1, -1].
  EXPECT_NEAR(two.data()[0], 1.0, 1e-5);
  EXPECT_NEAR(two.data()[1], -1.0, 1e-5);
}

TEST(LayerNorm, GradientOnRandomMatrix) {
  std::mt19937_64 rng(4);
  Tensor x = random_tensor({4, 8}, rng), g = random_tensor({8}, rng), b = random_tensor({8}, rng);
  auto r = check_gradients([&] { return weighted_sum(ops::layer_norm(x, g, b)); },
                           {{"x", x}, {"g", g}, {"b", b}});
  EXPECT_LT(r.max_relative_error, 1e-4) << r.worst;
}

TEST(Backward, SumGivesOnesAndHalfSquaredNormGivesWeights) {
  std::mt19937_64 rng(5);
  Tensor w = random_tensor({3, 2}, rng);
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(ops::sum(w));
  }
  for (double g : w.grad()) EXPECT_EQ(g, 1.0);
  w.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(ops::scale(ops::sum(ops::square(w)), 0.5));
  }
  for (std::size_t i = 0; i < w.numel(); ++i) EXPECT_DOUBLE_EQ(w.grad()[i], w.data()[i]);
}

TEST(Backward, UnreachableParametersKeepZeroGradient) {
  Tensor used = Tensor::parameter({2}, {1, 2});
  Tensor unused = Tensor::parameter({2}, {3, 4});
  Tape tape;
  TapeScope scope(tape);
  tape.backward(ops::sum(used));
  for (double g : unused.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, RejectsNonScalarLoss) {
  Tensor w = Tensor::parameter({2}, {1, 2});
  Tape tape;
  TapeScope scope(tape);
  Tensor y = ops::scale(w, 2.0);
  EXPECT_THROW(tape.backward(y), ContractError);
}

TEST(Backward, VisitsEachNodeOnceInReverseOrder) {
  Tensor w = Tensor::parameter({2}, {1, 2});
  Tape tape;
  TapeScope scope(tape);
  Tensor loss = ops::sum(ops::tanh(ops::scale(w, 2.0)));
  EXPECT_EQ(tape.size(), 3u);
  EXPECT_STREQ(tape.kind(0), "scale");
  EXPECT_EQ(tape.backward(loss), 3u);
}

TEST(Determinism, RepeatedForwardIsBitwiseIdentical) {
  std::mt19937_64 rng(6);
  Tensor x = random_tensor({2, 5, 8}, rng);
  auto run = [&] { return ops::softmax_rows(ops::layer_norm(ops::bmm_nt(x, x), Tensor::full({5}, 1.0),
                                                            Tensor::zeros({5}))); };
  Tensor first = run(), second = run();
  ASSERT_EQ(first.numel(), second.numel());
  for (std::size_t i = 0; i < first.numel(); ++i) EXPECT_EQ(first.data()[i], second.data()[i]);
}

TEST(Embedding, OutOfRangeIdIsVocabularyError) {
  Tensor table = Tensor::zeros({3, 2});
  std::vector<std::int64_t> ids{0, 3};
  EXPECT_THROW(ops::embedding(table, ids, {2}), VocabularyError);
}
