// Copyright 2026 The molformer-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#include "molformer/ops.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "molformer/errors.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

namespace molformer::nn {
namespace {

using TD = Tensor<double>;
using Inputs = std::vector<TD>;

constexpr double kGradTol = 1e-6;

TD rnd(Shape shape, Rng& rng, double scale = 1.0) { return fixtures::random_tensor<double>(std::move(shape), rng, scale); }

TEST(Gelu, ExactCdfValues) {
  const TD x(Shape{4}, std::vector<double>{0.0, 1.0, -1.0, 2.5});
  const TD y = gelu<double>(nullptr, x);
  EXPECT_EQ(y[0], 0.0);
  EXPECT_NEAR(y[1], 0.841344746068543, 1e-12);
  // x * Phi(x) - (-x) * Phi(-x) = x (Phi(x) + Phi(-x)) = x
  EXPECT_NEAR(y[1] - y[2], 1.0, 1e-15);
  EXPECT_NEAR(y[3] - gelu<double>(nullptr, TD(Shape{1}, -2.5))[0], 2.5, 1e-14);
}

TEST(Softmax, ClosedForms) {
  const TD x(Shape{2, 2}, std::vector<double>{0.0, std::log(3.0), 5.0, 5.0});
  const TD y = softmax_rows<double>(nullptr, x);
  EXPECT_NEAR(y(0, 0), 0.25, 1e-15);
  EXPECT_NEAR(y(0, 1), 0.75, 1e-15);
  EXPECT_DOUBLE_EQ(y(1, 0), 0.5);
}

TEST(Softmax, ShiftInvarianceAndRowSums) {
  Rng rng(3);
  const TD x = rnd({6, 9}, rng, 4.0);
  const TD shifted = add_scalar<double>(nullptr, x, 123.0);
  const TD a = softmax_rows<double>(nullptr, x), b = softmax_rows<double>(nullptr, shifted);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  Rng rf(4);
  const Tensor<float> xf = fixtures::random_tensor<float>({16, 40}, rf, 5.0);
  const Tensor<float> yf = softmax_rows<float>(nullptr, xf);
  for (std::size_t r = 0; r < 16; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 40; ++c) s += yf(r, c);
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Softmax, MaskedColumnsAndAllMasked) {
  const TD x(Shape{1, 3}, std::vector<double>{1.0, 2.0, 100.0});
  const std::vector<std::uint8_t> mask = {1, 1, 0};
  const TD y = softmax_rows<double>(nullptr, x, mask);
  EXPECT_EQ(y[2], 0.0);
  EXPECT_NEAR(y[0] + y[1], 1.0, 1e-15);
  const std::vector<std::uint8_t> none = {0, 0, 0};
  try {
    softmax_rows<double>(nullptr, x, none);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kAllMasked);
  }
}

TEST(LayerNorm, HandExamples) {
  const TD x(Shape{2, 2}, std::vector<double>{1.0, 3.0, 7.0, 7.0});
  const TD g(Shape{2}, 1.0), b(Shape{2}, 0.0);
  const TD y = layer_norm<double>(nullptr, x, g, b, 1e-12);
  EXPECT_NEAR(y(0, 0), -1.0, 1e-9);
  EXPECT_NEAR(y(0, 1), 1.0, 1e-9);
  EXPECT_EQ(y(1, 0), 0.0);
  EXPECT_EQ(y(1, 1), 0.0);
}

TEST(LayerNorm, AffineMoments) {
  Rng rng(5);
  const TD x = rnd({3, 64}, rng, 3.0);
  const TD g(Shape{64}, 2.0), b(Shape{64}, 0.5);
  const TD y = layer_norm<double>(nullptr, x, g, b, 1e-5);
  for (std::size_t r = 0; r < 3; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t c = 0; c < 64; ++c) mean += y(r, c) / 64.0;
    for (std::size_t c = 0; c < 64; ++c) var += (y(r, c) - mean) * (y(r, c) - mean) / 64.0;
    EXPECT_NEAR(mean, 0.5, 1e-9);
    EXPECT_NEAR(var, 4.0, 1e-4);
  }
}

TEST(CrossEntropy, HandExampleAndUniform) {
  const TD logits(Shape{2, 2}, std::vector<double>{0.0, std::log(3.0), 9.0, -9.0});
  const std::vector<TokenId> labels = {1, 0};
  const std::vector<std::uint8_t> first = {1, 0};
  EXPECT_NEAR(cross_entropy_masked<double>(nullptr, logits, labels, first).item(), -std::log(0.75), 1e-15);

  const TD uniform(Shape{5, 11}, 0.3);
  const std::vector<TokenId> ul = {0, 3, 5, 7, 10};
  const std::vector<std::uint8_t> all(5, 1);
  EXPECT_NEAR(cross_entropy_masked<double>(nullptr, uniform, ul, all).item(), std::log(11.0), 1e-14);

  const TD sharp(Shape{1, 3}, std::vector<double>{0.0, 800.0, 0.0});
  const std::vector<TokenId> sl = {1};
  const std::vector<std::uint8_t> one = {1};
  EXPECT_LT(cross_entropy_masked<double>(nullptr, sharp, sl, one).item(), 1e-300);
}

TEST(CrossEntropy, EmptyMask) {
  const TD logits(Shape{2, 3}, 0.0);
  const std::vector<TokenId> labels = {0, 1};
  const std::vector<std::uint8_t> none = {0, 0};
  try {
    cross_entropy_masked<double>(nullptr, logits, labels, none);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyLossMask);
  }
}

TEST(Dropout, EvalIsIdentityAndTrainIsInverted) {
  Rng rng(6);
  const TD x = rnd({8, 32}, rng);
  const TD eval = dropout<double>(nullptr, x, 0.3, 1, false);
  EXPECT_TRUE(eval.same_storage(x));
  const TD train = dropout<double>(nullptr, x, 0.25, 1, true);
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (train[i] == 0.0) ++zeros;
    else EXPECT_NEAR(train[i], x[i] / 0.75, 1e-15);
  }
  EXPECT_GT(zeros, 30u);
  EXPECT_LT(zeros, 100u);
  const TD again = dropout<double>(nullptr, x, 0.25, 1, true);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(train[i], again[i]);
}

TEST(Backward, SumGivesOnesAndUnusedIsZero) {
  Tape<double> tape;
  TD x(Shape{3, 2}, 1.5);
  TD unused(Shape{2}, 1.0);
  x.set_requires_grad(true);
  unused.set_requires_grad(true);
  tape.backward(sum(&tape, x));
  for (double g : x.grad_view()) EXPECT_EQ(g, 1.0);
  for (double g : unused.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, GradientsAccumulate) {
  Tape<double> tape;
  TD x(Shape{2}, std::vector<double>{1.0, 2.0});
  x.set_requires_grad(true);
  const TD y = add(&tape, mul(&tape, x, x), x);
  tape.backward(sum(&tape, y));
  EXPECT_DOUBLE_EQ(x.grad_view()[0], 3.0);
  EXPECT_DOUBLE_EQ(x.grad_view()[1], 5.0);
}

TEST(Backward, DetachedTensorOnMutation) {
  Tape<double> tape;
  TD x(Shape{2}, 1.0);
  x.set_requires_grad(true);
  const TD y = mul(&tape, x, x);
  x.mutable_values()[0] = 4.0;
  try {
    tape.backward(sum(&tape, y));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDetachedTensor);
  }
}

TEST(CheckedMode, NonFiniteTrips) {
  const bool previous = checked_mode();
  set_checked_mode(true);
  const TD x(Shape{2}, std::vector<double>{1.0, std::numeric_limits<double>::infinity()});
  try {
    scale<double>(nullptr, x, 2.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonFinite);
  }
  set_checked_mode(false);
  EXPECT_NO_THROW(scale<double>(nullptr, x, 2.0));
  set_checked_mode(previous);
}

TEST(Embedding, LooksUpRowsAndScattersGradients) {
  const TD table(Shape{4, 2}, std::vector<double>{0, 1, 2, 3, 4, 5, 6, 7});
  const std::vector<TokenId> ids = {2, 0, 2};
  const TD e = embedding<double>(nullptr, table, ids);
  EXPECT_EQ(e(0, 0), 4.0);
  EXPECT_EQ(e(1, 1), 1.0);
  const std::vector<TokenId> bad = {4};
  EXPECT_THROW(embedding<double>(nullptr, table, bad), Error);
}

// Finite-difference checks, several shapes and seeds per op.
class OpGradcheck : public ::testing::TestWithParam<int> {};

TEST_P(OpGradcheck, AllDifferentiableOps) {
  const int seed = GetParam();
  Rng rng(1000 + seed);
  const std::size_t n = 2 + rng.below(4), m = 2 + rng.below(5), k = 2 + rng.below(4);
  // Layer norm over two columns pins outputs to +-1 and leaves O(eps)
  // gradients, which finite differences cannot resolve.
  const std::size_t ln = m + 2;
  auto check = [&](const char* name, const oracle::GradFn& f, Inputs in) {
    const auto r = oracle::gradcheck(f, std::move(in), seed);
    EXPECT_LT(r.max_relative_error, kGradTol) << name << " input " << r.worst_input << " seed " << seed;
  };

  check("matmul", [](auto* t, const Inputs& x) { return matmul(t, x[0], x[1]); }, {rnd({n, k}, rng), rnd({k, m}, rng)});
  check("matmul_tt", [](auto* t, const Inputs& x) { return matmul(t, x[0], x[1], true, true); },
        {rnd({k, n}, rng), rnd({m, k}, rng)});
  check("linear", [](auto* t, const Inputs& x) { return linear(t, x[0], x[1], x[2]); },
        {rnd({n, k}, rng), rnd({m, k}, rng), rnd({m}, rng)});
  check("add", [](auto* t, const Inputs& x) { return add(t, x[0], x[1]); }, {rnd({n, m}, rng), rnd({n, m}, rng)});
  check("add_row_vector", [](auto* t, const Inputs& x) { return add_row_vector(t, x[0], x[1]); },
        {rnd({n, m}, rng), rnd({m}, rng)});
  check("mul", [](auto* t, const Inputs& x) { return mul(t, x[0], x[1]); }, {rnd({n, m}, rng), rnd({n, m}, rng)});
  check("scale", [](auto* t, const Inputs& x) { return scale(t, x[0], -1.7); }, {rnd({n, m}, rng)});
  check("add_scalar", [](auto* t, const Inputs& x) { return add_scalar(t, x[0], 0.3); }, {rnd({n, m}, rng)});
  check("scale_rows", [](auto* t, const Inputs& x) { return scale_rows(t, x[0], x[1]); },
        {rnd({n, m}, rng), rnd({n}, rng)});
  {
    std::vector<double> d(n);
    for (auto& v : d) v = 0.5 + rng.uniform();
    check("divide_rows", [](auto* t, const Inputs& x) { return divide_rows(t, x[0], x[1]); },
          {rnd({n, m}, rng), TD(Shape{n}, d)});
  }
  {
    std::vector<std::uint8_t> mask(n, 1);
    mask[0] = 0;
    check("mask_rows", [mask](auto* t, const Inputs& x) { return mask_rows(t, x[0], mask); }, {rnd({n, m}, rng)});
    check("masked_mean_rows", [mask](auto* t, const Inputs& x) { return masked_mean_rows(t, x[0], mask); },
          {rnd({n, m}, rng)});
    check("softmax_masked", [mask](auto* t, const Inputs& x) { return softmax_rows(t, x[0], std::span(mask)); },
          {rnd({n, n}, rng)});
  }
  check("sum", [](auto* t, const Inputs& x) { return sum(t, x[0]); }, {rnd({n, m}, rng)});
  check("column_sum", [](auto* t, const Inputs& x) { return column_sum(t, x[0]); }, {rnd({n, m}, rng)});
  check("gelu", [](auto* t, const Inputs& x) { return gelu(t, x[0]); }, {rnd({n, m}, rng, 2.0)});
  check("relu", [](auto* t, const Inputs& x) { return relu(t, x[0]); }, {rnd({n, m}, rng)});
  check("elu_plus_one", [](auto* t, const Inputs& x) { return elu_plus_one(t, x[0]); }, {rnd({n, m}, rng)});
  check("softmax", [](auto* t, const Inputs& x) { return softmax_rows(t, x[0]); }, {rnd({n, m}, rng, 2.0)});
  check("layer_norm", [](auto* t, const Inputs& x) { return layer_norm(t, x[0], x[1], x[2], 1e-5); },
        {rnd({n, ln}, rng), rnd({ln}, rng), rnd({ln}, rng)});
  check("dropout", [seed](auto* t, const Inputs& x) { return dropout(t, x[0], 0.3, std::uint64_t(seed), true); },
        {rnd({n, m}, rng)});
  {
    std::vector<TokenId> ids(n);
    for (auto& id : ids) id = TokenId(rng.below(k));
    check("embedding", [ids](auto* t, const Inputs& x) { return embedding(t, x[0], std::span(ids)); },
          {rnd({k, m}, rng)});
    std::vector<TokenId> labels(n);
    for (auto& l : labels) l = TokenId(rng.below(m));
    std::vector<std::uint8_t> lm(n, 1);
    lm[n - 1] = 0;
    check("cross_entropy", [labels, lm](auto* t, const Inputs& x) { return cross_entropy_masked(t, x[0], std::span(labels), std::span(lm)); },
          {rnd({n, m}, rng, 2.0)});
  }
  check("mse", [](auto* t, const Inputs& x) { return mse_loss(t, x[0], x[1]); }, {rnd({n, m}, rng), rnd({n, m}, rng)});
  check("slice", [](auto* t, const Inputs& x) { return slice(t, x[0], 1, 1, 1, 1); }, {rnd({n, m}, rng)});
  check("concat_cols", [](auto* t, const Inputs& x) { return concat_cols(t, std::vector<TD>{x[0], x[1]}); },
        {rnd({n, m}, rng), rnd({n, k}, rng)});
  check("concat_rows", [](auto* t, const Inputs& x) { return concat_rows(t, std::vector<TD>{x[0], x[1]}); },
        {rnd({n, m}, rng), rnd({k, m}, rng)});
  check("composite", [](auto* t, const Inputs& x) {
    return sum(t, gelu(t, layer_norm(t, linear(t, x[0], x[1], x[2]), x[3], x[4], 1e-5)));
  },
        {rnd({n, k}, rng), rnd({ln, k}, rng), rnd({ln}, rng), rnd({ln}, rng), rnd({ln}, rng)});
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradcheck, ::testing::Range(0, 10));

}  // namespace
}  // namespace molformer::nn
