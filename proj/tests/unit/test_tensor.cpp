#include <gtest/gtest.h>

#include <cmath>

#include "cbodd/errors.hpp"
#include "cbodd/gradcheck.hpp"
#include "cbodd/rng.hpp"
#include "cbodd/tensor.hpp"

namespace cbodd {
namespace {

Tensor random_leaf(Shape shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor(std::move(shape), std::move(v), true);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Tensor a({2, 2}, {1, 2, 3, 4});
  const Tensor eye({2, 2}, {1, 0, 0, 1});
  const Tensor c = matmul(a, eye);
  EXPECT_EQ(c.shape(), (Shape{2, 2}));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(c.value(i), a.value(i));
}

TEST(Matmul, HandMultiplication) {
  const Tensor c = matmul(Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {3, 4}));
  EXPECT_EQ(c.shape(), (Shape{1, 1}));
  EXPECT_EQ(c.value(0), 11.0);
}

TEST(Matmul, MismatchNamesBothShapes) {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos);
    EXPECT_NE(msg.find("by [2,3]"), std::string::npos);
  }
}

TEST(Softmax, SymmetricRow) {
  const Tensor s = softmax_rows(Tensor({1, 2}, {0, 0}));
  EXPECT_DOUBLE_EQ(s.value(0), 0.5);
  EXPECT_DOUBLE_EQ(s.value(1), 0.5);
}

TEST(Softmax, ClosedFormLog2) {
  const Tensor s = softmax_rows(Tensor({1, 2}, {std::log(2.0), 0.0}));
  EXPECT_NEAR(s.value(0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(s.value(1), 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  const Tensor s = softmax_rows(Tensor({1, 2}, {1000.0, 0.0}));
  EXPECT_TRUE(std::isfinite(s.value(0)));
  EXPECT_NEAR(s.value(0), 1.0, 1e-15);
  EXPECT_NEAR(s.value(1), 0.0, 1e-15);
}

TEST(Softmax, RowsSumToOne) {
  Rng rng(3);
  std::vector<double> v(7 * 9);
  for (auto& x : v) x = rng.uniform(-30.0, 30.0);
  const Tensor s = softmax_rows(Tensor({7, 9}, v));
  for (std::size_t r = 0; r < 7; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < 9; ++c) {
      EXPECT_GE(s.value(r * 9 + c), 0.0);
      total += s.value(r * 9 + c);
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Softmax, NonFiniteInputIsNumericError) {
  EXPECT_THROW(softmax_rows(Tensor({1, 2}, {NAN, 0.0})), NumericError);
}

TEST(Sigmoid, Cases) {
  EXPECT_DOUBLE_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);
  EXPECT_LT(sigmoid(Tensor::scalar(-800.0)).item(), 1e-300);
  double previous = 0.0;
  for (double x = -10.0; x <= 10.0; x += 0.5) {
    const double y = sigmoid(Tensor::scalar(x)).item();
    EXPECT_GT(y, previous);
    previous = y;
    EXPECT_NEAR(y + sigmoid(Tensor::scalar(-x)).item(), 1.0, 1e-15);
  }
}

TEST(Backward, QuadraticGradient) {
  const Tensor x({2}, {1, 2}, true);
  const auto result = sum(mul(x, x)).backward();
  EXPECT_TRUE(result.graph_connected);
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(Backward, NonScalarIsRankError) {
  const Tensor x({2}, {1, 2}, true);
  EXPECT_THROW(mul(x, x).backward(), RankError);
}

TEST(Backward, DetachedGraphIsFlaggedNoOp) {
  const Tensor x({2}, {1, 2}, true);
  const Tensor loss = sum(mul(x.detach(), x.detach()));
  const auto result = loss.backward();
  EXPECT_FALSE(result.graph_connected);
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Backward, UnusedParameterGetsZeroGradient) {
  const Tensor used({2}, {1, 2}, true);
  const Tensor unused({3}, {5, 6, 7}, true);
  sum(mul(used, used)).backward();
  for (double g : unused.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, GradientsAccumulateAcrossCalls) {
  Tensor x({1}, {3}, true);
  sum(mul(x, x)).backward();
  sum(mul(x, x)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
  x.zero_grad();
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Backward, MatmulChainMatchesFiniteDifferences) {
  Rng rng(11);
  const Tensor a = random_leaf({3, 4}, rng);
  const Tensor b = random_leaf({4, 5}, rng);
  const Tensor c = random_leaf({5, 2}, rng);
  auto loss = [&] { return frobenius_sq(matmul(matmul(a, b), c)); };
  EXPECT_LT(max_relative_error(loss, {a, b, c}), 1e-4);
}

TEST(Backward, EveryOperatorMatchesFiniteDifferences) {
  GradCheckOptions opts;
  opts.seed = 19;
  const auto report = run_gradcheck(opts);
  std::size_t ops = 0;
  for (const auto& e : report.entries) {
    if (e.term.rfind("op:", 0) == 0) ++ops;
    EXPECT_TRUE(e.passed) << e.term << " " << e.max_rel_error;
  }
  EXPECT_GE(ops, 25u);
}

TEST(Backward, GradientIsLinearInTheLoss) {
  Rng rng(5);
  Tensor x = random_leaf({4, 3}, rng);
  Tensor w = random_leaf({3, 2}, rng);
  sum(sigmoid(matmul(x, w))).backward();
  const std::vector<double> g1(x.grad().begin(), x.grad().end());
  x.zero_grad();
  w.zero_grad();
  scale(sum(sigmoid(matmul(x, w))), 3.0).backward();
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(x.grad()[i], 3.0 * g1[i], 1e-14);
}

TEST(NoGrad, SuppressesGraphRecording) {
  const Tensor x({2}, {1, 2}, true);
  Tensor y;
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_mode_enabled());
    y = sum(mul(x, x));
  }
  EXPECT_TRUE(grad_mode_enabled());
  EXPECT_FALSE(y.requires_grad());
  EXPECT_FALSE(y.backward().graph_connected);
}

TEST(Layout, PermuteAndNarrow) {
  const Tensor a({2, 3}, {0, 1, 2, 3, 4, 5});
  const Tensor p = permute(a, {1, 0});
  EXPECT_EQ(p.shape(), (Shape{3, 2}));
  EXPECT_EQ(p.value(1), 3.0);
  const Tensor n = narrow(a, 1, 1, 2);
  EXPECT_EQ(n.shape(), (Shape{2, 2}));
  EXPECT_EQ(n.value(0), 1.0);
  EXPECT_EQ(n.value(3), 5.0);
  EXPECT_THROW(narrow(a, 1, 2, 2), DimensionError);
}

TEST(Conv2d, HandComputedCorrelation) {
  // 3x3 ones input, 2x2 kernel [[1,2],[3,4]], no padding: every output is 10 + bias.
  const Tensor x = Tensor::full({1, 1, 3, 3}, 1.0);
  const Tensor w({1, 1, 2, 2}, {1, 2, 3, 4});
  const Tensor b({1}, {0.5});
  const Tensor y = conv2d(x, w, b, 1, 0);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 10.5);
}

TEST(LayerNorm, ZeroMeanUnitVariance) {
  const Tensor y = layer_norm_last(Tensor({1, 4}, {1, 2, 3, 4}), 0.0);
  double m = 0.0, v = 0.0;
  for (double x : y.values()) m += x / 4.0;
  for (double x : y.values()) v += (x - m) * (x - m) / 4.0;
  EXPECT_NEAR(m, 0.0, 1e-15);
  EXPECT_NEAR(v, 1.0, 1e-12);
}

}  // namespace
}  // namespace cbodd
