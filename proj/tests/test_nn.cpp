#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "couplenet/nn.hpp"
#include "oracles.hpp"

using namespace couplenet;

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

ConvParams random_conv(Rng& rng, std::size_t out, std::size_t in, std::size_t k, std::size_t stride,
                       std::size_t pad) {
  ConvParams p = make_conv(out, in, k, stride, pad);
  for (double& v : p.weight.data()) v = rng.uniform(-1.0, 1.0);
  for (double& v : p.bias) v = rng.uniform(-1.0, 1.0);
  return p;
}

}  // namespace

TEST(Tensor, ShapeAndFill) {
  Tensor t(Shape{2, 3, 4, 5}, 1.5);
  EXPECT_EQ(t.numel(), 120u);
  EXPECT_DOUBLE_EQ(t.sum(), 180.0);
  t.at(1, 2, 3, 4) = -1.0;
  EXPECT_EQ(t.data().back(), -1.0);
  EXPECT_THROW(Tensor(Shape{1, 1, 2, 2}, std::vector<double>(3)), std::invalid_argument);
}

TEST(Tensor, RequireFiniteRejectsNan) {
  Tensor t(Shape{1, 1, 2, 2});
  EXPECT_NO_THROW(require_finite(t, "t"));
  t.at(0, 0, 1, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(t.all_finite());
  EXPECT_THROW(require_finite(t, "t"), std::invalid_argument);
}

TEST(Conv2d, ScalarScaling) {
  Tensor x(Shape{1, 1, 3, 3}, 1.0);
  ConvParams p = make_conv(1, 1, 1);
  p.weight.data()[0] = 2.0;
  const Tensor y = conv2d(x, p);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  for (double v : y.data()) EXPECT_EQ(v, 2.0);
}

TEST(Conv2d, IdentityKernelIsIdentity) {
  Rng rng(3);
  ConvParams p = make_conv(2, 2, 3, 1, 1);
  p.weight.at(0, 0, 1, 1) = 1.0;
  p.weight.at(1, 1, 1, 1) = 1.0;
  const Tensor x = oracle::random_tensor(Shape{2, 2, 5, 7}, rng);
  EXPECT_EQ(conv2d(x, p), x);
}

TEST(Conv2d, MatchesLoopOracle) {
  Rng rng(11);
  const Tensor x = oracle::random_tensor(Shape{1, 2, 5, 5}, rng);
  const ConvParams p = random_conv(rng, 3, 2, 3, 1, 0);
  const Tensor y = conv2d(x, p);
  const Tensor ref = oracle::conv2d(x, p.weight, p.bias, 1, 0);
  ASSERT_EQ(y.shape(), ref.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y.data()[i], ref.data()[i], 1e-12);
}

TEST(Conv2d, RandomGeometriesMatchOracle) {
  Rng rng(12);
  for (int rep = 0; rep < 60; ++rep) {
    const std::size_t k = 1 + rng.below(3);
    const std::size_t stride = 1 + rng.below(2);
    const std::size_t pad = rng.below(k);
    const std::size_t h = k + rng.below(6);
    const std::size_t w = k + rng.below(6);
    const Tensor x = oracle::random_tensor(Shape{1 + rng.below(2), 1 + rng.below(3), h, w}, rng);
    const ConvParams p = random_conv(rng, 1 + rng.below(3), x.shape().c, k, stride, pad);
    const Tensor y = conv2d(x, p);
    const Tensor ref = oracle::conv2d(x, p.weight, p.bias, stride, pad);
    ASSERT_EQ(y.shape(), ref.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) ASSERT_NEAR(y.data()[i], ref.data()[i], 1e-12);
  }
}

TEST(Conv2d, OutputShapeFormula) {
  const ConvParams p = make_conv(4, 3, 3, 2, 1);
  EXPECT_EQ(conv2d_output_shape(Shape{1, 3, 96, 72}, p), (Shape{1, 4, 48, 36}));
  EXPECT_EQ(conv2d_output_shape(Shape{1, 3, 7, 7}, p), (Shape{1, 4, 4, 4}));
}

TEST(Conv2d, RejectsChannelMismatchAndSmallInput) {
  const ConvParams p = make_conv(2, 3, 3);
  EXPECT_THROW(conv2d(Tensor(Shape{1, 2, 5, 5}), p), std::invalid_argument);
  EXPECT_THROW(conv2d(Tensor(Shape{1, 3, 2, 5}), p), std::invalid_argument);
}

TEST(Conv2d, IsPure) {
  Rng rng(5);
  const Tensor x = oracle::random_tensor(Shape{1, 2, 6, 6}, rng);
  const ConvParams p = random_conv(rng, 2, 2, 3, 2, 1);
  EXPECT_EQ(conv2d(x, p), conv2d(x, p));
}

TEST(Conv2dBackward, ZeroUpstreamGivesZeroGradients) {
  Rng rng(6);
  const Tensor x = oracle::random_tensor(Shape{1, 2, 5, 5}, rng);
  const ConvParams p = random_conv(rng, 3, 2, 3, 1, 1);
  const ConvGrads g = conv2d_backward(x, p, Tensor(conv2d_output_shape(x.shape(), p)));
  for (double v : g.grad_input.data()) EXPECT_EQ(v, 0.0);
  for (double v : g.grad_weight.data()) EXPECT_EQ(v, 0.0);
  for (double v : g.grad_bias) EXPECT_EQ(v, 0.0);
}

TEST(Conv2dBackward, BiasGradientIsUpstreamSum) {
  Rng rng(7);
  const Tensor x = oracle::random_tensor(Shape{2, 3, 4, 4}, rng);
  const ConvParams p = random_conv(rng, 2, 3, 1, 1, 0);
  const Tensor u = oracle::random_tensor(conv2d_output_shape(x.shape(), p), rng);
  const ConvGrads g = conv2d_backward(x, p, u);
  for (std::size_t o = 0; o < 2; ++o) {
    double s = 0.0;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) s += u.at(n, o, i, j);
    EXPECT_NEAR(g.grad_bias[o], s, 1e-12);
  }
}

TEST(Conv2dBackward, RejectsWrongUpstreamShape) {
  const ConvParams p = make_conv(2, 1, 3);
  EXPECT_THROW(conv2d_backward(Tensor(Shape{1, 1, 5, 5}), p, Tensor(Shape{1, 2, 5, 5})),
               std::invalid_argument);
}

TEST(Conv2dBackward, MatchesFiniteDifferences) {
  Rng rng(8);
  Tensor x = oracle::random_tensor(Shape{1, 2, 5, 6}, rng);
  ConvParams p = random_conv(rng, 3, 2, 3, 2, 1);
  const Tensor u = oracle::random_tensor(conv2d_output_shape(x.shape(), p), rng);
  const ConvGrads g = conv2d_backward(x, p, u);
  auto loss = [&] { return dot(conv2d(x, p).data(), u.data()); };
  EXPECT_TRUE(oracle::gradients_match(g.grad_input.data(), oracle::numeric_gradient(x.data(), loss), 1e-6));
  EXPECT_TRUE(oracle::gradients_match(g.grad_weight.data(), oracle::numeric_gradient(p.weight.data(), loss), 1e-6));
  EXPECT_TRUE(oracle::gradients_match(g.grad_bias, oracle::numeric_gradient(p.bias, loss), 1e-6));
  const ConvGrads params_only = conv2d_backward_params_only(x, p, u);
  EXPECT_EQ(params_only.grad_weight, g.grad_weight);
  EXPECT_EQ(params_only.grad_bias, g.grad_bias);
}

TEST(Relu, Definition) {
  const Tensor x(Shape{1, 1, 1, 3}, std::vector<double>{-1.0, 0.0, 2.0});
  EXPECT_EQ(relu(x).values(), (std::vector<double>{0.0, 0.0, 2.0}));
  const Tensor neg(Shape{1, 2, 2, 2}, -0.5);
  EXPECT_DOUBLE_EQ(relu(neg).sum(), 0.0);
}

TEST(Relu, SubgradientAtZeroIsZero) {
  const Tensor x(Shape{1, 1, 1, 3}, std::vector<double>{-1.0, 0.0, 2.0});
  const Tensor u(Shape{1, 1, 1, 3}, 1.0);
  EXPECT_EQ(relu_backward(x, u).values(), (std::vector<double>{0.0, 0.0, 1.0}));
}

TEST(Relu, BackwardMatchesFiniteDifferencesAwayFromKink) {
  Rng rng(9);
  Tensor x(Shape{1, 2, 4, 4});
  for (double& v : x.data()) {
    do v = rng.uniform(-1.0, 1.0);
    while (std::abs(v) <= 1e-3);
  }
  const Tensor u = oracle::random_tensor(x.shape(), rng);
  const Tensor g = relu_backward(x, u);
  auto loss = [&] { return dot(relu(x).data(), u.data()); };
  EXPECT_TRUE(oracle::gradients_match(g.data(), oracle::numeric_gradient(x.data(), loss), 1e-6));
}

TEST(SoftmaxCrossEntropy, UniformLogits) {
  const std::vector<double> logits(4, 0.3);
  EXPECT_NEAR(softmax_cross_entropy(logits, 2).loss, std::log(4.0), 1e-12);
  EXPECT_NEAR(softmax_cross_entropy(logits, 2).loss, 1.386294, 1e-6);
}

TEST(SoftmaxCrossEntropy, SaturatedCorrectClass) {
  const std::vector<double> logits = {100.0, 0.0, 0.0, 0.0};
  EXPECT_LT(softmax_cross_entropy(logits, 0).loss, 1e-10);
  const std::vector<double> huge = {1000.0, -1000.0, 0.0};
  const LossGrad lg = softmax_cross_entropy(huge, 1);
  EXPECT_TRUE(std::isfinite(lg.loss));
  EXPECT_NEAR(lg.loss, 2000.0, 1e-9);
}

TEST(SoftmaxCrossEntropy, GradientIsSoftmaxMinusOneHot) {
  Rng rng(10);
  for (std::size_t label = 0; label < 5; ++label) {
    std::vector<double> logits(5);
    for (double& v : logits) v = rng.uniform(-3.0, 3.0);
    const LossGrad lg = softmax_cross_entropy(logits, label);
    const std::vector<double> p = softmax(logits);
    for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(lg.grad[c], p[c] - (c == label ? 1.0 : 0.0), 1e-15);
    const auto num = oracle::numeric_gradient(logits, [&] { return softmax_cross_entropy(logits, label).loss; });
    EXPECT_TRUE(oracle::gradients_match(lg.grad, num, 1e-6));
  }
}

TEST(SoftmaxCrossEntropy, RejectsLabelOutOfRange) {
  const std::vector<double> logits(3, 0.0);
  EXPECT_THROW(softmax_cross_entropy(logits, 3), std::invalid_argument);
}

TEST(SmoothL1, ClosedForms) {
  const std::vector<double> zero = {0.0};
  EXPECT_DOUBLE_EQ(smooth_l1(std::vector<double>{0.5}, zero).loss, 0.125);
  EXPECT_DOUBLE_EQ(smooth_l1(std::vector<double>{2.0}, zero).loss, 1.5);
  EXPECT_DOUBLE_EQ(smooth_l1(std::vector<double>{-2.0}, zero).loss, 1.5);
  EXPECT_THROW(smooth_l1(std::vector<double>{1.0, 2.0}, zero), std::invalid_argument);
}

TEST(SmoothL1, GradientMatchesFiniteDifferences) {
  Rng rng(13);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> pred(4), target(4);
    for (std::size_t i = 0; i < 4; ++i) {
      target[i] = rng.uniform(-1.0, 1.0);
      double d;
      do d = rng.uniform(-3.0, 3.0);
      while (std::abs(std::abs(d) - 1.0) <= 1e-3);
      pred[i] = target[i] + d;
    }
    const LossGrad lg = smooth_l1(pred, target);
    const auto num = oracle::numeric_gradient(pred, [&] { return smooth_l1(pred, target).loss; });
    EXPECT_TRUE(oracle::gradients_match(lg.grad, num, 1e-6));
  }
}
