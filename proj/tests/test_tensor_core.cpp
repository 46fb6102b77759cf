#include <gtest/gtest.h>

#include "oracles.hpp"
#include "stcl/conv.hpp"
#include "stcl/gradcheck.hpp"

using namespace stcl;

namespace {

ConvKernel random_kernel(Rng& rng, int in, int out, int stride, bool bias = true) {
  ConvKernel k(3, 3, in, out, stride, bias);
  oracle::randomize(k, rng);
  return k;
}

}  // namespace

TEST(Conv2d, IdentityKernelReturnsInput) {
  Rng rng(1);
  const FeatureMap x = oracle::random_map(rng, 5, 5, 1);
  ConvKernel k(3, 3, 1, 1, 1);
  k.weights[4] = 1.0;
  EXPECT_EQ(conv2d(x, k), x);
}

TEST(Conv2d, AllOnesKernelSumsNineTerms) {
  const double c = 0.37;
  const FeatureMap x(6, 6, 1, c);
  ConvKernel k(3, 3, 1, 1, 1);
  std::fill(k.weights.begin(), k.weights.end(), 1.0);
  const FeatureMap y = conv2d(x, k);
  for (int r = 1; r < 5; ++r)
    for (int col = 1; col < 5; ++col) EXPECT_NEAR(y.at(r, col, 0), 9 * c, 1e-15);
}

TEST(Conv2d, MatchesLoopOracleOnFixedCase) {
  Rng rng(2);
  const FeatureMap x = oracle::random_map(rng, 8, 8, 2);
  const ConvKernel k = random_kernel(rng, 2, 4, 1);
  EXPECT_LE(oracle::max_abs_diff(conv2d(x, k), oracle::conv2d(x, k)), 1e-12);
}

TEST(Conv2d, MatchesLoopOracleOnRandomShapes) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const int r = rng.uniform_int(1, 16), c = rng.uniform_int(1, 16);
    const int in = rng.uniform_int(1, 4), out = rng.uniform_int(1, 4), s = rng.uniform_int(1, 2);
    const FeatureMap x = oracle::random_map(rng, r, c, in);
    const ConvKernel k = random_kernel(rng, in, out, s);
    const FeatureMap y = conv2d(x, k);
    ASSERT_EQ(y.rows(), (r + s - 1) / s);
    ASSERT_LE(oracle::max_abs_diff(y, oracle::conv2d(x, k)), 1e-12) << r << "x" << c << "x" << in << " s" << s;
  }
}

TEST(Conv2d, ChannelMismatchIsConfigError) {
  const FeatureMap x(4, 4, 2);
  const ConvKernel k(3, 3, 3, 1, 1);
  EXPECT_THROW(conv2d(x, k), ConfigError);
}

TEST(Conv2d, EvenKernelIsConfigError) { EXPECT_THROW(ConvKernel(2, 2, 1, 1, 1), ConfigError); }

TEST(Conv2d, InputsAreNotMutated) {
  Rng rng(4);
  const FeatureMap x = oracle::random_map(rng, 6, 6, 2);
  const ConvKernel k = random_kernel(rng, 2, 3, 2);
  const FeatureMap xc = x;
  const ConvKernel kc = k;
  const FeatureMap y = conv2d(x, k);
  (void)conv2d_backward(x, k, y);
  (void)deconv2d(y, k.stride == 2 ? ConvKernel(3, 3, 3, 2, 2) : k);
  EXPECT_EQ(x, xc);
  EXPECT_EQ(k, kc);
}

TEST(Conv2dBackward, ZeroUpstreamGivesZeroGradients) {
  Rng rng(5);
  const FeatureMap x = oracle::random_map(rng, 6, 6, 2);
  const ConvKernel k = random_kernel(rng, 2, 3, 1);
  const ConvGrad g = conv2d_backward(x, k, FeatureMap(6, 6, 3));
  for (double v : g.input.values()) EXPECT_EQ(v, 0.0);
  for (double v : g.weights) EXPECT_EQ(v, 0.0);
  for (double v : g.bias) EXPECT_EQ(v, 0.0);
}

TEST(Conv2dBackward, BiasGradientIsChannelSum) {
  Rng rng(6);
  const FeatureMap x = oracle::random_map(rng, 7, 5, 2);
  const ConvKernel k = random_kernel(rng, 2, 3, 2);
  const FeatureMap gy = oracle::random_map(rng, 4, 3, 3);
  const ConvGrad g = conv2d_backward(x, k, gy);
  for (int o = 0; o < 3; ++o) {
    double s = 0.0;
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 3; ++c) s += gy.at(r, c, o);
    EXPECT_NEAR(g.bias[static_cast<std::size_t>(o)], s, 1e-13);
  }
}

TEST(Conv2dBackward, ShapeMismatchIsContractError) {
  const FeatureMap x(6, 6, 1);
  const ConvKernel k(3, 3, 1, 2, 1);
  EXPECT_THROW(conv2d_backward(x, k, FeatureMap(5, 6, 2)), ContractError);
}

TEST(Conv2dBackward, MatchesFiniteDifferences) {
  Rng rng(7);
  for (int stride : {1, 2}) {
    FeatureMap x = oracle::random_map(rng, 7, 6, 2);
    ConvKernel k = random_kernel(rng, 2, 3, stride);
    const FeatureMap probe = oracle::random_map(rng, conv_output_size(7, stride), conv_output_size(6, stride), 3);
    const ConvGrad g = conv2d_backward(x, k, probe);
    auto loss = [&] { return dot(conv2d(x, k), probe); };
    EXPECT_LT(check_gradient(x.values(), g.input.values(), loss), 1e-6);
    EXPECT_LT(check_gradient(k.weights, g.weights, loss), 1e-6);
    EXPECT_LT(check_gradient(k.bias, g.bias, loss), 1e-6);
  }
}

TEST(Deconv2d, ZeroInputGivesBroadcastBias) {
  ConvKernel k(3, 3, 2, 3, 2);
  k.bias = {0.1, -0.2, 0.3};
  const FeatureMap y = deconv2d(FeatureMap(4, 4, 2), k);
  ASSERT_EQ(y.rows(), 8);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c)
      for (int o = 0; o < 3; ++o) EXPECT_EQ(y.at(r, c, o), k.bias[static_cast<std::size_t>(o)]);
}

TEST(Deconv2d, StrideTwoDoublesStrideOnePreserves) {
  EXPECT_EQ(deconv2d(FeatureMap(4, 4, 1), ConvKernel(3, 3, 1, 1, 2)).shape(), "8x8x1");
  EXPECT_EQ(deconv2d(FeatureMap(5, 3, 1), ConvKernel(3, 3, 1, 2, 1)).shape(), "5x3x2");
}

TEST(Deconv2d, IsAdjointOfConv2d) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const int stride = 1 + trial % 2;
    const int in = rng.uniform_int(1, 4), out = rng.uniform_int(1, 4);
    ConvKernel conv = random_kernel(rng, in, out, stride, false);
    // The deconv kernel (out -> in channels) shares the conv weights.
    ConvKernel dec(3, 3, out, in, stride, false);
    dec.weights = conv.weights;
    const FeatureMap x = oracle::random_map(rng, 8, 8, in);
    const FeatureMap y = oracle::random_map(rng, 8 / stride, 8 / stride, out);
    EXPECT_NEAR(dot(conv2d(x, conv), y), dot(x, deconv2d(y, dec)), 1e-10);
  }
}

TEST(Deconv2dBackward, MatchesFiniteDifferences) {
  Rng rng(9);
  for (int stride : {1, 2}) {
    FeatureMap x = oracle::random_map(rng, 3, 4, 2);
    ConvKernel k = random_kernel(rng, 2, 3, stride);
    const FeatureMap probe = oracle::random_map(rng, 3 * stride, 4 * stride, 3);
    const ConvGrad g = deconv2d_backward(x, k, probe);
    auto loss = [&] { return dot(deconv2d(x, k), probe); };
    EXPECT_LT(check_gradient(x.values(), g.input.values(), loss), 1e-6);
    EXPECT_LT(check_gradient(k.weights, g.weights, loss), 1e-6);
    EXPECT_LT(check_gradient(k.bias, g.bias, loss), 1e-6);
  }
}

TEST(Elementwise, BasicValues) {
  EXPECT_EQ(sigmoid(FeatureMap(1, 1, 1, 0.0))[0], 0.5);
  EXPECT_EQ(stcl::tanh(FeatureMap(1, 1, 1, 0.0))[0], 0.0);
  Rng rng(10);
  const FeatureMap a = oracle::random_map(rng, 3, 4, 2);
  EXPECT_EQ(hadamard(a, FeatureMap(3, 4, 2, 1.0)), a);
  EXPECT_EQ(concat_channels(a, FeatureMap(3, 4, 5)).channels(), 7);
}

TEST(Elementwise, RangesHoldForExtremeInputs) {
  FeatureMap x(1, 1, 4);
  x[0] = -800;
  x[1] = -30;
  x[2] = 30;
  x[3] = 800;
  const FeatureMap s = sigmoid(x), t = stcl::tanh(x);
  EXPECT_TRUE(s.all_finite());
  for (double v : s.values()) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
  for (double v : t.values()) EXPECT_TRUE(v >= -1.0 && v <= 1.0);
}

TEST(Elementwise, ShapeMismatchIsContractError) {
  EXPECT_THROW(add(FeatureMap(2, 2, 1), FeatureMap(2, 2, 2)), ContractError);
  EXPECT_THROW(hadamard(FeatureMap(2, 2, 1), FeatureMap(2, 3, 1)), ContractError);
  EXPECT_THROW(concat_channels(FeatureMap(2, 2, 1), FeatureMap(3, 2, 1)), ContractError);
}

TEST(Elementwise, BackwardPassesMatchFiniteDifferences) {
  for (const GradCheckResult& r : gradcheck_primitives(11)) EXPECT_LT(r.max_relative_error, 1e-6) << r.name;
}
