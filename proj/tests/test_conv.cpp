#include <gtest/gtest.h>

#include "cplae/core/conv.hpp"
#include "test_util.hpp"

using namespace cplae;
using cplae::testing::random_tensor;
using T64 = Tensor<double>;

namespace {

// Direct sliding-window cross-correlation.
std::vector<double> conv_oracle(const T64& x, const T64& k, std::size_t stride, std::size_t pad) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t F = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const std::size_t Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kw) / stride + 1;
  std::vector<double> out(B * F * Ho * Wo, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t oy = 0; oy < Ho; ++oy)
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          double acc = 0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long y = static_cast<long>(oy * stride + i) - static_cast<long>(pad);
                const long xx = static_cast<long>(ox * stride + j) - static_cast<long>(pad);
                if (y < 0 || xx < 0 || y >= static_cast<long>(H) || xx >= static_cast<long>(W)) continue;
                acc += x[((b * C + c) * H + y) * W + xx] * k[((f * C + c) * kh + i) * kw + j];
              }
          out[((b * F + f) * Ho + oy) * Wo + ox] = acc;
        }
  return out;
}

}  // namespace

TEST(Conv2d, IdentityKernel) {
  Rng rng(1);
  auto x = random_tensor<double>({1, 1, 4, 5}, rng);
  auto y = conv2d(x, T64({1, 1, 1, 1}, {1.0}));
  EXPECT_EQ(y.values(), x.values());
}

TEST(Conv2d, AllOnesKernelSumsEntries) {
  auto x = T64({1, 1, 2, 2}, {1, 2, 3, 4});
  auto y = conv2d(x, T64::full({1, 1, 2, 2}, 1.0));
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y.item(), 10.0);
}

TEST(Conv2d, MatchesSlidingWindowOracle) {
  Rng rng(2);
  auto x = random_tensor<double>({1, 2, 5, 5}, rng);
  auto k = random_tensor<double>({3, 2, 3, 3}, rng);
  for (std::size_t stride : {1, 2})
    for (std::size_t pad : {0, 1}) {
      auto y = conv2d(x, k, T64{}, stride, pad);
      auto oracle = conv_oracle(x, k, stride, pad);
      ASSERT_EQ(y.numel(), oracle.size());
      for (std::size_t i = 0; i < oracle.size(); ++i) EXPECT_NEAR(y[i], oracle[i], 1e-10);
    }
}

TEST(Conv2d, OutputGeometry) {
  auto y = conv2d(T64::zeros({2, 3, 7, 9}), T64::zeros({4, 3, 3, 3}), T64::zeros({4}), 2, 1);
  EXPECT_EQ(y.shape(), (Shape{2, 4, 4, 5}));
}

TEST(Conv2d, KernelLargerThanPaddedInput) {
  EXPECT_THROW(conv2d(T64::zeros({1, 1, 2, 2}), T64::zeros({1, 1, 3, 3})), DimensionError);
  EXPECT_NO_THROW(conv2d(T64::zeros({1, 1, 2, 2}), T64::zeros({1, 1, 3, 3}), T64{}, 1, 1));
  EXPECT_THROW(conv2d(T64::zeros({1, 1, 4, 4}), T64::zeros({1, 1, 3, 3}), T64{}, 0, 0), DimensionError);
}

TEST(Conv2d, BiasIsAddedPerFilter) {
  auto y = conv2d(T64::zeros({1, 1, 3, 3}), T64::zeros({2, 1, 3, 3}), T64::vector({0.5, -1.0}), 1, 1);
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_EQ(y[i], 0.5);
    EXPECT_EQ(y[9 + i], -1.0);
  }
}

TEST(MaxPool, PicksWindowMaximum) {
  auto x = T64({1, 1, 2, 4}, {1, 5, 2, 0, 3, 4, 8, 7});
  auto y = maxpool2d(x);
  EXPECT_EQ(y.values(), (std::vector<double>{5, 8}));
  EXPECT_THROW(maxpool2d(T64::zeros({1, 1, 1, 4})), DimensionError);
}

TEST(BatchNorm, TrainModeNormalizesAndUpdatesRunningStats) {
  auto x = T64({2, 1, 1, 2}, {1, 3, 5, 7});
  auto gamma = T64::vector({1.0}), beta = T64::vector({0.0});
  auto rm = T64::vector({0.0}), rv = T64::vector({1.0});
  auto y = batchnorm2d(x, gamma, beta, rm, rv, true, 0.1, 0.0);
  // mean 4, biased var 5
  EXPECT_NEAR(y[0], -3.0 / std::sqrt(5.0), 1e-12);
  EXPECT_NEAR(y[3], 3.0 / std::sqrt(5.0), 1e-12);
  EXPECT_NEAR(rm[0], 0.4, 1e-12);
  EXPECT_NEAR(rv[0], 0.9 + 0.1 * 20.0 / 3.0, 1e-12);
}

TEST(BatchNorm, EvalModeIsDeterministicAffineMap) {
  Rng rng(4);
  auto x = random_tensor<double>({3, 2, 2, 2}, rng);
  auto gamma = T64::vector({1.5, 0.5}), beta = T64::vector({0.1, -0.2});
  auto rm = T64::vector({0.2, -0.1}), rv = T64::vector({0.7, 1.3});
  auto a = batchnorm2d(x, gamma, beta, rm, rv, false);
  auto b = batchnorm2d(x, gamma, beta, rm, rv, false);
  EXPECT_EQ(a.values(), b.values());
  EXPECT_EQ(rm.values(), (std::vector<double>{0.2, -0.1}));
  EXPECT_NEAR(a[0], 1.5 * (x[0] - 0.2) / std::sqrt(0.7 + 1e-5) + 0.1, 1e-12);
}
