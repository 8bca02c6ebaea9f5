// Copyright 2026 The pcrpose Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "pcr/gradcheck.hpp"
#include "pcr/ops.hpp"

namespace pcr {
namespace {

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

/// Random valid conv spec plus an input extent that fits the dilated kernel.
struct ConvCase {
  ConvSpec spec;
  Shape x;
};

ConvCase random_conv_case(std::mt19937_64& rng, std::size_t dilation = 0) {
  ConvSpec s;
  s.kernel_h = pick(rng, 1, 3);
  s.kernel_w = pick(rng, 1, 3);
  s.stride = pick(rng, 1, 3);
  s.dilation = dilation ? dilation : pick(rng, 1, 4);
  s.padding = pick(rng, 0, 3);
  s.in_channels = pick(rng, 1, 3);
  s.out_channels = pick(rng, 1, 3);
  const std::size_t min_h = s.dilation * (s.kernel_h - 1) + 1, min_w = s.dilation * (s.kernel_w - 1) + 1;
  const Shape x{pick(rng, 1, 2), s.in_channels, min_h + pick(rng, 0, 5), min_w + pick(rng, 0, 5)};
  return {s, x};
}

TEST(Conv2d, MatchesBruteForceDefinition) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 200; ++t) {
    const auto [spec, xs] = random_conv_case(rng);
    const Tensor x = oracle::random_tensor(xs, rng);
    const Tensor w = oracle::random_tensor(spec.weight_shape(), rng);
    const Tensor b = oracle::random_tensor({1, spec.out_channels, 1, 1}, rng);
    const Tensor got = conv2d(Var(x), Var(w), Var(b), spec).value();
    const Tensor want = oracle::conv(x, w, &b, spec.stride, spec.dilation, spec.padding);
    ASSERT_EQ(got.shape(), want.shape()) << "case " << t;
    EXPECT_LT(max_abs_diff(got, want), 1e-12) << "case " << t;
  }
}

TEST(Conv2d, DilationEqualsZeroInflatedKernel) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 100; ++t) {
    const std::size_t d = 1 + static_cast<std::size_t>(t % 4);
    auto [spec, xs] = random_conv_case(rng, d);
    const Tensor x = oracle::random_tensor(xs, rng);
    const Tensor w = oracle::random_tensor(spec.weight_shape(), rng);
    const Tensor wz = oracle::zero_inflate(w, d);
    ConvSpec dense = spec;
    dense.dilation = 1;
    dense.kernel_h = wz.shape().h;
    dense.kernel_w = wz.shape().w;
    const Tensor a = conv2d(Var(x), Var(w), Var(), spec).value();
    const Tensor z = conv2d(Var(x), Var(wz), Var(), dense).value();
    ASSERT_EQ(a.shape(), z.shape());
    EXPECT_LT(max_abs_diff(a, z), 1e-12) << "d=" << d;
  }
}

TEST(Conv2d, SameDilatedPaddingPreservesExtent) {
  std::mt19937_64 rng(13);
  for (std::size_t d = 1; d <= 4; ++d) {
    const ConvSpec s = ConvSpec::same3x3(2, 3, d);
    const Tensor x = oracle::random_tensor({1, 2, 9, 7}, rng);
    const Tensor w = oracle::random_tensor(s.weight_shape(), rng);
    EXPECT_EQ(conv2d(Var(x), Var(w), Var(), s).shape(), (Shape{1, 3, 9, 7}));
  }
}

TEST(Conv2d, AdjointInnerProductIdentities) {
  std::mt19937_64 rng(14);
  for (int t = 0; t < 100; ++t) {
    const auto [spec, xs] = random_conv_case(rng);
    const Tensor x = oracle::random_tensor(xs, rng);
    const Tensor w = oracle::random_tensor(spec.weight_shape(), rng);
    const Tensor y = conv2d(Var(x), Var(w), Var(), spec).value();
    const Tensor gy = oracle::random_tensor(y.shape(), rng);
    const double lhs = dot(y, gy);
    const double via_data = dot(x, kernels::conv_backward_data(gy, w, spec, xs));
    const double via_filter = dot(w, kernels::conv_backward_filter(x, gy, spec));
    const double scale_ref = std::max(1.0, std::abs(lhs));
    EXPECT_LT(std::abs(lhs - via_data) / scale_ref, 1e-12);
    EXPECT_LT(std::abs(lhs - via_filter) / scale_ref, 1e-12);
  }
}

TEST(Conv2d, IsLinearInItsInput) {
  std::mt19937_64 rng(15);
  for (int t = 0; t < 50; ++t) {
    const auto [spec, xs] = random_conv_case(rng);
    const Tensor x1 = oracle::random_tensor(xs, rng), x2 = oracle::random_tensor(xs, rng);
    const Tensor w = oracle::random_tensor(spec.weight_shape(), rng);
    const double a = 0.7, b = -1.3;
    Tensor mix = x1;
    mix *= a;
    Tensor x2b = x2;
    x2b *= b;
    mix += x2b;
    Tensor want = conv2d(Var(x1), Var(w), Var(), spec).value();
    want *= a;
    Tensor part = conv2d(Var(x2), Var(w), Var(), spec).value();
    part *= b;
    want += part;
    EXPECT_LT(max_abs_diff(conv2d(Var(mix), Var(w), Var(), spec).value(), want), 1e-12);
  }
}

TEST(Conv2d, ShapeErrorsNameTheDimension) {
  const ConvSpec s = ConvSpec::same3x3(2, 3);
  const Var x(Tensor({1, 2, 5, 5}));
  try {
    (void)conv2d(x, Var(Tensor({3, 2, 3, 2})), Var(), s);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("kernel_w"), std::string::npos);
  }
  try {
    (void)conv2d(Var(Tensor({1, 4, 5, 5})), Var(Tensor(s.weight_shape())), Var(), s);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("input channels"), std::string::npos);
  }
  EXPECT_THROW((void)conv2d(Var(Tensor({1, 2, 1, 1})), Var(Tensor({3, 2, 3, 3})), Var(),
                            ConvSpec{3, 3, 1, 2, 0, 2, 3}),
               ShapeError);
}

TEST(Deconv2d, MatchesScatterDefinitionAndDoublesExtent) {
  std::mt19937_64 rng(16);
  for (int t = 0; t < 50; ++t) {
    const ConvSpec s = ConvSpec::upsample_deconv(pick(rng, 1, 3), pick(rng, 1, 3));
    const Shape xs{pick(rng, 1, 2), s.in_channels, pick(rng, 1, 6), pick(rng, 1, 6)};
    const Tensor x = oracle::random_tensor(xs, rng);
    const Tensor w = oracle::random_tensor(s.deconv_weight_shape(), rng);
    const Tensor b = oracle::random_tensor({1, s.out_channels, 1, 1}, rng);
    const Tensor got = deconv2d(Var(x), Var(w), Var(b), s).value();
    EXPECT_EQ(got.shape(), (Shape{xs.n, s.out_channels, 2 * xs.h, 2 * xs.w}));
    EXPECT_LT(max_abs_diff(got, oracle::deconv(x, w, &b, 2, 1)), 1e-12);
  }
}

TEST(Deconv2d, GeneralStridesMatchScatterDefinition) {
  std::mt19937_64 rng(17);
  for (int t = 0; t < 50; ++t) {
    ConvSpec s{pick(rng, 1, 4), pick(rng, 1, 4), pick(rng, 1, 3), 1, 0, pick(rng, 1, 2), pick(rng, 1, 2)};
    s.padding = pick(rng, 0, std::min(s.kernel_h, s.kernel_w) - 1);
    const Shape xs{1, s.in_channels, pick(rng, 2, 5), pick(rng, 2, 5)};
    const Tensor x = oracle::random_tensor(xs, rng);
    const Tensor w = oracle::random_tensor(s.deconv_weight_shape(), rng);
    EXPECT_LT(max_abs_diff(deconv2d(Var(x), Var(w), Var(), s).value(), oracle::deconv(x, w, nullptr, s.stride, s.padding)),
              1e-12);
  }
}

TEST(BatchNorm, TrainModeMatchesNormalizeThenAffine) {
  std::mt19937_64 rng(18);
  for (int t = 0; t < 20; ++t) {
    const Shape s{pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 5), pick(rng, 1, 5)};
    if (s.n * s.h * s.w < 2) continue;
    const Tensor x = oracle::random_tensor(s, rng, -3.0, 5.0);
    const Tensor g = oracle::random_tensor({1, s.c, 1, 1}, rng), b = oracle::random_tensor({1, s.c, 1, 1}, rng);
    BnState st(s.c);
    const Tensor y = batch_norm(Var(x), Var(g), Var(b), st, Mode::train).value();
    std::vector<double> mean, var;
    oracle::channel_stats(x, mean, var);
    EXPECT_LT(max_abs_diff(y, oracle::normalize_affine(x, mean, var, g, b, 1e-5)), 1e-10);
    // Running statistics: momentum 0.1 from (0, 1), variance unbiased.
    const double m = static_cast<double>(s.n * s.h * s.w);
    for (std::size_t c = 0; c < s.c; ++c) {
      EXPECT_NEAR(st.running_mean[c], 0.1 * mean[c], 1e-12);
      EXPECT_NEAR(st.running_var[c], 0.9 + 0.1 * var[c] * m / (m - 1.0), 1e-12);
    }
  }
}

TEST(BatchNorm, InferModeUsesRunningStatistics) {
  std::mt19937_64 rng(19);
  const Tensor x = oracle::random_tensor({2, 3, 4, 4}, rng);
  const Tensor g = oracle::random_tensor({1, 3, 1, 1}, rng), b = oracle::random_tensor({1, 3, 1, 1}, rng);
  BnState st(3);
  st.running_mean = {0.5, -1.0, 2.0};
  st.running_var = {2.0, 0.5, 4.0};
  const BnState before = st;
  const Tensor y = batch_norm(Var(x), Var(g), Var(b), st, Mode::infer).value();
  EXPECT_LT(max_abs_diff(y, oracle::normalize_affine(x, before.running_mean, before.running_var, g, b, 1e-5)), 1e-12);
  EXPECT_EQ(st.running_mean, before.running_mean);
  EXPECT_EQ(st.running_var, before.running_var);
}

TEST(BatchNorm, UnitGammaZeroBetaGivesZeroMeanAndShrunkVariance) {
  std::mt19937_64 rng(20);
  for (double spread : {1.0, 10.0, 100.0}) {
    Tensor x = oracle::random_tensor({4, 3, 5, 5}, rng, -spread, spread);
    BnState st(3);
    const Tensor y =
        batch_norm(Var(x), Var(Tensor::ones({1, 3, 1, 1})), Var(Tensor::zeros({1, 3, 1, 1})), st, Mode::train).value();
    std::vector<double> xm, xv, ym, yv;
    oracle::channel_stats(x, xm, xv);
    oracle::channel_stats(y, ym, yv);
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_NEAR(ym[c], 0.0, 1e-12);
      // Exact: var(y) = var(x) / (var(x) + eps).
      EXPECT_NEAR(yv[c], xv[c] / (xv[c] + 1e-5), 1e-12);
      if (xv[c] >= 10.0) {
        EXPECT_NEAR(yv[c], 1.0, 1e-6);
      }
    }
  }
}

TEST(ElementOps, ForwardValues) {
  const Var x(Tensor({1, 2, 1, 2}, std::vector<double>{-1, 2, 0, -3}));
  EXPECT_EQ(relu(x).value().vec(), (std::vector<double>{0, 2, 0, 0}));
  EXPECT_DOUBLE_EQ(sigmoid(x).value()[1], 1.0 / (1.0 + std::exp(-2.0)));
  EXPECT_EQ(global_avg_pool(x).value().vec(), (std::vector<double>{0.5, -1.5}));
  EXPECT_EQ(scale(x, -2.0).value().vec(), (std::vector<double>{2, -4, 0, 6}));
  EXPECT_DOUBLE_EQ(sum(x).item(), -2.0);
  const Var s(Tensor({1, 2, 1, 1}, std::vector<double>{10, 100}));
  EXPECT_EQ(channel_scale(x, s).value().vec(), (std::vector<double>{-10, 20, 0, -300}));
  const Tensor up = upsample2x_nearest(x).value();
  EXPECT_EQ(up.shape(), (Shape{1, 2, 2, 4}));
  EXPECT_EQ(up.at(0, 1, 1, 3), -3.0);
  EXPECT_EQ(up.at(0, 0, 0, 1), -1.0);
  const Tensor cat = concat_channels({x, x}).value();
  EXPECT_EQ(cat.shape(), (Shape{1, 4, 1, 2}));
  EXPECT_EQ(cat.at(0, 3, 0, 1), -3.0);
}

TEST(ElementOps, SigmoidIsStableForLargeInputs) {
  EXPECT_EQ(sigmoid_scalar(-1000.0), 0.0);
  EXPECT_EQ(sigmoid_scalar(1000.0), 1.0);
  EXPECT_TRUE(std::isfinite(sigmoid_scalar(-745.5)));
}

TEST(WeightedMse, HandComputed) {
  // N=1, J=2, 1x2 maps: weights (1, 0) -> mean over 4 elements of w (p-t)^2.
  const Var p(Tensor({1, 2, 1, 2}, std::vector<double>{1, 2, 3, 4}));
  const Tensor t({1, 2, 1, 2}, std::vector<double>{0, 0, 0, 0});
  const Tensor w({1, 2, 1, 1}, std::vector<double>{1, 0});
  EXPECT_DOUBLE_EQ(weighted_mse(p, t, w).item(), (1.0 + 4.0) / 4.0);
  EXPECT_THROW((void)weighted_mse(p, Tensor({1, 2, 2, 1}), w), ShapeError);
  EXPECT_THROW((void)weighted_mse(p, t, Tensor({1, 1, 1, 1})), ShapeError);
}

// ---------------------------------------------------------------------------
// Finite-difference checks, one per differentiable op.

Var leaf(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  return Var::parameter(Tensor::uniform(s, rng, lo, hi));
}

/// Reduces any output to a scalar through a fixed random quadratic.
std::function<Var()> reduce(std::function<Var()> f, std::mt19937_64& rng) {
  const Shape s = f().shape();
  auto target = std::make_shared<Tensor>(Tensor::uniform(s, rng));
  auto weights = std::make_shared<Tensor>(Tensor::uniform({s.n, s.c, 1, 1}, rng, 0.5, 1.5));
  return [f, target, weights] { return weighted_mse(f(), *target, *weights); };
}

void expect_gradcheck(const std::function<Var()>& loss, std::vector<std::pair<std::string, Var>> leaves) {
  for (const auto& e : gradcheck(loss, std::move(leaves))) {
    EXPECT_TRUE(e.ok) << e.name << " rel_error " << e.rel_error << " (|a| " << e.analytic_norm << ", |n| "
                      << e.numeric_norm << ")";
  }
}

TEST(GradCheck, Conv2dAcrossStridesAndDilations) {
  std::mt19937_64 rng(30);
  for (int t = 0; t < 12; ++t) {
    const auto [spec, xs] = random_conv_case(rng);
    Var x = leaf(xs, rng), w = leaf(spec.weight_shape(), rng), b = leaf({1, spec.out_channels, 1, 1}, rng);
    const ConvSpec s = spec;
    expect_gradcheck(reduce([=] { return conv2d(x, w, b, s); }, rng), {{"x", x}, {"w", w}, {"b", b}});
  }
}

TEST(GradCheck, Deconv2d) {
  std::mt19937_64 rng(31);
  const ConvSpec s = ConvSpec::upsample_deconv(2, 3);
  Var x = leaf({2, 2, 3, 2}, rng), w = leaf(s.deconv_weight_shape(), rng), b = leaf({1, 3, 1, 1}, rng);
  expect_gradcheck(reduce([=] { return deconv2d(x, w, b, s); }, rng), {{"x", x}, {"w", w}, {"b", b}});
}

TEST(GradCheck, BatchNormTrainAndInfer) {
  std::mt19937_64 rng(32);
  for (Mode mode : {Mode::train, Mode::infer}) {
    Var x = leaf({2, 3, 3, 2}, rng, -2.0, 3.0), g = leaf({1, 3, 1, 1}, rng, 0.5, 1.5), b = leaf({1, 3, 1, 1}, rng);
    auto st = std::make_shared<BnState>(3);
    st->running_mean = {0.1, -0.2, 0.3};
    st->running_var = {1.5, 0.7, 2.0};
    expect_gradcheck(reduce([=] { return batch_norm(x, g, b, *st, mode); }, rng), {{"x", x}, {"gamma", g}, {"beta", b}});
  }
}

TEST(GradCheck, ReluAwayFromKink) {
  std::mt19937_64 rng(33);
  Tensor v = Tensor::uniform({2, 2, 3, 3}, rng);
  for (double& e : v.vec()) e = e >= 0 ? e + 0.1 : e - 0.1;
  Var x = Var::parameter(v);
  expect_gradcheck(reduce([=] { return relu(x); }, rng), {{"x", x}});
}

TEST(GradCheck, PointwiseAndPoolingOps) {
  std::mt19937_64 rng(34);
  Var x = leaf({2, 3, 2, 3}, rng, -3.0, 3.0);
  Var y = leaf({2, 3, 2, 3}, rng);
  Var s = leaf({2, 3, 1, 1}, rng);
  Var z = leaf({2, 2, 2, 3}, rng);
  expect_gradcheck(reduce([=] { return sigmoid(x); }, rng), {{"sigmoid.x", x}});
  expect_gradcheck(reduce([=] { return global_avg_pool(x); }, rng), {{"gap.x", x}});
  expect_gradcheck(reduce([=] { return channel_scale(x, s); }, rng), {{"scale.x", x}, {"scale.s", s}});
  expect_gradcheck(reduce([=] { return concat_channels({x, z, y}); }, rng), {{"cat.x", x}, {"cat.z", z}, {"cat.y", y}});
  expect_gradcheck(reduce([=] { return upsample2x_nearest(x); }, rng), {{"up.x", x}});
  expect_gradcheck(reduce([=] { return add(x, y); }, rng), {{"add.x", x}, {"add.y", y}});
  expect_gradcheck(reduce([=] { return scale(x, -1.7); }, rng), {{"mul.x", x}});
  expect_gradcheck([=] { return sum(x); }, {{"sum.x", x}});
  const Tensor t = Tensor::uniform({2, 3, 2, 3}, rng);
  const Tensor w = Tensor::uniform({2, 3, 1, 1}, rng, 0.0, 2.0);
  expect_gradcheck([=] { return weighted_mse(x, t, w); }, {{"mse.x", x}});
}

}  // namespace
}  // namespace pcr
