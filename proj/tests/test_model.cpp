#include <gtest/gtest.h>

#include "ctinterp/model.hpp"
#include "test_support.hpp"

using namespace ctinterp;
using ctinterp::testing::random_image;
using ctinterp::testing::random_tensor;

namespace {

std::vector<std::string> shape_strings(const ModelConfig& cfg) {
  std::vector<std::string> out;
  for (const auto& s : pyramid_shapes(cfg)) out.push_back(s.str());
  return out;
}

ModelConfig sized(int n) {
  ModelConfig c;
  c.input_size = n;
  return c;
}

TEST(PyramidShapes, Size256) {
  const auto s = make_state<float>(sized(256));
  Rng rng(1);
  const auto p = encode(s, random_tensor<float>(1, 1, 256, 256, rng));
  ASSERT_EQ(p.levels.size(), 3u);
  const std::vector<std::string> want{"16x16x16", "8x8x8", "4x4x8"};
  std::vector<std::string> got;
  for (const auto& m : p.shapes()) got.push_back(m.str());
  EXPECT_EQ(got, want);
}

TEST(PyramidShapes, Size512) {
  EXPECT_EQ(shape_strings(sized(512)), (std::vector<std::string>{"32x32x16", "16x16x8", "8x8x4"}));
}

TEST(PyramidShapes, ToySizesDropSubPixelLevels) {
  EXPECT_EQ(shape_strings(sized(64)), (std::vector<std::string>{"4x4x16", "2x2x8", "1x1x8"}));
  EXPECT_EQ(shape_strings(sized(32)), (std::vector<std::string>{"2x2x16", "1x1x8"}));
  EXPECT_EQ(shape_strings(sized(16)), (std::vector<std::string>{"1x1x16"}));
}

TEST(PyramidShapes, RejectsSizesOffTheGrid) {
  EXPECT_THROW(resolve(sized(24)), ShapeError);
  EXPECT_THROW(resolve(sized(8)), ShapeError);
}

TEST(Encode, RejectsWrongInputSize) {
  const auto s = make_state<float>(sized(32));
  EXPECT_THROW(encode(s, Tensor<float>(1, 1, 64, 64)), ShapeError);
}

TEST(Decode, RoundTripShapeAndRange) {
  for (int n : {16, 64}) {
    const auto s = make_state<float>(sized(n));
    Rng rng(n);
    const auto x = random_tensor<float>(2, 1, n, n, rng);
    const auto y = decode(s, encode(s, x));
    EXPECT_TRUE(y.same_shape(x));
    for (float v : y.storage()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

TEST(Decode, OutputShape256) {
  const auto s = make_state<float>(sized(256));
  Rng rng(2);
  const auto x = random_tensor<float>(1, 1, 256, 256, rng);
  EXPECT_TRUE(decode(s, encode(s, x)).same_shape(x));
}

TEST(Interpolate, ScalarHandExample) {
  LatentPyramid<double> a, b;
  a.levels.push_back(Tensor<double>(1, 1, 1, 1, 2.0));
  b.levels.push_back(Tensor<double>(1, 1, 1, 1, 4.0));
  EXPECT_DOUBLE_EQ(interpolate_pyramid(a, b, 0.25).levels[0].data()[0], 3.5);
}

TEST(Interpolate, ConvexCombinationEverywhere) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    LatentPyramid<double> a, b;
    for (const auto& m : pyramid_shapes(sized(64))) {
      a.levels.push_back(random_tensor<double>(2, m.channels, m.height, m.width, rng, -3, 3));
      b.levels.push_back(random_tensor<double>(2, m.channels, m.height, m.width, rng, -3, 3));
    }
    const double alpha = rng.uniform();
    const auto z = interpolate_pyramid(a, b, alpha);
    for (std::size_t l = 0; l < z.levels.size(); ++l)
      for (std::size_t i = 0; i < z.levels[l].size(); ++i)
        ASSERT_NEAR(z.levels[l].data()[i], alpha * a.levels[l].data()[i] + (1 - alpha) * b.levels[l].data()[i], 1e-12);
  }
}

TEST(Interpolate, EndpointsAreExact) {
  Rng rng(4);
  LatentPyramid<float> a, b;
  a.levels.push_back(random_tensor<float>(1, 3, 2, 2, rng));
  b.levels.push_back(random_tensor<float>(1, 3, 2, 2, rng));
  EXPECT_EQ(interpolate_pyramid(a, b, 1.0), a);
  EXPECT_EQ(interpolate_pyramid(a, b, 0.0), b);
}

TEST(Interpolate, RejectsBadAlphaAndShapes) {
  LatentPyramid<float> a, b, c;
  a.levels.push_back(Tensor<float>(1, 1, 2, 2));
  b.levels.push_back(Tensor<float>(1, 1, 2, 2));
  c.levels.push_back(Tensor<float>(1, 2, 2, 2));
  EXPECT_THROW(interpolate_pyramid(a, b, 1.5), RangeError);
  EXPECT_THROW(interpolate_pyramid(a, b, -0.1), RangeError);
  EXPECT_THROW(interpolate_pyramid(a, c, 0.5), ShapeError);
}

TEST(Interpolate, AlphaWeightsTheFirstEndpoint) {
  EXPECT_DOUBLE_EQ(mix_weight_first(0.8), 0.8);
}

TEST(GenerateInterpolation, EndpointsReproduceReconstructions) {
  const auto s = make_state<float>(sized(32));
  Rng rng(5);
  const Image a = random_image(32, rng), b = random_image(32, rng);
  const Image ra = reconstruct(s, a), rb = reconstruct(s, b);
  const Image g1 = generate_interpolation(s, a, b, 1.0), g0 = generate_interpolation(s, a, b, 0.0);
  for (std::size_t i = 0; i < ra.size(); ++i) {
    EXPECT_NEAR(g1.pixels[i], ra.pixels[i], 1e-6);
    EXPECT_NEAR(g0.pixels[i], rb.pixels[i], 1e-6);
  }
}

TEST(GenerateInterpolation, SelfInterpolationIgnoresAlpha) {
  const auto s = make_state<float>(sized(32));
  Rng rng(6);
  const Image x = random_image(32, rng);
  const Image r = reconstruct(s, x);
  for (int k = 0; k <= 9; ++k) {
    const Image g = generate_interpolation(s, x, x, k / 9.0);
    for (std::size_t i = 0; i < g.size(); ++i) ASSERT_NEAR(g.pixels[i], r.pixels[i], 1e-6);
  }
}

TEST(GenerateInterpolation, BatchedHelperMatchesSingleCalls) {
  const auto s = make_state<float>(sized(32));
  Rng rng(7);
  const Image a = random_image(32, rng), b = random_image(32, rng);
  const std::vector<double> alphas{0.75, 0.5, 0.25};
  const auto batch = interpolate_between(s, a, b, alphas);
  ASSERT_EQ(batch.size(), 3u);
  for (std::size_t k = 0; k < alphas.size(); ++k) {
    const Image one = generate_interpolation(s, a, b, alphas[k]);
    for (std::size_t i = 0; i < one.size(); ++i) ASSERT_NEAR(batch[k].pixels[i], one.pixels[i], 1e-6);
  }
}

TEST(Critics, D1EmitsOneScalarPerSample) {
  const auto s = make_state<float>(sized(256));
  Rng rng(8);
  const auto x = random_tensor<float>(1, 1, 256, 256, rng);
  const auto a = d1_predict(s, x);
  ASSERT_EQ(a.size(), 1u);
  const auto b = d1_predict(s, x);
  EXPECT_EQ(a, b);
}

TEST(Critics, PatchGridSizes) {
  EXPECT_EQ(Architecture(sized(256)).d2.grid_size(), 30);
  EXPECT_EQ(Architecture(sized(512)).d2.grid_size(), 62);
  EXPECT_EQ(Architecture(sized(64)).d2.grid_size(), 6);
}

TEST(Critics, PatchProbabilitiesAreClamped) {
  auto s = make_state<double>(sized(64));
  // Huge final bias drives the raw sigmoid to exactly 1.
  const auto& last = s.arch.d2.convs().back();
  s.d2[last.bias_offset] = 1e3;
  Rng rng(9);
  const auto p = d2_patch_logits(s, random_tensor<double>(1, 1, 64, 64, rng));
  EXPECT_EQ(p.h(), 6);
  for (double v : p.storage()) {
    EXPECT_GE(v, kProbEpsilon);
    EXPECT_LE(v, 1.0 - kProbEpsilon);
  }
}

TEST(Critics, PatchGridFollowsTranslation) {
  // Shift by the total stride (8 px): cells whose receptive field stays clear
  // of zero padding move by exactly one grid step.
  ModelConfig c;
  c.input_size = 128;
  c.trunk_channels = {2, 2, 2, 2, 2, 2};
  c.pyramid_channels = {2, 2, 2};
  c.d2_base_channels = 4;
  const auto s = make_state<double>(c);
  Rng rng(10);
  const auto x = random_tensor<double>(1, 1, 128, 128, rng);
  Tensor<double> shifted(1, 1, 128, 128);
  for (int y = 0; y < 128; ++y)
    for (int xx = 8; xx < 128; ++xx) shifted(0, 0, y, xx) = x(0, 0, y, xx - 8);
  const auto a = d2_patch_logits(s, x);
  const auto b = d2_patch_logits(s, shifted);
  ASSERT_EQ(a.h(), 14);
  for (int i = 3; i <= 10; ++i)
    for (int j = 4; j <= 9; ++j) EXPECT_NEAR(b(0, 0, i, j + 1), a(0, 0, i, j), 1e-12) << i << "," << j;
}

TEST(State, ParameterCountsArePureFunctionsOfConfig) {
  const Architecture a(sized(64)), b(sized(64));
  EXPECT_EQ(a.encoder.param_count(), b.encoder.param_count());
  EXPECT_EQ(a.encoder.param_count(), 295440u);
  EXPECT_EQ(a.decoder.param_count(), 117905u);
  EXPECT_EQ(a.d1.param_count(), 293425u);
  EXPECT_EQ(a.d2.param_count(), 44281u);
}

TEST(State, InitializationIsSeeded) {
  ModelConfig c = sized(16);
  c.seed = 3;
  EXPECT_EQ(make_state<float>(c), make_state<float>(c));
  ModelConfig d = c;
  d.seed = 4;
  EXPECT_NE(make_state<float>(c).encoder, make_state<float>(d).encoder);
}

TEST(State, DefaultInitMatchesConfiguredSpread) {
  const auto s = make_state<double>(sized(64));
  double sum = 0, sq = 0;
  std::size_t n = 0;
  for (const auto& conv : s.arch.encoder.convs()) {
    for (std::size_t i = 0; i < conv.weight_count(); ++i) {
      const double v = s.encoder[conv.weight_offset + i];
      sum += v;
      sq += v * v;
      ++n;
    }
    for (int o = 0; o < conv.out_channels; ++o) EXPECT_EQ(s.encoder[conv.bias_offset + o], 0.0);
  }
  EXPECT_NEAR(sum / n, 0.0, 1e-3);
  EXPECT_NEAR(std::sqrt(sq / n), 0.02, 1e-3);
}

}  // namespace
