#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "ctinterp/optimizer.hpp"

using namespace ctinterp;

namespace {

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<double> p{2.0}, g{1.0};
  AdamState<double> st;
  const AdamOptions opt;
  adam_step<double>(p, g, st, opt);
  // m_hat = 1, v_hat = 1: step = lr / (1 + eps).
  EXPECT_NEAR(p[0], 2.0 - 1e-4 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, ZeroGradientLeavesParametersAlone) {
  std::vector<double> p{0.5, -1.5}, g{0.0, 0.0};
  AdamState<double> st;
  for (int i = 0; i < 5; ++i) adam_step<double>(p, g, st, AdamOptions{});
  EXPECT_EQ(p[0], 0.5);
  EXPECT_EQ(p[1], -1.5);
}

TEST(Adam, IsPure) {
  std::vector<float> a{0.1f, 0.2f, 0.3f}, b = a;
  const std::vector<float> g{0.5f, -0.25f, 2.0f};
  AdamState<float> sa, sb;
  for (int i = 0; i < 3; ++i) {
    adam_step<float>(a, g, sa, AdamOptions{});
    adam_step<float>(b, g, sb, AdamOptions{});
  }
  EXPECT_EQ(a, b);
  EXPECT_EQ(sa, sb);
}

TEST(Adam, NonFiniteGradientThrowsBeforeUpdating) {
  std::vector<double> p{1.0, 2.0}, g{0.1, std::numeric_limits<double>::quiet_NaN()};
  AdamState<double> st;
  EXPECT_THROW(adam_step<double>(p, g, st, AdamOptions{}), NonFiniteError);
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(st.step, 0);
  g[1] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(adam_step<double>(p, g, st, AdamOptions{}), NonFiniteError);
}

TEST(Adam, SizeMismatchThrows) {
  std::vector<double> p{1.0}, g{1.0, 2.0};
  AdamState<double> st;
  EXPECT_THROW(adam_step<double>(p, g, st, AdamOptions{}), ShapeError);
}

}  // namespace
