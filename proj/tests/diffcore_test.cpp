#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "tdos/grad.hpp"
#include "test_util.hpp"

using namespace tdos;
using tdos::test::attention_oracle;
using tdos::test::gradient_check;
using tdos::test::random_vec;

TEST(Attention, ConvexCombinationOfV) {
  Tensor q = Tensor::make({2, 2}, {1, 0, 0, 1});
  Tensor out = attention(q, q, q);
  // Rows of V are [1,0] and [0,1]; any convex mix has nonneg entries summing to 1.
  for (int i = 0; i < 2; ++i) {
    double s = out.at(i * 2) + out.at(i * 2 + 1);
    EXPECT_NEAR(s, 1.0, 1e-6);
    EXPECT_GE(out.at(i * 2), 0.0);
    EXPECT_GE(out.at(i * 2 + 1), 0.0);
  }
  Tensor w = attention_weights(q, q);
  for (int i = 0; i < 2; ++i)
    EXPECT_NEAR(w.at(i * 2) + w.at(i * 2 + 1), 1.0, 1e-6);
}

TEST(Attention, SingleTokenPassesVThrough) {
  Tensor q = Tensor::make({1, 2}, {3, 5});
  Tensor k = Tensor::make({1, 2}, {7, 1});
  Tensor v = Tensor::make({1, 2}, {2, 9});
  Tensor out = attention(q, k, v);
  EXPECT_DOUBLE_EQ(out.at(0), 2.0);
  EXPECT_DOUBLE_EQ(out.at(1), 9.0);
}

TEST(Attention, MatchesLoopOracle) {
  Rng rng(42);
  const int t = 3, d = 4;
  auto qd = random_vec(rng, t * d), kd = random_vec(rng, t * d),
       vd = random_vec(rng, t * d);
  Tensor out = attention(Tensor::make({t, d}, qd), Tensor::make({t, d}, kd),
                         Tensor::make({t, d}, vd));
  auto expect = attention_oracle(qd, kd, vd, t, d);
  for (int i = 0; i < t * d; ++i) EXPECT_NEAR(out.at(i), expect[i], 1e-9);
}

TEST(Attention, ShapeMismatchThrows) {
  Tensor q = Tensor::zeros({2, 3});
  Tensor k = Tensor::zeros({2, 4});
  EXPECT_THROW(attention(q, k, q), DimensionError);
  Tensor k2 = Tensor::zeros({3, 3});
  Tensor v2 = Tensor::zeros({2, 3});
  EXPECT_THROW(attention(q, k2, v2), DimensionError);
}

TEST(Attention, WeightRowsSumToOneRandom) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const int t = rng.uniform_int(1, 6), d = rng.uniform_int(1, 8);
    Tensor q = Tensor::make({t, d}, random_vec(rng, t * d, 3.0));
    Tensor k = Tensor::make({t, d}, random_vec(rng, t * d, 3.0));
    Tensor w = attention_weights(q, k);
    for (int i = 0; i < t; ++i) {
      double s = 0.0;
      for (int j = 0; j < t; ++j) s += w.at(i * t + j);
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(CrossEntropy, SaturatedCorrectClass) {
  Tensor logits = Tensor::make({1, 2}, {10, -10});
  Tensor loss = cross_entropy(logits, {0});
  EXPECT_LT(loss.item(), 1e-6);
  EXPECT_NEAR(loss.item(), 2.061e-9, 1e-10);
}

TEST(CrossEntropy, UniformIsLogK) {
  Tensor logits = Tensor::make({1, 2}, {0, 0});
  EXPECT_NEAR(cross_entropy(logits, {0}).item(), std::log(2.0), 1e-12);
}

TEST(CrossEntropy, MatchesDirectFormula) {
  Rng rng(3);
  const int b = 4, k = 3;
  auto ld = random_vec(rng, b * k, 2.0);
  std::vector<int> targets = {2, 0, 1, 1};
  Tensor loss = cross_entropy(Tensor::make({b, k}, ld), targets);
  double expect = 0.0;
  for (int i = 0; i < b; ++i) {
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(ld[i * k + j]);
    expect -= std::log(std::exp(ld[i * k + targets[i]]) / z);
  }
  expect /= b;
  EXPECT_NEAR(loss.item(), expect, 1e-9);
}

TEST(CrossEntropy, OutOfRangeTargetThrows) {
  Tensor logits = Tensor::zeros({1, 3});
  EXPECT_THROW(cross_entropy(logits, {3}), IndexError);
  EXPECT_THROW(cross_entropy(logits, {-1}), IndexError);
}

TEST(DiceLoss, PerfectOverlapIsZero) {
  Tensor m = Tensor::make({2, 2}, {1, 0, 1, 0});
  EXPECT_NEAR(dice_loss(m, m).item(), 0.0, 1e-12);
}

TEST(DiceLoss, AllOnePredAllZeroGt) {
  Tensor pred = Tensor::full({2, 2}, 1.0);
  Tensor gt = Tensor::zeros({2, 2});
  EXPECT_NEAR(dice_loss(pred, gt).item(), 0.8, 1e-12);
}

TEST(DiceLoss, EmptyBothIsZero) {
  Tensor z = Tensor::zeros({2, 2});
  EXPECT_NEAR(dice_loss(z, z).item(), 0.0, 1e-12);
}

TEST(DiceLoss, RejectsOutOfRangePred) {
  Tensor pred = Tensor::make({1, 2}, {0.5, 1.5});
  Tensor gt = Tensor::zeros({1, 2});
  EXPECT_THROW(dice_loss(pred, gt), std::invalid_argument);
}

TEST(L2Distance, IdentityIsZero) {
  Tensor a = Tensor::make({3}, {1, 2, 3});
  EXPECT_DOUBLE_EQ(l2_distance(a, a).item(), 0.0);
}

TEST(L2Distance, OrthonormalPair) {
  Tensor a = Tensor::make({2}, {1, 0});
  Tensor b = Tensor::make({2}, {0, 1});
  EXPECT_DOUBLE_EQ(l2_distance(a, b).item(), 2.0);
  EXPECT_DOUBLE_EQ(l2_distance(b, a).item(), 2.0);
}

TEST(L2Distance, MatchesLoopOracle) {
  Rng rng(11);
  auto ad = random_vec(rng, 17), bd = random_vec(rng, 17);
  double expect = 0.0;
  for (int i = 0; i < 17; ++i)
    expect += (ad[i] - bd[i]) * (ad[i] - bd[i]);
  EXPECT_NEAR(l2_distance(Tensor::make({17}, ad), Tensor::make({17}, bd)).item(),
              expect, 1e-12);
}

TEST(L2Distance, ShapeMismatchThrows) {
  EXPECT_THROW(l2_distance(Tensor::zeros({3}), Tensor::zeros({4})),
               DimensionError);
}

TEST(Backward, GradientAtMinimumIsZero) {
  Tensor c = Tensor::make({3}, {1, 2, 3});
  Tensor a = Tensor::make({3}, {1, 2, 3}, true);
  Gradients g = GradTape::backward(l2_distance(a, c));
  for (double gi : g.get(a)) EXPECT_DOUBLE_EQ(gi, 0.0);
}

TEST(Backward, CrossEntropyClosedFormGradient) {
  Tensor logits = Tensor::make({1, 2}, {0, 0}, true);
  Gradients g = GradTape::backward(cross_entropy(logits, {0}));
  auto gl = g.get(logits);
  EXPECT_NEAR(gl[0], -0.5, 1e-12);
  EXPECT_NEAR(gl[1], 0.5, 1e-12);
}

TEST(Backward, NonScalarLossThrows) {
  Tensor a = Tensor::zeros({2, 2}, true);
  EXPECT_THROW(GradTape::backward(add(a, a)), std::invalid_argument);
}

TEST(Backward, UnusedTensorGradIsZero) {
  Tensor a = Tensor::make({2}, {1, 2}, true);
  Tensor b = Tensor::make({2}, {3, 4}, true);
  Gradients g = GradTape::backward(sum(a));
  for (double gi : g.get(b)) EXPECT_DOUBLE_EQ(gi, 0.0);
}

// Gradient check every primitive over many seeds, individually and composed.
TEST(GradientCheck, AllOpsTwentySeeds) {
  for (int seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    const int t = 3, d = 4;
    Tensor q = Tensor::make({t, d}, random_vec(rng, t * d), true);
    Tensor k = Tensor::make({t, d}, random_vec(rng, t * d), true);
    Tensor v = Tensor::make({t, d}, random_vec(rng, t * d), true);
    Tensor w = Tensor::make({d, d}, random_vec(rng, d * d, 0.5), true);
    Tensor gain = Tensor::make({d}, random_vec(rng, d, 0.2), true);
    Tensor bias = Tensor::make({d}, random_vec(rng, d, 0.2), true);
    std::vector<int> targets = {0, 2, 1};

    auto attn_ce = [&]() {
      Tensor out = attention(q, k, v);
      Tensor logits = slice_rows(matmul(out, w), 0, t);
      return cross_entropy(logits, targets);
    };
    EXPECT_LE(gradient_check(attn_ce, q), 1e-4) << "seed " << seed;
    EXPECT_LE(gradient_check(attn_ce, k), 1e-4) << "seed " << seed;
    EXPECT_LE(gradient_check(attn_ce, v), 1e-4) << "seed " << seed;
    EXPECT_LE(gradient_check(attn_ce, w), 1e-4) << "seed " << seed;

    auto ln_gelu = [&]() {
      return mean(gelu(layer_norm(matmul(q, w), gain, bias)));
    };
    EXPECT_LE(gradient_check(ln_gelu, q), 1e-4);
    EXPECT_LE(gradient_check(ln_gelu, gain), 1e-4);
    EXPECT_LE(gradient_check(ln_gelu, bias), 1e-4);

    Tensor gtm = Tensor::make({t, d}, [&] {
      std::vector<double> m(t * d);
      for (double& x : m) x = rng.uniform() < 0.4 ? 1.0 : 0.0;
      return m;
    }());
    auto dice_path = [&]() { return dice_loss(sigmoid(q), gtm); };
    EXPECT_LE(gradient_check(dice_path, q), 1e-4);

    auto bce_path = [&]() { return bce_with_logits(q, gtm); };
    EXPECT_LE(gradient_check(bce_path, q), 1e-4);

    auto l2_path = [&]() { return l2_distance(mean_rows(q), mean_rows(k)); };
    EXPECT_LE(gradient_check(l2_path, q), 1e-4);

    auto norm_dot = [&]() {
      return dot(normalize(row(q, 0)), normalize(row(k, 1)));
    };
    EXPECT_LE(gradient_check(norm_dot, q), 1e-4);
    EXPECT_LE(gradient_check(norm_dot, k), 1e-4);

    auto upsample_path = [&]() {
      Tensor m4 = slice_rows(q, 0, 2);  // 2x4 map
      return bce_with_logits(upsample_bilinear(m4, 4, 8),
                             Tensor::zeros({4, 8}));
    };
    EXPECT_LE(gradient_check(upsample_path, q), 1e-4);

    auto softmax_path = [&]() { return mean(softmax_rows(q)); };
    EXPECT_LE(gradient_check(softmax_path, q), 1e-4);
  }
}

TEST(Determinism, ForwardBitIdentical) {
  Rng rng(5);
  const int t = 4, d = 8;
  Tensor q = Tensor::make({t, d}, random_vec(rng, t * d));
  Tensor k = Tensor::make({t, d}, random_vec(rng, t * d));
  Tensor v = Tensor::make({t, d}, random_vec(rng, t * d));
  Tensor a1 = attention(q, k, v);
  Tensor a2 = attention(q, k, v);
  for (std::size_t i = 0; i < a1.numel(); ++i)
    EXPECT_EQ(a1.at(i), a2.at(i));
}

TEST(Losses, NonNegativeOnRandomInputs) {
  Rng rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const int b = rng.uniform_int(1, 5), k = rng.uniform_int(2, 6);
    Tensor logits = Tensor::make({b, k}, random_vec(rng, b * k, 4.0));
    std::vector<int> tg(b);
    for (int& t : tg) t = rng.uniform_int(0, k - 1);
    EXPECT_GE(cross_entropy(logits, tg).item(), 0.0);

    std::vector<double> pd(b * k), gd(b * k);
    for (double& x : pd) x = rng.uniform();
    for (double& x : gd) x = rng.uniform() < 0.5 ? 0.0 : 1.0;
    Tensor loss = dice_loss(Tensor::make({b, k}, pd), Tensor::make({b, k}, gd));
    EXPECT_GE(loss.item(), 0.0);
    EXPECT_LE(loss.item(), 1.0);
  }
}
