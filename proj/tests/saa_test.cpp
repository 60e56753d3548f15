#include <cmath>

#include <gtest/gtest.h>

#include "tdos/saa.hpp"
#include "test_util.hpp"

using namespace tdos;
using tdos::test::gradient_check;

namespace {

Tensor rand_mat(Rng& rng, int r, int c, bool grad = false) {
  return Tensor::randn({r, c}, rng, 1.0, grad);
}

TokenMask random_mask(Rng& rng, int t) {
  TokenMask m;
  m.weights.assign(t, 0.0);
  for (int i = 1; i < t; ++i) m.weights[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
  return m;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (a.at(i) != b.at(i)) return false;
  return true;
}

}  // namespace

TEST(Saa, IdentityWhenLambdaZero) {
  for (int c = 0; c < 100; ++c) {
    Rng rng(100 + c);
    const int t = 3 + rng.uniform_int(0, 5), d = 4;
    Tensor q = rand_mat(rng, t, d), k = rand_mat(rng, t, d),
           v = rand_mat(rng, t, d);
    TokenMask m = random_mask(rng, t);
    Rng noise(c);
    EXPECT_TRUE(bitwise_equal(saa_attention(q, k, v, m, 0.0, 1.0, 0.1, noise),
                              attention(q, k, v)))
        << "case " << c;
  }
}

TEST(Saa, IdentityWhenGateOff) {
  for (int c = 0; c < 100; ++c) {
    Rng rng(300 + c);
    const int t = 3 + rng.uniform_int(0, 5), d = 4;
    Tensor q = rand_mat(rng, t, d), k = rand_mat(rng, t, d),
           v = rand_mat(rng, t, d);
    TokenMask m = random_mask(rng, t);
    Rng noise(c);
    EXPECT_TRUE(bitwise_equal(saa_attention(q, k, v, m, 2.0, 1.0, 0.5, noise),
                              attention(q, k, v)))
        << "case " << c;
  }
}

TEST(Saa, IdentityWhenMaskEmpty) {
  for (int c = 0; c < 100; ++c) {
    Rng rng(500 + c);
    const int t = 3 + rng.uniform_int(0, 5), d = 4;
    Tensor q = rand_mat(rng, t, d), k = rand_mat(rng, t, d),
           v = rand_mat(rng, t, d);
    TokenMask m;
    m.weights.assign(t, 0.0);
    Rng noise(c);
    EXPECT_TRUE(bitwise_equal(saa_attention(q, k, v, m, 2.0, 1.0, 0.1, noise),
                              attention(q, k, v)))
        << "case " << c;
  }
}

TEST(Saa, OnlyMaskedRowsChange) {
  Rng rng(7);
  const int t = 9, d = 6;
  Tensor q = rand_mat(rng, t, d), k = rand_mat(rng, t, d),
         v = rand_mat(rng, t, d);
  TokenMask m;
  m.weights.assign(t, 0.0);
  m.weights[2] = m.weights[5] = 1.0;
  Rng noise(42);
  Tensor out = saa_attention(q, k, v, m, 3.0, 1.0, 0.0, noise);
  Tensor plain = attention(q, k, v);
  for (int i = 0; i < t; ++i) {
    double diff = 0.0;
    for (int j = 0; j < d; ++j)
      diff += std::abs(out.at(static_cast<std::size_t>(i) * d + j) -
                       plain.at(static_cast<std::size_t>(i) * d + j));
    if (m.weights[i] == 1.0)
      EXPECT_GT(diff, 1e-9) << "row " << i;
    else
      EXPECT_EQ(diff, 0.0) << "row " << i;
  }
}

TEST(Saa, ClsRowNeverAugmented) {
  Rng rng(8);
  const int t = 6, d = 4;
  Tensor q = rand_mat(rng, t, d), k = rand_mat(rng, t, d),
         v = rand_mat(rng, t, d);
  TokenMask m;
  m.weights.assign(t, 1.0);  // even an (invalid-by-convention) CLS bit
  Rng noise(1);
  Tensor out = saa_attention(q, k, v, m, 3.0, 1.0, 0.0, noise);
  Tensor plain = attention(q, k, v);
  for (int j = 0; j < d; ++j) EXPECT_EQ(out.at(j), plain.at(j));
}

TEST(Saa, SmallCaseMatchesLoopOracle) {
  // CLS + one masked patch token: the patch row must equal the straight-line
  // attention oracle run on inputs whose row 0 carries the same seeded
  // perturbation, and the CLS row must equal the un-noised oracle row.
  Rng rng(21);
  const int t = 2, d = 3;
  Tensor q = rand_mat(rng, t, d), k = rand_mat(rng, t, d),
         v = rand_mat(rng, t, d);
  TokenMask m;
  m.weights = {0.0, 1.0};
  Rng noise(55);
  Tensor out = saa_attention(q, k, v, m, 0.1, 1.0, 0.0, noise);

  Rng replay(55);
  std::vector<double> qn = q.data(), kn = k.data(), vn = v.data();
  for (int j = 0; j < d; ++j) {
    const double dj = 0.1 * replay.normal(0.0, 1.0);
    qn[j] += dj;
    kn[j] += dj;
    vn[j] += dj;
  }
  auto noised = test::attention_oracle(qn, kn, vn, t, d);
  auto plain = test::attention_oracle(q.data(), k.data(), v.data(), t, d);
  for (int j = 0; j < d; ++j) {
    EXPECT_NEAR(out.at(j), plain[j], 1e-12) << "cls col " << j;
    EXPECT_NEAR(out.at(d + j), noised[d + j], 1e-12) << "patch col " << j;
  }
}

TEST(Saa, DeterministicGivenSeed) {
  Rng rng(9);
  const int t = 7, d = 5;
  Tensor q = rand_mat(rng, t, d), k = rand_mat(rng, t, d),
         v = rand_mat(rng, t, d);
  TokenMask m = random_mask(rng, t);
  Rng n1(77), n2(77);
  EXPECT_TRUE(bitwise_equal(saa_attention(q, k, v, m, 1.0, 1.0, 0.2, n1),
                            saa_attention(q, k, v, m, 1.0, 1.0, 0.2, n2)));
}

TEST(Saa, GradientsFlowThroughAugmentedPath) {
  Rng rng(10);
  const int t = 5, d = 4;
  Tensor q = rand_mat(rng, t, d, true);
  Tensor k = rand_mat(rng, t, d, true);
  Tensor v = rand_mat(rng, t, d, true);
  TokenMask m;
  m.weights.assign(t, 0.0);
  m.weights[1] = m.weights[3] = 1.0;
  // Fixed noise stream inside the closure keeps finite differences coherent.
  auto forward = [&] {
    Rng noise(123);
    return sum(saa_attention(q, k, v, m, 1.5, 1.0, 0.0, noise));
  };
  EXPECT_LT(gradient_check(forward, q), 1e-4);
  EXPECT_LT(gradient_check(forward, k), 1e-4);
  EXPECT_LT(gradient_check(forward, v), 1e-4);
}

TEST(Saa, PerturbationGrowsWithLambda) {
  double small = 0.0, large = 0.0;
  for (int s = 0; s < 20; ++s) {
    Rng rng(1000 + s);
    const int t = 9, d = 6;
    Tensor q = rand_mat(rng, t, d), k = rand_mat(rng, t, d),
           v = rand_mat(rng, t, d);
    TokenMask m;
    m.weights.assign(t, 1.0);
    m.weights[0] = 0.0;
    Tensor plain = attention(q, k, v);
    for (double lam : {0.05, 2.0}) {
      Rng noise(s);
      Tensor out = saa_attention(q, k, v, m, lam, 1.0, 0.0, noise);
      double diff = 0.0;
      for (std::size_t i = 0; i < out.numel(); ++i)
        diff += std::abs(out.at(i) - plain.at(i));
      (lam < 1.0 ? small : large) += diff;
    }
  }
  EXPECT_GT(large, small * 2);
}

TEST(Mask, DownsampleAnyPixelRule) {
  BinaryMask m = BinaryMask::zeros(8, 8);
  m.set(0, 5, 1);  // patch (0,1)
  m.set(7, 7, 1);  // patch (1,1)
  TokenMask tm = downsample_mask(m, 4);
  ASSERT_EQ(tm.size(), 5u);  // CLS + 2x2 grid
  EXPECT_EQ(tm.weights[0], 0.0);
  EXPECT_EQ(tm.weights[1], 0.0);
  EXPECT_EQ(tm.weights[2], 1.0);
  EXPECT_EQ(tm.weights[3], 0.0);
  EXPECT_EQ(tm.weights[4], 1.0);
}

TEST(Mask, DownsampleRejectsNonTilingPatch) {
  BinaryMask m = BinaryMask::zeros(8, 8);
  EXPECT_THROW(downsample_mask(m, 3), DimensionError);
  EXPECT_THROW(downsample_mask(m, 0), DimensionError);
}

TEST(Saa, MaskSizeMismatchThrows) {
  Rng rng(11);
  Tensor q = rand_mat(rng, 5, 4), k = rand_mat(rng, 5, 4),
         v = rand_mat(rng, 5, 4);
  TokenMask m;
  m.weights.assign(4, 0.0);
  Rng noise(1);
  EXPECT_THROW(saa_attention(q, k, v, m, 1.0, 1.0, 0.0, noise),
               DimensionError);
}

TEST(Saa, NonBinaryMaskThrows) {
  Rng rng(12);
  Tensor q = rand_mat(rng, 4, 4), k = rand_mat(rng, 4, 4),
         v = rand_mat(rng, 4, 4);
  TokenMask m;
  m.weights = {0.0, 0.5, 1.0, 0.0};
  Rng noise(1);
  EXPECT_THROW(saa_attention(q, k, v, m, 1.0, 1.0, 0.0, noise),
               std::invalid_argument);
}
