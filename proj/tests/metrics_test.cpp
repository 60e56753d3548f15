#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "tdos/metrics.hpp"
#include "tdos/rng.hpp"

using namespace tdos;

namespace {

// Exhaustive-threshold AP oracle: O(n^2), direct counting, no sorting shared
// with the implementation.
double auprc_oracle(const std::vector<double>& scores,
                    const std::vector<std::uint8_t>& labels) {
  std::set<double> thresholds(scores.begin(), scores.end());
  std::size_t num_pos = 0;
  for (auto l : labels) num_pos += l != 0;
  // Walk thresholds from high to low; at each, count tp/fp by scanning.
  std::vector<double> desc(thresholds.rbegin(), thresholds.rend());
  double ap = 0.0, prev_recall = 0.0;
  for (double t : desc) {
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (scores[i] >= t) (labels[i] ? tp : fp)++;
    const double precision = static_cast<double>(tp) / (tp + fp);
    const double recall = static_cast<double>(tp) / num_pos;
    ap += precision * (recall - prev_recall);
    prev_recall = recall;
  }
  return ap;
}

double fpr_oracle(const std::vector<double>& scores,
                  const std::vector<std::uint8_t>& labels, double target) {
  std::set<double> thresholds(scores.begin(), scores.end());
  std::size_t num_pos = 0, num_neg = 0;
  for (auto l : labels) (l ? num_pos : num_neg)++;
  double best = 1.0;
  bool any = false;
  for (double t : thresholds) {
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (scores[i] >= t) (labels[i] ? tp : fp)++;
    if (static_cast<double>(tp) / num_pos >= target) {
      best = any ? std::min(best, static_cast<double>(fp) / num_neg)
                 : static_cast<double>(fp) / num_neg;
      any = true;
    }
  }
  return any ? best : 1.0;
}

BinaryMask mask_from(std::initializer_list<std::initializer_list<int>> rows) {
  BinaryMask m;
  m.h = static_cast<int>(rows.size());
  m.w = static_cast<int>(rows.begin()->size());
  for (const auto& r : rows)
    for (int v : r) m.data.push_back(static_cast<std::uint8_t>(v));
  return m;
}

}  // namespace

TEST(Auprc, PerfectRanking) {
  EXPECT_NEAR(auprc({0.9, 0.8, 0.7, 0.1}, {1, 1, 0, 0}), 1.0, 1e-12);
}

TEST(Auprc, ReversedPairIsHalf) {
  EXPECT_NEAR(auprc({0.9, 0.1}, {0, 1}), 0.5, 1e-12);
}

TEST(Auprc, MatchesBruteForceOracle) {
  Rng rng(17);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = rng.uniform_int(5, 200);
    std::vector<double> scores(n);
    std::vector<std::uint8_t> labels(n);
    for (int i = 0; i < n; ++i) {
      // Quantized scores so ties actually occur.
      scores[i] = rng.uniform_int(0, 20) / 20.0;
      labels[i] = rng.uniform() < 0.3 ? 1 : 0;
    }
    labels[0] = 1;
    labels[1] = 0;
    EXPECT_NEAR(auprc(scores, labels), auprc_oracle(scores, labels), 1e-9);
  }
}

TEST(Auprc, SingleClassThrows) {
  EXPECT_THROW(auprc({0.5, 0.6}, {1, 1}), UndefinedMetricError);
  EXPECT_THROW(auprc({0.5, 0.6}, {0, 0}), UndefinedMetricError);
}

TEST(Auprc, InvariantUnderMonotoneTransform) {
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 80;
    std::vector<double> scores(n), warped(n);
    std::vector<std::uint8_t> labels(n);
    for (int i = 0; i < n; ++i) {
      scores[i] = rng.uniform();
      warped[i] = std::tanh(3.0 * scores[i]) + 2.0;
      labels[i] = rng.uniform() < 0.4 ? 1 : 0;
    }
    labels[0] = 1;
    labels[1] = 0;
    EXPECT_NEAR(auprc(scores, labels), auprc(warped, labels), 1e-12);
    EXPECT_NEAR(fpr_at_tpr(scores, labels), fpr_at_tpr(warped, labels), 1e-12);
  }
}

TEST(FprAtTpr, PerfectSeparation) {
  EXPECT_NEAR(fpr_at_tpr({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}), 0.0, 1e-12);
}

TEST(FprAtTpr, ThreePointHandSweep) {
  EXPECT_NEAR(fpr_at_tpr({0.9, 0.8, 0.1}, {0, 1, 0}), 0.5, 1e-12);
}

TEST(FprAtTpr, WorstRankingIsOne) {
  EXPECT_NEAR(fpr_at_tpr({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}), 1.0, 1e-12);
}

TEST(FprAtTpr, MatchesBruteForceOracle) {
  Rng rng(29);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = rng.uniform_int(5, 200);
    std::vector<double> scores(n);
    std::vector<std::uint8_t> labels(n);
    for (int i = 0; i < n; ++i) {
      scores[i] = rng.uniform_int(0, 15) / 15.0;
      labels[i] = rng.uniform() < 0.4 ? 1 : 0;
    }
    labels[0] = 1;
    labels[1] = 0;
    EXPECT_NEAR(fpr_at_tpr(scores, labels, 0.95),
                fpr_oracle(scores, labels, 0.95), 1e-9);
  }
}

TEST(FprAtTpr, NonIncreasingAsTargetDecreases) {
  Rng rng(31);
  std::vector<double> scores(100);
  std::vector<std::uint8_t> labels(100);
  for (int i = 0; i < 100; ++i) {
    scores[i] = rng.uniform();
    labels[i] = rng.uniform() < 0.3 ? 1 : 0;
  }
  labels[0] = 1;
  labels[1] = 0;
  double prev = 1.0;
  for (double target : {0.99, 0.95, 0.9, 0.8, 0.5, 0.2}) {
    const double f = fpr_at_tpr(scores, labels, target);
    EXPECT_LE(f, prev + 1e-12);
    prev = f;
  }
}

TEST(Iou, BasicCases) {
  BinaryMask a = mask_from({{1, 1}, {0, 0}});
  BinaryMask b = mask_from({{0, 0}, {1, 1}});
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, b), 0.0);
  BinaryMask half = mask_from({{1, 0}, {0, 0}});
  EXPECT_DOUBLE_EQ(iou(half, a), 0.5);
  BinaryMask empty = BinaryMask::zeros(2, 2);
  EXPECT_DOUBLE_EQ(iou(empty, empty), 1.0);
  BinaryMask bad = BinaryMask::zeros(3, 2);
  EXPECT_THROW(iou(a, bad), DimensionError);
}

TEST(ComponentF1, TwoBlobsOneDetected) {
  // gt: two separate blobs; pred: exactly one of them.
  BinaryMask gt = mask_from({{1, 1, 0, 0, 0},
                             {1, 1, 0, 0, 0},
                             {0, 0, 0, 0, 0},
                             {0, 0, 0, 1, 1},
                             {0, 0, 0, 1, 1}});
  BinaryMask pred = mask_from({{1, 1, 0, 0, 0},
                               {1, 1, 0, 0, 0},
                               {0, 0, 0, 0, 0},
                               {0, 0, 0, 0, 0},
                               {0, 0, 0, 0, 0}});
  EXPECT_NEAR(component_f1(pred, gt), 2.0 / 3.0, 1e-12);
}

TEST(ComponentF1, EightConnectivity) {
  // Diagonal touch merges into one component under 8-connectivity.
  BinaryMask m = mask_from({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  std::vector<int> labels;
  EXPECT_EQ(connected_components(m, labels), 1);
}

TEST(ObjectEval, PerfectScores) {
  BinaryMask gt = mask_from({{0, 1, 1, 0},
                             {0, 1, 1, 0},
                             {0, 0, 0, 0},
                             {0, 0, 0, 0}});
  ScoreMap map;
  map.h = map.w = 4;
  map.ood_score.assign(16, 0.0);
  map.pred_class.assign(16, 0);
  for (std::size_t i = 0; i < 16; ++i)
    map.ood_score[i] = gt.data[i] ? 1.0 : 0.0;
  const auto e = object_eval(map, gt, default_threshold_grid());
  for (const auto& pt : e.per_threshold) {
    EXPECT_DOUBLE_EQ(pt.iou, 1.0);
    EXPECT_DOUBLE_EQ(pt.f1, 1.0);
  }
  EXPECT_GE(e.auiou, 0.99);
  EXPECT_NEAR(e.mean_f1, 1.0, 1e-12);
}

TEST(ObjectEval, AllZeroScores) {
  BinaryMask gt = mask_from({{1, 0}, {0, 0}});
  ScoreMap map;
  map.h = map.w = 2;
  map.ood_score.assign(4, 0.0);
  map.pred_class.assign(4, 0);
  const auto e = object_eval(map, gt, default_threshold_grid());
  for (const auto& pt : e.per_threshold) {
    EXPECT_DOUBLE_EQ(pt.iou, 0.0);
    EXPECT_DOUBLE_EQ(pt.f1, 0.0);
  }
  EXPECT_LE(e.auiou, 0.01);
}

TEST(ObjectEval, TwoBlobsF1TwoThirds) {
  BinaryMask gt = mask_from({{1, 1, 0, 0, 0},
                             {1, 1, 0, 0, 0},
                             {0, 0, 0, 0, 0},
                             {0, 0, 0, 1, 1},
                             {0, 0, 0, 1, 1}});
  ScoreMap map;
  map.h = map.w = 5;
  map.ood_score.assign(25, 0.0);
  map.pred_class.assign(25, 0);
  map.ood_score[0] = map.ood_score[1] = map.ood_score[5] = map.ood_score[6] =
      0.9;
  const auto e = object_eval(map, gt, default_threshold_grid());
  for (const auto& pt : e.per_threshold)
    if (pt.t <= 0.9) EXPECT_NEAR(pt.f1, 2.0 / 3.0, 1e-12);
}

TEST(ObjectEval, BadGridThrows) {
  ScoreMap map;
  map.h = map.w = 1;
  map.ood_score = {0.5};
  map.pred_class = {0};
  BinaryMask gt = BinaryMask::zeros(1, 1);
  EXPECT_THROW(object_eval(map, gt, {}), std::invalid_argument);
  EXPECT_THROW(object_eval(map, gt, {0.5, 0.4}), std::invalid_argument);
}

TEST(ObjectEval, PiecewiseConstantBetweenScores) {
  // Inserting grid points must not change values at existing points.
  Rng rng(41);
  ScoreMap map;
  map.h = map.w = 8;
  map.ood_score.resize(64);
  map.pred_class.assign(64, 0);
  BinaryMask gt = BinaryMask::zeros(8, 8);
  for (int i = 0; i < 64; ++i) {
    map.ood_score[i] = rng.uniform_int(0, 4) / 4.0;
    gt.data[i] = rng.uniform() < 0.3 ? 1 : 0;
  }
  const auto coarse = object_eval(map, gt, {0.2, 0.5, 0.8});
  const auto fine = object_eval(map, gt, {0.1, 0.2, 0.35, 0.5, 0.65, 0.8});
  EXPECT_DOUBLE_EQ(coarse.per_threshold[0].iou, fine.per_threshold[1].iou);
  EXPECT_DOUBLE_EQ(coarse.per_threshold[1].iou, fine.per_threshold[3].iou);
  EXPECT_DOUBLE_EQ(coarse.per_threshold[2].iou, fine.per_threshold[5].iou);
}

TEST(ScoreThreshold, MonotoneNesting) {
  Rng rng(43);
  ScoreMap map;
  map.h = map.w = 6;
  map.ood_score.resize(36);
  map.pred_class.assign(36, 0);
  for (auto& s : map.ood_score) s = rng.uniform();
  double prev_t = 0.0;
  BinaryMask prev = score_threshold(map, prev_t);
  for (double t : {0.1, 0.3, 0.5, 0.7, 0.9, 1.0}) {
    BinaryMask cur = score_threshold(map, t);
    for (std::size_t i = 0; i < cur.data.size(); ++i)
      if (cur.data[i]) EXPECT_TRUE(prev.data[i]);
    prev = cur;
  }
  EXPECT_THROW(score_threshold(map, -0.1), std::invalid_argument);
  EXPECT_THROW(score_threshold(map, 1.1), std::invalid_argument);
}
