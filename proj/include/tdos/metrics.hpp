#pragma once

// Pixel-level (AuPRC, FPR95) and object-level (IoU, AuIoU, mean F1) OOD
// segmentation metrics. AuPRC is step-wise average precision over the score
// ranking; equal scores collapse to one threshold.

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <vector>

#include "tdos/errors.hpp"
#include "tdos/mask.hpp"
#include "tdos/scoring.hpp"

namespace tdos {

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
};

struct PixelEval {
  double auprc = 0.0;
  double fpr95 = 0.0;
  std::vector<PrPoint> curve;
};

struct ThresholdPoint {
  double t = 0.0;
  double iou = 0.0;
  double f1 = 0.0;
};

struct ObjectEval {
  double auiou = 0.0;
  double best_iou = 0.0;
  double mean_f1 = 0.0;
  std::vector<ThresholdPoint> per_threshold;
};

namespace detail {

inline void check_two_classes(const std::vector<std::uint8_t>& labels) {
  bool pos = false, neg = false;
  for (auto l : labels) (l ? pos : neg) = true;
  if (!pos || !neg)
    throw UndefinedMetricError(
        "metric undefined: labels contain a single class");
}

// Descending-score order with equal scores grouped into one threshold.
// Returns cumulative (tp, fp) after each distinct-score block.
struct Sweep {
  std::vector<double> thresholds;
  std::vector<std::size_t> tp;
  std::vector<std::size_t> fp;
  std::size_t num_pos = 0;
  std::size_t num_neg = 0;
};

inline Sweep threshold_sweep(const std::vector<double>& scores,
                             const std::vector<std::uint8_t>& labels) {
  if (scores.size() != labels.size())
    throw DimensionError("scores/labels length mismatch");
  check_two_classes(labels);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  Sweep s;
  for (auto l : labels) (l ? s.num_pos : s.num_neg)++;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (labels[order[i]] ? tp : fp)++;
    const bool last_of_block = i + 1 == order.size() ||
                               scores[order[i + 1]] != scores[order[i]];
    if (last_of_block) {
      s.thresholds.push_back(scores[order[i]]);
      s.tp.push_back(tp);
      s.fp.push_back(fp);
    }
  }
  return s;
}

}  // namespace detail

// Average precision over the ranked score sweep.
inline double auprc(const std::vector<double>& scores,
                    const std::vector<std::uint8_t>& labels) {
  const auto s = detail::threshold_sweep(scores, labels);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < s.tp.size(); ++i) {
    const double precision =
        static_cast<double>(s.tp[i]) / static_cast<double>(s.tp[i] + s.fp[i]);
    const double recall = static_cast<double>(s.tp[i]) / s.num_pos;
    ap += precision * (recall - prev_recall);
    prev_recall = recall;
  }
  return ap;
}

// Minimum FPR over thresholds achieving TPR >= tpr_target. The implicit
// +infinity threshold (nothing predicted) never reaches the target.
inline double fpr_at_tpr(const std::vector<double>& scores,
                         const std::vector<std::uint8_t>& labels,
                         double tpr_target = 0.95) {
  const auto s = detail::threshold_sweep(scores, labels);
  for (std::size_t i = 0; i < s.tp.size(); ++i) {
    const double tpr = static_cast<double>(s.tp[i]) / s.num_pos;
    if (tpr >= tpr_target)
      return static_cast<double>(s.fp[i]) / s.num_neg;
  }
  return 1.0;
}

inline PixelEval pixel_eval(const std::vector<double>& scores,
                            const std::vector<std::uint8_t>& labels,
                            double tpr_target = 0.95) {
  PixelEval e;
  const auto s = detail::threshold_sweep(scores, labels);
  double ap = 0.0, prev_recall = 0.0;
  double fpr95 = 1.0;
  bool found = false;
  for (std::size_t i = 0; i < s.tp.size(); ++i) {
    const double precision =
        static_cast<double>(s.tp[i]) / static_cast<double>(s.tp[i] + s.fp[i]);
    const double recall = static_cast<double>(s.tp[i]) / s.num_pos;
    ap += precision * (recall - prev_recall);
    prev_recall = recall;
    e.curve.push_back({recall, precision});
    if (!found && recall >= tpr_target) {
      fpr95 = static_cast<double>(s.fp[i]) / s.num_neg;
      found = true;
    }
  }
  e.auprc = ap;
  e.fpr95 = fpr95;
  return e;
}

// Pixel IoU; both-empty is defined as 1.
inline double iou(const BinaryMask& pred, const BinaryMask& gt) {
  if (!pred.same_shape(gt)) throw DimensionError("iou: shape mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] != 0, g = gt.data[i] != 0;
    inter += p && g;
    uni += p || g;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
}

// 8-connected component labeling. Returns labels (0 = background, 1..n) and
// the component count.
inline int connected_components(const BinaryMask& mask,
                                std::vector<int>& labels) {
  labels.assign(mask.data.size(), 0);
  int next = 0;
  std::vector<std::size_t> stack;
  for (int i = 0; i < mask.h; ++i)
    for (int j = 0; j < mask.w; ++j) {
      const std::size_t p = static_cast<std::size_t>(i) * mask.w + j;
      if (mask.data[p] == 0 || labels[p] != 0) continue;
      ++next;
      stack.push_back(p);
      labels[p] = next;
      while (!stack.empty()) {
        const std::size_t q = stack.back();
        stack.pop_back();
        const int qi = static_cast<int>(q) / mask.w;
        const int qj = static_cast<int>(q) % mask.w;
        for (int di = -1; di <= 1; ++di)
          for (int dj = -1; dj <= 1; ++dj) {
            if (di == 0 && dj == 0) continue;
            const int ni = qi + di, nj = qj + dj;
            if (ni < 0 || ni >= mask.h || nj < 0 || nj >= mask.w) continue;
            const std::size_t np = static_cast<std::size_t>(ni) * mask.w + nj;
            if (mask.data[np] != 0 && labels[np] == 0) {
              labels[np] = next;
              stack.push_back(np);
            }
          }
      }
    }
  return next;
}

// Component-level F1: predicted and gt components matched greedily by
// descending pairwise IoU, one use per component, TP iff IoU >= 0.5.
inline double component_f1(const BinaryMask& pred, const BinaryMask& gt,
                           double match_iou = 0.5) {
  std::vector<int> pl, gl;
  const int np = connected_components(pred, pl);
  const int ng = connected_components(gt, gl);
  if (np == 0 && ng == 0) return 1.0;
  if (np == 0 || ng == 0) return 0.0;

  std::vector<std::size_t> psize(np + 1, 0), gsize(ng + 1, 0);
  for (int v : pl)
    if (v) psize[v]++;
  for (int v : gl)
    if (v) gsize[v]++;
  std::vector<std::size_t> inter(static_cast<std::size_t>(np + 1) * (ng + 1), 0);
  for (std::size_t i = 0; i < pl.size(); ++i)
    if (pl[i] && gl[i]) inter[static_cast<std::size_t>(pl[i]) * (ng + 1) + gl[i]]++;

  struct Pair {
    double iou;
    int p, g;
  };
  std::vector<Pair> pairs;
  for (int p = 1; p <= np; ++p)
    for (int g = 1; g <= ng; ++g) {
      const std::size_t in = inter[static_cast<std::size_t>(p) * (ng + 1) + g];
      if (in == 0) continue;
      const double v =
          static_cast<double>(in) / static_cast<double>(psize[p] + gsize[g] - in);
      if (v >= match_iou) pairs.push_back({v, p, g});
    }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (a.p != b.p) return a.p < b.p;
    return a.g < b.g;
  });
  std::vector<bool> pused(np + 1, false), gused(ng + 1, false);
  int tp = 0;
  for (const auto& pr : pairs) {
    if (pused[pr.p] || gused[pr.g]) continue;
    pused[pr.p] = gused[pr.g] = true;
    ++tp;
  }
  const double precision = static_cast<double>(tp) / np;
  const double recall = static_cast<double>(tp) / ng;
  if (tp == 0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

// 100 evenly spaced thresholds in (0, 1].
inline std::vector<double> default_threshold_grid(int n = 100) {
  std::vector<double> g(n);
  for (int i = 0; i < n; ++i) g[i] = static_cast<double>(i + 1) / n;
  return g;
}

inline ObjectEval object_eval(const ScoreMap& map, const BinaryMask& gt,
                              const std::vector<double>& grid) {
  if (grid.empty()) throw std::invalid_argument("object_eval: empty grid");
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (grid[i] <= grid[i - 1])
      throw std::invalid_argument("object_eval: grid not strictly increasing");
  if (map.h != gt.h || map.w != gt.w)
    throw DimensionError("object_eval: shape mismatch");

  ObjectEval e;
  double f1_sum = 0.0;
  for (double t : grid) {
    const BinaryMask pred = score_threshold(map, t);
    ThresholdPoint pt;
    pt.t = t;
    pt.iou = iou(pred, gt);
    pt.f1 = component_f1(pred, gt);
    f1_sum += pt.f1;
    e.best_iou = std::max(e.best_iou, pt.iou);
    e.per_threshold.push_back(pt);
  }
  e.mean_f1 = f1_sum / static_cast<double>(grid.size());
  for (std::size_t i = 1; i < grid.size(); ++i)
    e.auiou += (grid[i] - grid[i - 1]) *
               (e.per_threshold[i].iou + e.per_threshold[i - 1].iou) / 2.0;
  return e;
}

}  // namespace tdos
