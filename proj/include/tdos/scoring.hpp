#pragma once

// Converts decoder outputs into per-pixel predicted classes and OOD
// confidence scores.

#include <cmath>
#include <cstddef>
#include <vector>

#include "tdos/errors.hpp"
#include "tdos/grad.hpp"
#include "tdos/mask.hpp"
#include "tdos/queries.hpp"

namespace tdos {

struct ScoreMap {
  int h = 0;
  int w = 0;
  std::vector<double> ood_score;  // in [0,1]
  std::vector<int> pred_class;    // ID class index, or K for OOD

  double score_at(int i, int j) const {
    return ood_score[static_cast<std::size_t>(i) * w + j];
  }
};

enum class OodAggregate { kMax, kSum };

// Per-query responsibility at a pixel is class-probability of the query's
// assigned class times the sigmoid of its mask logit there. The OOD score
// aggregates responsibilities of OOD queries; the predicted class follows the
// most responsible query, ties broken by lowest query index.
inline ScoreMap score(const Tensor& class_logits,
                      const std::vector<Tensor>& mask_logits,
                      const QuerySet& queries,
                      OodAggregate aggregate = OodAggregate::kMax) {
  const int qn = class_logits.rows();
  const int kk = class_logits.cols();
  if (qn != static_cast<int>(queries.query_class.size()) ||
      qn != static_cast<int>(mask_logits.size()))
    throw DimensionError("score: query count mismatch");
  if (kk != queries.num_id_classes + 1)
    throw DimensionError("score: class head width must be K+1");
  if (!all_finite(class_logits))
    throw std::runtime_error("score: non-finite class logits");

  const int h = mask_logits.empty() ? 0 : mask_logits[0].rows();
  const int w = mask_logits.empty() ? 0 : mask_logits[0].cols();
  for (const auto& m : mask_logits) {
    if (m.rows() != h || m.cols() != w)
      throw DimensionError("score: mask logit shape mismatch");
    if (!all_finite(m)) throw std::runtime_error("score: non-finite mask logits");
  }

  // Class probabilities per query (softmax over K+1), picked at the assigned class.
  std::vector<double> class_prob(qn);
  for (int q = 0; q < qn; ++q) {
    double mx = class_logits.at(static_cast<std::size_t>(q) * kk);
    for (int j = 1; j < kk; ++j)
      mx = std::max(mx, class_logits.at(static_cast<std::size_t>(q) * kk + j));
    double z = 0.0;
    for (int j = 0; j < kk; ++j)
      z += std::exp(class_logits.at(static_cast<std::size_t>(q) * kk + j) - mx);
    class_prob[q] =
        std::exp(class_logits.at(static_cast<std::size_t>(q) * kk +
                                 queries.query_class[q]) -
                 mx) /
        z;
  }

  ScoreMap out;
  out.h = h;
  out.w = w;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  out.ood_score.assign(hw, 0.0);
  out.pred_class.assign(hw, 0);
  for (std::size_t p = 0; p < hw; ++p) {
    double best_r = -1.0;
    int best_q = 0;
    double ood = 0.0;
    for (int q = 0; q < qn; ++q) {
      const double ml = mask_logits[q].at(p);
      const double sg = ml >= 0 ? 1.0 / (1.0 + std::exp(-ml))
                                : std::exp(ml) / (1.0 + std::exp(ml));
      const double r = class_prob[q] * sg;
      if (r > best_r) {
        best_r = r;
        best_q = q;
      }
      if (queries.is_ood_query(q)) {
        if (aggregate == OodAggregate::kMax)
          ood = std::max(ood, r);
        else
          ood += r;
      }
    }
    out.ood_score[p] = std::min(ood, 1.0);
    out.pred_class[p] = queries.query_class[best_q];
  }
  return out;
}

inline BinaryMask score_threshold(const ScoreMap& map, double t) {
  if (t < 0.0 || t > 1.0)
    throw std::invalid_argument("score_threshold: t outside [0,1]");
  BinaryMask m = BinaryMask::zeros(map.h, map.w);
  for (std::size_t i = 0; i < map.ood_score.size(); ++i)
    m.data[i] = map.ood_score[i] >= t ? 1 : 0;
  return m;
}

}  // namespace tdos
