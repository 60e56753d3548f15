#pragma once

// Training loop plumbing: query assembly from the text space, the combined
// objective, and one optimizer step over a scene batch (scenes processed on
// worker threads, gradients merged in batch order so results are independent
// of scheduling).

#include <mutex>
#include <sstream>
#include <thread>
#include <vector>

#include "tdos/model.hpp"
#include "tdos/textspace.hpp"

namespace tdos {

struct LossWeights {
  double w_seg = 1.0;
  double w_v = 0.1;
  double w_vl = 0.1;
  double w_prompt = 0.1;
};

struct StepStats {
  double total = 0, seg = 0, lv = 0, lvl = 0, prompt = 0;
};

// K ID class queries (trainable text path) followed by the N prompt queries.
inline QuerySet build_queries(const EmbeddingSpace& space,
                              const OODPromptSet& prompts,
                              const std::vector<std::string>& id_labels) {
  QuerySet qs;
  qs.num_id_classes = static_cast<int>(id_labels.size());
  for (std::size_t k = 0; k < id_labels.size(); ++k) {
    qs.rows.push_back(space.encode(id_labels[k], false));
    qs.query_class.push_back(static_cast<int>(k));
  }
  for (int n = 0; n < prompts.size(); ++n) {
    qs.rows.push_back(prompts.encode_prompt(space, n));
    qs.query_class.push_back(qs.num_id_classes);
  }
  return qs;
}

// [(K+1) x d_txt] similarity columns for the local-feature alignment loss:
// trainable ID embeddings plus one OOD column, the renormalized mean of the
// group means.
inline Tensor vl_text_matrix(const EmbeddingSpace& space,
                             const OODPromptSet& prompts,
                             const std::vector<std::string>& id_labels) {
  std::vector<Tensor> rows_v;
  for (const auto& y : id_labels) rows_v.push_back(space.encode(y, false));
  const int d = space.dim();
  std::vector<double> ood(d, 0.0);
  for (const auto& g : prompts.groups)
    for (int j = 0; j < d; ++j) ood[j] += g.mean_embedding.at(j);
  for (double& v : ood) v /= std::max(1, prompts.size());
  rows_v.push_back(normalize(Tensor::make({d}, std::move(ood))));
  return concat_rows(rows_v);
}

inline StepStats train_step(
    Model& model, EmbeddingSpace& space, OODPromptSet& prompts,
    const std::vector<std::string>& id_labels,
    const std::vector<const LabeledScene*>& batch,
    const std::vector<const std::vector<double>*>& frozen_globals,
    const LossWeights& w, AdamW& opt, Rng& step_rng, int threads = 0) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  if (frozen_globals.size() != batch.size())
    throw std::invalid_argument("train_step: frozen feature count mismatch");

  const int b = static_cast<int>(batch.size());
  const double inv_b = 1.0 / b;
  std::vector<Gradients> per_scene(b);
  std::vector<StepStats> stats(b);
  std::vector<std::string> errors(b);

  auto run_scene = [&](int i) {
    try {
      Rng scene_rng = step_rng.child(i);
      const double gate = scene_rng.uniform();
      QuerySet qs = build_queries(space, prompts, id_labels);
      ForwardOut fwd =
          model.forward(*batch[i], qs, /*training=*/true, gate, scene_rng);
      Tensor seg = loss_mask2former(fwd, qs, *batch[i]);
      Tensor lv = loss_backbone_v(fwd.f_global, *frozen_globals[i]);
      Tensor lvl = loss_backbone_vl(
          fwd.f_local,
          model.project_text(vl_text_matrix(space, prompts, id_labels)),
          downsample_class_map(*batch[i], model.config().patch));
      Tensor total = scale(
          add(add(scale(seg, w.w_seg), scale(lv, w.w_v)), scale(lvl, w.w_vl)),
          inv_b);
      if (!all_finite(total))
        throw DivergenceError("non-finite loss: seg=" +
                              std::to_string(seg.item()) +
                              " lv=" + std::to_string(lv.item()) +
                              " lvl=" + std::to_string(lvl.item()));
      per_scene[i] = GradTape::backward(total);
      stats[i] = {total.item(), seg.item(), lv.item(), lvl.item(), 0.0};
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  };

  if (threads <= 0)
    threads = std::min<int>(b, std::thread::hardware_concurrency());
  if (threads <= 1 || b == 1) {
    for (int i = 0; i < b; ++i) run_scene(i);
  } else {
    std::vector<std::thread> pool;
    std::mutex next_mu;
    int next = 0;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (;;) {
          int i;
          {
            std::lock_guard<std::mutex> lk(next_mu);
            if (next >= b) return;
            i = next++;
          }
          run_scene(i);
        }
      });
    for (auto& t : pool) t.join();
  }
  for (int i = 0; i < b; ++i)
    if (!errors[i].empty())
      throw DivergenceError("scene " + std::to_string(i) + ": " + errors[i]);

  StepStats out;
  Gradients grads;
  for (int i = 0; i < b; ++i) {
    grads.merge(per_scene[i]);
    out.seg += stats[i].seg * inv_b;
    out.lv += stats[i].lv * inv_b;
    out.lvl += stats[i].lvl * inv_b;
    out.total += stats[i].total;
  }

  if (w.w_prompt != 0.0 && prompts.size() > 0) {
    Tensor ploss =
        scale(prompt_alignment_loss(space, prompts, id_labels), w.w_prompt);
    if (!all_finite(ploss))
      throw DivergenceError("non-finite prompt alignment loss");
    grads.merge(GradTape::backward(ploss));
    out.prompt = ploss.item() / w.w_prompt;
    out.total += ploss.item();
  }

  auto params = model.parameters();
  for (auto& p : space.parameters()) params.push_back(p);
  for (auto& p : prompts.parameters()) params.push_back(p);
  opt.step(params, grads);
  return out;
}

}  // namespace tdos
