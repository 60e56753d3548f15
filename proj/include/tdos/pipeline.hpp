#pragma once

// End-to-end orchestration shared by the CLI and the integration tests:
// label mining, dataset generation, the training loop, checkpoint assembly
// and restore, and evaluation into a metric report.

#include <cstdint>
#include <string>
#include <vector>

#include "tdos/config.hpp"
#include "tdos/metrics.hpp"
#include "tdos/model.hpp"
#include "tdos/report.hpp"
#include "tdos/scoring.hpp"
#include "tdos/synthio.hpp"
#include "tdos/textspace.hpp"
#include "tdos/train.hpp"

namespace tdos {

struct MineResult {
  EmbeddingSpace space;
  OODLabelSet ood;
  OODPromptSet prompts;
  std::vector<std::string> id_labels;
};

// Deterministic given the config: text-space init, mining order, prompt init
// all derive from the run seed.
inline MineResult run_mine(const RunConfig& cfg,
                           const std::string& corpus_path) {
  const std::uint64_t seed = cfg.get_u64("seed");
  MineResult r{EmbeddingSpace::load_corpus(corpus_path, mix_seed(seed ^ 0x7e57)),
               {}, {}, cfg.get_list("mine.id_labels")};
  if (r.id_labels.empty())
    throw std::invalid_argument("mine: mine.id_labels is empty");
  r.ood = neg_mine(r.space, r.id_labels, r.space.tokens(), cfg.get_int("mine.m"),
                   cfg.get_double("mine.quantile"));
  Rng grng(mix_seed(seed ^ 0x6e9));
  r.prompts = group_by_distance(r.space, r.ood, cfg.get_int("mine.n"), grng,
                                cfg.get_int("mine.prompt_len"));
  return r;
}

inline SceneRecipe recipe_from_config(const RunConfig& cfg,
                                      std::uint64_t seed_offset) {
  SceneRecipe r = SceneRecipe::defaults();
  r.seed = cfg.get_u64("seed") + seed_offset;
  r.h = cfg.get_int("data.h");
  r.w = cfg.get_int("data.w");
  r.paste_probability = cfg.get_double("data.paste_prob");
  r.ood_min_size = cfg.get_int("data.ood_min_size");
  r.ood_max_size = cfg.get_int("data.ood_max_size");
  return r;
}

// Train and eval splits draw from disjoint seed streams of the same recipe.
inline Dataset make_split(const RunConfig& cfg, bool train) {
  SceneRecipe r = recipe_from_config(cfg, train ? 0 : 0x5eed0000ull);
  Dataset ds;
  ds.num_classes = r.num_classes;
  ds.config_hash = cfg.hash();
  ds.scenes = generate(
      r, cfg.get_int(train ? "data.train_scenes" : "data.eval_scenes"));
  return ds;
}

inline ModelConfig model_config(const RunConfig& cfg) {
  ModelConfig m;
  m.patch = cfg.get_int("model.patch");
  m.dim = cfg.get_int("model.dim");
  m.text_dim = cfg.get_int("model.text_dim");
  m.enc_blocks = cfg.get_int("model.enc_blocks");
  m.dec_blocks = cfg.get_int("model.dec_blocks");
  m.mlp_hidden = cfg.get_int("model.mlp_hidden");
  m.num_classes = static_cast<int>(cfg.get_list("mine.id_labels").size());
  m.two_scale = cfg.get_bool("model.two_scale");
  m.saa_enabled = cfg.get_bool("saa.enabled");
  m.saa.lambda = cfg.get_double("saa.lambda");
  m.saa.sigma = cfg.get_double("saa.sigma");
  m.saa.first_layer = cfg.get_bool("saa.first_layer");
  m.saa.last_layer = cfg.get_bool("saa.last_layer");
  m.validate();
  return m;
}

inline LossWeights loss_weights(const RunConfig& cfg) {
  LossWeights w;
  w.w_seg = cfg.get_double("loss.w_seg");
  w.w_v = cfg.get_double("loss.w_v");
  w.w_vl = cfg.get_double("loss.w_vl");
  w.w_prompt = cfg.get_double("loss.w_prompt");
  return w;
}

// All trainable state (model + text space + prompts) plus frozen-twin hashes,
// under the standard container format.
inline Checkpoint make_checkpoint(const RunConfig& cfg, Model& model,
                                  MineResult& mine,
                                  const std::string& rng_state) {
  Checkpoint ck;
  ck.config_hash = cfg.hash();
  ck.config_echo = cfg.echo();
  ck.rng_state = rng_state;
  for (auto& [name, t] : model.parameters())
    ck.arrays.emplace_back("model." + name, t.data());
  for (auto& [name, t] : mine.space.parameters())
    ck.arrays.emplace_back("space." + name, t.data());
  for (auto& [name, t] : mine.prompts.parameters())
    ck.arrays.emplace_back(name, t.data());
  return ck;
}

// Writes checkpoint arrays back into a freshly built model/space/prompt
// triple. Structure (shapes, group count) must match, which the config hash
// guards; `force` skips the hash check.
inline void restore_checkpoint(const Checkpoint& ck, const RunConfig& cfg,
                               Model& model, MineResult& mine,
                               bool force = false) {
  if (!force && ck.config_hash != cfg.hash())
    throw FormatError("checkpoint config hash " +
                      std::to_string(ck.config_hash) +
                      " does not match run config hash " +
                      std::to_string(cfg.hash()) + " (use --force to ignore)");
  auto restore = [&ck](const std::string& prefix,
                       std::vector<std::pair<std::string, Tensor>> params) {
    for (auto& [name, t] : params) {
      const std::vector<double>* v = ck.find(prefix + name);
      if (!v) throw FormatError("checkpoint missing array " + prefix + name);
      if (v->size() != t.numel())
        throw FormatError("checkpoint array " + prefix + name +
                          " has wrong length");
      t.set_data(*v);
    }
  };
  restore("model.", model.parameters());
  restore("space.", mine.space.parameters());
  restore("", mine.prompts.parameters());
}

struct TrainResult {
  std::vector<StepStats> curve;
  std::string rng_state;  // training stream state at the final step
};

inline std::string loss_csv(const std::vector<StepStats>& curve,
                            std::uint64_t config_hash) {
  std::string out = "# config_hash=" + std::to_string(config_hash) + "\n";
  out += "step,total,seg,lv,lvl,prompt\n";
  for (std::size_t i = 0; i < curve.size(); ++i)
    out += std::to_string(i) + "," + fmt_num(curve[i].total) + "," +
           fmt_num(curve[i].seg) + "," + fmt_num(curve[i].lv) + "," +
           fmt_num(curve[i].lvl) + "," + fmt_num(curve[i].prompt) + "\n";
  return out;
}

// The training loop. Scenes are sampled with replacement; each step gets an
// independent child RNG so results do not depend on thread scheduling. If a
// step diverges, the last periodic checkpoint (when `out_dir` is set) is left
// on disk and the error propagates.
inline TrainResult run_train(const RunConfig& cfg, Model& model,
                             MineResult& mine, const Dataset& train_ds,
                             const std::string& out_dir = "") {
  const int iters = cfg.get_int("train.iterations");
  const int batch = cfg.get_int("train.batch");
  const int threads = cfg.get_int("train.threads");
  const int ckpt_every = cfg.get_int("train.checkpoint_every");
  const int n = static_cast<int>(train_ds.scenes.size());
  if (n == 0) throw std::invalid_argument("train: empty dataset");

  AdamWConfig oc;
  oc.lr = cfg.get_double("train.lr");
  oc.weight_decay = cfg.get_double("train.weight_decay");
  AdamW opt(oc);
  const LossWeights w = loss_weights(cfg);

  // Frozen-twin global features are deterministic per image; cache them once.
  std::vector<std::vector<double>> frozen(n);
  for (int i = 0; i < n; ++i)
    frozen[i] = model.frozen_global(train_ds.scenes[i]);

  Rng root(mix_seed(cfg.get_u64("seed") ^ 0x7121));
  Rng sample_rng = root.child(1);
  TrainResult out;
  for (int it = 0; it < iters; ++it) {
    std::vector<const LabeledScene*> scenes;
    std::vector<const std::vector<double>*> fg;
    for (int b = 0; b < batch; ++b) {
      const int i = sample_rng.uniform_int(0, n - 1);
      scenes.push_back(&train_ds.scenes[i]);
      fg.push_back(&frozen[i]);
    }
    Rng step_rng = root.child(100 + it);
    out.curve.push_back(
        train_step(model, mine.space, mine.prompts, mine.id_labels, scenes,
                   fg, w, opt, step_rng, threads));
    if (!out_dir.empty() && ckpt_every > 0 && (it + 1) % ckpt_every == 0) {
      Checkpoint ck =
          make_checkpoint(cfg, model, mine, sample_rng.serialize_state());
      save_checkpoint(ck, out_dir + "/checkpoint.tdos");
      write_text_file(out_dir + "/losses.csv", loss_csv(out.curve, cfg.hash()));
    }
  }
  out.rng_state = sample_rng.serialize_state();
  return out;
}

// Score maps for a whole dataset: eval-mode forward, query responsibilities,
// mask logits bilinearly upsampled to pixel resolution. `score_from_gt`
// bypasses the model and uses the ground-truth OOD indicator as the score.
inline std::vector<ScoreMap> score_dataset(const RunConfig& cfg, Model& model,
                                           MineResult& mine,
                                           const Dataset& ds,
                                           bool score_from_gt = false) {
  const OodAggregate agg = cfg.get("eval.aggregate") == "sum"
                               ? OodAggregate::kSum
                               : OodAggregate::kMax;
  std::vector<ScoreMap> maps;
  QuerySet qs = build_queries(mine.space, mine.prompts, mine.id_labels);
  Rng dead(0);
  for (const auto& scene : ds.scenes) {
    if (score_from_gt) {
      ScoreMap m;
      m.h = scene.h;
      m.w = scene.w;
      m.ood_score.assign(scene.ood_mask.data.begin(), scene.ood_mask.data.end());
      m.pred_class.assign(m.ood_score.size(), 0);
      maps.push_back(std::move(m));
      continue;
    }
    ForwardOut fwd = model.forward(scene, qs, /*training=*/false, 1.0, dead);
    std::vector<Tensor> up;
    for (int q = 0; q < qs.size(); ++q)
      up.push_back(upsample_bilinear(
          reshape(row(fwd.mask_logits, q), {fwd.grid_h, fwd.grid_w}), scene.h,
          scene.w));
    maps.push_back(score(fwd.class_logits, up, qs, agg));
  }
  return maps;
}

inline EvalReport run_eval(const RunConfig& cfg, Model& model,
                           MineResult& mine, const Dataset& ds,
                           const std::string& dataset_name,
                           bool score_from_gt = false) {
  std::vector<ScoreMap> maps = score_dataset(cfg, model, mine, ds, score_from_gt);
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  std::size_t ood_pixels = 0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const auto& gt = ds.scenes[i].ood_mask;
    for (std::size_t p = 0; p < maps[i].ood_score.size(); ++p) {
      scores.push_back(maps[i].ood_score[p]);
      labels.push_back(gt.data[p]);
      ood_pixels += gt.data[p];
    }
  }
  if (ood_pixels == 0)
    throw UndefinedMetricError("eval: dataset '" + dataset_name +
                               "' contains no OOD pixels");
  const std::vector<double> grid =
      default_threshold_grid(cfg.get_int("eval.grid"));
  std::vector<ObjectEval> per_image;
  for (std::size_t i = 0; i < maps.size(); ++i)
    per_image.push_back(object_eval(maps[i], ds.scenes[i].ood_mask, grid));
  return summarize(cfg.hash(), dataset_name, pixel_eval(scores, labels),
                   std::move(per_image), grid);
}

inline void write_report_files(const EvalReport& r, const std::string& dir) {
  write_text_file(dir + "/report.json", report_json(r).dump(2) + "\n");
  write_text_file(dir + "/report.csv", report_csv(r));
  write_text_file(dir + "/pr_curve.csv", curve_csv(r));
  write_text_file(dir + "/pr_curve.svg", pr_curve_svg(r));
  write_text_file(dir + "/iou_curve.svg", iou_curve_svg(r));
}

// One full toy experiment: mine, generate both splits, train, evaluate.
// Used by the ablation driver and the integration tests.
inline EvalReport run_experiment(const RunConfig& cfg,
                                 const std::string& corpus_path,
                                 const std::string& out_dir = "") {
  MineResult mine = run_mine(cfg, corpus_path);
  Dataset train_ds = make_split(cfg, true);
  Dataset eval_ds = make_split(cfg, false);
  Model model(model_config(cfg), mix_seed(cfg.get_u64("seed") ^ 0x40de1));
  run_train(cfg, model, mine, train_ds, out_dir);
  return run_eval(cfg, model, mine, eval_ds, "toy-eval");
}

struct AblationRow {
  std::string name;
  double auprc_med = 0.0;
  double fpr95_med = 0.0;
  double f1_med = 0.0;
  double d_auprc = 0.0;  // vs the axis' first (baseline) variant
  std::vector<double> auprc_per_seed;
  std::vector<double> f1_per_seed;
};

// One variant = a named set of config overrides applied on top of the base.
inline std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::string>>>>
ablation_axis_grid(const std::string& axis) {
  using Overrides = std::vector<std::pair<std::string, std::string>>;
  std::vector<std::pair<std::string, Overrides>> grid;
  if (axis == "components") {
    // A: supervised baseline with one pooled OOD query; +B: attention-level
    // semantic augmentation; +B+C: distance-banded prompt groups with the
    // alignment loss.
    grid = {{"A",
             {{"mine.n", "1"},
              {"loss.w_prompt", "0"},
              {"saa.enabled", "false"}}},
            {"A+B", {{"mine.n", "1"}, {"loss.w_prompt", "0"}}},
            {"A+B+C", {}}};
  } else if (axis == "saa-layers") {
    grid = {{"first", {{"saa.first_layer", "true"}, {"saa.last_layer", "false"}}},
            {"last", {{"saa.first_layer", "false"}, {"saa.last_layer", "true"}}},
            {"both", {{"saa.first_layer", "true"}, {"saa.last_layer", "true"}}}};
  } else if (axis == "lambda") {
    grid = {{"lambda=1.0", {{"saa.lambda", "1.0"}}},
            {"lambda=0.1", {{"saa.lambda", "0.1"}}},
            {"lambda=0.01", {{"saa.lambda", "0.01"}}}};
  } else if (axis == "queries") {
    for (const char* n : {"1", "25", "50", "75"}) {
      Overrides o = {{"mine.n", n}};
      if (std::stoi(n) > 50) o.emplace_back("mine.m", n);
      grid.emplace_back(std::string("queries=") + n, std::move(o));
    }
  } else {
    throw std::invalid_argument("ablate: unknown axis '" + axis + "'");
  }
  return grid;
}

inline double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

// Full toy pipeline per variant per seed; rows ranked by median AuPRC.
inline std::vector<AblationRow> run_ablation(
    const RunConfig& base, const std::string& axis,
    const std::string& corpus_path,
    const std::vector<std::uint64_t>& seeds = {1, 2, 3}) {
  std::vector<AblationRow> rows;
  for (const auto& [name, overrides] : ablation_axis_grid(axis)) {
    AblationRow row;
    row.name = name;
    std::vector<double> auprc, fpr95, f1;
    for (std::uint64_t s : seeds) {
      RunConfig cfg = base;
      cfg.set("seed", std::to_string(s));
      for (const auto& [k, v] : overrides) cfg.set(k, v);
      EvalReport r = run_experiment(cfg, corpus_path);
      auprc.push_back(r.pixel.auprc);
      fpr95.push_back(r.pixel.fpr95);
      f1.push_back(r.mean_f1);
    }
    row.auprc_per_seed = auprc;
    row.f1_per_seed = f1;
    row.auprc_med = median3(auprc);
    row.fpr95_med = median3(fpr95);
    row.f1_med = median3(f1);
    rows.push_back(std::move(row));
  }
  const double baseline = rows.front().auprc_med;
  for (auto& r : rows) r.d_auprc = r.auprc_med - baseline;
  std::stable_sort(rows.begin(), rows.end(),
                   [](const AblationRow& a, const AblationRow& b) {
                     return a.auprc_med > b.auprc_med;
                   });
  return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows,
                                std::uint64_t config_hash) {
  std::string out = "# config_hash=" + std::to_string(config_hash) + "\n";
  out += "variant,AuPRC↑,FPR95↓,meanF1↑,dAuPRC\n";
  for (const auto& r : rows)
    out += r.name + "," + fmt_num(r.auprc_med) + "," + fmt_num(r.fpr95_med) +
           "," + fmt_num(r.f1_med) + "," + fmt_num(r.d_auprc) + "\n";
  return out;
}

}  // namespace tdos
