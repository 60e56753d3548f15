#pragma once

// Twin-encoder segmentation network: patch ViT-style vision encoder with a
// frozen init-time twin, pixel decoder with text-query cross-attention, a
// transformer decoder over the queries, and class/mask heads. Includes the
// training objective (segmentation losses + the two backbone regularizers)
// and the versioned checkpoint container.

#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tdos/errors.hpp"
#include "tdos/grad.hpp"
#include "tdos/io.hpp"
#include "tdos/queries.hpp"
#include "tdos/rng.hpp"
#include "tdos/saa.hpp"
#include "tdos/synthio.hpp"

namespace tdos {

struct ModelConfig {
  int patch = 4;
  int dim = 64;
  int text_dim = 32;
  int enc_blocks = 4;
  int dec_blocks = 2;
  int mlp_hidden = 128;
  int num_classes = 4;  // K; class head width is K+1
  bool two_scale = false;
  bool saa_enabled = true;
  SAAConfig saa;

  void validate() const {
    if (patch < 1 || dim < 1 || text_dim < 1 || enc_blocks < 1 ||
        dec_blocks < 1 || num_classes < 1)
      throw std::invalid_argument("model config: non-positive dimension");
    if (saa.lambda < 0.0 || saa.sigma <= 0.0)
      throw std::invalid_argument("model config: bad saa noise parameters");
  }
};

namespace nn {

struct Linear {
  Tensor w, b;

  static Linear init(int in, int out, Rng& rng, bool trainable = true) {
    Linear l;
    l.w = Tensor::randn({in, out}, rng, 1.0 / std::sqrt(double(in)), trainable);
    l.b = Tensor::zeros({out}, trainable);
    return l;
  }

  Tensor operator()(const Tensor& x) const {
    return add_rowvec(matmul(x, w), b);
  }
};

struct Norm {
  Tensor g, b;

  static Norm init(int d, bool trainable = true) {
    Norm n;
    n.g = Tensor::full({d}, 1.0, trainable);
    n.b = Tensor::zeros({d}, trainable);
    return n;
  }

  Tensor operator()(const Tensor& x) const { return layer_norm(x, g, b); }
};

struct EncoderBlock {
  Norm ln1, ln2;
  Linear q, k, v, o;
  Linear m1, m2;

  static EncoderBlock init(int d, int hidden, Rng& rng, bool trainable) {
    return {Norm::init(d, trainable),        Norm::init(d, trainable),
            Linear::init(d, d, rng, trainable), Linear::init(d, d, rng, trainable),
            Linear::init(d, d, rng, trainable), Linear::init(d, d, rng, trainable),
            Linear::init(d, hidden, rng, trainable),
            Linear::init(hidden, d, rng, trainable)};
  }
};

// Self-attention over queries, then cross-attention into a context sequence,
// then an MLP; pre-norm residuals throughout.
struct DecoderBlock {
  Norm ln1, ln2, ln3;
  Linear sq, sk, sv, so;  // self
  Linear cq, ck, cv, co;  // cross
  Linear m1, m2;

  static DecoderBlock init(int d, int hidden, Rng& rng) {
    return {Norm::init(d),          Norm::init(d),          Norm::init(d),
            Linear::init(d, d, rng), Linear::init(d, d, rng),
            Linear::init(d, d, rng), Linear::init(d, d, rng),
            Linear::init(d, d, rng), Linear::init(d, d, rng),
            Linear::init(d, d, rng), Linear::init(d, d, rng),
            Linear::init(d, hidden, rng), Linear::init(hidden, d, rng)};
  }

  Tensor operator()(const Tensor& x0, const Tensor& context) const {
    Tensor x = x0;
    {
      Tensor h = ln1(x);
      x = add(x, so(attention(sq(h), sk(h), sv(h))));
    }
    {
      Tensor h = ln2(x);
      x = add(x, co(attention(cq(h), ck(context), cv(context))));
    }
    x = add(x, m2(gelu(m1(ln3(x)))));
    return x;
  }
};

struct EncoderParams {
  Linear patch_proj;
  Tensor cls;  // [d]
  Tensor pos;  // [(1+T) x d]
  std::vector<EncoderBlock> blocks;
  Norm final_ln;
};

}  // namespace nn

struct ForwardOut {
  Tensor class_logits;  // [Q_n x (K+1)]
  Tensor mask_logits;   // [Q_n x T], one feature-grid row per query
  Tensor f_global;      // [d]
  Tensor f_local;       // [T x d]
  int grid_h = 0, grid_w = 0;
};

class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(mix_seed(seed));
    const int d = cfg_.dim, hid = cfg_.mlp_hidden;
    const int in = cfg_.patch * cfg_.patch * 3;
    // Token count is fixed by the training scene size; positional table sized
    // lazily on first forward would break the frozen-twin contract, so the
    // encoder is built for 32x32-style grids and validated per call.
    enc_.patch_proj = nn::Linear::init(in, d, rng);
    enc_.cls = Tensor::randn({d}, rng, 0.02, true);
    // positional table sized on first forward (pos_sized_)
    pos_rng_ = rng.child(9999);
    for (int e = 0; e < cfg_.enc_blocks; ++e)
      enc_.blocks.push_back(nn::EncoderBlock::init(d, hid, rng, true));
    enc_.final_ln = nn::Norm::init(d);

    text_proj_ = nn::Linear::init(cfg_.text_dim, d, rng);
    pix_block_ = nn::DecoderBlock::init(d, hid, rng);
    coarse_block_ = nn::DecoderBlock::init(d, hid, rng);
    for (int b = 0; b < cfg_.dec_blocks; ++b)
      dec_blocks_.push_back(nn::DecoderBlock::init(d, hid, rng));
    class_head_ = nn::Linear::init(d, cfg_.num_classes + 1, rng);
    mask_query_ = nn::Linear::init(d, d, rng);
    mask_pixel_ = nn::Linear::init(d, d, rng);
  }

  const ModelConfig& config() const { return cfg_; }

  // All trainable tensors, in a stable order.
  std::vector<std::pair<std::string, Tensor>> parameters() {
    std::vector<std::pair<std::string, Tensor>> out;
    auto lin = [&out](const std::string& n, nn::Linear& l) {
      out.emplace_back(n + ".w", l.w);
      out.emplace_back(n + ".b", l.b);
    };
    auto norm = [&out](const std::string& n, nn::Norm& m) {
      out.emplace_back(n + ".g", m.g);
      out.emplace_back(n + ".b", m.b);
    };
    lin("enc.patch", enc_.patch_proj);
    out.emplace_back("enc.cls", enc_.cls);
    if (pos_sized_) out.emplace_back("enc.pos", enc_.pos);
    for (std::size_t e = 0; e < enc_.blocks.size(); ++e) {
      auto& b = enc_.blocks[e];
      const std::string p = "enc.b" + std::to_string(e);
      norm(p + ".ln1", b.ln1);
      norm(p + ".ln2", b.ln2);
      lin(p + ".q", b.q);
      lin(p + ".k", b.k);
      lin(p + ".v", b.v);
      lin(p + ".o", b.o);
      lin(p + ".m1", b.m1);
      lin(p + ".m2", b.m2);
    }
    norm("enc.final", enc_.final_ln);
    lin("text_proj", text_proj_);
    auto dec = [&](const std::string& p, nn::DecoderBlock& b) {
      norm(p + ".ln1", b.ln1);
      norm(p + ".ln2", b.ln2);
      norm(p + ".ln3", b.ln3);
      lin(p + ".sq", b.sq);
      lin(p + ".sk", b.sk);
      lin(p + ".sv", b.sv);
      lin(p + ".so", b.so);
      lin(p + ".cq", b.cq);
      lin(p + ".ck", b.ck);
      lin(p + ".cv", b.cv);
      lin(p + ".co", b.co);
      lin(p + ".m1", b.m1);
      lin(p + ".m2", b.m2);
    };
    dec("pix", pix_block_);
    dec("pix2", coarse_block_);
    for (std::size_t i = 0; i < dec_blocks_.size(); ++i)
      dec("dec.b" + std::to_string(i), dec_blocks_[i]);
    lin("head.class", class_head_);
    lin("head.mq", mask_query_);
    lin("head.mp", mask_pixel_);
    return out;
  }

  // The frozen twin covers the vision encoder; snapshot taken on the first
  // forward (once the positional table exists) and immutable afterwards.
  std::uint64_t frozen_hash() const {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& [name, blob] : frozen_) {
      h = fnv1a_bytes(name.data(), name.size(), h);
      h = fnv1a_bytes(blob.data(), blob.size() * sizeof(double), h);
    }
    return h;
  }

  bool has_frozen() const { return !frozen_.empty(); }

  // Frozen-twin global feature; plain values, no graph. Deterministic per
  // image, so callers may cache it.
  std::vector<double> frozen_global(const LabeledScene& scene) {
    ensure_pos(scene);
    nn::EncoderParams frozen = materialize_frozen();
    TokenMask no_mask;
    Rng dead(0);
    Tensor tokens = run_encoder(frozen, scene, no_mask, false, 1.0, dead);
    Tensor g = row(tokens, 0);
    return g.data();
  }

  // Full forward pass. `gate` is the per-pass shared SAA gate draw in [0,1);
  // `rng` supplies the per-layer noise. With training=false neither is
  // consumed.
  ForwardOut forward(const LabeledScene& scene, const QuerySet& queries,
                     bool training, double gate, Rng& rng) {
    if (queries.size() == 0)
      throw std::invalid_argument("forward: empty query set");
    ensure_pos(scene);
    const int gh = scene.h / cfg_.patch, gw = scene.w / cfg_.patch;

    TokenMask tok_mask;
    const bool use_saa = training && cfg_.saa_enabled;
    if (use_saa) tok_mask = downsample_mask(scene.ood_mask, cfg_.patch);

    Tensor tokens =
        run_encoder(enc_, scene, tok_mask, use_saa, gate, rng);
    Tensor f_global = row(tokens, 0);
    Tensor f_local = slice_rows(tokens, 1, 1 + gh * gw);

    // Text queries projected into the vision width.
    std::vector<Tensor> qrows;
    for (const auto& r : queries.rows) qrows.push_back(r);
    Tensor text_q = text_proj_(concat_rows(qrows));  // [Qn x d]

    // Pixel decoder: self-attention over pixel tokens + cross-attention
    // against the text queries, at the finest scale (optionally preceded by a
    // pooled coarse scale whose output is added back in).
    Tensor pix = f_local;
    if (cfg_.two_scale) {
      Tensor coarse = pool2x2(f_local, gh, gw);
      coarse = coarse_block_(coarse, text_q);
      pix = add(pix, unpool2x2(coarse, gh, gw));
    }
    pix = pix_block_(pix, text_q);

    // Transformer decoder over the queries, reading the pixel features.
    Tensor qf = text_q;
    for (const auto& b : dec_blocks_) qf = b(qf, pix);

    Tensor class_logits = class_head_(qf);
    Tensor mask_logits =
        matmul_nt(mask_query_(qf), mask_pixel_(pix));  // [Qn x T]

    ForwardOut out{class_logits, mask_logits, f_global, f_local, gh, gw};
    for (const Tensor* t : {&out.class_logits, &out.mask_logits,
                            &out.f_global, &out.f_local})
      if (!all_finite(*t))
        throw DivergenceError("forward produced non-finite values");
    return out;
  }

  // Project text-space rows into the vision width (shared with forward()).
  Tensor project_text(const Tensor& rows) const { return text_proj_(rows); }

 private:
  ModelConfig cfg_;

  void ensure_pos(const LabeledScene& scene) {
    if (scene.h % cfg_.patch != 0 || scene.w % cfg_.patch != 0)
      throw DimensionError("image " + std::to_string(scene.h) + "x" +
                           std::to_string(scene.w) +
                           " not divisible by patch " +
                           std::to_string(cfg_.patch));
    const int t = (scene.h / cfg_.patch) * (scene.w / cfg_.patch);
    if (!pos_sized_) {
      enc_.pos = Tensor::randn({1 + t, cfg_.dim}, pos_rng_, 0.02, true);
      pos_sized_ = true;
      take_frozen_snapshot();
    } else if (enc_.pos.shape()[0] != 1 + t) {
      throw DimensionError(
          "token count changed after the positional table was sized");
    }
  }

  static Tensor patch_matrix(const LabeledScene& scene, int patch) {
    const int gh = scene.h / patch, gw = scene.w / patch;
    const int in = patch * patch * 3;
    std::vector<double> m(static_cast<std::size_t>(gh) * gw * in);
    std::size_t at = 0;
    for (int gi = 0; gi < gh; ++gi)
      for (int gj = 0; gj < gw; ++gj)
        for (int di = 0; di < patch; ++di)
          for (int dj = 0; dj < patch; ++dj)
            for (int ch = 0; ch < 3; ++ch)
              m[at++] = scene.pixel(gi * patch + di, gj * patch + dj, ch);
    return Tensor::make({gh * gw, in}, std::move(m));
  }

  Tensor run_encoder(const nn::EncoderParams& p, const LabeledScene& scene,
                     const TokenMask& mask, bool use_saa, double gate,
                     Rng& rng) const {
    Tensor x = p.patch_proj(patch_matrix(scene, cfg_.patch));
    x = concat_rows({p.cls, x});
    x = add(x, p.pos);
    const int last = static_cast<int>(p.blocks.size()) - 1;
    for (int e = 0; e <= last; ++e) {
      const auto& b = p.blocks[e];
      Tensor h = b.ln1(x);
      Tensor q = b.q(h), k = b.k(h), v = b.v(h);
      const bool saa_here =
          use_saa && ((e == 0 && cfg_.saa.first_layer) ||
                      (e == last && cfg_.saa.last_layer));
      Tensor a = saa_here
                     ? saa_attention(q, k, v, mask, cfg_.saa, gate, rng)
                     : attention(q, k, v);
      x = add(x, b.o(a));
      x = add(x, b.m2(gelu(b.m1(b.ln2(x)))));
    }
    return p.final_ln(x);
  }

  // 2x2 mean pooling over the token grid (both grid dims must be even).
  static Tensor pool2x2(const Tensor& x, int gh, int gw) {
    if (gh % 2 || gw % 2)
      throw DimensionError("two-scale decoder needs an even token grid");
    std::vector<Tensor> rows_out;
    for (int i = 0; i < gh; i += 2)
      for (int j = 0; j < gw; j += 2) {
        Tensor cell = concat_rows({row(x, i * gw + j), row(x, i * gw + j + 1),
                                   row(x, (i + 1) * gw + j),
                                   row(x, (i + 1) * gw + j + 1)});
        rows_out.push_back(mean_rows(cell));
      }
    return concat_rows(rows_out);
  }

  static Tensor unpool2x2(const Tensor& c, int gh, int gw) {
    std::vector<Tensor> rows_out(static_cast<std::size_t>(gh) * gw);
    const int cw = gw / 2;
    for (int i = 0; i < gh; ++i)
      for (int j = 0; j < gw; ++j)
        rows_out[static_cast<std::size_t>(i) * gw + j] =
            row(c, (i / 2) * cw + j / 2);
    return concat_rows(rows_out);
  }

  void take_frozen_snapshot() {
    frozen_.clear();
    frozen_.emplace_back("patch.w", enc_.patch_proj.w.data());
    frozen_.emplace_back("patch.b", enc_.patch_proj.b.data());
    frozen_.emplace_back("cls", enc_.cls.data());
    frozen_.emplace_back("pos", enc_.pos.data());
    for (std::size_t e = 0; e < enc_.blocks.size(); ++e) {
      const auto& b = enc_.blocks[e];
      const std::string p = "b" + std::to_string(e) + ".";
      for (auto& [n, t] :
           std::vector<std::pair<std::string, const Tensor*>>{
               {"ln1.g", &b.ln1.g}, {"ln1.b", &b.ln1.b}, {"ln2.g", &b.ln2.g},
               {"ln2.b", &b.ln2.b}, {"q.w", &b.q.w},     {"q.b", &b.q.b},
               {"k.w", &b.k.w},     {"k.b", &b.k.b},     {"v.w", &b.v.w},
               {"v.b", &b.v.b},     {"o.w", &b.o.w},     {"o.b", &b.o.b},
               {"m1.w", &b.m1.w},   {"m1.b", &b.m1.b},   {"m2.w", &b.m2.w},
               {"m2.b", &b.m2.b}})
        frozen_.emplace_back(p + n, t->data());
    }
    frozen_.emplace_back("final.g", enc_.final_ln.g.data());
    frozen_.emplace_back("final.b", enc_.final_ln.b.data());
  }

  nn::EncoderParams materialize_frozen() const {
    if (frozen_.empty())
      throw std::logic_error("frozen twin requested before first forward");
    std::map<std::string, const std::vector<double>*> by_name;
    for (const auto& [n, v] : frozen_) by_name[n] = &v;
    auto tens = [&](const std::string& n, Shape s) {
      return Tensor::make(std::move(s), *by_name.at(n));
    };
    const int d = cfg_.dim, in = cfg_.patch * cfg_.patch * 3,
              hid = cfg_.mlp_hidden;
    nn::EncoderParams p;
    p.patch_proj = {tens("patch.w", {in, d}), tens("patch.b", {d})};
    p.cls = tens("cls", {d});
    p.pos = tens("pos", {enc_.pos.shape()[0], d});
    for (int e = 0; e < cfg_.enc_blocks; ++e) {
      const std::string q = "b" + std::to_string(e) + ".";
      nn::EncoderBlock b;
      b.ln1 = {tens(q + "ln1.g", {d}), tens(q + "ln1.b", {d})};
      b.ln2 = {tens(q + "ln2.g", {d}), tens(q + "ln2.b", {d})};
      b.q = {tens(q + "q.w", {d, d}), tens(q + "q.b", {d})};
      b.k = {tens(q + "k.w", {d, d}), tens(q + "k.b", {d})};
      b.v = {tens(q + "v.w", {d, d}), tens(q + "v.b", {d})};
      b.o = {tens(q + "o.w", {d, d}), tens(q + "o.b", {d})};
      b.m1 = {tens(q + "m1.w", {d, hid}), tens(q + "m1.b", {hid})};
      b.m2 = {tens(q + "m2.w", {hid, d}), tens(q + "m2.b", {d})};
      p.blocks.push_back(std::move(b));
    }
    p.final_ln = {tens("final.g", {d}), tens("final.b", {d})};
    return p;
  }

  nn::EncoderParams enc_;
  nn::Linear text_proj_;
  nn::DecoderBlock pix_block_, coarse_block_;
  std::vector<nn::DecoderBlock> dec_blocks_;
  nn::Linear class_head_, mask_query_, mask_pixel_;
  std::vector<std::pair<std::string, std::vector<double>>> frozen_;
  Rng pos_rng_{0};
  bool pos_sized_ = false;
};

// ---- Losses ----

// Squared L2 drift of the global feature from its frozen twin.
inline Tensor loss_backbone_v(const Tensor& f_global,
                              const std::vector<double>& f_global_freeze) {
  return l2_distance(f_global,
                     Tensor::make(f_global.shape(), f_global_freeze));
}

// Per-cell cross-entropy of the local-feature/text similarity map. The text
// matrix carries K ID embeddings plus one OOD column; gt uses 0-based classes
// with OOD as index K.
inline Tensor loss_backbone_vl(const Tensor& f_local, const Tensor& text_embeds,
                               const std::vector<int>& gt_class) {
  return cross_entropy(matmul_nt(f_local, text_embeds), gt_class);
}

// Majority label per feature cell, lowest class winning ties; OOD pixels vote
// for class K.
inline std::vector<int> downsample_class_map(const LabeledScene& scene,
                                             int patch) {
  const int gh = scene.h / patch, gw = scene.w / patch;
  std::vector<int> out(static_cast<std::size_t>(gh) * gw);
  for (int gi = 0; gi < gh; ++gi)
    for (int gj = 0; gj < gw; ++gj) {
      std::map<int, int> votes;
      for (int di = 0; di < patch; ++di)
        for (int dj = 0; dj < patch; ++dj)
          votes[scene.class_map[static_cast<std::size_t>(gi * patch + di) *
                                    scene.w +
                                gj * patch + dj]]++;
      int best = -1, best_n = -1;
      for (auto [c, n] : votes)
        if (n > best_n) {
          best = c;
          best_n = n;
        }
      out[static_cast<std::size_t>(gi) * gw + gj] = best;
    }
  return out;
}

// Fixed-assignment segmentation loss: per-query class CE (absent classes and
// scenes without OOD fall back to the no-object column K), plus BCE+Dice on
// the full-resolution upsampled masks for the queries whose class is present.
inline Tensor loss_mask2former(const ForwardOut& fwd, const QuerySet& queries,
                               const LabeledScene& scene) {
  const int k = queries.num_id_classes;
  const int qn = queries.size();
  const int h = scene.h, w = scene.w;

  std::vector<bool> present(k + 1, false);
  for (auto c : scene.class_map) present[c] = true;

  std::vector<int> targets(qn);
  for (int q = 0; q < qn; ++q) {
    const int c = queries.query_class[q];
    targets[q] = (c < k && present[c]) ? c : k;
  }
  // Mean CE scaled back to a sum over queries.
  Tensor total = scale(cross_entropy(fwd.class_logits, targets), double(qn));

  for (int q = 0; q < qn; ++q) {
    const int c = queries.query_class[q];
    if (!present[c]) continue;
    if (c == k && scene.ood_mask.count() == 0) continue;
    std::vector<double> gt(static_cast<std::size_t>(h) * w);
    for (std::size_t p = 0; p < gt.size(); ++p)
      gt[p] = scene.class_map[p] == c ? 1.0 : 0.0;
    Tensor gt_t = Tensor::make({h, w}, std::move(gt));
    Tensor m = reshape(row(fwd.mask_logits, q), {fwd.grid_h, fwd.grid_w});
    Tensor up = upsample_bilinear(m, h, w);
    total = add(total, bce_with_logits(up, gt_t));
    total = add(total, dice_loss(sigmoid(up), gt_t));
  }
  return total;
}

// ---- Optimizer ----

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  const AdamWConfig& config() const { return cfg_; }

  void step(std::vector<std::pair<std::string, Tensor>>& params,
            const Gradients& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (auto& [name, p] : params) {
      auto g = grads.get(p);
      auto& m = m_[name];
      auto& v = v_[name];
      if (m.empty()) {
        m.assign(g.size(), 0.0);
        v.assign(g.size(), 0.0);
      }
      std::vector<double> delta(g.size());
      const auto& x = p.data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mh = m[i] / bc1, vh = v[i] / bc2;
        delta[i] = -cfg_.lr * (mh / (std::sqrt(vh) + cfg_.eps) +
                               cfg_.weight_decay * x[i]);
      }
      p.apply_update(delta);
    }
  }

  std::uint64_t steps() const { return t_; }

 private:
  AdamWConfig cfg_;
  std::uint64_t t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

// ---- Checkpoint container ----

struct Checkpoint {
  std::uint32_t version = 1;
  std::uint64_t config_hash = 0;
  std::string config_echo;
  std::string rng_state;
  std::vector<std::pair<std::string, std::vector<double>>> arrays;

  const std::vector<double>* find(const std::string& name) const {
    for (const auto& [n, v] : arrays)
      if (n == name) return &v;
    return nullptr;
  }
};

inline void save_checkpoint(const Checkpoint& ck, std::ostream& os) {
  os.write("TDOS1", 5);
  write_u32(os, ck.version);
  write_u64(os, ck.config_hash);
  write_string(os, ck.config_echo);
  write_string(os, ck.rng_state);
  write_u32(os, static_cast<std::uint32_t>(ck.arrays.size()));
  for (const auto& [name, v] : ck.arrays) {
    write_string(os, name);
    write_u64(os, v.size());
    write_f64_vec(os, v);
  }
}

inline Checkpoint load_checkpoint(std::istream& is) {
  expect_magic(is, "TDOS1");
  Checkpoint ck;
  ck.version = read_u32(is);
  if (ck.version != 1)
    throw FormatError("unsupported checkpoint version " +
                      std::to_string(ck.version));
  ck.config_hash = read_u64(is);
  ck.config_echo = read_string(is);
  ck.rng_state = read_string(is);
  const std::uint32_t n = read_u32(is);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = read_string(is);
    const std::uint64_t len = read_u64(is);
    ck.arrays.emplace_back(std::move(name), read_f64_vec(is, len));
  }
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open '" + path + "' for writing");
  save_checkpoint(ck, f);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open checkpoint '" + path + "'");
  return load_checkpoint(f);
}

}  // namespace tdos
