#pragma once

// Toy text-embedding space: token table + small residual encoder MLP with a
// frozen twin snapshot, negative-label mining over the bundled corpus,
// distance-band grouping, and the learnable distance-based prompts with their
// contrastive alignment loss.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "tdos/errors.hpp"
#include "tdos/grad.hpp"
#include "tdos/io.hpp"
#include "tdos/rng.hpp"

#include "json.hpp"

namespace tdos {

class EmbeddingSpace {
 public:
  // Corpus file: one record per line, token<TAB>v1,v2,...,vD.
  static EmbeddingSpace from_corpus(std::istream& is, std::uint64_t seed) {
    EmbeddingSpace sp;
    std::string line;
    std::vector<double> flat;
    int dim = -1;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos)
        throw FormatError("corpus line missing tab: '" + line + "'");
      const std::string token = line.substr(0, tab);
      std::vector<double> v;
      std::istringstream vs(line.substr(tab + 1));
      std::string num;
      while (std::getline(vs, num, ',')) v.push_back(std::stod(num));
      if (dim < 0) dim = static_cast<int>(v.size());
      if (static_cast<int>(v.size()) != dim)
        throw FormatError("corpus: inconsistent embedding width at '" + token +
                          "'");
      sp.vocab_[token] = static_cast<int>(sp.tokens_.size());
      sp.tokens_.push_back(token);
      flat.insert(flat.end(), v.begin(), v.end());
    }
    if (sp.tokens_.empty()) throw FormatError("corpus: empty");
    sp.dim_ = dim;
    sp.table_ = Tensor::make({static_cast<int>(sp.tokens_.size()), dim},
                             std::move(flat), true);
    Rng rng(seed);
    // Zero-init residual branch: encode is exactly the identity (plus
    // normalize) at init, so corpus geometry is preserved until training.
    sp.w1_ = Tensor::randn({dim, dim}, rng, 0.3, true);
    sp.b1_ = Tensor::zeros({dim}, true);
    sp.w2_ = Tensor::zeros({dim, dim}, true);
    sp.b2_ = Tensor::zeros({dim}, true);
    sp.take_frozen_snapshot();
    return sp;
  }

  static EmbeddingSpace load_corpus(const std::string& path,
                                    std::uint64_t seed) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open corpus file '" + path + "'");
    return from_corpus(f, seed);
  }

  int dim() const { return dim_; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  bool has_token(const std::string& t) const { return vocab_.count(t) != 0; }

  // Unit-norm text embedding; frozen=true routes through the init-time
  // snapshot and is invariant for the program lifetime.
  Tensor encode(const std::string& token, bool use_frozen) const {
    std::vector<int> rows = resolve(token);
    if (use_frozen) return encode_frozen_rows(rows);
    Tensor x = lookup_mean(table_, rows);
    return normalize(encoder_mlp(x, w1_, b1_, w2_, b2_));
  }

  // Encode an arbitrary d-vector (prompt pseudo-tokens) through the trainable
  // encoder path.
  Tensor encode_vector(const Tensor& v) const {
    return normalize(encoder_mlp(v, w1_, b1_, w2_, b2_));
  }

  std::vector<std::pair<std::string, Tensor>> parameters() {
    return {{"text.table", table_}, {"text.w1", w1_}, {"text.b1", b1_},
            {"text.w2", w2_},       {"text.b2", b2_}};
  }

  // Hash over every frozen-twin parameter byte.
  std::uint64_t frozen_hash() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const std::vector<double>& v) {
      h = fnv1a_bytes(v.data(), v.size() * sizeof(double), h);
    };
    mix(frozen_table_);
    mix(frozen_w1_);
    mix(frozen_b1_);
    mix(frozen_w2_);
    mix(frozen_b2_);
    return h;
  }

  // The trainable table/MLP values, for checkpointing.
  void set_parameter(const std::string& name, const std::vector<double>& v) {
    for (auto& [n, t] : parameters())
      if (n == name) {
        t.set_data(v);
        return;
      }
    throw IndexError("unknown text parameter '" + name + "'");
  }

 private:
  static Tensor encoder_mlp(const Tensor& x, const Tensor& w1, const Tensor& b1,
                            const Tensor& w2, const Tensor& b2) {
    // residual: x + W2 gelu(W1 x + b1) + b2
    Tensor h = gelu(add_rowvec(matmul(x, w1), b1));
    Tensor y = add_rowvec(matmul(h, w2), b2);
    Tensor res = add(reshape(x, y.shape()), y);
    if (res.shape().size() == 2 && res.shape()[0] == 1)
      res = reshape(res, {res.shape()[1]});
    return res;
  }

  Tensor lookup_mean(const Tensor& table, const std::vector<int>& rows) const {
    if (rows.size() == 1) return row(table, rows[0]);
    std::vector<Tensor> parts;
    for (int r : rows) parts.push_back(row(table, r));
    return mean_rows(concat_rows(parts));
  }

  Tensor encode_frozen_rows(const std::vector<int>& rows) const {
    std::vector<double> x(dim_, 0.0);
    for (int r : rows)
      for (int j = 0; j < dim_; ++j)
        x[j] += frozen_table_[static_cast<std::size_t>(r) * dim_ + j];
    for (double& v : x) v /= static_cast<double>(rows.size());
    Tensor xt = Tensor::make({dim_}, x);
    Tensor w1 = Tensor::make({dim_, dim_}, frozen_w1_);
    Tensor b1 = Tensor::make({dim_}, frozen_b1_);
    Tensor w2 = Tensor::make({dim_, dim_}, frozen_w2_);
    Tensor b2 = Tensor::make({dim_}, frozen_b2_);
    return normalize(encoder_mlp(xt, w1, b1, w2, b2));
  }

  // A token resolves to its own row, or to the rows of its known subtokens
  // (split on space/hyphen/underscore) averaged.
  std::vector<int> resolve(const std::string& token) const {
    auto it = vocab_.find(token);
    if (it != vocab_.end()) return {it->second};
    std::vector<int> rows;
    std::string cur;
    auto flush = [&] {
      if (cur.empty()) return;
      auto sit = vocab_.find(cur);
      if (sit != vocab_.end()) rows.push_back(sit->second);
      cur.clear();
    };
    for (char ch : token) {
      if (ch == ' ' || ch == '-' || ch == '_')
        flush();
      else
        cur.push_back(ch);
    }
    flush();
    if (rows.empty())
      throw VocabularyError("token '" + token +
                            "' has no known form or subtokens");
    return rows;
  }

  void take_frozen_snapshot() {
    frozen_table_ = table_.data();
    frozen_w1_ = w1_.data();
    frozen_b1_ = b1_.data();
    frozen_w2_ = w2_.data();
    frozen_b2_ = b2_.data();
  }

  std::unordered_map<std::string, int> vocab_;
  std::vector<std::string> tokens_;
  int dim_ = 0;
  Tensor table_, w1_, b1_, w2_, b2_;
  std::vector<double> frozen_table_, frozen_w1_, frozen_b1_, frozen_w2_,
      frozen_b2_;
};

// Mined OOD label set, sorted by similarity non-decreasing.
struct OODLabelSet {
  std::vector<std::string> labels;
  std::vector<double> similarities;  // max cosine sim to any ID label

  std::size_t size() const { return labels.size(); }
};

inline double cosine(const Tensor& a, const Tensor& b) {
  double num = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    num += a.at(i) * b.at(i);
    na += a.at(i) * a.at(i);
    nb += b.at(i) * b.at(i);
  }
  return num / std::sqrt(na * nb);
}

// NegMining: exclude exact ID tokens, rank candidates by max similarity to
// the ID set, drop the most-dissimilar filter_quantile fraction as extreme
// outliers (ceil), then select the M most-dissimilar remaining labels.
inline OODLabelSet neg_mine(const EmbeddingSpace& space,
                            const std::vector<std::string>& id_labels,
                            const std::vector<std::string>& corpus, int m,
                            double filter_quantile = 0.05) {
  std::vector<Tensor> id_embeds;
  for (const auto& y : id_labels) id_embeds.push_back(space.encode(y, true));

  struct Cand {
    std::string token;
    double sim;
    std::size_t order;
  };
  std::vector<Cand> cands;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& tok = corpus[i];
    if (std::find(id_labels.begin(), id_labels.end(), tok) != id_labels.end())
      continue;
    Tensor e = space.encode(tok, true);
    double sim = -1.0;
    for (const auto& id : id_embeds) sim = std::max(sim, cosine(e, id));
    cands.push_back({tok, sim, i});
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.sim != b.sim) return a.sim < b.sim;
    return a.order < b.order;
  });
  const std::size_t cut = static_cast<std::size_t>(
      std::ceil(filter_quantile * static_cast<double>(cands.size())));
  if (cands.size() < cut + static_cast<std::size_t>(m))
    throw CapacityError("neg_mine: need " + std::to_string(m) +
                        " labels but only " +
                        std::to_string(cands.size() > cut ? cands.size() - cut
                                                          : 0) +
                        " remain after excluding " + std::to_string(cut) +
                        " outliers from " + std::to_string(cands.size()) +
                        " candidates");
  OODLabelSet out;
  for (int i = 0; i < m; ++i) {
    out.labels.push_back(cands[cut + i].token);
    out.similarities.push_back(cands[cut + i].sim);
  }
  return out;
}

struct OODPromptGroup {
  std::vector<std::string> labels;
  Tensor mean_embedding;  // unit-norm constant group mean
  Tensor prompt;          // trainable [L_p x d] pseudo-token embeddings
};

enum class GroupBinning { kEqualWidth, kEqualCount };

struct OODPromptSet {
  std::vector<OODPromptGroup> groups;

  int size() const { return static_cast<int>(groups.size()); }

  // e_n^prompt: mean-pool pseudo-tokens, encoder MLP, unit-normalize.
  Tensor encode_prompt(const EmbeddingSpace& space, int n) const {
    return space.encode_vector(mean_rows(groups[n].prompt));
  }

  std::vector<std::pair<std::string, Tensor>> parameters() {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t n = 0; n < groups.size(); ++n)
      out.emplace_back("prompt.p" + std::to_string(n), groups[n].prompt);
    return out;
  }
};

// Split mined labels into distance bands and build one group (mean embedding
// plus a fresh learnable prompt) per nonempty band. Empty bands fold into
// their neighbors, so the group count can come out below n.
inline OODPromptSet group_by_distance(const EmbeddingSpace& space,
                                      const OODLabelSet& ood, int n,
                                      Rng& rng, int prompt_len = 4,
                                      GroupBinning binning =
                                          GroupBinning::kEqualWidth) {
  if (n < 1 || n > static_cast<int>(ood.size()))
    throw std::invalid_argument("group_by_distance: N=" + std::to_string(n) +
                                " outside [1," + std::to_string(ood.size()) +
                                "]");
  std::vector<std::vector<std::size_t>> bins(n);
  if (binning == GroupBinning::kEqualWidth) {
    const double lo = ood.similarities.front();
    const double hi = ood.similarities.back();
    const double width = hi - lo;
    for (std::size_t i = 0; i < ood.size(); ++i) {
      int b = width <= 0.0
                  ? 0
                  : std::min(n - 1, static_cast<int>((ood.similarities[i] - lo) /
                                                     width * n));
      bins[b].push_back(i);
    }
  } else {
    for (std::size_t i = 0; i < ood.size(); ++i)
      bins[static_cast<std::size_t>(i) * n / ood.size()].push_back(i);
  }

  OODPromptSet out;
  const int d = space.dim();
  for (const auto& bin : bins) {
    if (bin.empty()) continue;
    OODPromptGroup g;
    std::vector<double> mean(d, 0.0);
    for (std::size_t idx : bin) {
      g.labels.push_back(ood.labels[idx]);
      Tensor e = space.encode(ood.labels[idx], true);
      for (int j = 0; j < d; ++j) mean[j] += e.at(j);
    }
    for (double& v : mean) v /= static_cast<double>(bin.size());
    g.mean_embedding = normalize(Tensor::make({d}, mean));
    // Prompts start near their band's mean.
    std::vector<double> pv(static_cast<std::size_t>(prompt_len) * d);
    for (int l = 0; l < prompt_len; ++l)
      for (int j = 0; j < d; ++j)
        pv[static_cast<std::size_t>(l) * d + j] =
            g.mean_embedding.at(j) + rng.normal(0.0, 0.02);
    g.prompt = Tensor::make({prompt_len, d}, std::move(pv), true);
    out.groups.push_back(std::move(g));
  }
  return out;
}

// Two-term contrastive alignment loss over the concatenated
// [OOD group means ; frozen ID embeddings] columns:
//   - each trainable ID embedding must pick its own frozen column;
//   - each encoded prompt must pick its own group-mean column.
inline Tensor prompt_alignment_loss(const EmbeddingSpace& space,
                                    const OODPromptSet& prompts,
                                    const std::vector<std::string>& id_labels) {
  if (id_labels.empty())
    throw std::invalid_argument("prompt_alignment_loss: no ID labels");
  const int n = prompts.size();
  const int k = static_cast<int>(id_labels.size());

  std::vector<Tensor> cols;
  for (int g = 0; g < n; ++g) cols.push_back(prompts.groups[g].mean_embedding);
  for (const auto& y : id_labels) cols.push_back(space.encode(y, true));
  Tensor col_mat = concat_rows(cols);  // [(N+K) x d]

  std::vector<Tensor> id_rows;
  std::vector<int> id_targets;
  for (int i = 0; i < k; ++i) {
    id_rows.push_back(space.encode(id_labels[i], false));
    id_targets.push_back(n + i);
  }
  Tensor term1 = cross_entropy(matmul_nt(concat_rows(id_rows), col_mat),
                               id_targets);

  std::vector<Tensor> prompt_rows;
  std::vector<int> prompt_targets;
  for (int g = 0; g < n; ++g) {
    prompt_rows.push_back(prompts.encode_prompt(space, g));
    prompt_targets.push_back(g);
  }
  Tensor term2 = cross_entropy(matmul_nt(concat_rows(prompt_rows), col_mat),
                               prompt_targets);
  return add(term1, term2);
}

// Serializable record of a mining run: the selected labels with their
// similarities and the distance-band grouping.
inline nlohmann::json mined_set_json(const OODLabelSet& ood,
                                     const OODPromptSet& prompts) {
  nlohmann::json j;
  j["labels"] = ood.labels;
  j["similarities"] = ood.similarities;
  j["groups"] = nlohmann::json::array();
  for (const auto& g : prompts.groups) j["groups"].push_back(g.labels);
  return j;
}

}  // namespace tdos
