#include <cmath>
#include <cstdio>
#include <sstream>

#include <gtest/gtest.h>

#include "tdos/textspace.hpp"

using namespace tdos;

namespace {

std::string corpus_path() { return std::string(TDOS_DATA_DIR) + "/corpus.tsv"; }

// Corpus where token k sits at a known angle to the anchor axis e1, so the
// cosine similarity to "anchor" is exactly planted.
std::string planted_corpus(const std::vector<double>& sims, int dim = 8) {
  std::ostringstream os;
  auto line = [&](const std::string& tok, double c1, double c2) {
    os << tok << '\t';
    char buf[32];
    for (int j = 0; j < dim; ++j) {
      double v = j == 0 ? c1 : (j == 1 ? c2 : 0.0);
      std::snprintf(buf, sizeof buf, "%.17g", v);
      os << (j ? "," : "") << buf;
    }
    os << '\n';
  };
  line("anchor", 1.0, 0.0);
  for (std::size_t k = 0; k < sims.size(); ++k) {
    char name[16];
    std::snprintf(name, sizeof name, "t%03zu", k);
    line(name, sims[k], std::sqrt(1.0 - sims[k] * sims[k]));
  }
  return os.str();
}

EmbeddingSpace planted_space(const std::vector<double>& sims,
                             std::uint64_t seed = 7) {
  std::istringstream is(planted_corpus(sims));
  return EmbeddingSpace::from_corpus(is, seed);
}

std::vector<double> uniform_sims(int n, double lo, double hi) {
  std::vector<double> s(n);
  for (int k = 0; k < n; ++k) s[k] = lo + (hi - lo) * k / (n - 1);
  return s;
}

double norm(const Tensor& t) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.numel(); ++i) s += t.at(i) * t.at(i);
  return std::sqrt(s);
}

}  // namespace

TEST(Corpus, BundledFileLoads) {
  auto sp = EmbeddingSpace::load_corpus(corpus_path(), 1);
  EXPECT_EQ(sp.tokens().size(), 1000u);
  EXPECT_EQ(sp.dim(), 32);
  EXPECT_TRUE(sp.has_token("road"));
  EXPECT_TRUE(sp.has_token("vehicle"));
  Tensor e = sp.encode("road", true);
  EXPECT_NEAR(norm(e), 1.0, 1e-12);
}

TEST(Corpus, TrainableEqualsFrozenAtInit) {
  auto sp = EmbeddingSpace::load_corpus(corpus_path(), 1);
  for (const char* tok : {"road", "vehicle", "pedestrian", "background"}) {
    Tensor a = sp.encode(tok, false);
    Tensor b = sp.encode(tok, true);
    for (std::size_t i = 0; i < a.numel(); ++i)
      ASSERT_DOUBLE_EQ(a.at(i), b.at(i)) << tok;
  }
}

TEST(Corpus, UnknownTokenThrows) {
  auto sp = planted_space(uniform_sims(10, -0.5, 0.5));
  EXPECT_THROW(sp.encode("zzzqqq", true), VocabularyError);
  EXPECT_THROW(sp.encode("zzz qqq", false), VocabularyError);
}

TEST(Corpus, CompoundTokenAveragesKnownSubtokens) {
  auto sp = EmbeddingSpace::load_corpus(corpus_path(), 1);
  Tensor e = sp.encode("road vehicle", true);
  EXPECT_NEAR(norm(e), 1.0, 1e-12);
  // Averaging pulls the compound between its parts.
  double to_road = cosine(e, sp.encode("road", true));
  double to_bg = cosine(e, sp.encode("background", true));
  EXPECT_GT(to_road, to_bg);
}

TEST(Corpus, MalformedLineThrows) {
  std::istringstream is("token-without-tab\n");
  EXPECT_THROW(EmbeddingSpace::from_corpus(is, 1), FormatError);
  std::istringstream is2("a\t1,2\nb\t1,2,3\n");
  EXPECT_THROW(EmbeddingSpace::from_corpus(is2, 1), FormatError);
}

TEST(Mining, PlantedHundredTokenOrderStatistic) {
  // 100 tokens with strictly increasing planted similarity to the single ID
  // label. The 5% outlier filter (ceil(0.05*100)=5) removes t000..t004; the
  // M=12 selection must then be exactly t005..t016 in similarity order.
  auto sims = uniform_sims(100, -0.9, 0.78);
  auto sp = planted_space(sims);
  auto mined = neg_mine(sp, {"anchor"}, sp.tokens(), 12, 0.05);
  ASSERT_EQ(mined.size(), 12u);
  for (int i = 0; i < 12; ++i) {
    char want[16];
    std::snprintf(want, sizeof want, "t%03d", 5 + i);
    EXPECT_EQ(mined.labels[i], want);
    EXPECT_NEAR(mined.similarities[i], sims[5 + i], 1e-9);
  }
  for (std::size_t i = 1; i < mined.size(); ++i)
    EXPECT_LE(mined.similarities[i - 1], mined.similarities[i]);
}

TEST(Mining, ExcludesExactIdTokens) {
  auto sp = planted_space(uniform_sims(40, -0.8, 0.8));
  auto mined = neg_mine(sp, {"anchor", "t039"}, sp.tokens(), 30, 0.0);
  for (const auto& l : mined.labels) {
    EXPECT_NE(l, "anchor");
    EXPECT_NE(l, "t039");
  }
}

TEST(Mining, MaxSimilarityOverAllIdLabels) {
  // With a second ID label at the dissimilar end, candidates near it jump in
  // similarity and fall out of the least-similar selection.
  auto sims = uniform_sims(20, -0.9, 0.9);
  auto sp = planted_space(sims);
  auto lone = neg_mine(sp, {"anchor"}, sp.tokens(), 5, 0.0);
  EXPECT_EQ(lone.labels[0], "t000");
  auto both = neg_mine(sp, {"anchor", "t000"}, sp.tokens(), 5, 0.0);
  // t001 is nearly parallel to t000, so its max-sim is now ~1 and it cannot
  // lead the selection.
  EXPECT_NE(both.labels[0], "t001");
}

TEST(Mining, CapacityErrorNamesBothSizes) {
  auto sp = planted_space(uniform_sims(10, -0.5, 0.5));
  try {
    neg_mine(sp, {"anchor"}, sp.tokens(), 15, 0.05);
    FAIL() << "expected CapacityError";
  } catch (const CapacityError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("15"), std::string::npos);
    EXPECT_NE(msg.find("10"), std::string::npos);
  }
}

TEST(Grouping, EqualWidthBandMembership) {
  auto sims = uniform_sims(10, 0.0, 0.9);  // 0.0, 0.1, ..., 0.9
  auto sp = planted_space(sims);
  auto mined = neg_mine(sp, {"anchor"}, sp.tokens(), 10, 0.0);
  Rng rng(3);
  auto groups = group_by_distance(sp, mined, 3, rng);
  // width 0.3 over [0,0.9]: bands [0,0.3), [0.3,0.6), [0.6,0.9].
  ASSERT_EQ(groups.size(), 3);
  EXPECT_EQ(groups.groups[0].labels.size(), 3u);
  EXPECT_EQ(groups.groups[1].labels.size(), 3u);
  EXPECT_EQ(groups.groups[2].labels.size(), 4u);
  for (const auto& g : groups.groups) {
    EXPECT_NEAR(norm(g.mean_embedding), 1.0, 1e-12);
    EXPECT_EQ(g.prompt.shape()[0], 4);
    EXPECT_EQ(g.prompt.shape()[1], sp.dim());
  }
}

TEST(Grouping, EmptyBandsFoldAway) {
  // Similarities clustered at the extremes leave the middle bands empty.
  std::vector<double> sims = {-0.8, -0.79, -0.78, 0.8, 0.81, 0.82};
  auto sp = planted_space(sims);
  auto mined = neg_mine(sp, {"anchor"}, sp.tokens(), 6, 0.0);
  Rng rng(3);
  auto groups = group_by_distance(sp, mined, 4, rng);
  EXPECT_EQ(groups.size(), 2);
  EXPECT_EQ(groups.groups[0].labels.size(), 3u);
  EXPECT_EQ(groups.groups[1].labels.size(), 3u);
}

TEST(Grouping, EqualCountOption) {
  auto sp = planted_space(uniform_sims(10, -0.5, 0.5));
  auto mined = neg_mine(sp, {"anchor"}, sp.tokens(), 10, 0.0);
  Rng rng(3);
  auto groups = group_by_distance(sp, mined, 3, rng, 4,
                                  GroupBinning::kEqualCount);
  ASSERT_EQ(groups.size(), 3);
  EXPECT_EQ(groups.groups[0].labels.size(), 4u);
  EXPECT_EQ(groups.groups[1].labels.size(), 3u);
  EXPECT_EQ(groups.groups[2].labels.size(), 3u);
}

TEST(Grouping, BadGroupCountThrows) {
  auto sp = planted_space(uniform_sims(5, -0.5, 0.5));
  auto mined = neg_mine(sp, {"anchor"}, sp.tokens(), 5, 0.0);
  Rng rng(3);
  EXPECT_THROW(group_by_distance(sp, mined, 0, rng), std::invalid_argument);
  EXPECT_THROW(group_by_distance(sp, mined, 6, rng), std::invalid_argument);
}

TEST(AlignmentLoss, OrthogonalClosedForm) {
  // Two orthogonal basis tokens; one ID label, one single-member group whose
  // prompt rows equal the group mean exactly. Both terms reduce to a 2-way
  // softmax with logits {1, 0} on the correct column:
  //   loss = 2 * ln(1 + e^-1).
  std::istringstream is(
      "a\t1,0,0,0\n"
      "b\t0,1,0,0\n");
  auto sp = EmbeddingSpace::from_corpus(is, 5);
  OODLabelSet mined{{"b"}, {0.0}};
  Rng rng(1);
  auto prompts = group_by_distance(sp, mined, 1, rng);
  ASSERT_EQ(prompts.size(), 1);
  std::vector<double> pv;
  for (int l = 0; l < 4; ++l)
    for (int j = 0; j < sp.dim(); ++j)
      pv.push_back(prompts.groups[0].mean_embedding.at(j));
  prompts.groups[0].prompt.set_data(pv);

  Tensor loss = prompt_alignment_loss(sp, prompts, {"a"});
  EXPECT_NEAR(loss.item(), 2.0 * std::log(1.0 + std::exp(-1.0)), 1e-12);
}

TEST(AlignmentLoss, DecreasesUnderGradientDescent) {
  auto sp = EmbeddingSpace::load_corpus(corpus_path(), 11);
  const std::vector<std::string> id = {"background", "road", "vehicle",
                                       "pedestrian"};
  auto mined = neg_mine(sp, id, sp.tokens(), 50, 0.05);
  Rng rng(11);
  auto prompts = group_by_distance(sp, mined, 5, rng);

  const std::uint64_t frozen_before = sp.frozen_hash();
  auto params = sp.parameters();
  for (auto& p : prompts.parameters()) params.push_back(p);

  double first = 0.0, last = 0.0;
  for (int step = 0; step < 200; ++step) {
    Tensor loss = prompt_alignment_loss(sp, prompts, id);
    if (step == 0) first = loss.item();
    last = loss.item();
    auto grads = GradTape::backward(loss);
    for (auto& [name, t] : params) {
      auto g = grads.get(t);
      for (double& v : g) v *= -1e-2;
      t.apply_update(g);
    }
  }
  EXPECT_LT(last, first - 0.01);
  EXPECT_EQ(sp.frozen_hash(), frozen_before);
}

TEST(Frozen, UnaffectedByTrainableUpdates) {
  auto sp = EmbeddingSpace::load_corpus(corpus_path(), 2);
  Tensor before = sp.encode("vehicle", true);
  auto params = sp.parameters();
  for (auto& [name, t] : params)
    t.apply_update(std::vector<double>(t.numel(), 0.25));
  Tensor after = sp.encode("vehicle", true);
  Tensor trainable = sp.encode("vehicle", false);
  double diff = 0.0;
  for (std::size_t i = 0; i < before.numel(); ++i) {
    ASSERT_DOUBLE_EQ(after.at(i), before.at(i));
    diff += std::abs(trainable.at(i) - before.at(i));
  }
  EXPECT_GT(diff, 1e-6);
}

TEST(Export, MinedSetJsonShape) {
  auto sp = planted_space(uniform_sims(12, -0.5, 0.5));
  auto mined = neg_mine(sp, {"anchor"}, sp.tokens(), 12, 0.0);
  Rng rng(1);
  auto prompts = group_by_distance(sp, mined, 3, rng);
  auto j = mined_set_json(mined, prompts);
  EXPECT_EQ(j["labels"].size(), 12u);
  EXPECT_EQ(j["similarities"].size(), 12u);
  EXPECT_EQ(j["groups"].size(), prompts.groups.size());
  std::size_t total = 0;
  for (const auto& g : j["groups"]) total += g.size();
  EXPECT_EQ(total, 12u);
}
