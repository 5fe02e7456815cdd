#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_support.hpp"

#include "sysrev/retrieval.hpp"

using namespace sysrev;
using sysrev::testing::TempDir;

namespace {

const std::vector<std::string> kFive = {
    "The study design was a randomised trial.",
    "Study participants were adults; the design followed guidance.",
    "Costs and savings were reported per outcome.",
    "A mixed method design combined interviews and a survey of study sites.",
    "Outcomes achieved exceeded targets.",
};

Index five_index() {
  Corpus c = sysrev::testing::single_doc(kFive);
  return build_index(c.passages(Granularity::paragraph), {});
}

}  // namespace

// Frozen values computed by a separate script implementing the Okapi formula.
TEST(Retrieval, FrozenBm25Values) {
  Index idx = five_index();
  EXPECT_NEAR(bm25_score(idx, "study design", "d#p000000"), 1.113970518201549, 1e-12);
  EXPECT_NEAR(bm25_score(idx, "study design", "d#p000001"), 1.055271837500062, 1e-12);
  EXPECT_NEAR(bm25_score(idx, "study design", "d#p000003"), 0.8715688096954091, 1e-12);
  EXPECT_EQ(bm25_score(idx, "study design", "d#p000002"), 0.0);
  // repeated query terms count once
  EXPECT_NEAR(bm25_score(idx, "Study design study", "d#p000000"), 1.113970518201549, 1e-12);
}

TEST(Retrieval, RetrieveOrdersByScoreAndDropsZeros) {
  Index idx = five_index();
  RankedList r = retrieve(idx, "study design", 10);
  EXPECT_EQ(r.ids(), (std::vector<std::string>{"d#p000000", "d#p000001", "d#p000003"}));
  EXPECT_EQ(r.entries[0].rank, 1u);
  EXPECT_EQ(r.stage, Stage::retrieved);
  EXPECT_EQ(retrieve(idx, "study design", 2).size(), 2u);
}

TEST(Retrieval, TiesBreakByPassageId) {
  Corpus c = sysrev::testing::single_doc({"zeta alpha", "beta gamma", "alpha zeta", "delta"});
  Index idx = build_index(c.passages(Granularity::paragraph), {});
  RankedList r = retrieve(idx, "alpha", 10);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_DOUBLE_EQ(r.entries[0].score, r.entries[1].score);
  EXPECT_EQ(r.entries[0].passage_id, "d#p000000");
}

TEST(Retrieval, Errors) {
  Index idx = five_index();
  EXPECT_THROW(retrieve(idx, "  ,, ", 10), DataError);
  EXPECT_THROW(retrieve(idx, "study", 0), DataError);
  EXPECT_THROW(build_index(std::vector<Passage>{}, {}), DataError);
  IndexConfig bad;
  bad.b = 1.5;
  EXPECT_THROW(bad.validate(), DataError);
}

TEST(Retrieval, StopwordsAndCase) {
  Corpus c = sysrev::testing::single_doc(kFive);
  IndexConfig cfg;
  cfg.stopwords = {"the"};
  Index idx = build_index(c.passages(Granularity::paragraph), cfg);
  EXPECT_EQ(idx.doc_freq("the"), 0u);
  EXPECT_THROW(retrieve(idx, "the", 5), DataError);
  IndexConfig cased;
  cased.lowercase = false;
  Index cidx = build_index(c.passages(Granularity::paragraph), cased);
  EXPECT_EQ(cidx.doc_freq("Study"), 1u);
  EXPECT_EQ(cidx.doc_freq("study"), 2u);
  EXPECT_EQ(idx.doc_freq("study"), 3u);
}

TEST(Retrieval, DocumentFilterAppliesBeforeTopN) {
  Corpus c = sysrev::testing::fixture_corpus();
  Index idx = build_index(c.passages(Granularity::paragraph), {});
  RankedList r = retrieve(idx, "interviews commissioners", 3, in_document("soc03"));
  ASSERT_FALSE(r.entries.empty());
  for (const auto& e : r.entries) EXPECT_TRUE(e.passage_id.starts_with("soc03#"));
}

TEST(Retrieval, SaveLoadRoundTripPreservesScores) {
  TempDir dir;
  Corpus c = sysrev::testing::fixture_corpus();
  Index idx = build_index(c.passages(Granularity::paragraph), {});
  idx.save(dir / "i.jsonl");
  Index back = Index::load(dir / "i.jsonl");
  EXPECT_EQ(back.passage_count(), idx.passage_count());
  const auto a = retrieve(idx, "target population beneficiaries", 20);
  const auto b = retrieve(back, "target population beneficiaries", 20);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.entries[i].passage_id, b.entries[i].passage_id);
    EXPECT_DOUBLE_EQ(a.entries[i].score, b.entries[i].score);
  }
}

TEST(Retrieval, VersionMismatchIsDataError) {
  TempDir dir;
  five_index().save(dir / "i.jsonl");
  auto rows = jsonl::read(dir / "i.jsonl");
  rows[0]["version"] = kIndexFormatVersion + 1;
  jsonl::write(dir / "i.jsonl", rows);
  EXPECT_THROW(Index::load(dir / "i.jsonl"), DataError);
}

TEST(Retrieval, RankedListJsonRoundTrip) {
  RankedList r = retrieve(five_index(), "study design", 10);
  RankedList back = ranked_list_from_json(to_json(r));
  EXPECT_EQ(back.ids(), r.ids());
  EXPECT_EQ(back.query, r.query);
}

// Property: scores are non-increasing and equal scores are id-ordered.
TEST(Retrieval, RankScoreConsistencyOnRandomCorpora) {
  std::mt19937_64 rng(11);
  const std::vector<std::string> vocab = {"a1", "b2", "c3", "d4", "e5", "f6", "g7", "h8"};
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::string> paras;
    const int n = 5 + static_cast<int>(rng() % 30);
    for (int i = 0; i < n; ++i) {
      std::string p;
      const int len = 1 + static_cast<int>(rng() % 8);
      for (int j = 0; j < len; ++j) p += vocab[rng() % vocab.size()] + " ";
      paras.push_back(p);
    }
    Corpus c = sysrev::testing::single_doc(paras);
    Index idx = build_index(c.passages(Granularity::paragraph), {});
    RankedList r = retrieve(idx, "a1 c3 h8", 100);
    for (std::size_t i = 1; i < r.size(); ++i) {
      EXPECT_GE(r.entries[i - 1].score, r.entries[i].score);
      if (r.entries[i - 1].score == r.entries[i].score) {
        EXPECT_LT(r.entries[i - 1].passage_id, r.entries[i].passage_id);
      }
    }
  }
}
