#include <gtest/gtest.h>

#include <mutex>

#include "test_support.hpp"

#include "sysrev/augment.hpp"

using namespace sysrev;
using namespace sysrev::augment;
using sysrev::testing::MockService;
using sysrev::testing::TempDir;
using sysrev::testing::reply_json;

namespace {

// Emits "what about <first two words>?" and a log-probability from the text length.
class EchoGenerator : public Generator {
 public:
  std::string id() const override { return "echo"; }
  remote::GenerateResponse generate(const remote::GenerateRequest& req) const override {
    const auto at = req.prompt.rfind("Document: ");
    const auto end = req.prompt.rfind("\n\nRelevant Query:");
    const std::string target = req.prompt.substr(at + 10, end - at - 10);
    auto words = text::tokenize(target);
    std::string q = "what about";
    for (std::size_t i = 0; i < std::min<std::size_t>(2, words.size()); ++i) q += " " + words[i];
    return {q + "?\nExample 18:", -static_cast<double>(target.size() % 17) / 10.0};
  }
};

class FlakyGenerator : public Generator {
 public:
  std::string id() const override { return "flaky"; }
  remote::GenerateResponse generate(const remote::GenerateRequest& req) const override {
    if (req.prompt.find("Reoffending") != std::string::npos) throw RemoteError("mock", "boom");
    if (req.prompt.find("Fieldwork") != std::string::npos) return {"  x ", std::nullopt};
    return {"what is measured", std::nullopt};
  }
};

}  // namespace

TEST(Augment, SeedFileHasSixteenPairsByTheme) {
  auto seeds = load_seed_pairs(sysrev::testing::data_file("inpars_seeds.jsonl"));
  ASSERT_EQ(seeds.size(), 16u);
  std::map<std::string, int> per;
  for (const auto& s : seeds) ++per[s.theme_id];
  EXPECT_EQ(per["study_design"], 6);
  EXPECT_EQ(per["target_population"], 4);
  EXPECT_EQ(per["financial_costs"], 3);
  EXPECT_EQ(per["person_outcomes"], 3);
}

TEST(Augment, PromptMatchesShippedFixture) {
  PromptTemplate tpl;
  tpl.seed_pairs = load_seed_pairs(sysrev::testing::data_file("inpars_seeds.jsonl"));
  const std::string expected = jsonl::read_file(sysrev::testing::fixture("appendix_b_prompt.txt"));
  EXPECT_EQ(build_prompt(tpl, "{document_text}"), expected);
  EXPECT_TRUE(expected.ends_with("Example 17:\n\nDocument: {document_text}\n\nRelevant Query:"));
}

TEST(Augment, PromptRejectsEmptyTarget) {
  PromptTemplate tpl;
  EXPECT_THROW(build_prompt(tpl, "  "), DataError);
  EXPECT_EQ(build_prompt(tpl, "p"), "Example 1:\n\nDocument: p\n\nRelevant Query:");
}

TEST(Augment, CleanGeneration) {
  EXPECT_EQ(*clean_generation("  What is it?\nExample 2:"), "What is it?");
  EXPECT_FALSE(clean_generation(" ab \n more"));
  EXPECT_FALSE(clean_generation(""));
}

TEST(Augment, FilterTopKAndThreshold) {
  std::vector<GeneratedPair> pairs = {{"b", "q", -0.5}, {"a", "q", -0.5}, {"c", "q", -0.1}, {"d", "q", -2.0}};
  auto top = filter_pairs(pairs, FilterRule::top(3));
  ASSERT_EQ(top.size(), 3u);
  EXPECT_EQ(top[0].passage_id, "c");
  EXPECT_EQ(top[1].passage_id, "a");
  EXPECT_EQ(top[2].passage_id, "b");
  auto thr = filter_pairs(pairs, FilterRule::at_least(-0.5));
  EXPECT_EQ(thr.size(), 3u);
  EXPECT_TRUE(filter_pairs(pairs, FilterRule::top(0)).empty());
}

TEST(Augment, GenerationCountsFailuresAndSkips) {
  Corpus c = sysrev::testing::fixture_corpus();
  auto paras = c.passages(Granularity::paragraph);
  PromptTemplate tpl;
  GenerationConfig cfg;
  cfg.max_doc_chars = 120;
  LexicalScorer scorer;
  auto r = generate_queries(FlakyGenerator(), scorer, paras, tpl, cfg);
  std::size_t too_long = 0;
  for (const auto& p : paras) too_long += text::codepoint_count(p.text) > 120;
  EXPECT_EQ(r.counters.considered, paras.size());
  EXPECT_EQ(r.counters.skipped_too_long, too_long);
  EXPECT_EQ(r.counters.failures, 1u);
  EXPECT_EQ(r.counters.empty_dropped, 1u);
  EXPECT_EQ(r.counters.generated, paras.size() - too_long - 2);
  // without a logprob the scorer's score is used
  for (const auto& p : r.pairs) EXPECT_DOUBLE_EQ(p.gen_score, lexical_score(p.query, c.passage(p.passage_id).text));
}

TEST(Augment, MinedNegativeIsBestNonPositiveHit) {
  Corpus c = sysrev::testing::fixture_corpus();
  Index idx = build_index(c.passages(Granularity::paragraph), {});
  std::vector<GeneratedPair> pairs = {{"soc03#p000002", "methodology contract documents interviews", -0.1},
                                      {"soc01#p000000", "zzzz unseen", -0.2}};
  auto mined = mine_negatives(idx, pairs, 10);
  ASSERT_EQ(mined.triplets.size(), 1u);
  EXPECT_EQ(mined.dropped, 1u);
  const auto hits = retrieve(idx, pairs[0].query, 10);
  std::string expected;
  for (const auto& e : hits.entries)
    if (e.passage_id != pairs[0].passage_id) {
      expected = e.passage_id;
      break;
    }
  EXPECT_EQ(mined.triplets[0].negative_passage_id, expected);
  EXPECT_THROW(mine_negatives(idx, pairs, 1), DataError);
}

TEST(Augment, TripletExportSanitisesAndRoundTrips) {
  TempDir dir;
  Corpus c = sysrev::testing::single_doc({"pos\ttext with tab", "neg text\nwith newline"});
  std::vector<TrainingTriplet> t = {{"a\t\tquery", "d#p000000", "d#p000001"}};
  export_triplets(t, lookup_in(c), dir / "t.tsv");
  auto back = read_triplets(dir / "t.tsv");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].query, "a query");
  EXPECT_EQ(back[0].positive, "pos text with tab");
  EXPECT_EQ(back[0].negative, "neg text with newline");
  EXPECT_EQ(back, triplet_texts(t, lookup_in(c)));
}

TEST(Augment, PriceTableAndCost) {
  auto table = load_price_table(sysrev::testing::data_file("prices.tsv"));
  EXPECT_EQ(estimate_cost(1000, "Curie", table, Phase::usage), 0.0120);
  EXPECT_EQ(estimate_cost(1000, "curie", table, Phase::train), 0.0030);
  EXPECT_DOUBLE_EQ(estimate_cost(2500, "Davinci", table, Phase::usage), 0.3);
  EXPECT_EQ(estimate_cost(0, "Ada", table, Phase::usage), 0.0);
  EXPECT_THROW(estimate_cost(10, "Unknown", table, Phase::usage), DataError);
  EXPECT_THROW(estimate_cost(-1, "Ada", table, Phase::usage), DataError);
}

TEST(Augment, RemoteGeneratorAgainstMock) {
  MockService svc;
  svc.on("/generate", [](const httplib::Request& req, httplib::Response& res) {
    auto body = nlohmann::json::parse(req.body);
    reply_json(res, {{"text", " what is the research method?\nExample"}, {"mean_logprob", -0.25}});
  });
  Corpus c = sysrev::testing::fixture_corpus();
  Index idx = build_index(c.passages(Granularity::paragraph), {});
  PromptTemplate tpl;
  tpl.seed_pairs = load_seed_pairs(sysrev::testing::data_file("inpars_seeds.jsonl"));
  RemoteGenerator gen(svc.endpoint(), 2000);
  LexicalScorer scorer;
  auto paras = c.passages(Granularity::paragraph);
  RunConfig cfg;
  cfg.filter = FilterRule::top(4);
  cfg.negatives_pool = 5;
  auto r = run_augmentation(idx, c, gen, scorer, paras, tpl, cfg);
  EXPECT_EQ(r.generation.counters.generated, paras.size());
  EXPECT_EQ(r.survivors.size(), 4u);
  for (const auto& t : r.mining.triplets) EXPECT_NE(t.positive_passage_id, t.negative_passage_id);
  EXPECT_GT(r.prompt_tokens, 0);
}

TEST(Augment, DeterministicGeneratorGivesReproducibleRun) {
  Corpus c = sysrev::testing::fixture_corpus();
  Index idx = build_index(c.passages(Granularity::paragraph), {});
  PromptTemplate tpl;
  tpl.seed_pairs = load_seed_pairs(sysrev::testing::data_file("inpars_seeds.jsonl"));
  LexicalScorer scorer;
  RunConfig cfg;
  cfg.filter = FilterRule::top(10);
  cfg.negatives_pool = 8;
  auto paras = c.passages(Granularity::paragraph);
  auto a = run_augmentation(idx, c, EchoGenerator(), scorer, paras, tpl, cfg);
  auto b = run_augmentation(idx, c, EchoGenerator(), scorer, paras, tpl, cfg);
  ASSERT_EQ(a.mining.triplets.size(), b.mining.triplets.size());
  for (std::size_t i = 0; i < a.mining.triplets.size(); ++i) {
    EXPECT_EQ(to_json(a.mining.triplets[i]), to_json(b.mining.triplets[i]));
  }
}
