#include <gtest/gtest.h>

#include <random>

#include "test_support.hpp"

#include "sysrev/evalkit.hpp"

using namespace sysrev;
using namespace sysrev::eval;

TEST(Eval, PrecisionUsesKAsDenominator) {
  std::vector<std::string> ranked = {"a", "x", "b"};
  std::set<std::string> gold = {"a", "b", "c"};
  EXPECT_DOUBLE_EQ(*precision_at_k(ranked, gold, 1), 1.0);
  EXPECT_DOUBLE_EQ(*precision_at_k(ranked, gold, 3), 2.0 / 3.0);
  // fewer than k results: still divided by k
  EXPECT_DOUBLE_EQ(*precision_at_k(ranked, gold, 20), 2.0 / 20.0);
  EXPECT_DOUBLE_EQ(*recall_at_k(ranked, gold, 20), 2.0 / 3.0);
}

TEST(Eval, EmptyGoldIsNotApplicable) {
  const std::vector<std::string> ranked = {"a"};
  EXPECT_FALSE(precision_at_k(ranked, {}, 5));
  EXPECT_FALSE(recall_at_k(ranked, {}, 5));
  EXPECT_EQ(format_cell({5, std::nullopt, std::nullopt}), "N/A");
  EXPECT_EQ(format_cell({5, 0.35, 0.8333}), "0.35/0.83");
}

TEST(Eval, MonotoneInK) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::string> ranked;
    for (int i = 0; i < 25; ++i) ranked.push_back("p" + std::to_string(rng() % 40));
    std::sort(ranked.begin(), ranked.end());
    ranked.erase(std::unique(ranked.begin(), ranked.end()), ranked.end());
    std::shuffle(ranked.begin(), ranked.end(), rng);
    std::set<std::string> gold;
    for (int i = 0; i < 6; ++i) gold.insert("p" + std::to_string(rng() % 40));
    for (std::size_t k = 1; k < 20; ++k) {
      EXPECT_LE(*recall_at_k(ranked, gold, k), *recall_at_k(ranked, gold, k + 1));
      EXPECT_LE(hits_at_k(ranked, gold, k), k);
    }
  }
}

TEST(Eval, SpanOverlapMetrics) {
  std::vector<Span> ranked = {{0, 10}, {50, 60}, {100, 120}};
  std::vector<Span> gold = {{5, 8}, {110, 130}, {200, 210}};
  auto [p, r] = overlap_metrics(ranked, gold, 3);
  EXPECT_DOUBLE_EQ(*p, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(*r, 2.0 / 3.0);
  auto [p1, r1] = overlap_metrics(ranked, gold, 1);
  EXPECT_DOUBLE_EQ(*p1, 1.0);
  EXPECT_DOUBLE_EQ(*r1, 1.0 / 3.0);
}

TEST(Eval, ConfigValidation) {
  EvalConfig cfg;
  EXPECT_EQ(cfg.k_values.size(), 20u);
  cfg.k_values = {5, 1};
  EXPECT_THROW(cfg.validate(), DataError);
  cfg.k_values = {0, 1};
  EXPECT_THROW(cfg.validate(), DataError);
  EXPECT_THROW(parse_match_rule("fuzzy"), DataError);
}

TEST(Eval, QueryVariantsAreQuestionsThenConcatenation) {
  Corpus c = sysrev::testing::fixture_corpus();
  auto v = query_variants(c.theme("study_design"));
  ASSERT_EQ(v.size(), 4u);
  EXPECT_EQ(v[0].label, "What is the study design?");
  EXPECT_EQ(v[3].label, "Keywords (Concatenation)");
  EXPECT_EQ(v[3].query, c.theme("study_design").concat_query);
}

TEST(Eval, MatrixTableLayout) {
  Corpus c = sysrev::testing::fixture_corpus();
  Index idx = build_index(c.passages(Granularity::paragraph), {});
  LexicalScorer scorer;
  EvalConfig cfg;
  auto table = eval_matrix(c, c.theme("study_design"), idx, scorer, {}, cfg, "bm25+lexical");
  EXPECT_EQ(table.rows.size(), 6u * 4u);
  const std::string tsv = render_tsv(table, 20);
  std::vector<std::string> lines;
  std::stringstream ss(tsv);
  for (std::string l; std::getline(ss, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 3u + 6u);
  EXPECT_TRUE(lines[0].starts_with("Study design Results (Precision@20 / Recall@20)"));
  EXPECT_TRUE(lines[1].starts_with("Paper\tWhat is the study design?"));
  EXPECT_TRUE(lines[2].starts_with("bm25+lexical Performance"));
  EXPECT_TRUE(lines[3].starts_with("#soc01\t"));
  EXPECT_EQ(lines[8], "#soc06\tN/A\tN/A\tN/A\tN/A");  // no gold for this theme
  for (const auto& r : table.rows)
    for (const auto& e : r.ranking.entries) EXPECT_TRUE(e.passage_id.starts_with(r.doc_id + "#"));
  EXPECT_THROW(render_tsv(table, 25), DataError);
}

TEST(Eval, CellRecordsOnePerCell) {
  Corpus c = sysrev::testing::fixture_corpus();
  Index idx = build_index(c.passages(Granularity::paragraph), {});
  LexicalScorer scorer;
  EvalConfig cfg;
  cfg.k_values = {1, 5, 20};
  auto table = eval_matrix(c, c.theme("financial_costs"), idx, scorer, {}, cfg, "m");
  auto rows = cell_records(table);
  std::size_t errors = 0;
  for (const auto& r : table.rows) errors += r.error.has_value();
  EXPECT_EQ(rows.size(), (table.rows.size() - errors) * 3 + errors);
}

TEST(Eval, PipelineErrorIsRecordedOnRow) {
  class Failing : public Scorer {
   public:
    std::string id() const override { return "fail"; }
    std::vector<double> score(const std::string&, const std::vector<std::string>&) const override {
      throw RemoteError("http://x", "down");
    }
  } failing;
  Corpus c = sysrev::testing::fixture_corpus();
  Index idx = build_index(c.passages(Granularity::paragraph), {});
  EvalConfig cfg;
  auto table = eval_matrix(c, c.theme("study_design"), idx, failing, {}, cfg, "m");
  EXPECT_NE(render_tsv(table, 20).find("ERR"), std::string::npos);
}

TEST(Eval, KeywordPhraseMatching) {
  EXPECT_TRUE(contains_any_keyword("We describe the Research Design here.", {"research design"}));
  EXPECT_FALSE(contains_any_keyword("researched design", {"research design"}));
  EXPECT_FALSE(contains_any_keyword("methodological notes", {"method"}));
  EXPECT_TRUE(contains_any_keyword("a mixed-method approach", {"method"}));
}

TEST(Eval, DifficultyThresholds) {
  EXPECT_EQ(difficulty_label(0.0), Difficulty::hard);
  EXPECT_EQ(difficulty_label(0.01), Difficulty::medium);
  EXPECT_EQ(difficulty_label(0.49), Difficulty::medium);
  EXPECT_EQ(difficulty_label(0.5), Difficulty::easy);
  EXPECT_EQ(difficulty_label(0.4, 0.4), Difficulty::easy);
}

TEST(Eval, FixtureDifficulty) {
  Corpus c = sysrev::testing::fixture_corpus();
  auto sd = c.theme("study_design");
  EXPECT_EQ(classify_difficulty(c, "soc01", sd).label, Difficulty::easy);
  auto soc03 = classify_difficulty(c, "soc03", sd);
  EXPECT_EQ(soc03.gs_paragraphs, 4u);
  EXPECT_EQ(soc03.gs_with_keyword, 1u);
  EXPECT_EQ(soc03.label, Difficulty::medium);
  EXPECT_EQ(classify_difficulty(c, "soc04", sd).label, Difficulty::hard);
  EXPECT_THROW(classify_difficulty(c, "soc06", sd), DataError);
}
