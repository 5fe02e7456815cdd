#pragma once

// Retrieval metrics, the per-(document, query variant) result matrix with its
// table renderings, and the keyword-based retrieval difficulty labels.

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sysrev/corpus.hpp"
#include "sysrev/error.hpp"
#include "sysrev/rerank.hpp"
#include "sysrev/retrieval.hpp"
#include "sysrev/text.hpp"

namespace sysrev::eval {

// Undefined (N/A) when the gold set is empty.
using Metric = std::optional<double>;

inline std::size_t hits_at_k(const std::vector<std::string>& ranked, const std::set<std::string>& gold, std::size_t k) {
  const std::size_t top = std::min(k, ranked.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < top; ++i) hits += gold.contains(ranked[i]);
  return hits;
}

// Denominator is k even when fewer than k passages were returned.
inline Metric precision_at_k(const std::vector<std::string>& ranked, const std::set<std::string>& gold, std::size_t k) {
  if (k < 1) throw DataError("precision_at_k: k must be >= 1");
  if (gold.empty()) return std::nullopt;
  return static_cast<double>(hits_at_k(ranked, gold, k)) / static_cast<double>(k);
}

inline Metric recall_at_k(const std::vector<std::string>& ranked, const std::set<std::string>& gold, std::size_t k) {
  if (k < 1) throw DataError("recall_at_k: k must be >= 1");
  if (gold.empty()) return std::nullopt;
  return static_cast<double>(hits_at_k(ranked, gold, k)) / static_cast<double>(gold.size());
}

inline Metric precision_at_k(const RankedList& ranked, const std::set<std::string>& gold, std::size_t k) {
  return precision_at_k(ranked.ids(), gold, k);
}

inline Metric recall_at_k(const RankedList& ranked, const std::set<std::string>& gold, std::size_t k) {
  return recall_at_k(ranked.ids(), gold, k);
}

// Span-overlap matching: a retrieved passage is correct if it overlaps any
// gold span; a gold span is found if any top-k passage overlaps it.
inline std::pair<Metric, Metric> overlap_metrics(const std::vector<Span>& ranked, const std::vector<Span>& gold,
                                                 std::size_t k) {
  if (k < 1) throw DataError("overlap_metrics: k must be >= 1");
  if (gold.empty()) return {std::nullopt, std::nullopt};
  const std::size_t top = std::min(k, ranked.size());
  std::size_t correct = 0;
  std::vector<char> found(gold.size(), 0);
  for (std::size_t i = 0; i < top; ++i) {
    bool any = false;
    for (std::size_t g = 0; g < gold.size(); ++g)
      if (ranked[i].intersects(gold[g])) {
        any = true;
        found[g] = 1;
      }
    correct += any;
  }
  const auto recalled = static_cast<double>(std::count(found.begin(), found.end(), 1));
  return {static_cast<double>(correct) / static_cast<double>(k), recalled / static_cast<double>(gold.size())};
}

enum class MatchRule { exact_id, span_overlap };

inline MatchRule parse_match_rule(std::string_view s) {
  if (s == "exact_id") return MatchRule::exact_id;
  if (s == "span_overlap") return MatchRule::span_overlap;
  throw DataError("unknown match_rule '" + std::string(s) + "'");
}

struct EvalConfig {
  std::vector<std::size_t> k_values = [] {
    std::vector<std::size_t> ks;
    for (std::size_t k = 1; k <= 20; ++k) ks.push_back(k);
    return ks;
  }();
  Granularity granularity = Granularity::paragraph;
  MatchRule match_rule = MatchRule::exact_id;

  void validate() const {
    if (k_values.empty()) throw DataError("eval: k_values is empty");
    for (std::size_t i = 0; i < k_values.size(); ++i) {
      if (k_values[i] < 1) throw DataError("eval: k values must be positive");
      if (i && k_values[i] <= k_values[i - 1]) throw DataError("eval: k values must be sorted and distinct");
    }
  }

  std::size_t max_k() const { return k_values.back(); }
};

struct MetricCell {
  std::size_t k = 0;
  Metric precision;
  Metric recall;
};

struct QueryVariant {
  std::string label;
  std::string query;
};

// Every question, then the concatenated keywords.
inline std::vector<QueryVariant> query_variants(const Theme& theme) {
  std::vector<QueryVariant> out;
  for (const auto& q : theme.questions) out.push_back({q, q});
  out.push_back({"Keywords (Concatenation)", theme.concat_query});
  return out;
}

struct ResultRow {
  std::string doc_id;
  std::size_t variant = 0;
  std::vector<MetricCell> cells;  // one per configured k
  std::optional<std::string> error;
  RankedList ranking;
};

struct ResultTable {
  std::string model_id;
  std::string theme_id;
  std::string theme_name;
  std::vector<QueryVariant> variants;
  std::vector<std::string> doc_ids;
  std::vector<std::size_t> k_values;
  std::vector<ResultRow> rows;  // doc-major, variant-minor

  const ResultRow& row(std::string_view doc_id, std::size_t variant) const {
    for (const auto& r : rows)
      if (r.doc_id == doc_id && r.variant == variant) return r;
    throw DataError("result table: no row for " + std::string(doc_id));
  }
};

inline std::vector<MetricCell> compute_cells(const Corpus& corpus, const RankedList& ranking, std::string_view doc_id,
                                             std::string_view theme_id, const EvalConfig& cfg) {
  std::vector<MetricCell> cells;
  if (cfg.match_rule == MatchRule::exact_id) {
    const auto gold = corpus.gold_ids(doc_id, theme_id, cfg.granularity);
    const auto ids = ranking.ids();
    for (auto k : cfg.k_values) cells.push_back({k, precision_at_k(ids, gold, k), recall_at_k(ids, gold, k)});
  } else {
    std::vector<Span> gold;
    for (const auto& pid : corpus.gold_ids(doc_id, theme_id, Granularity::paragraph))
      gold.push_back(corpus.passage(pid).span);
    std::vector<Span> ranked;
    for (const auto& e : ranking.entries) ranked.push_back(corpus.passage(e.passage_id).span);
    for (auto k : cfg.k_values) {
      auto [p, r] = overlap_metrics(ranked, gold, k);
      cells.push_back({k, p, r});
    }
  }
  return cells;
}

// Runs retrieve -> rerank per (document, query variant) restricted to the
// document, and scores each ranking at every configured k. A pipeline error
// is recorded on its row instead of aborting the table.
inline ResultTable eval_matrix(const Corpus& corpus, const Theme& theme, const Index& index, const Scorer& scorer,
                               PipelineConfig pipeline, const EvalConfig& cfg, std::string model_id) {
  cfg.validate();
  if (index.config().granularity != cfg.granularity)
    throw DataError("eval: index granularity does not match eval granularity");
  pipeline.k = std::max(pipeline.k, cfg.max_k());
  ResultTable table;
  table.model_id = std::move(model_id);
  table.theme_id = theme.theme_id;
  table.theme_name = theme.name;
  table.variants = query_variants(theme);
  table.k_values = cfg.k_values;
  for (const auto& [doc_id, _] : corpus.documents()) {
    table.doc_ids.push_back(doc_id);
    for (std::size_t v = 0; v < table.variants.size(); ++v) {
      ResultRow row;
      row.doc_id = doc_id;
      row.variant = v;
      try {
        row.ranking = run_pipeline(index, corpus, scorer, table.variants[v].query, pipeline, in_document(doc_id));
        row.cells = compute_cells(corpus, row.ranking, doc_id, theme.theme_id, cfg);
      } catch (const Error& e) {
        row.error = e.what();
        row.ranking = RankedList{table.variants[v].query, cfg.granularity, Stage::reranked, {}};
      }
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

inline std::string format_cell(const MetricCell& c) {
  if (!c.precision || !c.recall) return "N/A";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f/%.2f", *c.precision, *c.recall);
  return buf;
}

// Tab-separated, laid out like a published results table:
//   title row, header row, "<model> Performance" row, one row per document.
inline std::string render_tsv(const ResultTable& t, std::size_t k) {
  auto at = std::find(t.k_values.begin(), t.k_values.end(), k);
  if (at == t.k_values.end()) throw DataError("render_tsv: k=" + std::to_string(k) + " not evaluated");
  const auto ki = static_cast<std::size_t>(at - t.k_values.begin());
  const std::string pad(t.variants.size(), '\t');
  std::string out = t.theme_name + " Results (Precision@" + std::to_string(k) + " / Recall@" + std::to_string(k) + ")" +
                    pad + "\n";
  out += "Paper";
  for (const auto& v : t.variants) out += "\t" + v.label;
  out += "\n" + t.model_id + " Performance" + pad + "\n";
  for (const auto& doc : t.doc_ids) {
    out += "#" + doc;
    for (std::size_t v = 0; v < t.variants.size(); ++v) {
      const auto& r = t.row(doc, v);
      out += "\t" + (r.error ? std::string("ERR") : format_cell(r.cells[ki]));
    }
    out += "\n";
  }
  return out;
}

// One cell per line.
inline std::vector<nlohmann::json> cell_records(const ResultTable& t) {
  std::vector<nlohmann::json> out;
  auto metric = [](const Metric& m) { return m ? nlohmann::json(*m) : nlohmann::json(nullptr); };
  for (const auto& r : t.rows) {
    const auto& v = t.variants[r.variant];
    if (r.error) {
      out.push_back({{"model_id", t.model_id}, {"theme_id", t.theme_id}, {"doc_id", r.doc_id},
                     {"variant", v.label}, {"k", nullptr}, {"precision", nullptr}, {"recall", nullptr},
                     {"error", *r.error}});
      continue;
    }
    for (const auto& c : r.cells)
      out.push_back({{"model_id", t.model_id}, {"theme_id", t.theme_id}, {"doc_id", r.doc_id},
                     {"variant", v.label}, {"k", c.k}, {"precision", metric(c.precision)},
                     {"recall", metric(c.recall)}});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Retrieval difficulty

enum class Difficulty { hard, medium, easy };

inline std::string_view to_string(Difficulty d) {
  switch (d) {
    case Difficulty::hard: return "hard";
    case Difficulty::medium: return "medium";
    case Difficulty::easy: return "easy";
  }
  return "?";
}

struct DifficultyReport {
  std::string doc_id;
  std::string theme_id;
  Difficulty label = Difficulty::hard;
  std::size_t gs_paragraphs = 0;
  std::size_t gs_with_keyword = 0;
  double ratio = 0;
  double easy_threshold = 0.5;
  std::size_t doc_paragraph_count = 0;
  std::size_t doc_char_count = 0;
};

// Case-insensitive whole-phrase match at token boundaries.
inline bool contains_phrase(const std::vector<std::string>& tokens, const std::vector<std::string>& phrase) {
  if (phrase.empty() || phrase.size() > tokens.size()) return false;
  return std::search(tokens.begin(), tokens.end(), phrase.begin(), phrase.end()) != tokens.end();
}

inline bool contains_any_keyword(std::string_view passage, const std::vector<std::string>& keywords) {
  const auto tokens = text::tokenize(passage);
  return std::any_of(keywords.begin(), keywords.end(),
                     [&](const std::string& kw) { return contains_phrase(tokens, text::tokenize(kw)); });
}

// hard iff no gold paragraph contains a keyword; easy iff the share of gold
// paragraphs containing one reaches easy_threshold; medium otherwise.
inline Difficulty difficulty_label(double ratio, double easy_threshold = 0.5) {
  if (ratio == 0) return Difficulty::hard;
  return ratio >= easy_threshold ? Difficulty::easy : Difficulty::medium;
}

inline DifficultyReport classify_difficulty(const Corpus& corpus, std::string_view doc_id, const Theme& theme,
                                            double easy_threshold = 0.5) {
  const auto gold = corpus.gold_ids(doc_id, theme.theme_id, Granularity::paragraph);
  if (gold.empty())
    throw DataError("difficulty undefined for " + std::string(doc_id) + "/" + theme.theme_id + ": empty gold set");
  DifficultyReport r;
  r.doc_id = std::string(doc_id);
  r.theme_id = theme.theme_id;
  r.easy_threshold = easy_threshold;
  r.gs_paragraphs = gold.size();
  for (const auto& pid : gold) r.gs_with_keyword += contains_any_keyword(corpus.passage(pid).text, theme.keywords);
  r.ratio = static_cast<double>(r.gs_with_keyword) / static_cast<double>(r.gs_paragraphs);
  r.label = difficulty_label(r.ratio, easy_threshold);
  r.doc_paragraph_count = corpus.passage_ids(doc_id, Granularity::paragraph).size();
  r.doc_char_count = text::codepoint_count(corpus.document(doc_id).raw_text);
  return r;
}

inline nlohmann::json to_json(const DifficultyReport& r) {
  return {{"doc_id", r.doc_id},
          {"theme_id", r.theme_id},
          {"label", to_string(r.label)},
          {"gs_paragraphs", r.gs_paragraphs},
          {"gs_with_keyword", r.gs_with_keyword},
          {"ratio", r.ratio},
          {"easy_threshold", r.easy_threshold},
          {"doc_paragraph_count", r.doc_paragraph_count},
          {"doc_char_count", r.doc_char_count}};
}

}  // namespace sysrev::eval
