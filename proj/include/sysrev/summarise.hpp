#pragma once

// Theme-targeted document summaries through the /generate protocol, fed either
// by gold highlights or by the retrieve -> rerank pipeline.

#include <algorithm>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sysrev/augment.hpp"
#include "sysrev/corpus.hpp"
#include "sysrev/error.hpp"
#include "sysrev/rerank.hpp"
#include "sysrev/retrieval.hpp"
#include "sysrev/text.hpp"

namespace sysrev::summarise {

inline constexpr std::size_t kMaxInputChars = 4000;

inline const std::string& default_template() {
  static const std::string t =
      "Summarise the following passages with respect to {theme} in one sentence:\n{passages}\nSummary:";
  return t;
}

struct Source {
  enum class Kind { highlights, retrieved };
  Kind kind = Kind::highlights;
  std::size_t k = 5;  // retrieved only

  static Source highlights() { return {Kind::highlights, 0}; }
  static Source retrieved(std::size_t k) { return {Kind::retrieved, k}; }
};

struct SummaryRequest {
  std::string doc_id;
  std::string theme_id;
  Source source;
  std::string prompt_template = default_template();
  int max_new_tokens = 60;
  double temperature = 0;
  std::optional<std::string> model;

  void validate() const {
    if (max_new_tokens < 1) throw DataError("summary request: max_new_tokens must be >= 1");
    if (prompt_template.find("{theme}") == std::string::npos)
      throw DataError("summary request: template lacks a {theme} slot");
    if (prompt_template.find("{passages}") == std::string::npos)
      throw DataError("summary request: template lacks a {passages} slot");
    if (source.kind == Source::Kind::retrieved && source.k < 1)
      throw DataError("summary request: retrieved(k) needs k >= 1");
  }
};

struct SummaryInput {
  std::vector<std::string> passage_ids;  // one per segment
  std::vector<Span> spans;               // segment spans in raw_text
  std::string text;                      // what is sent, after truncation
  bool truncated = false;
};

struct Summary {
  std::string doc_id;
  std::string theme_id;
  std::string text;
  std::vector<std::string> source_passage_ids;
  std::vector<Span> source_spans;
  bool input_truncated = false;
  std::string model;
  std::string created_at;
};

// Highlights in document order, or the reranked top-k passages of the document
// for the theme's first key question. Segments are joined by "\n" and capped
// at 4000 characters on a token boundary.
inline SummaryInput assemble_input(const SummaryRequest& req, const Corpus& corpus, const Index* index,
                                   const Scorer* scorer, const PipelineConfig& pipeline = {}) {
  const Document& doc = corpus.document(req.doc_id);
  const Theme& theme = corpus.theme(req.theme_id);
  SummaryInput in;
  if (req.source.kind == Source::Kind::highlights) {
    const GoldAnnotation* gold = corpus.gold(req.doc_id, req.theme_id);
    if (!gold || gold->highlights.empty())
      throw DataError("no highlights for " + req.doc_id + "/" + req.theme_id);
    std::vector<Span> hl = gold->highlights;
    std::sort(hl.begin(), hl.end());
    for (const auto& h : hl) {
      std::string owner;
      for (const auto& pid : gold->gold_passage_ids)
        if (corpus.passage(pid).span.contains(h)) {
          owner = pid;
          break;
        }
      in.passage_ids.push_back(owner);
      in.spans.push_back(h);
    }
  } else {
    if (!index || !scorer) throw DataError("retrieved summary input needs an index and a scorer");
    PipelineConfig cfg = pipeline;
    cfg.k = req.source.k;
    RankedList ranked = run_pipeline(*index, corpus, *scorer, theme.questions.front(), cfg, in_document(req.doc_id));
    if (ranked.entries.empty())
      throw DataError("no retrieved passages for " + req.doc_id + "/" + req.theme_id);
    for (const auto& e : ranked.entries) {
      in.passage_ids.push_back(e.passage_id);
      in.spans.push_back(corpus.passage(e.passage_id).span);
    }
  }
  std::string joined;
  for (std::size_t i = 0; i < in.spans.size(); ++i) {
    if (i) joined += '\n';
    joined += doc.raw_text.substr(in.spans[i].start, in.spans[i].end - in.spans[i].start);
  }
  auto [kept, cut] = text::truncate_at_token_boundary(joined, kMaxInputChars);
  in.text = std::move(kept);
  in.truncated = cut;
  return in;
}

inline std::string render_template(std::string_view tpl, std::string_view theme, std::string_view passages) {
  std::string out;
  std::size_t i = 0;
  while (i < tpl.size()) {
    if (tpl.substr(i).starts_with("{theme}")) {
      out += theme;
      i += 7;
    } else if (tpl.substr(i).starts_with("{passages}")) {
      out += passages;
      i += 10;
    } else {
      out += tpl[i++];
    }
  }
  return out;
}

// Validates the request before any remote call, then issues one /generate.
inline Summary summarise_theme(const SummaryRequest& req, const Corpus& corpus, const Index* index,
                               const Scorer* scorer, const augment::Generator& generator, std::string created_at,
                               const PipelineConfig& pipeline = {}) {
  req.validate();
  const Theme& theme = corpus.theme(req.theme_id);
  SummaryInput in = assemble_input(req, corpus, index, scorer, pipeline);
  remote::GenerateRequest gen{render_template(req.prompt_template, theme.name, in.text), req.max_new_tokens,
                              req.temperature, req.model};
  auto resp = generator.generate(gen);
  std::string text(text::trim(resp.text));
  if (text.empty()) throw ProtocolError(generator.id(), "empty summary generated for " + req.doc_id + "/" + req.theme_id);
  return Summary{req.doc_id,       req.theme_id, std::move(text),       in.passage_ids,
                 in.spans,         in.truncated, req.model.value_or(generator.id()), std::move(created_at)};
}

inline nlohmann::json to_json(const Summary& s) {
  nlohmann::json spans = nlohmann::json::array();
  for (const auto& sp : s.source_spans) spans.push_back({sp.start, sp.end});
  return {{"doc_id", s.doc_id},
          {"theme_id", s.theme_id},
          {"text", s.text},
          {"source_passage_ids", s.source_passage_ids},
          {"source_spans", spans},
          {"input_truncated", s.input_truncated},
          {"model", s.model},
          {"created_at", s.created_at}};
}

}  // namespace sysrev::summarise
