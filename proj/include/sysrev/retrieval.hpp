#pragma once

// First-stage retrieval: an immutable inverted index over passages of one
// granularity, scored with Okapi BM25.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "sysrev/corpus.hpp"
#include "sysrev/error.hpp"
#include "sysrev/jsonl.hpp"
#include "sysrev/text.hpp"

namespace sysrev {

inline constexpr int kIndexFormatVersion = 1;

struct IndexConfig {
  double k1 = 1.2;
  double b = 0.75;
  bool lowercase = true;
  std::set<std::string> stopwords;
  Granularity granularity = Granularity::paragraph;

  text::TokenRule token_rule() const { return {lowercase, stopwords}; }

  void validate() const {
    if (!(k1 >= 0)) throw DataError("index config: k1 must be >= 0");
    if (!(b >= 0 && b <= 1)) throw DataError("index config: b must be in [0, 1]");
  }
};

enum class Stage { retrieved, reranked };

inline std::string_view to_string(Stage s) { return s == Stage::retrieved ? "retrieved" : "reranked"; }

struct RankedEntry {
  std::size_t rank = 0;  // 1-based
  std::string passage_id;
  double score = 0;
};

struct RankedList {
  std::string query;
  Granularity granularity = Granularity::paragraph;
  Stage stage = Stage::retrieved;
  std::vector<RankedEntry> entries;

  std::size_t size() const { return entries.size(); }
  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.passage_id);
    return out;
  }
};

inline nlohmann::json to_json(const RankedList& list) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : list.entries)
    entries.push_back({{"rank", e.rank}, {"passage_id", e.passage_id}, {"score", e.score}});
  return {{"query", list.query},
          {"granularity", to_string(list.granularity)},
          {"stage", to_string(list.stage)},
          {"entries", entries}};
}

inline RankedList ranked_list_from_json(const nlohmann::json& j) {
  RankedList list;
  list.query = j.at("query").get<std::string>();
  list.granularity = parse_granularity(j.at("granularity").get<std::string>());
  list.stage = j.at("stage").get<std::string>() == "reranked" ? Stage::reranked : Stage::retrieved;
  for (const auto& e : j.at("entries"))
    list.entries.push_back({e.at("rank").get<std::size_t>(), e.at("passage_id").get<std::string>(),
                            e.at("score").get<double>()});
  return list;
}

// Sorts (id, score) pairs by score descending then id ascending and assigns
// ranks. Used by every stage that emits a RankedList from raw scores.
inline std::vector<RankedEntry> rank_by_score(std::vector<std::pair<std::string, double>> scored, std::size_t n) {
  auto better = [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  };
  const std::size_t keep = std::min(n, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(), better);
  std::vector<RankedEntry> out;
  out.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) out.push_back({i + 1, std::move(scored[i].first), scored[i].second});
  return out;
}

class Index {
 public:
  struct Posting {
    uint32_t passage;  // position in passage_ids()
    uint32_t tf;
  };

  static Index build(std::span<const Passage> passages, IndexConfig cfg) {
    cfg.validate();
    if (passages.empty()) throw DataError("build_index: empty passage set");
    for (const auto& p : passages)
      if (p.granularity != cfg.granularity)
        throw DataError("build_index: passage " + p.passage_id + " has granularity " +
                        std::string(to_string(p.granularity)) + ", index expects " +
                        std::string(to_string(cfg.granularity)));

    std::vector<const Passage*> sorted;
    for (const auto& p : passages) sorted.push_back(&p);
    std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->passage_id < b->passage_id; });
    for (std::size_t i = 1; i < sorted.size(); ++i)
      if (sorted[i]->passage_id == sorted[i - 1]->passage_id)
        throw DataError("build_index: duplicate passage_id " + sorted[i]->passage_id);

    Index idx;
    idx.cfg_ = std::move(cfg);
    const auto rule = idx.cfg_.token_rule();
    double total = 0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      const auto tokens = text::tokenize(sorted[i]->text, rule);
      std::map<std::string, uint32_t> tf;
      for (const auto& t : tokens) ++tf[t];
      for (const auto& [term, count] : tf) idx.postings_[term].push_back({static_cast<uint32_t>(i), count});
      idx.ids_.push_back(sorted[i]->passage_id);
      idx.lengths_.push_back(static_cast<uint32_t>(tokens.size()));
      total += static_cast<double>(tokens.size());
    }
    idx.avg_length_ = total / static_cast<double>(sorted.size());
    idx.reindex_ids();
    return idx;
  }

  const IndexConfig& config() const { return cfg_; }
  std::size_t passage_count() const { return ids_.size(); }
  double avg_doc_length() const { return avg_length_; }
  const std::vector<std::string>& passage_ids() const { return ids_; }
  const std::vector<uint32_t>& doc_lengths() const { return lengths_; }

  bool contains(std::string_view id) const { return position_.contains(std::string(id)); }

  std::size_t doc_length(std::string_view id) const { return lengths_[position(id)]; }

  std::size_t doc_freq(const std::string& term) const {
    auto it = postings_.find(term);
    return it == postings_.end() ? 0 : it->second.size();
  }

  std::span<const Posting> postings(const std::string& term) const {
    auto it = postings_.find(term);
    if (it == postings_.end()) return {};
    return it->second;
  }

  uint32_t term_frequency(const std::string& term, std::size_t pos) const {
    auto plist = postings(term);
    auto it = std::lower_bound(plist.begin(), plist.end(), pos,
                               [](const Posting& p, std::size_t v) { return p.passage < v; });
    return (it != plist.end() && it->passage == pos) ? it->tf : 0;
  }

  // Distinct query terms, in sorted order. Scores sum in this order.
  std::vector<std::string> query_terms(std::string_view query) const {
    auto tokens = text::tokenize(query, cfg_.token_rule());
    std::set<std::string> uniq(tokens.begin(), tokens.end());
    return {uniq.begin(), uniq.end()};
  }

  double idf(const std::string& term) const {
    const double N = static_cast<double>(ids_.size());
    const double n = static_cast<double>(doc_freq(term));
    return std::log((N - n + 0.5) / (n + 0.5) + 1.0);
  }

  double term_score(const std::string& term, std::size_t pos, uint32_t tf) const {
    if (tf == 0) return 0.0;
    const double len = lengths_[pos];
    const double norm = cfg_.k1 * (1.0 - cfg_.b + cfg_.b * len / avg_length_);
    return idf(term) * (tf * (cfg_.k1 + 1.0)) / (tf + norm);
  }

  std::size_t position(std::string_view id) const {
    auto it = position_.find(std::string(id));
    if (it == position_.end()) throw DataError("unknown passage_id '" + std::string(id) + "' in index");
    return it->second;
  }

  void save(const std::filesystem::path& path) const {
    std::vector<nlohmann::json> rows;
    rows.push_back({{"format", "sysrev.bm25"},
                    {"version", kIndexFormatVersion},
                    {"k1", cfg_.k1},
                    {"b", cfg_.b},
                    {"lowercase", cfg_.lowercase},
                    {"stopwords", cfg_.stopwords},
                    {"granularity", to_string(cfg_.granularity)},
                    {"passage_count", ids_.size()},
                    {"avg_doc_length", avg_length_}});
    for (std::size_t i = 0; i < ids_.size(); ++i) rows.push_back({{"p", ids_[i]}, {"len", lengths_[i]}});
    std::map<std::string, const std::vector<Posting>*> terms;
    for (const auto& [t, pl] : postings_) terms.emplace(t, &pl);
    for (const auto& [t, pl] : terms) {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& p : *pl) arr.push_back({p.passage, p.tf});
      rows.push_back({{"t", t}, {"postings", arr}});
    }
    jsonl::write(path, rows);
  }

  static Index load(const std::filesystem::path& path) {
    auto rows = jsonl::read(path);
    if (rows.empty()) throw DataError("index file " + path.string() + " is empty");
    const auto& head = rows.front();
    if (head.value("format", "") != "sysrev.bm25")
      throw DataError("index file " + path.string() + ": not a sysrev index");
    const int version = head.value("version", -1);
    if (version != kIndexFormatVersion)
      throw DataError("index file " + path.string() + ": format version " + std::to_string(version) +
                      ", expected " + std::to_string(kIndexFormatVersion));
    Index idx;
    try {
      idx.cfg_.k1 = head.at("k1").get<double>();
      idx.cfg_.b = head.at("b").get<double>();
      idx.cfg_.lowercase = head.at("lowercase").get<bool>();
      idx.cfg_.stopwords = head.at("stopwords").get<std::set<std::string>>();
      idx.cfg_.granularity = parse_granularity(head.at("granularity").get<std::string>());
      idx.avg_length_ = head.at("avg_doc_length").get<double>();
      for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.contains("p")) {
          idx.ids_.push_back(row["p"].get<std::string>());
          idx.lengths_.push_back(row.at("len").get<uint32_t>());
        } else {
          auto& pl = idx.postings_[row.at("t").get<std::string>()];
          for (const auto& p : row.at("postings")) pl.push_back({p[0].get<uint32_t>(), p[1].get<uint32_t>()});
        }
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError("index file " + path.string() + ": " + e.what());
    }
    if (idx.ids_.size() != head.value("passage_count", std::size_t{0}))
      throw DataError("index file " + path.string() + ": passage count mismatch");
    idx.reindex_ids();
    return idx;
  }

 private:
  void reindex_ids() {
    position_.clear();
    for (std::size_t i = 0; i < ids_.size(); ++i) position_.emplace(ids_[i], i);
  }

  IndexConfig cfg_;
  std::vector<std::string> ids_;
  std::vector<uint32_t> lengths_;
  std::unordered_map<std::string, std::vector<Posting>> postings_;
  std::unordered_map<std::string, std::size_t> position_;
  double avg_length_ = 0;
};

inline Index build_index(std::span<const Passage> passages, IndexConfig cfg) {
  return Index::build(passages, std::move(cfg));
}

// Okapi BM25 with IDF(t) = ln((N - n_t + 0.5) / (n_t + 0.5) + 1), summed over
// the distinct query terms.
inline double bm25_score(const Index& index, std::string_view query, std::string_view passage_id) {
  const std::size_t pos = index.position(passage_id);
  double score = 0;
  for (const auto& term : index.query_terms(query)) score += index.term_score(term, pos, index.term_frequency(term, pos));
  return score;
}

using PassageFilter = std::function<bool(std::string_view passage_id)>;

// Top-n passages with score > 0, ties broken by ascending passage_id. An
// optional filter restricts the candidate set (e.g. to one document).
inline RankedList retrieve(const Index& index, std::string_view query, std::size_t n,
                           const PassageFilter& filter = {}) {
  if (n < 1) throw DataError("retrieve: n must be >= 1");
  const auto terms = index.query_terms(query);
  if (terms.empty()) throw DataError("retrieve: query '" + std::string(query) + "' is empty after tokenization");

  std::vector<double> acc(index.passage_count(), 0.0);
  std::vector<char> touched(index.passage_count(), 0);
  for (const auto& term : terms) {
    for (const auto& p : index.postings(term)) {
      acc[p.passage] += index.term_score(term, p.passage, p.tf);
      touched[p.passage] = 1;
    }
  }
  std::vector<std::pair<std::string, double>> scored;
  for (std::size_t i = 0; i < acc.size(); ++i) {
    if (!touched[i] || !(acc[i] > 0)) continue;
    const auto& id = index.passage_ids()[i];
    if (filter && !filter(id)) continue;
    scored.emplace_back(id, acc[i]);
  }
  RankedList list;
  list.query = std::string(query);
  list.granularity = index.config().granularity;
  list.stage = Stage::retrieved;
  list.entries = rank_by_score(std::move(scored), n);
  return list;
}

// Filter matching the passages of one document (passage ids are prefixed by
// the doc_id and a '#').
inline PassageFilter in_document(std::string doc_id) {
  return [prefix = std::move(doc_id) + "#"](std::string_view id) { return id.starts_with(prefix); };
}

}  // namespace sysrev
