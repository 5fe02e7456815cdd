#pragma once

// Second stage of the pipeline: re-score retrieved candidates with a pluggable
// scorer and emit the final ranking.

#include <algorithm>
#include <cmath>
#include <functional>
#include <future>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sysrev/corpus.hpp"
#include "sysrev/error.hpp"
#include "sysrev/remote.hpp"
#include "sysrev/retrieval.hpp"
#include "sysrev/text.hpp"

namespace sysrev {

// Remote passages longer than this are cut at a token boundary.
inline constexpr std::size_t kMaxRemoteChars = 4000;

struct ScorerSpec {
  enum class Kind { lexical, remote };

  Kind kind = Kind::lexical;
  std::optional<std::string> endpoint;
  int timeout_ms = 30000;
  int max_in_flight = 4;
  int batch_size = 32;
  std::optional<std::string> model;

  void validate() const {
    if ((kind == Kind::remote) != endpoint.has_value())
      throw DataError("scorer: endpoint must be set iff kind is remote");
    if (max_in_flight < 1) throw DataError("scorer: max_in_flight must be >= 1");
    if (batch_size < 1) throw DataError("scorer: batch_size must be >= 1");
    if (timeout_ms < 1) throw DataError("scorer: timeout_ms must be >= 1");
  }
};

struct ScoredPair {
  std::string query;
  std::string passage_id;
  double score = 0;
  std::string scorer_id;
};

class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::string id() const = 0;
  // One score per passage text, order-aligned with the input.
  virtual std::vector<double> score(const std::string& query, const std::vector<std::string>& passages) const = 0;
};

// Fraction of distinct query terms that occur in the passage.
inline double lexical_score(std::string_view query, std::string_view passage_text, const text::TokenRule& rule = {}) {
  auto q = text::tokenize(query, rule);
  std::set<std::string> qterms(q.begin(), q.end());
  if (qterms.empty()) throw DataError("lexical_score: query '" + std::string(query) + "' is empty after tokenization");
  auto p = text::tokenize(passage_text, rule);
  std::set<std::string> pterms(p.begin(), p.end());
  std::size_t hits = 0;
  for (const auto& t : qterms) hits += pterms.contains(t);
  return static_cast<double>(hits) / static_cast<double>(qterms.size());
}

class LexicalScorer : public Scorer {
 public:
  explicit LexicalScorer(text::TokenRule rule = {}) : rule_(std::move(rule)) {}

  std::string id() const override { return "lexical"; }

  std::vector<double> score(const std::string& query, const std::vector<std::string>& passages) const override {
    std::vector<double> out;
    out.reserve(passages.size());
    for (const auto& p : passages) out.push_back(lexical_score(query, p, rule_));
    return out;
  }

 private:
  text::TokenRule rule_;
};

// Batches passages, keeps up to max_in_flight batches outstanding, retries a
// failed batch once and reassembles scores in input order.
class RemoteScorer : public Scorer {
 public:
  explicit RemoteScorer(ScorerSpec spec) : spec_(std::move(spec)), client_(*spec_.endpoint, spec_.timeout_ms) {}

  std::string id() const override { return "remote:" + spec_.model.value_or("default"); }

  const std::string& endpoint() const { return client_.endpoint(); }

  std::vector<double> score(const std::string& query, const std::vector<std::string>& passages) const override {
    const std::size_t bs = static_cast<std::size_t>(spec_.batch_size);
    std::vector<std::vector<std::string>> batches;
    for (std::size_t i = 0; i < passages.size(); i += bs) {
      std::vector<std::string> batch;
      for (std::size_t j = i; j < std::min(passages.size(), i + bs); ++j)
        batch.push_back(text::truncate_at_token_boundary(passages[j], kMaxRemoteChars).first);
      batches.push_back(std::move(batch));
    }
    std::vector<double> out;
    out.reserve(passages.size());
    const std::size_t wave = static_cast<std::size_t>(spec_.max_in_flight);
    for (std::size_t w = 0; w < batches.size(); w += wave) {
      std::vector<std::future<std::vector<double>>> inflight;
      for (std::size_t b = w; b < std::min(batches.size(), w + wave); ++b)
        inflight.push_back(std::async(std::launch::async, [this, &query, &batch = batches[b]] { return send(query, batch); }));
      for (auto& f : inflight) {
        auto scores = f.get();
        out.insert(out.end(), scores.begin(), scores.end());
      }
    }
    return out;
  }

 private:
  std::vector<double> send(const std::string& query, const std::vector<std::string>& batch) const {
    try {
      return client_.score(query, batch, spec_.model);
    } catch (const RemoteError&) {
      return client_.score(query, batch, spec_.model);
    }
  }

  ScorerSpec spec_;
  remote::Client client_;
};

inline std::unique_ptr<Scorer> make_scorer(const ScorerSpec& spec, text::TokenRule rule = {}) {
  spec.validate();
  if (spec.kind == ScorerSpec::Kind::remote) return std::make_unique<RemoteScorer>(spec);
  return std::make_unique<LexicalScorer>(std::move(rule));
}

inline std::vector<ScoredPair> score_pairs(const Scorer& scorer, const std::string& query,
                                           std::span<const Passage> passages) {
  if (passages.empty()) throw DataError("score_pairs: no passages");
  std::vector<std::string> texts;
  texts.reserve(passages.size());
  for (const auto& p : passages) texts.push_back(p.text);
  const auto scores = scorer.score(query, texts);
  if (scores.size() != passages.size())
    throw ProtocolError(scorer.id(), "scorer " + scorer.id() + " returned " + std::to_string(scores.size()) +
                                         " scores for " + std::to_string(passages.size()) + " passages");
  std::vector<ScoredPair> out;
  out.reserve(passages.size());
  const std::string sid = scorer.id();
  for (std::size_t i = 0; i < passages.size(); ++i) {
    if (!std::isfinite(scores[i]))
      throw ProtocolError(sid, "scorer " + sid + " returned a non-finite score for " + passages[i].passage_id);
    out.push_back({query, passages[i].passage_id, scores[i], sid});
  }
  return out;
}

using PassageLookup = std::function<const Passage&(std::string_view passage_id)>;

inline PassageLookup lookup_in(const Corpus& corpus) {
  return [&corpus](std::string_view id) -> const Passage& { return corpus.passage(id); };
}

// Top-k of the candidates by scorer score; ties keep the better retrieval rank.
// The scorer's score replaces the retrieval score.
inline RankedList rerank(const RankedList& candidates, const Scorer& scorer, std::size_t k,
                         const PassageLookup& lookup) {
  if (candidates.stage != Stage::retrieved) throw DataError("rerank: candidates are already reranked");
  if (k < 1) throw DataError("rerank: k must be >= 1");
  RankedList out;
  out.query = candidates.query;
  out.granularity = candidates.granularity;
  out.stage = Stage::reranked;
  if (candidates.entries.empty()) return out;

  std::vector<Passage> passages;
  passages.reserve(candidates.size());
  for (const auto& e : candidates.entries) passages.push_back(lookup(e.passage_id));
  const auto scored = score_pairs(scorer, candidates.query, passages);

  std::vector<std::size_t> order(scored.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scored[a].score != scored[b].score) return scored[a].score > scored[b].score;
    return candidates.entries[a].rank < candidates.entries[b].rank;
  });
  const std::size_t keep = std::min(k, order.size());
  for (std::size_t i = 0; i < keep; ++i)
    out.entries.push_back({i + 1, candidates.entries[order[i]].passage_id, scored[order[i]].score});
  return out;
}

inline RankedList rerank(const RankedList& candidates, const Scorer& scorer, std::size_t k, const Corpus& corpus) {
  return rerank(candidates, scorer, k, lookup_in(corpus));
}

struct PipelineConfig {
  std::size_t pool = 100;  // first-stage candidates
  std::size_t k = 20;      // final list length
};

// retrieve -> rerank.
inline RankedList run_pipeline(const Index& index, const Corpus& corpus, const Scorer& scorer,
                               std::string_view query, const PipelineConfig& cfg,
                               const PassageFilter& filter = {}) {
  RankedList candidates = retrieve(index, query, cfg.pool, filter);
  return rerank(candidates, scorer, cfg.k, corpus);
}

}  // namespace sysrev
