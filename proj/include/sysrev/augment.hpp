#pragma once

// Synthetic training data for rerankers: few-shot query generation over
// unlabeled passages, score-based filtering, BM25 negative mining and export
// of (query, positive, negative) triplets for an external trainer.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sysrev/corpus.hpp"
#include "sysrev/error.hpp"
#include "sysrev/jsonl.hpp"
#include "sysrev/remote.hpp"
#include "sysrev/rerank.hpp"
#include "sysrev/retrieval.hpp"
#include "sysrev/text.hpp"

namespace sysrev::augment {

struct SeedPair {
  std::string question;
  std::string passage_text;
  std::string theme_id;
};

struct PromptTemplate {
  std::vector<SeedPair> seed_pairs;
  std::string example_header = "Example {n}:";
  std::string document_label = "Document:";
  std::string query_label = "Relevant Query:";
};

inline std::vector<SeedPair> load_seed_pairs(const std::filesystem::path& path) {
  std::vector<SeedPair> seeds;
  for (const auto& j : jsonl::read(path)) {
    SeedPair s{j.value("question", ""), j.value("passage_text", ""), j.value("theme_id", "")};
    if (s.question.empty() || s.passage_text.empty())
      throw DataError("seed file " + path.string() + ": seed with empty question or passage");
    seeds.push_back(std::move(s));
  }
  return seeds;
}

namespace detail {

inline std::string header(const std::string& pattern, std::size_t n) {
  std::string out = pattern;
  auto at = out.find("{n}");
  if (at != std::string::npos) out.replace(at, 3, std::to_string(n));
  return out;
}

}  // namespace detail

// Each seed renders as
//   "Example {n}:\n\nDocument: {passage}\n\nRelevant Query: {question}\n\n"
// followed by the open block for the target, which ends at the query label.
inline std::string build_prompt(const PromptTemplate& tpl, std::string_view target_passage_text) {
  if (text::trim(target_passage_text).empty()) throw DataError("build_prompt: empty target passage");
  std::string out;
  std::size_t n = 1;
  for (const auto& seed : tpl.seed_pairs) {
    out += detail::header(tpl.example_header, n++);
    out += "\n\n" + tpl.document_label + " " + seed.passage_text;
    out += "\n\n" + tpl.query_label + " " + seed.question + "\n\n";
  }
  out += detail::header(tpl.example_header, n);
  out += "\n\n" + tpl.document_label + " ";
  out += target_passage_text;
  out += "\n\n" + tpl.query_label;
  return out;
}

struct GenerationConfig {
  std::size_t max_doc_chars = 4000;
  double temperature = 0;
  int max_new_tokens = 32;
  std::optional<std::string> model;
  int max_in_flight = 4;

  void validate() const {
    if (max_doc_chars < 1) throw DataError("generation: max_doc_chars must be >= 1");
    if (!(temperature >= 0)) throw DataError("generation: temperature must be >= 0");
    if (max_new_tokens < 1) throw DataError("generation: max_new_tokens must be >= 1");
    if (max_in_flight < 1) throw DataError("generation: max_in_flight must be >= 1");
  }
};

class Generator {
 public:
  virtual ~Generator() = default;
  virtual std::string id() const = 0;
  virtual remote::GenerateResponse generate(const remote::GenerateRequest& req) const = 0;
};

class RemoteGenerator : public Generator {
 public:
  RemoteGenerator(std::string endpoint, int timeout_ms) : client_(std::move(endpoint), timeout_ms) {}

  std::string id() const override { return "remote:" + client_.endpoint(); }

  remote::GenerateResponse generate(const remote::GenerateRequest& req) const override {
    try {
      return client_.generate(req);
    } catch (const RemoteError&) {
      return client_.generate(req);
    }
  }

 private:
  remote::Client client_;
};

struct GeneratedPair {
  std::string passage_id;
  std::string query;
  double gen_score = 0;
};

struct GenerationCounters {
  std::size_t considered = 0;
  std::size_t skipped_too_long = 0;
  std::size_t empty_dropped = 0;
  std::size_t failures = 0;
  std::size_t generated = 0;
};

struct GenerationResult {
  std::vector<GeneratedPair> pairs;
  GenerationCounters counters;
};

// Keeps the first line of a completion, trimmed; shorter than 3 characters
// counts as empty.
inline std::optional<std::string> clean_generation(std::string_view raw) {
  std::string_view s = text::trim(raw);
  auto nl = s.find('\n');
  if (nl != std::string_view::npos) s = text::trim(s.substr(0, nl));
  if (text::codepoint_count(s) < 3) return std::nullopt;
  return std::string(s);
}

// gen_score is the generator's mean token log-probability when reported,
// otherwise the scorer's score of (query, source passage). A failure on one
// passage is counted and the run continues.
inline GenerationResult generate_queries(const Generator& generator, const Scorer& scorer,
                                         std::span<const Passage> passages, const PromptTemplate& tpl,
                                         const GenerationConfig& cfg) {
  cfg.validate();
  GenerationResult result;
  std::vector<const Passage*> eligible;
  for (const auto& p : passages) {
    if (p.granularity != Granularity::paragraph)
      throw DataError("generate_queries: " + p.passage_id + " is not a paragraph");
    ++result.counters.considered;
    if (text::codepoint_count(p.text) > cfg.max_doc_chars) {
      ++result.counters.skipped_too_long;
      continue;
    }
    eligible.push_back(&p);
  }

  enum class Outcome { ok, empty, failed };
  struct Slot {
    Outcome outcome = Outcome::failed;
    GeneratedPair pair;
  };
  auto work = [&](const Passage* p) -> Slot {
    try {
      remote::GenerateRequest req{build_prompt(tpl, p->text), cfg.max_new_tokens, cfg.temperature, cfg.model};
      auto resp = generator.generate(req);
      auto query = clean_generation(resp.text);
      if (!query) return {Outcome::empty, {}};
      double score = resp.mean_logprob ? *resp.mean_logprob : scorer.score(*query, {p->text}).at(0);
      if (!std::isfinite(score)) return {Outcome::failed, {}};
      return {Outcome::ok, {p->passage_id, std::move(*query), score}};
    } catch (const Error&) {
      return {Outcome::failed, {}};
    } catch (const std::out_of_range&) {
      return {Outcome::failed, {}};
    }
  };

  const std::size_t wave = static_cast<std::size_t>(cfg.max_in_flight);
  for (std::size_t w = 0; w < eligible.size(); w += wave) {
    std::vector<std::future<Slot>> inflight;
    for (std::size_t i = w; i < std::min(eligible.size(), w + wave); ++i)
      inflight.push_back(std::async(std::launch::async, work, eligible[i]));
    for (auto& f : inflight) {
      Slot s = f.get();
      switch (s.outcome) {
        case Outcome::ok:
          ++result.counters.generated;
          result.pairs.push_back(std::move(s.pair));
          break;
        case Outcome::empty:
          ++result.counters.empty_dropped;
          break;
        case Outcome::failed:
          ++result.counters.failures;
          break;
      }
    }
  }
  return result;
}

struct FilterRule {
  enum class Kind { top_k, min_score };
  Kind kind = Kind::top_k;
  std::size_t k = 0;
  double min_score = 0;

  static FilterRule top(std::size_t k) { return {Kind::top_k, k, 0}; }
  static FilterRule at_least(double s) { return {Kind::min_score, 0, s}; }
};

// Survivors in gen_score-descending order, ties by passage_id.
inline std::vector<GeneratedPair> filter_pairs(std::vector<GeneratedPair> pairs, const FilterRule& rule) {
  std::stable_sort(pairs.begin(), pairs.end(), [](const GeneratedPair& a, const GeneratedPair& b) {
    if (a.gen_score != b.gen_score) return a.gen_score > b.gen_score;
    return a.passage_id < b.passage_id;
  });
  if (rule.kind == FilterRule::Kind::top_k) {
    if (pairs.size() > rule.k) pairs.resize(rule.k);
  } else {
    auto cut = std::find_if(pairs.begin(), pairs.end(), [&](const GeneratedPair& p) { return p.gen_score < rule.min_score; });
    pairs.erase(cut, pairs.end());
  }
  return pairs;
}

struct TrainingTriplet {
  std::string query;
  std::string positive_passage_id;
  std::string negative_passage_id;
};

struct MiningResult {
  std::vector<TrainingTriplet> triplets;
  std::size_t dropped = 0;
};

// Negative = highest-ranked BM25 hit among the top m that is not the positive.
inline MiningResult mine_negatives(const Index& index, std::span<const GeneratedPair> pairs, std::size_t m) {
  if (m < 2) throw DataError("mine_negatives: pool size m must be >= 2");
  MiningResult out;
  for (const auto& pair : pairs) {
    RankedList hits;
    try {
      hits = retrieve(index, pair.query, m);
    } catch (const DataError&) {
      ++out.dropped;
      continue;
    }
    auto neg = std::find_if(hits.entries.begin(), hits.entries.end(),
                            [&](const RankedEntry& e) { return e.passage_id != pair.passage_id; });
    if (neg == hits.entries.end()) {
      ++out.dropped;
      continue;
    }
    out.triplets.push_back({pair.query, pair.passage_id, neg->passage_id});
  }
  return out;
}

// Tabs, CR and LF (runs of them) become one space so a line holds one triplet.
inline std::string one_line(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool in_run = false;
  for (char c : s) {
    if (c == '\t' || c == '\n' || c == '\r') {
      if (!in_run) out.push_back(' ');
      in_run = true;
    } else {
      out.push_back(c);
      in_run = false;
    }
  }
  return out;
}

struct TripletText {
  std::string query;
  std::string positive;
  std::string negative;
  bool operator==(const TripletText&) const = default;
};

inline std::vector<TripletText> triplet_texts(std::span<const TrainingTriplet> triplets, const PassageLookup& lookup) {
  std::vector<TripletText> out;
  for (const auto& t : triplets)
    out.push_back({one_line(t.query), one_line(lookup(t.positive_passage_id).text),
                   one_line(lookup(t.negative_passage_id).text)});
  return out;
}

// query TAB positive_text TAB negative_text, one triplet per line.
inline void export_triplets(std::span<const TrainingTriplet> triplets, const PassageLookup& lookup,
                            const std::filesystem::path& path) {
  std::string body;
  for (const auto& t : triplet_texts(triplets, lookup)) body += t.query + '\t' + t.positive + '\t' + t.negative + '\n';
  jsonl::write_file(path, body);
}

inline std::vector<TripletText> read_triplets(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<TripletText> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto a = line.find('\t');
    auto b = a == std::string::npos ? a : line.find('\t', a + 1);
    if (b == std::string::npos || line.find('\t', b + 1) != std::string::npos)
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected exactly two tabs");
    out.push_back({line.substr(0, a), line.substr(a + 1, b - a - 1), line.substr(b + 1)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cost estimation

struct Price {
  double train = 0;  // per 1k tokens
  double usage = 0;  // per 1k tokens
};

enum class Phase { train, usage };

class PriceTable {
 public:
  void set(std::string model, Price price) {
    if (price.train < 0 || price.usage < 0) throw DataError("price table: negative price for " + model);
    prices_[key(model)] = price;
  }

  const Price& at(std::string_view model) const {
    auto it = prices_.find(key(model));
    if (it == prices_.end()) throw DataError("price table: unknown model '" + std::string(model) + "'");
    return it->second;
  }

  bool contains(std::string_view model) const { return prices_.contains(key(model)); }

 private:
  static std::string key(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
  }

  std::map<std::string, Price> prices_;
};

// Tab-separated: model, training price, usage price (per 1k tokens). Lines
// starting with '#' and a leading "model" header row are ignored.
inline PriceTable load_price_table(const std::filesystem::path& path) {
  std::istringstream in(jsonl::read_file(path));
  PriceTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#' || line.starts_with("model\t")) continue;
    std::istringstream row(line);
    std::string model, train, usage;
    if (!std::getline(row, model, '\t') || !std::getline(row, train, '\t') || !std::getline(row, usage, '\t'))
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected model<TAB>train<TAB>usage");
    try {
      table.set(model, {std::stod(train), std::stod(usage)});
    } catch (const std::logic_error&) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": bad price");
    }
  }
  return table;
}

inline double estimate_cost(long long token_count, std::string_view model, const PriceTable& table, Phase phase) {
  if (token_count < 0) throw DataError("estimate_cost: negative token count");
  const Price& p = table.at(model);
  return static_cast<double>(token_count) / 1000.0 * (phase == Phase::train ? p.train : p.usage);
}

// Rough token count using 1,000 tokens ~ 750 words.
inline long long approx_tokens(std::string_view s) {
  const auto words = static_cast<long long>(text::tokenize(s, {false, {}}).size());
  return (words * 4 + 2) / 3;
}

// ---------------------------------------------------------------------------
// Full run

struct RunConfig {
  GenerationConfig generation;
  FilterRule filter = FilterRule::top(200);
  std::size_t negatives_pool = 50;
};

struct RunResult {
  GenerationResult generation;
  std::vector<GeneratedPair> survivors;
  MiningResult mining;
  long long prompt_tokens = 0;
};

inline RunResult run_augmentation(const Index& index, const Corpus& corpus, const Generator& generator,
                                  const Scorer& scorer, std::span<const Passage> passages, const PromptTemplate& tpl,
                                  const RunConfig& cfg) {
  RunResult r;
  for (const auto& p : passages)
    if (text::codepoint_count(p.text) <= cfg.generation.max_doc_chars) r.prompt_tokens += approx_tokens(build_prompt(tpl, p.text));
  r.generation = generate_queries(generator, scorer, passages, tpl, cfg.generation);
  r.survivors = filter_pairs(r.generation.pairs, cfg.filter);
  r.mining = mine_negatives(index, r.survivors, cfg.negatives_pool);
  for (const auto& t : r.mining.triplets) {
    if (t.positive_passage_id == t.negative_passage_id || !corpus.find_passage(t.positive_passage_id) ||
        !corpus.find_passage(t.negative_passage_id))
      throw DataError("augmentation produced an invalid triplet for query '" + t.query + "'");
  }
  return r;
}

inline nlohmann::json to_json(const TrainingTriplet& t) {
  return {{"query", t.query}, {"positive_passage_id", t.positive_passage_id}, {"negative_passage_id", t.negative_passage_id}};
}

inline nlohmann::json to_json(const GeneratedPair& p) {
  return {{"passage_id", p.passage_id}, {"query", p.query}, {"gen_score", p.gen_score}};
}

}  // namespace sysrev::augment
