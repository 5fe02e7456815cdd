#pragma once

// Best-Worst style judging of competing summaries and inter-annotator
// agreement over the resulting labels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sysrev/error.hpp"
#include "sysrev/jsonl.hpp"

namespace sysrev::bws {

// ---------------------------------------------------------------------------
// Seeded shuffling, reproducible across standard libraries.

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// Uniform in [0, n) by rejection; std::uniform_int_distribution is not
// specified bit-for-bit.
inline uint64_t bounded(std::mt19937_64& rng, uint64_t n) {
  const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t v;
  do v = rng(); while (v >= limit);
  return v % n;
}

template <typename T>
void seeded_shuffle(std::vector<T>& v, uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[bounded(rng, i)]);
}

// ---------------------------------------------------------------------------
// Tuples and judgements

struct Candidate {
  std::size_t slot = 0;  // 1-based display position
  std::string model_id;
  std::string summary_text;
};

struct BwsTuple {
  std::string tuple_id;
  std::string article_id;
  std::vector<Candidate> candidates;  // ordered by slot
  uint64_t shuffle_seed = 0;

  const Candidate* at_slot(std::size_t slot) const {
    if (slot < 1 || slot > candidates.size()) return nullptr;
    return &candidates[slot - 1];
  }
};

// (article_id, model_id) -> summary text
using SummaryGrid = std::map<std::pair<std::string, std::string>, std::string>;

// One tuple per article; slot order is a seeded shuffle of the sorted model
// list, keyed on the run seed and the article id.
inline std::vector<BwsTuple> build_tuples(const SummaryGrid& summaries, uint64_t seed) {
  std::set<std::string> articles, models;
  for (const auto& [key, _] : summaries) {
    articles.insert(key.first);
    models.insert(key.second);
  }
  if (models.size() < 2) throw DataError("build_tuples: need at least two models");
  std::vector<BwsTuple> out;
  for (const auto& article : articles) {
    std::vector<std::string> order(models.begin(), models.end());
    for (const auto& m : order)
      if (!summaries.contains({article, m}))
        throw DataError("build_tuples: missing summary for article " + article + ", model " + m);
    BwsTuple t;
    t.tuple_id = "T-" + article;
    t.article_id = article;
    t.shuffle_seed = splitmix64(seed ^ fnv1a64(article));
    seeded_shuffle(order, t.shuffle_seed);
    for (std::size_t i = 0; i < order.size(); ++i)
      t.candidates.push_back({i + 1, order[i], summaries.at({article, order[i]})});
    out.push_back(std::move(t));
  }
  return out;
}

struct Judgement {
  std::string annotator_id;
  std::string tuple_id;
  std::size_t best_slot = 0;
  std::size_t second_slot = 0;
};

namespace detail {

inline std::map<std::string, const BwsTuple*> by_id(const std::vector<BwsTuple>& tuples) {
  std::map<std::string, const BwsTuple*> m;
  for (const auto& t : tuples) m[t.tuple_id] = &t;
  return m;
}

inline void validate(const std::map<std::string, const BwsTuple*>& tuples, const std::vector<Judgement>& js) {
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& j : js) {
    auto it = tuples.find(j.tuple_id);
    if (it == tuples.end()) throw DataError("judgement by " + j.annotator_id + ": unknown tuple " + j.tuple_id);
    if (j.best_slot == j.second_slot)
      throw DataError("judgement by " + j.annotator_id + " on " + j.tuple_id + ": best and second slots are equal");
    if (!it->second->at_slot(j.best_slot) || !it->second->at_slot(j.second_slot))
      throw DataError("judgement by " + j.annotator_id + " on " + j.tuple_id + ": slot out of range");
    if (!seen.insert({j.annotator_id, j.tuple_id}).second)
      throw DataError("duplicate judgement by " + j.annotator_id + " on " + j.tuple_id);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Scoring

enum class Aggregation { sum, mean_over_annotators };

inline Aggregation parse_aggregation(std::string_view s) {
  if (s == "sum") return Aggregation::sum;
  if (s == "mean_over_annotators") return Aggregation::mean_over_annotators;
  throw DataError("unknown aggregation '" + std::string(s) + "'");
}

inline constexpr double kBestPoints = 1.0;
inline constexpr double kSecondPoints = 0.5;

struct BwsScores {
  std::map<std::string, double> scores;  // model_id -> score
  Aggregation aggregation = Aggregation::mean_over_annotators;
  std::size_t n_judgements = 0;
  std::size_t n_annotators = 0;

  std::string best_model() const {
    std::string best;
    double top = -1;
    for (const auto& [m, s] : scores)
      if (s > top) {
        top = s;
        best = m;
      }
    return best;
  }

  double total() const {
    double t = 0;
    for (const auto& [_, s] : scores) t += s;
    return t;
  }
};

// Best adds 1, second-best 0.5, to the model in the chosen slot.
inline BwsScores score_bws(const std::vector<BwsTuple>& tuples, const std::vector<Judgement>& judgements,
                           Aggregation aggregation) {
  const auto index = detail::by_id(tuples);
  detail::validate(index, judgements);
  BwsScores out;
  out.aggregation = aggregation;
  for (const auto& t : tuples)
    for (const auto& c : t.candidates) out.scores.emplace(c.model_id, 0.0);
  std::set<std::string> annotators;
  for (const auto& j : judgements) {
    const BwsTuple& t = *index.at(j.tuple_id);
    out.scores[t.at_slot(j.best_slot)->model_id] += kBestPoints;
    out.scores[t.at_slot(j.second_slot)->model_id] += kSecondPoints;
    annotators.insert(j.annotator_id);
  }
  out.n_judgements = judgements.size();
  out.n_annotators = annotators.size();
  if (aggregation == Aggregation::mean_over_annotators && !annotators.empty())
    for (auto& [_, s] : out.scores) s /= static_cast<double>(annotators.size());
  return out;
}

// ---------------------------------------------------------------------------
// Krippendorff's alpha

enum class Metric { nominal, ordinal };

inline Metric parse_metric(std::string_view s) {
  if (s == "nominal") return Metric::nominal;
  if (s == "ordinal") return Metric::ordinal;
  throw DataError("unknown alpha metric '" + std::string(s) + "'");
}

inline std::string_view to_string(Metric m) { return m == Metric::nominal ? "nominal" : "ordinal"; }

struct AlphaResult {
  double alpha = 0;
  std::size_t pairable_values = 0;
  std::size_t units = 0;
};

// alpha = 1 - D_o / D_e from the coincidence matrix. Each unit lists the
// values it received (one per coder who rated it); units with fewer than two
// values are not pairable and are skipped.
inline AlphaResult alpha_from_units(const std::vector<std::vector<int>>& units, Metric metric) {
  std::set<int> values;
  for (const auto& u : units)
    if (u.size() >= 2) values.insert(u.begin(), u.end());
  const std::vector<int> cats(values.begin(), values.end());
  const std::size_t C = cats.size();
  auto idx = [&](int v) { return static_cast<std::size_t>(std::lower_bound(cats.begin(), cats.end(), v) - cats.begin()); };

  std::vector<std::vector<double>> o(C, std::vector<double>(C, 0.0));
  AlphaResult res;
  for (const auto& u : units) {
    const std::size_t m = u.size();
    if (m < 2) continue;
    ++res.units;
    res.pairable_values += m;
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t b = 0; b < m; ++b)
        if (a != b) o[idx(u[a])][idx(u[b])] += 1.0 / static_cast<double>(m - 1);
  }
  const double n = static_cast<double>(res.pairable_values);
  std::vector<double> marg(C, 0.0);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t k = 0; k < C; ++k) marg[c] += o[c][k];

  auto delta2 = [&](std::size_t c, std::size_t k) {
    if (c == k) return 0.0;
    if (metric == Metric::nominal) return 1.0;
    const auto lo = std::min(c, k), hi = std::max(c, k);
    double s = 0;
    for (std::size_t g = lo; g <= hi; ++g) s += marg[g];
    s -= (marg[lo] + marg[hi]) / 2.0;
    return s * s;
  };

  double observed = 0, expected = 0;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t k = 0; k < C; ++k) {
      const double d = delta2(c, k);
      observed += o[c][k] * d;
      expected += marg[c] * marg[k] * d;
    }
  if (n < 2 || expected == 0) throw DataError("krippendorff_alpha: undefined (no variation in the labels)");
  res.alpha = 1.0 - (n - 1.0) * observed / expected;
  return res;
}

struct AgreementReport {
  double alpha = 0;
  Metric metric = Metric::ordinal;
  std::size_t n_annotators = 0;
  std::size_t n_items = 0;
  // Mean of per-tuple alphas over tuples where alpha is defined.
  std::optional<double> mean_tuple_alpha;
};

// Items are (tuple, slot) units labelled 2 (best), 1 (second) or 0 (neither)
// by each annotator who judged the tuple.
inline std::vector<std::vector<int>> label_units(const BwsTuple& t, const std::vector<Judgement>& judgements) {
  std::vector<std::vector<int>> units(t.candidates.size());
  for (const auto& j : judgements) {
    if (j.tuple_id != t.tuple_id) continue;
    for (std::size_t s = 1; s <= t.candidates.size(); ++s)
      units[s - 1].push_back(s == j.best_slot ? 2 : s == j.second_slot ? 1 : 0);
  }
  return units;
}

inline AgreementReport krippendorff_alpha(const std::vector<BwsTuple>& tuples, const std::vector<Judgement>& judgements,
                                          Metric metric) {
  detail::validate(detail::by_id(tuples), judgements);
  std::set<std::string> annotators;
  for (const auto& j : judgements) annotators.insert(j.annotator_id);
  if (annotators.size() < 2) throw DataError("krippendorff_alpha: needs at least two annotators");

  std::vector<std::vector<int>> all;
  double tuple_sum = 0;
  std::size_t tuple_count = 0;
  for (const auto& t : tuples) {
    auto units = label_units(t, judgements);
    try {
      tuple_sum += alpha_from_units(units, metric).alpha;
      ++tuple_count;
    } catch (const DataError&) {
    }
    all.insert(all.end(), units.begin(), units.end());
  }
  AlphaResult r = alpha_from_units(all, metric);
  AgreementReport rep;
  rep.alpha = r.alpha;
  rep.metric = metric;
  rep.n_annotators = annotators.size();
  rep.n_items = r.units;
  if (tuple_count) rep.mean_tuple_alpha = tuple_sum / static_cast<double>(tuple_count);
  return rep;
}

// ---------------------------------------------------------------------------
// File formats

inline std::string flatten(std::string_view s) {
  std::string out(s);
  for (auto& c : out)
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
  return out;
}

// Model-blind form: tuple_id, slot, summary text.
inline std::string annotation_form(const std::vector<BwsTuple>& tuples) {
  std::string out = "tuple_id\tslot\tsummary\n";
  for (const auto& t : tuples)
    for (const auto& c : t.candidates) out += t.tuple_id + "\t" + std::to_string(c.slot) + "\t" + flatten(c.summary_text) + "\n";
  return out;
}

inline nlohmann::json to_json(const BwsTuple& t) {
  nlohmann::json cands = nlohmann::json::array();
  for (const auto& c : t.candidates) cands.push_back({{"slot", c.slot}, {"model_id", c.model_id}, {"summary", c.summary_text}});
  return {{"tuple_id", t.tuple_id}, {"article_id", t.article_id}, {"shuffle_seed", t.shuffle_seed}, {"candidates", cands}};
}

inline BwsTuple tuple_from_json(const nlohmann::json& j) {
  BwsTuple t;
  t.tuple_id = j.at("tuple_id").get<std::string>();
  t.article_id = j.at("article_id").get<std::string>();
  t.shuffle_seed = j.at("shuffle_seed").get<uint64_t>();
  for (const auto& c : j.at("candidates"))
    t.candidates.push_back({c.at("slot").get<std::size_t>(), c.at("model_id").get<std::string>(), c.at("summary").get<std::string>()});
  return t;
}

// annotator_id TAB tuple_id TAB best_slot TAB second_slot; an optional header
// row starting with "annotator_id" is skipped.
inline std::vector<Judgement> parse_judgements(std::string_view content, std::string_view source = "judgements") {
  std::vector<Judgement> out;
  std::istringstream in{std::string(content)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#' || line.starts_with("annotator_id")) continue;
    std::istringstream row(line);
    Judgement j;
    std::string best, second;
    if (!std::getline(row, j.annotator_id, '\t') || !std::getline(row, j.tuple_id, '\t') ||
        !std::getline(row, best, '\t') || !std::getline(row, second, '\t'))
      throw DataError(std::string(source) + ":" + std::to_string(lineno) + ": expected 4 tab-separated fields");
    try {
      j.best_slot = std::stoul(best);
      j.second_slot = std::stoul(second);
    } catch (const std::logic_error&) {
      throw DataError(std::string(source) + ":" + std::to_string(lineno) + ": slot is not an integer");
    }
    out.push_back(std::move(j));
  }
  return out;
}

inline std::string render_report(const BwsScores& s, const std::optional<AgreementReport>& a) {
  std::string out = "model\tscore\n";
  char buf[64];
  for (const auto& [m, v] : s.scores) {
    std::snprintf(buf, sizeof buf, "%.2f", v);
    out += m + "\t" + buf + "\n";
  }
  if (a) {
    std::snprintf(buf, sizeof buf, "%.4f", a->alpha);
    out += "alpha(" + std::string(to_string(a->metric)) + ")\t" + buf + "\n";
  }
  return out;
}

inline nlohmann::json to_json(const BwsScores& s) {
  return {{"scores", s.scores},
          {"aggregation", s.aggregation == Aggregation::sum ? "sum" : "mean_over_annotators"},
          {"n_judgements", s.n_judgements},
          {"n_annotators", s.n_annotators},
          {"total", s.total()},
          {"best_model", s.best_model()}};
}

inline nlohmann::json to_json(const AgreementReport& a) {
  return {{"alpha", a.alpha},
          {"metric", to_string(a.metric)},
          {"n_annotators", a.n_annotators},
          {"n_items", a.n_items},
          {"mean_tuple_alpha", a.mean_tuple_alpha ? nlohmann::json(*a.mean_tuple_alpha) : nlohmann::json(nullptr)}};
}

}  // namespace sysrev::bws
