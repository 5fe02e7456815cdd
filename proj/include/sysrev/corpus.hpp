#pragma once

// Corpus store: documents, paragraph/sentence passages, research themes and
// gold-standard annotations.

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sysrev/error.hpp"
#include "sysrev/jsonl.hpp"
#include "sysrev/text.hpp"

namespace sysrev {

enum class Granularity { paragraph, sentence };

inline std::string_view to_string(Granularity g) {
  return g == Granularity::paragraph ? "paragraph" : "sentence";
}

inline Granularity parse_granularity(std::string_view s) {
  if (s == "paragraph") return Granularity::paragraph;
  if (s == "sentence") return Granularity::sentence;
  throw DataError("unknown granularity '" + std::string(s) + "'");
}

// Half-open byte range [start, end) into a document's raw_text.
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;

  bool contains(const Span& o) const { return start <= o.start && o.end <= end; }
  bool intersects(const Span& o) const { return start < o.end && o.start < end; }
  auto operator<=>(const Span&) const = default;
};

struct Document {
  std::string doc_id;
  std::string title;
  std::string raw_text;
  std::map<std::string, std::string> metadata;
};

struct Passage {
  std::string passage_id;
  std::string doc_id;
  Granularity granularity = Granularity::paragraph;
  std::optional<std::string> parent_id;
  std::string text;
  Span span;
  // Reporting flags only; nothing is filtered on them.
  bool tabular_like = false;
  bool short_passage = false;
};

struct Theme {
  std::string theme_id;
  std::string name;
  std::string description;
  std::vector<std::string> keywords;
  std::vector<std::string> questions;
  std::string concat_query;
};

struct GoldAnnotation {
  std::string doc_id;
  std::string theme_id;
  std::set<std::string> gold_passage_ids;  // paragraph ids
  std::vector<Span> highlights;
  std::optional<std::string> gold_summary;
};

// ---------------------------------------------------------------------------
// Documents

inline Document make_document(std::string_view raw_text, std::string doc_id,
                              std::map<std::string, std::string> metadata = {},
                              std::string title = {}) {
  if (doc_id.empty()) throw DataError("empty doc_id");
  if (doc_id.find_first_of("#\t\n") != std::string::npos)
    throw DataError("doc_id '" + doc_id + "' contains a reserved character");
  if (!text::valid_utf8(raw_text)) throw DataError("document " + doc_id + ": text is not valid UTF-8");
  std::string normalized = text::nfc(text::normalize_newlines(raw_text));
  if (text::trim(normalized).empty()) throw DataError("document " + doc_id + ": empty text");
  return Document{std::move(doc_id), text::nfc(title), std::move(normalized), std::move(metadata)};
}

// ---------------------------------------------------------------------------
// Tokenization into passages

inline std::string passage_id(std::string_view doc_id, Granularity g, std::size_t ordinal) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06zu", ordinal);
  return std::string(doc_id) + (g == Granularity::paragraph ? "#p" : "#s") + buf;
}

namespace detail {

inline bool tabular_like(std::string_view s) {
  std::size_t total = 0, marked = 0;
  std::size_t i = 0;
  while (i < s.size()) {
    UChar32 c = text::next_codepoint(s, i);
    if (c < 0 || u_isUWhiteSpace(c)) continue;
    ++total;
    const int8_t type = u_charType(c);
    const bool symbol = type == U_MATH_SYMBOL || type == U_CURRENCY_SYMBOL ||
                        type == U_MODIFIER_SYMBOL || type == U_OTHER_SYMBOL;
    if (u_isdigit(c) || u_ispunct(c) || symbol) ++marked;
  }
  return total > 0 && marked * 10 > total * 3;
}

inline void set_flags(Passage& p) {
  p.tabular_like = tabular_like(p.text);
  p.short_passage = text::tokenize(p.text).size() < 3;
}

}  // namespace detail

// Paragraphs are maximal runs of non-blank lines; a blank line is one that is
// empty or whitespace-only. Each paragraph is trimmed of surrounding whitespace.
inline std::vector<Passage> tokenize_paragraphs(const Document& doc) {
  std::vector<Passage> out;
  const std::string_view raw = doc.raw_text;
  std::optional<std::size_t> block_start;
  std::size_t block_end = 0;

  auto close_block = [&] {
    if (!block_start) return;
    std::string_view block = raw.substr(*block_start, block_end - *block_start);
    std::size_t lead = 0;
    while (lead < block.size() && text::is_space(block[lead])) ++lead;
    std::string_view body = text::trim(block);
    Passage p;
    p.doc_id = doc.doc_id;
    p.granularity = Granularity::paragraph;
    p.passage_id = passage_id(doc.doc_id, Granularity::paragraph, out.size());
    p.span = {*block_start + lead, *block_start + lead + body.size()};
    p.text = std::string(body);
    detail::set_flags(p);
    out.push_back(std::move(p));
    block_start.reset();
  };

  std::size_t pos = 0;
  while (pos <= raw.size()) {
    std::size_t nl = raw.find('\n', pos);
    if (nl == std::string_view::npos) nl = raw.size();
    std::string_view line = raw.substr(pos, nl - pos);
    if (text::trim(line).empty()) {
      close_block();
    } else {
      if (!block_start) block_start = pos;
      block_end = nl;
    }
    if (nl == raw.size()) break;
    pos = nl + 1;
  }
  close_block();
  return out;
}

inline const std::vector<std::string>& default_abbreviations() {
  static const std::vector<std::string> list = {
      "Fig.", "Figs.", "et al.", "e.g.", "i.e.", "Dr.", "No.", "vs.", "Prof.",
      "Mr.",  "Mrs.",  "Ms.",    "St.",  "cf.",  "Eq.", "approx.", "Nos."};
  return list;
}

struct SentenceSplitter {
  std::vector<std::string> abbreviations = default_abbreviations();

  // Splits the paragraph text into sentence spans relative to the paragraph.
  // A boundary is a terminator (. ! ?), optionally followed by more terminators
  // or closing quotes/brackets, then whitespace, then an uppercase letter or a
  // digit. A '.' that completes a guarded abbreviation never splits.
  std::vector<Span> split(std::string_view t) const {
    std::vector<Span> spans;
    std::size_t start = 0;
    std::size_t i = 0;
    while (i < t.size()) {
      const char c = t[i];
      if (c != '.' && c != '!' && c != '?') {
        ++i;
        continue;
      }
      std::size_t j = i + 1;
      while (j < t.size() && is_closer(t[j])) ++j;
      if (j >= t.size() || !text::is_space(t[j])) {
        i = j;
        continue;
      }
      std::size_t k = j;
      while (k < t.size() && text::is_space(t[k])) ++k;
      if (k >= t.size() || !starts_sentence(t, k) || (c == '.' && guarded(t.substr(0, i + 1)))) {
        i = j;
        continue;
      }
      spans.push_back({start, j});
      start = k;
      i = k;
    }
    std::string_view rest = text::trim(t.substr(start));
    if (!rest.empty()) spans.push_back({start, start + rest.size()});
    return spans;
  }

  bool guarded(std::string_view prefix) const {
    for (const auto& abbr : abbreviations) {
      if (prefix.size() < abbr.size() || !prefix.ends_with(abbr)) continue;
      const std::size_t at = prefix.size() - abbr.size();
      if (at == 0 || !std::isalnum(static_cast<unsigned char>(prefix[at - 1]))) return true;
    }
    return false;
  }

 private:
  static bool is_closer(char c) {
    return c == '.' || c == '!' || c == '?' || c == ')' || c == ']' || c == '"' || c == '\'';
  }

  static bool starts_sentence(std::string_view t, std::size_t k) {
    std::size_t i = k;
    UChar32 cp = text::next_codepoint(t, i);
    return cp >= 0 && (u_isupper(cp) || u_isdigit(cp));
  }
};

// `first_ordinal` continues sentence numbering across a document's paragraphs.
inline std::vector<Passage> tokenize_sentences(const Passage& p, std::size_t first_ordinal = 0,
                                               const SentenceSplitter& splitter = {}) {
  if (p.granularity != Granularity::paragraph)
    throw DataError("tokenize_sentences: " + p.passage_id + " is not a paragraph");
  std::vector<Passage> out;
  for (const Span& local : splitter.split(p.text)) {
    Passage s;
    s.doc_id = p.doc_id;
    s.granularity = Granularity::sentence;
    s.passage_id = passage_id(p.doc_id, Granularity::sentence, first_ordinal + out.size());
    s.parent_id = p.passage_id;
    s.text = p.text.substr(local.start, local.end - local.start);
    s.span = {p.span.start + local.start, p.span.start + local.end};
    detail::set_flags(s);
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Themes

inline std::string concat_keywords(const std::vector<std::string>& keywords) {
  std::string out;
  for (const auto& k : keywords) {
    if (!out.empty()) out += ' ';
    out += k;
  }
  return out;
}

inline std::vector<Theme> parse_themes(const YAML::Node& root) {
  const YAML::Node list = root["themes"];
  if (!list || !list.IsSequence()) throw DataError("theme file: missing 'themes' list");
  std::vector<Theme> themes;
  std::set<std::string> seen;
  for (const auto& node : list) {
    auto field = [&](const char* key) -> YAML::Node {
      YAML::Node v = node[key];
      if (!v) throw DataError(std::string("theme file: missing field '") + key + "'");
      return v;
    };
    Theme t;
    t.theme_id = field("id").as<std::string>();
    t.name = field("name").as<std::string>();
    if (node["description"]) t.description = node["description"].as<std::string>();
    t.keywords = field("keywords").as<std::vector<std::string>>();
    t.questions = field("questions").as<std::vector<std::string>>();
    if (t.keywords.empty()) throw DataError("theme " + t.theme_id + ": no keywords");
    if (t.questions.empty()) throw DataError("theme " + t.theme_id + ": no questions");
    if (!seen.insert(t.theme_id).second) throw DataError("duplicate theme_id '" + t.theme_id + "'");
    t.concat_query = concat_keywords(t.keywords);
    themes.push_back(std::move(t));
  }
  return themes;
}

inline std::vector<Theme> load_themes(const std::filesystem::path& path) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(path.string());
  } catch (const YAML::Exception& e) {
    throw DataError("theme file " + path.string() + ": " + e.what());
  }
  try {
    return parse_themes(root);
  } catch (const YAML::Exception& e) {
    throw DataError("theme file " + path.string() + ": " + e.what());
  }
}

inline std::string dump_themes(const std::vector<Theme>& themes) {
  YAML::Emitter out;
  out << YAML::BeginMap << YAML::Key << "themes" << YAML::Value << YAML::BeginSeq;
  for (const auto& t : themes) {
    out << YAML::BeginMap;
    out << YAML::Key << "id" << YAML::Value << t.theme_id;
    out << YAML::Key << "name" << YAML::Value << t.name;
    if (!t.description.empty()) out << YAML::Key << "description" << YAML::Value << t.description;
    out << YAML::Key << "keywords" << YAML::Value << t.keywords;
    out << YAML::Key << "questions" << YAML::Value << t.questions;
    out << YAML::EndMap;
  }
  out << YAML::EndSeq << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

// ---------------------------------------------------------------------------
// Corpus

class Corpus {
 public:
  const Document& ingest_document(std::string_view raw_text, std::string doc_id,
                                  std::map<std::string, std::string> metadata = {},
                                  std::string title = {}) {
    if (docs_.contains(doc_id)) throw DataError("duplicate doc_id '" + doc_id + "'");
    return add_document(make_document(raw_text, std::move(doc_id), std::move(metadata), std::move(title)));
  }

  // Adds an already-normalized document and tokenizes it.
  const Document& add_document(Document doc) {
    if (docs_.contains(doc.doc_id)) throw DataError("duplicate doc_id '" + doc.doc_id + "'");
    std::vector<Passage> paragraphs = tokenize_paragraphs(doc);
    std::vector<Passage> sentences;
    for (const auto& p : paragraphs) {
      auto s = tokenize_sentences(p, sentences.size(), splitter_);
      sentences.insert(sentences.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
    }
    const std::string id = doc.doc_id;
    add_passages(paragraphs);
    add_passages(sentences);
    doc_passages_[{id, Granularity::paragraph}] = ids_of(paragraphs);
    doc_passages_[{id, Granularity::sentence}] = ids_of(sentences);
    return docs_.emplace(id, std::move(doc)).first->second;
  }

  void set_themes(std::vector<Theme> themes) { themes_ = std::move(themes); }
  const std::vector<Theme>& themes() const { return themes_; }

  const Theme& theme(std::string_view id) const {
    for (const auto& t : themes_)
      if (t.theme_id == id) return t;
    throw DataError("unknown theme '" + std::string(id) + "'");
  }

  // Validates the whole batch before storing any of it.
  void attach_gold(const std::vector<GoldAnnotation>& annotations) {
    std::vector<std::string> problems;
    std::set<std::pair<std::string, std::string>> batch_keys;
    for (const auto& a : annotations) {
      const std::string where = a.doc_id + "/" + a.theme_id;
      if (!docs_.contains(a.doc_id)) {
        problems.push_back("unknown doc_id " + a.doc_id);
        continue;
      }
      if (!themes_.empty() &&
          std::none_of(themes_.begin(), themes_.end(), [&](const Theme& t) { return t.theme_id == a.theme_id; }))
        problems.push_back(where + ": unknown theme_id " + a.theme_id);
      if (gold_.contains({a.doc_id, a.theme_id}) || !batch_keys.insert({a.doc_id, a.theme_id}).second)
        problems.push_back(where + ": duplicate annotation");
      std::vector<Span> gold_spans;
      for (const auto& pid : a.gold_passage_ids) {
        const Passage* p = find_passage(pid);
        if (!p || p->doc_id != a.doc_id || p->granularity != Granularity::paragraph) {
          problems.push_back(where + ": unknown passage_id " + pid);
          continue;
        }
        gold_spans.push_back(p->span);
      }
      for (const auto& h : a.highlights) {
        if (std::none_of(gold_spans.begin(), gold_spans.end(), [&](const Span& g) { return g.contains(h); }))
          problems.push_back(where + ": highlight [" + std::to_string(h.start) + "," +
                             std::to_string(h.end) + ") outside gold passages");
      }
    }
    if (!problems.empty()) {
      std::string msg = "gold annotations rejected:";
      for (const auto& p : problems) msg += " " + p + ";";
      throw DataError(msg);
    }
    for (const auto& a : annotations) gold_[{a.doc_id, a.theme_id}] = a;
  }

  // Gold ids at the requested granularity. Sentence gold is every sentence of
  // the document whose span intersects a gold paragraph.
  std::set<std::string> gold_ids(std::string_view doc_id, std::string_view theme_id, Granularity g) const {
    const GoldAnnotation* a = gold(doc_id, theme_id);
    if (!a) return {};
    if (g == Granularity::paragraph) return a->gold_passage_ids;
    std::vector<Span> spans;
    for (const auto& pid : a->gold_passage_ids) spans.push_back(passage(pid).span);
    std::set<std::string> out;
    for (const auto& sid : passage_ids(doc_id, Granularity::sentence)) {
      const Span& s = passage(sid).span;
      if (std::any_of(spans.begin(), spans.end(), [&](const Span& gs) { return gs.intersects(s); }))
        out.insert(sid);
    }
    return out;
  }

  const GoldAnnotation* gold(std::string_view doc_id, std::string_view theme_id) const {
    auto it = gold_.find({std::string(doc_id), std::string(theme_id)});
    return it == gold_.end() ? nullptr : &it->second;
  }

  std::vector<GoldAnnotation> gold_annotations() const {
    std::vector<GoldAnnotation> out;
    for (const auto& [_, a] : gold_) out.push_back(a);
    return out;
  }

  const std::map<std::string, Document>& documents() const { return docs_; }

  const Document& document(std::string_view doc_id) const {
    auto it = docs_.find(std::string(doc_id));
    if (it == docs_.end()) throw DataError("unknown doc_id '" + std::string(doc_id) + "'");
    return it->second;
  }

  const Passage* find_passage(std::string_view id) const {
    auto it = by_id_.find(std::string(id));
    return it == by_id_.end() ? nullptr : &it->second;
  }

  const Passage& passage(std::string_view id) const {
    const Passage* p = find_passage(id);
    if (!p) throw DataError("unknown passage_id '" + std::string(id) + "'");
    return *p;
  }

  const std::vector<std::string>& passage_ids(std::string_view doc_id, Granularity g) const {
    static const std::vector<std::string> none;
    auto it = doc_passages_.find({std::string(doc_id), g});
    return it == doc_passages_.end() ? none : it->second;
  }

  // All passages of one granularity, ordered by doc_id then position.
  std::vector<Passage> passages(Granularity g) const {
    std::vector<Passage> out;
    for (const auto& [doc_id, _] : docs_)
      for (const auto& id : passage_ids(doc_id, g)) out.push_back(by_id_.at(id));
    return out;
  }

  const SentenceSplitter& splitter() const { return splitter_; }
  void set_splitter(SentenceSplitter s) { splitter_ = std::move(s); }

 private:
  void add_passages(const std::vector<Passage>& ps) {
    for (const auto& p : ps) by_id_.emplace(p.passage_id, p);
  }

  static std::vector<std::string> ids_of(const std::vector<Passage>& ps) {
    std::vector<std::string> ids;
    for (const auto& p : ps) ids.push_back(p.passage_id);
    return ids;
  }

  std::map<std::string, Document> docs_;
  std::unordered_map<std::string, Passage> by_id_;
  std::map<std::pair<std::string, Granularity>, std::vector<std::string>> doc_passages_;
  std::vector<Theme> themes_;
  std::map<std::pair<std::string, std::string>, GoldAnnotation> gold_;
  SentenceSplitter splitter_;
};

// ---------------------------------------------------------------------------
// JSON mapping

inline nlohmann::json to_json(const Document& d) {
  return {{"doc_id", d.doc_id}, {"title", d.title}, {"raw_text", d.raw_text}, {"metadata", d.metadata}};
}

inline nlohmann::json to_json(const Passage& p) {
  nlohmann::json j = {{"passage_id", p.passage_id},
                      {"doc_id", p.doc_id},
                      {"granularity", to_string(p.granularity)},
                      {"parent_id", p.parent_id ? nlohmann::json(*p.parent_id) : nlohmann::json(nullptr)},
                      {"text", p.text},
                      {"start", p.span.start},
                      {"end", p.span.end},
                      {"tabular_like", p.tabular_like},
                      {"short", p.short_passage}};
  return j;
}

inline nlohmann::json to_json(const GoldAnnotation& a) {
  nlohmann::json hl = nlohmann::json::array();
  for (const auto& h : a.highlights) hl.push_back({{"start", h.start}, {"end", h.end}});
  nlohmann::json j = {{"doc_id", a.doc_id},
                      {"theme_id", a.theme_id},
                      {"gold_passage_ids", a.gold_passage_ids},
                      {"highlights", hl}};
  j["gold_summary"] = a.gold_summary ? nlohmann::json(*a.gold_summary) : nlohmann::json(nullptr);
  return j;
}

// Highlights may be given as {"start", "end"} byte spans or as literal strings,
// which are located at their first occurrence inside a gold paragraph.
inline GoldAnnotation gold_from_json(const nlohmann::json& j, const Corpus& corpus) {
  GoldAnnotation a;
  try {
    a.doc_id = j.at("doc_id").get<std::string>();
    a.theme_id = j.at("theme_id").get<std::string>();
    if (j.contains("gold_passage_ids"))
      for (const auto& id : j["gold_passage_ids"]) a.gold_passage_ids.insert(id.get<std::string>());
    if (j.contains("gold_summary") && !j["gold_summary"].is_null())
      a.gold_summary = j["gold_summary"].get<std::string>();
    if (j.contains("highlights")) {
      for (const auto& h : j["highlights"]) {
        if (h.is_object()) {
          a.highlights.push_back({h.at("start").get<std::size_t>(), h.at("end").get<std::size_t>()});
          continue;
        }
        const std::string needle = text::nfc(h.get<std::string>());
        std::optional<Span> found;
        for (const auto& pid : a.gold_passage_ids) {
          const Passage* p = corpus.find_passage(pid);
          if (!p) continue;
          auto at = p->text.find(needle);
          if (at != std::string::npos) {
            found = Span{p->span.start + at, p->span.start + at + needle.size()};
            break;
          }
        }
        if (!found)
          throw DataError(a.doc_id + "/" + a.theme_id + ": highlight text not found in gold passages: \"" +
                          needle.substr(0, 60) + "\"");
        a.highlights.push_back(*found);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("gold record: ") + e.what());
  }
  std::sort(a.highlights.begin(), a.highlights.end());
  return a;
}

// ---------------------------------------------------------------------------
// On-disk store

inline void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<nlohmann::json> docs, paras, sents, gold;
  for (const auto& [_, d] : corpus.documents()) docs.push_back(to_json(d));
  for (const auto& p : corpus.passages(Granularity::paragraph)) paras.push_back(to_json(p));
  for (const auto& p : corpus.passages(Granularity::sentence)) sents.push_back(to_json(p));
  for (const auto& a : corpus.gold_annotations()) gold.push_back(to_json(a));
  jsonl::write(dir / "documents.jsonl", docs);
  jsonl::write(dir / "passages.paragraph.jsonl", paras);
  jsonl::write(dir / "passages.sentence.jsonl", sents);
  jsonl::write(dir / "gold.jsonl", gold);
  jsonl::write_file(dir / "themes.yaml", dump_themes(corpus.themes()));
}

// Passages are regenerated from the documents (tokenization is deterministic)
// and checked against the persisted passage files.
inline Corpus load_corpus(const std::filesystem::path& dir) {
  Corpus corpus;
  try {
    for (const auto& j : jsonl::read(dir / "documents.jsonl")) {
      Document d{j.at("doc_id").get<std::string>(), j.value("title", ""), j.at("raw_text").get<std::string>(),
                 j.value("metadata", std::map<std::string, std::string>{})};
      corpus.add_document(std::move(d));
    }
    for (auto g : {Granularity::paragraph, Granularity::sentence}) {
      const auto file = dir / ("passages." + std::string(to_string(g)) + ".jsonl");
      if (!std::filesystem::exists(file)) continue;
      for (const auto& j : jsonl::read(file)) {
        const Passage* p = corpus.find_passage(j.at("passage_id").get<std::string>());
        if (!p || p->span.start != j.at("start").get<std::size_t>() || p->span.end != j.at("end").get<std::size_t>() ||
            p->text != j.at("text").get<std::string>())
          throw DataError("store " + dir.string() + ": passage file out of sync with documents at " +
                          j.at("passage_id").get<std::string>());
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("store " + dir.string() + ": " + e.what());
  }
  if (std::filesystem::exists(dir / "themes.yaml")) corpus.set_themes(load_themes(dir / "themes.yaml"));
  if (std::filesystem::exists(dir / "gold.jsonl")) {
    std::vector<GoldAnnotation> gold;
    for (const auto& j : jsonl::read(dir / "gold.jsonl")) gold.push_back(gold_from_json(j, corpus));
    corpus.attach_gold(gold);
  }
  return corpus;
}

}  // namespace sysrev
