#pragma once

// Command-line driver. Everything that affects results comes from the YAML
// run config; flags select the subcommand, the config, the output directory
// and (for retrieve/pipeline) the query.
//
// Exit codes: 0 ok, 1 usage, 2 data/validation, 3 remote service.

#include <openssl/evp.h>
#include <yaml-cpp/yaml.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sysrev/augment.hpp"
#include "sysrev/corpus.hpp"
#include "sysrev/error.hpp"
#include "sysrev/evalkit.hpp"
#include "sysrev/humaneval.hpp"
#include "sysrev/jsonl.hpp"
#include "sysrev/rerank.hpp"
#include "sysrev/retrieval.hpp"
#include "sysrev/summarise.hpp"
#include "sysrev/version.hpp"

namespace sysrev::cli {

namespace fs = std::filesystem;

inline constexpr const char* kEndpointEnv = "SYSREV_REMOTE_ENDPOINT";

inline std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Run configuration

struct RunConfig {
  fs::path config_path;
  std::string config_sha256;
  fs::path corpus_dir;
  fs::path theme_file;
  uint64_t seed = 0;

  IndexConfig index;
  ScorerSpec scorer;
  PipelineConfig pipeline;
  eval::EvalConfig eval;
  std::optional<std::string> model_id;

  augment::GenerationConfig generation;
  std::optional<std::string> generation_endpoint;
  int generation_timeout_ms = 60000;
  std::optional<std::string> endpoint_override;

  struct {
    std::optional<fs::path> documents;
    std::optional<fs::path> gold;
  } ingest;

  struct {
    std::optional<fs::path> seeds;
    augment::FilterRule filter = augment::FilterRule::top(200);
    std::size_t negatives_pool = 50;
    std::optional<std::size_t> limit;
    std::optional<fs::path> price_table;
    std::optional<std::string> price_model;
  } augment;

  struct {
    std::string theme_id;
    std::vector<std::string> docs;
    summarise::Source source;
    std::string prompt_template = summarise::default_template();
    int max_new_tokens = 60;
    std::optional<std::string> model;
  } summarise;

  struct {
    double easy_threshold = 0.5;
  } difficulty;

  struct {
    std::optional<fs::path> summaries;
    std::optional<fs::path> tuples;
    std::optional<fs::path> judgements;
    std::vector<std::string> annotators;
    bws::Aggregation aggregation = bws::Aggregation::mean_over_annotators;
    bws::Metric metric = bws::Metric::ordinal;
  } bws;

  std::string pipeline_id() const {
    if (model_id) return *model_id;
    return scorer.kind == ScorerSpec::Kind::lexical ? "bm25+lexical" : "bm25+remote:" + scorer.model.value_or("default");
  }
};

namespace detail {

template <typename T>
T get_or(const YAML::Node& n, const char* key, T fallback) {
  return n && n[key] ? n[key].as<T>() : fallback;
}

inline std::optional<std::string> opt_string(const YAML::Node& n, const char* key) {
  if (n && n[key] && !n[key].IsNull()) return n[key].as<std::string>();
  return std::nullopt;
}

}  // namespace detail

inline RunConfig load_config(const fs::path& path) {
  using detail::get_or;
  using detail::opt_string;
  RunConfig cfg;
  cfg.config_path = path;
  const std::string raw = jsonl::read_file(path);
  cfg.config_sha256 = sha256_hex(raw);
  const fs::path base = fs::absolute(path).parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  auto opt_path = [&](const YAML::Node& n, const char* key) -> std::optional<fs::path> {
    if (auto s = opt_string(n, key)) return resolve(*s);
    return std::nullopt;
  };

  YAML::Node root;
  try {
    root = YAML::Load(raw);
    if (!root["corpus_dir"]) throw DataError("config: missing corpus_dir");
    cfg.corpus_dir = resolve(root["corpus_dir"].as<std::string>());
    if (root["theme_file"]) cfg.theme_file = resolve(root["theme_file"].as<std::string>());
    cfg.seed = get_or<uint64_t>(root, "seed", 0);

    if (auto n = root["index"]) {
      cfg.index.k1 = get_or(n, "k1", cfg.index.k1);
      cfg.index.b = get_or(n, "b", cfg.index.b);
      cfg.index.lowercase = get_or(n, "lowercase", cfg.index.lowercase);
      if (n["stopwords"]) {
        auto sw = n["stopwords"].as<std::vector<std::string>>();
        cfg.index.stopwords = {sw.begin(), sw.end()};
      }
      if (n["granularity"]) cfg.index.granularity = parse_granularity(n["granularity"].as<std::string>());
    }
    cfg.index.validate();

    if (auto n = root["scorer"]) {
      const auto kind = get_or<std::string>(n, "kind", "lexical");
      if (kind == "lexical") cfg.scorer.kind = ScorerSpec::Kind::lexical;
      else if (kind == "remote") cfg.scorer.kind = ScorerSpec::Kind::remote;
      else throw DataError("config: unknown scorer kind '" + kind + "'");
      cfg.scorer.endpoint = opt_string(n, "endpoint");
      cfg.scorer.timeout_ms = get_or(n, "timeout_ms", cfg.scorer.timeout_ms);
      cfg.scorer.max_in_flight = get_or(n, "max_in_flight", cfg.scorer.max_in_flight);
      cfg.scorer.batch_size = get_or(n, "batch_size", cfg.scorer.batch_size);
      cfg.scorer.model = opt_string(n, "model");
    }

    if (auto n = root["pipeline"]) {
      cfg.pipeline.pool = get_or(n, "pool", cfg.pipeline.pool);
      cfg.pipeline.k = get_or(n, "k", cfg.pipeline.k);
    }

    if (auto n = root["eval"]) {
      if (n["k_values"]) cfg.eval.k_values = n["k_values"].as<std::vector<std::size_t>>();
      if (n["match_rule"]) cfg.eval.match_rule = eval::parse_match_rule(n["match_rule"].as<std::string>());
      cfg.model_id = opt_string(n, "model_id");
    }
    cfg.eval.granularity = cfg.index.granularity;
    cfg.eval.validate();

    if (auto n = root["generation"]) {
      cfg.generation.max_doc_chars = get_or(n, "max_doc_chars", cfg.generation.max_doc_chars);
      cfg.generation.temperature = get_or(n, "temperature", cfg.generation.temperature);
      cfg.generation.max_new_tokens = get_or(n, "max_new_tokens", cfg.generation.max_new_tokens);
      cfg.generation.max_in_flight = get_or(n, "max_in_flight", cfg.generation.max_in_flight);
      cfg.generation.model = opt_string(n, "model");
      cfg.generation_endpoint = opt_string(n, "endpoint");
      cfg.generation_timeout_ms = get_or(n, "timeout_ms", cfg.generation_timeout_ms);
    }
    cfg.generation.validate();

    if (auto n = root["ingest"]) {
      cfg.ingest.documents = opt_path(n, "documents");
      cfg.ingest.gold = opt_path(n, "gold");
    }

    if (auto n = root["augment"]) {
      cfg.augment.seeds = opt_path(n, "seeds");
      if (auto f = n["filter"]) {
        if (f["top_k"]) cfg.augment.filter = augment::FilterRule::top(f["top_k"].as<std::size_t>());
        else if (f["min_score"]) cfg.augment.filter = augment::FilterRule::at_least(f["min_score"].as<double>());
        else throw DataError("config: augment.filter needs top_k or min_score");
      }
      cfg.augment.negatives_pool = get_or(n, "negatives_pool", cfg.augment.negatives_pool);
      if (n["limit"]) cfg.augment.limit = n["limit"].as<std::size_t>();
      cfg.augment.price_table = opt_path(n, "price_table");
      cfg.augment.price_model = opt_string(n, "price_model");
    }

    if (auto n = root["summarise"]) {
      cfg.summarise.theme_id = get_or<std::string>(n, "theme", "");
      if (n["docs"]) cfg.summarise.docs = n["docs"].as<std::vector<std::string>>();
      const auto src = get_or<std::string>(n, "source", "highlights");
      if (src == "highlights") cfg.summarise.source = summarise::Source::highlights();
      else if (src == "retrieved") cfg.summarise.source = summarise::Source::retrieved(get_or<std::size_t>(n, "k", 5));
      else throw DataError("config: unknown summarise.source '" + src + "'");
      cfg.summarise.prompt_template = get_or(n, "template", cfg.summarise.prompt_template);
      cfg.summarise.max_new_tokens = get_or(n, "max_new_tokens", cfg.summarise.max_new_tokens);
      cfg.summarise.model = opt_string(n, "model");
    }

    if (auto n = root["difficulty"]) cfg.difficulty.easy_threshold = get_or(n, "easy_threshold", 0.5);

    if (auto n = root["bws"]) {
      cfg.bws.summaries = opt_path(n, "summaries");
      cfg.bws.tuples = opt_path(n, "tuples");
      cfg.bws.judgements = opt_path(n, "judgements");
      if (n["annotators"]) cfg.bws.annotators = n["annotators"].as<std::vector<std::string>>();
      if (n["aggregation"]) cfg.bws.aggregation = bws::parse_aggregation(n["aggregation"].as<std::string>());
      if (n["metric"]) cfg.bws.metric = bws::parse_metric(n["metric"].as<std::string>());
    }
  } catch (const YAML::Exception& e) {
    throw DataError("config " + path.string() + ": " + e.what());
  }

  if (const char* env = std::getenv(kEndpointEnv); env && *env) {
    cfg.endpoint_override = env;
    if (cfg.scorer.kind == ScorerSpec::Kind::remote) cfg.scorer.endpoint = env;
    cfg.generation_endpoint = env;
  }
  if (!cfg.generation_endpoint && cfg.scorer.endpoint) cfg.generation_endpoint = cfg.scorer.endpoint;
  cfg.scorer.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Manifest: key=value lines, one per run, beside the outputs.

class Manifest {
 public:
  Manifest(std::string command, const RunConfig& cfg) {
    set("command", command);
    set("config_sha256", cfg.config_sha256);
    set("seed", std::to_string(cfg.seed));
    set("sysrev_version", kVersion);
    set("index_format_version", std::to_string(kIndexFormatVersion));
    if (cfg.endpoint_override) set("endpoint_override", *cfg.endpoint_override);
    command_ = std::move(command);
  }

  void set(const std::string& key, const std::string& value) { entries_.emplace_back(key, value); }

  // Records an output file with its content hash.
  void output(const fs::path& file, const fs::path& out_dir) {
    const auto rel = fs::relative(file, out_dir).generic_string();
    set("output." + rel, sha256_hex(jsonl::read_file(file)));
  }

  fs::path write(const fs::path& out_dir) const {
    std::string body;
    for (const auto& [k, v] : entries_) body += k + "=" + v + "\n";
    const fs::path p = out_dir / ("manifest." + command_ + ".txt");
    jsonl::write_file(p, body);
    return p;
  }

 private:
  std::string command_;
  std::vector<std::pair<std::string, std::string>> entries_;
};

// ---------------------------------------------------------------------------
// Subcommands

struct Context {
  RunConfig cfg;
  fs::path out_dir;
  std::ostream& out;
};

inline fs::path index_path(const RunConfig& cfg) {
  return cfg.corpus_dir / ("index." + std::string(to_string(cfg.index.granularity)) + ".jsonl");
}

inline Corpus load_store(const RunConfig& cfg) {
  if (!fs::exists(cfg.corpus_dir / "documents.jsonl"))
    throw DataError("corpus store " + cfg.corpus_dir.string() + " not found; run 'ingest' first");
  return load_corpus(cfg.corpus_dir);
}

inline Index load_index(const RunConfig& cfg) {
  const auto p = index_path(cfg);
  if (!fs::exists(p)) throw DataError("index " + p.string() + " not found; run 'index' first");
  Index idx = Index::load(p);
  const auto& c = idx.config();
  if (c.k1 != cfg.index.k1 || c.b != cfg.index.b || c.lowercase != cfg.index.lowercase ||
      c.stopwords != cfg.index.stopwords)
    throw DataError("index " + p.string() + " was built with a different index config; rerun 'index'");
  return idx;
}

inline void write_json_file(const fs::path& p, const nlohmann::json& j) { jsonl::write_file(p, j.dump(2) + "\n"); }

inline int cmd_ingest(Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  if (!cfg.ingest.documents) throw DataError("config: ingest.documents is required");
  if (cfg.theme_file.empty()) throw DataError("config: theme_file is required");
  Corpus corpus;
  corpus.set_themes(load_themes(cfg.theme_file));
  const fs::path& src = *cfg.ingest.documents;
  if (fs::is_directory(src)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(src))
      if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files)
      corpus.ingest_document(jsonl::read_file(f), f.stem().string(), {{"source", f.filename().string()}});
  } else {
    for (const auto& j : jsonl::read(src)) {
      try {
        corpus.ingest_document(j.at("raw_text").get<std::string>(), j.at("doc_id").get<std::string>(),
                               j.value("metadata", std::map<std::string, std::string>{}), j.value("title", ""));
      } catch (const nlohmann::json::exception& e) {
        throw DataError("documents " + src.string() + ": " + e.what());
      }
    }
  }
  if (cfg.ingest.gold) {
    std::vector<GoldAnnotation> gold;
    for (const auto& j : jsonl::read(*cfg.ingest.gold)) gold.push_back(gold_from_json(j, corpus));
    corpus.attach_gold(gold);
  }
  save_corpus(corpus, cfg.corpus_dir);

  Manifest m("ingest", cfg);
  m.set("documents", std::to_string(corpus.documents().size()));
  m.set("paragraphs", std::to_string(corpus.passages(Granularity::paragraph).size()));
  m.set("sentences", std::to_string(corpus.passages(Granularity::sentence).size()));
  m.set("gold_annotations", std::to_string(corpus.gold_annotations().size()));
  for (const char* f : {"documents.jsonl", "passages.paragraph.jsonl", "passages.sentence.jsonl", "gold.jsonl", "themes.yaml"})
    m.set("store." + std::string(f), sha256_hex(jsonl::read_file(cfg.corpus_dir / f)));
  m.write(ctx.out_dir);
  ctx.out << "ingested " << corpus.documents().size() << " documents\n";
  return 0;
}

inline int cmd_index(Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  Corpus corpus = load_store(cfg);
  const auto passages = corpus.passages(cfg.index.granularity);
  Index idx = build_index(passages, cfg.index);
  const auto p = index_path(cfg);
  idx.save(p);
  Manifest m("index", cfg);
  m.set("passages", std::to_string(idx.passage_count()));
  m.set("store." + p.filename().string(), sha256_hex(jsonl::read_file(p)));
  m.write(ctx.out_dir);
  ctx.out << "indexed " << idx.passage_count() << " " << to_string(cfg.index.granularity) << " passages\n";
  return 0;
}

inline std::vector<std::string> queries_for(const Corpus& corpus, const std::optional<std::string>& query,
                                            const std::optional<std::string>& theme) {
  if (query) return {*query};
  if (!theme) throw UsageError("one of --query or --theme is required");
  std::vector<std::string> out;
  for (const auto& v : eval::query_variants(corpus.theme(*theme))) out.push_back(v.query);
  return out;
}

inline int cmd_rank(Context& ctx, bool rerank_stage, const std::optional<std::string>& query,
                    const std::optional<std::string>& theme) {
  const RunConfig& cfg = ctx.cfg;
  Corpus corpus = load_store(cfg);
  Index idx = load_index(cfg);
  std::unique_ptr<Scorer> scorer;
  if (rerank_stage) scorer = make_scorer(cfg.scorer, cfg.index.token_rule());
  std::vector<nlohmann::json> rows;
  for (const auto& q : queries_for(corpus, query, theme)) {
    RankedList list = rerank_stage ? run_pipeline(idx, corpus, *scorer, q, cfg.pipeline)
                                   : retrieve(idx, q, cfg.pipeline.pool);
    rows.push_back(to_json(list));
    ctx.out << rows.back().dump() << "\n";
  }
  const std::string name = rerank_stage ? "pipeline" : "retrieve";
  const auto file = ctx.out_dir / (name + ".jsonl");
  jsonl::write(file, rows);
  Manifest m(name, cfg);
  m.output(file, ctx.out_dir);
  m.write(ctx.out_dir);
  return 0;
}

inline int cmd_augment(Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  if (!cfg.augment.seeds) throw DataError("config: augment.seeds is required");
  if (!cfg.generation_endpoint) throw DataError("config: generation.endpoint (or " + std::string(kEndpointEnv) + ") is required");
  Corpus corpus = load_store(cfg);
  IndexConfig icfg = cfg.index;
  icfg.granularity = Granularity::paragraph;
  auto paragraphs = corpus.passages(Granularity::paragraph);
  Index idx = build_index(paragraphs, icfg);
  if (cfg.augment.limit && paragraphs.size() > *cfg.augment.limit) paragraphs.resize(*cfg.augment.limit);

  augment::PromptTemplate tpl;
  tpl.seed_pairs = augment::load_seed_pairs(*cfg.augment.seeds);
  augment::RemoteGenerator generator(*cfg.generation_endpoint, cfg.generation_timeout_ms);
  ScorerSpec sspec = cfg.scorer;
  if (sspec.kind == ScorerSpec::Kind::remote && !sspec.endpoint) sspec.endpoint = cfg.generation_endpoint;
  auto scorer = make_scorer(sspec, cfg.index.token_rule());

  augment::RunConfig rc{cfg.generation, cfg.augment.filter, cfg.augment.negatives_pool};
  auto run = augment::run_augmentation(idx, corpus, generator, *scorer, paragraphs, tpl, rc);
  if (run.generation.counters.considered > 0 &&
      run.generation.counters.failures == run.generation.counters.considered - run.generation.counters.skipped_too_long &&
      run.generation.counters.failures > 0)
    throw RemoteError(*cfg.generation_endpoint,
                      "every generation request failed against " + *cfg.generation_endpoint);

  std::vector<nlohmann::json> pairs, survivors, triplets;
  for (const auto& p : run.generation.pairs) pairs.push_back(augment::to_json(p));
  for (const auto& p : run.survivors) survivors.push_back(augment::to_json(p));
  for (const auto& t : run.mining.triplets) triplets.push_back(augment::to_json(t));
  const auto f_pairs = ctx.out_dir / "generated.jsonl";
  const auto f_surv = ctx.out_dir / "filtered.jsonl";
  const auto f_trip_ids = ctx.out_dir / "triplets.jsonl";
  const auto f_trip = ctx.out_dir / "triplets.tsv";
  const auto f_report = ctx.out_dir / "augment_report.json";
  jsonl::write(f_pairs, pairs);
  jsonl::write(f_surv, survivors);
  jsonl::write(f_trip_ids, triplets);
  augment::export_triplets(run.mining.triplets, lookup_in(corpus), f_trip);

  const auto& c = run.generation.counters;
  nlohmann::json report = {{"considered", c.considered},
                           {"skipped_too_long", c.skipped_too_long},
                           {"empty_dropped", c.empty_dropped},
                           {"failures", c.failures},
                           {"generated", c.generated},
                           {"survivors", run.survivors.size()},
                           {"triplets", run.mining.triplets.size()},
                           {"mining_dropped", run.mining.dropped},
                           {"approx_prompt_tokens", run.prompt_tokens}};
  if (cfg.augment.price_table && cfg.augment.price_model) {
    auto table = augment::load_price_table(*cfg.augment.price_table);
    report["price_model"] = *cfg.augment.price_model;
    report["estimated_usage_cost"] =
        augment::estimate_cost(run.prompt_tokens, *cfg.augment.price_model, table, augment::Phase::usage);
  }
  write_json_file(f_report, report);

  Manifest m("augment", cfg);
  for (const auto& f : {f_pairs, f_surv, f_trip_ids, f_trip, f_report}) m.output(f, ctx.out_dir);
  m.write(ctx.out_dir);
  ctx.out << report.dump() << "\n";
  return 0;
}

// UTC timestamp; SOURCE_DATE_EPOCH pins it for reproducible runs.
inline std::string timestamp_now() {
  std::time_t t;
  if (const char* sde = std::getenv("SOURCE_DATE_EPOCH"); sde && *sde) t = static_cast<std::time_t>(std::stoll(sde));
  else t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline int cmd_summarise(Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  if (cfg.summarise.theme_id.empty()) throw DataError("config: summarise.theme is required");
  if (!cfg.generation_endpoint) throw DataError("config: generation.endpoint (or " + std::string(kEndpointEnv) + ") is required");
  Corpus corpus = load_store(cfg);
  corpus.theme(cfg.summarise.theme_id);

  std::vector<std::string> docs = cfg.summarise.docs;
  if (docs.empty())
    for (const auto& [id, _] : corpus.documents())
      if (cfg.summarise.source.kind == summarise::Source::Kind::retrieved || corpus.gold(id, cfg.summarise.theme_id))
        docs.push_back(id);

  std::optional<Index> idx;
  std::unique_ptr<Scorer> scorer;
  if (cfg.summarise.source.kind == summarise::Source::Kind::retrieved) {
    idx = load_index(cfg);
    scorer = make_scorer(cfg.scorer, cfg.index.token_rule());
  }
  augment::RemoteGenerator generator(*cfg.generation_endpoint, cfg.generation_timeout_ms);
  const std::string created = timestamp_now();

  std::vector<nlohmann::json> rows;
  for (const auto& doc : docs) {
    summarise::SummaryRequest req;
    req.doc_id = doc;
    req.theme_id = cfg.summarise.theme_id;
    req.source = cfg.summarise.source;
    req.prompt_template = cfg.summarise.prompt_template;
    req.max_new_tokens = cfg.summarise.max_new_tokens;
    req.temperature = cfg.generation.temperature;
    req.model = cfg.summarise.model ? cfg.summarise.model : cfg.generation.model;
    auto s = summarise::summarise_theme(req, corpus, idx ? &*idx : nullptr, scorer.get(), generator, created, cfg.pipeline);
    rows.push_back(summarise::to_json(s));
  }
  const auto file = ctx.out_dir / "summaries.jsonl";
  jsonl::write(file, rows);
  {
    std::ofstream store(cfg.corpus_dir / "summaries.jsonl", std::ios::app | std::ios::binary);
    for (const auto& r : rows) store << r.dump() << '\n';
  }
  Manifest m("summarise", cfg);
  m.set("created_at", created);
  m.output(file, ctx.out_dir);
  m.write(ctx.out_dir);
  ctx.out << "wrote " << rows.size() << " summaries\n";
  return 0;
}

inline int cmd_eval(Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  Corpus corpus = load_store(cfg);
  Index idx = load_index(cfg);
  auto scorer = make_scorer(cfg.scorer, cfg.index.token_rule());
  Manifest m("eval", cfg);
  m.set("model_id", cfg.pipeline_id());
  std::vector<nlohmann::json> cells, rankings;
  std::vector<fs::path> files;
  for (const auto& theme : corpus.themes()) {
    auto table = eval::eval_matrix(corpus, theme, idx, *scorer, cfg.pipeline, cfg.eval, cfg.pipeline_id());
    const auto tsv = ctx.out_dir / ("results." + theme.theme_id + ".tsv");
    jsonl::write_file(tsv, eval::render_tsv(table, cfg.eval.max_k()));
    files.push_back(tsv);
    for (auto& c : eval::cell_records(table)) cells.push_back(std::move(c));
    for (const auto& r : table.rows) {
      nlohmann::json j = to_json(r.ranking);
      j["doc_id"] = r.doc_id;
      j["theme_id"] = theme.theme_id;
      j["variant"] = table.variants[r.variant].label;
      rankings.push_back(std::move(j));
    }
  }
  const auto f_cells = ctx.out_dir / "cells.jsonl";
  const auto f_rank = ctx.out_dir / "rankings.jsonl";
  jsonl::write(f_cells, cells);
  jsonl::write(f_rank, rankings);
  files.push_back(f_cells);
  files.push_back(f_rank);
  for (const auto& f : files) m.output(f, ctx.out_dir);
  m.write(ctx.out_dir);
  ctx.out << "evaluated " << corpus.themes().size() << " themes\n";
  return 0;
}

inline int cmd_difficulty(Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  Corpus corpus = load_store(cfg);
  std::vector<nlohmann::json> rows;
  std::string tsv = "doc_id\ttheme_id\tlabel\tgs_with_keyword/gs_paragraphs\tratio\tdoc_paragraphs\tdoc_chars\n";
  for (const auto& theme : corpus.themes()) {
    for (const auto& [doc, _] : corpus.documents()) {
      if (corpus.gold_ids(doc, theme.theme_id, Granularity::paragraph).empty()) continue;
      auto r = eval::classify_difficulty(corpus, doc, theme, cfg.difficulty.easy_threshold);
      rows.push_back(eval::to_json(r));
      char ratio[16];
      std::snprintf(ratio, sizeof ratio, "%.2f", r.ratio);
      tsv += r.doc_id + "\t" + r.theme_id + "\t" + std::string(eval::to_string(r.label)) + "\t" +
             std::to_string(r.gs_with_keyword) + "/" + std::to_string(r.gs_paragraphs) + "\t" + ratio + "\t" +
             std::to_string(r.doc_paragraph_count) + "\t" + std::to_string(r.doc_char_count) + "\n";
    }
  }
  const auto f_json = ctx.out_dir / "difficulty.jsonl";
  const auto f_tsv = ctx.out_dir / "difficulty.tsv";
  jsonl::write(f_json, rows);
  jsonl::write_file(f_tsv, tsv);
  Manifest m("difficulty", cfg);
  m.output(f_json, ctx.out_dir);
  m.output(f_tsv, ctx.out_dir);
  m.write(ctx.out_dir);
  ctx.out << "classified " << rows.size() << " (document, theme) pairs\n";
  return 0;
}

inline std::vector<bws::BwsTuple> load_tuples(const RunConfig& cfg, const fs::path& out_dir) {
  const fs::path p = cfg.bws.tuples.value_or(out_dir / "tuples.jsonl");
  std::vector<bws::BwsTuple> tuples;
  try {
    for (const auto& j : jsonl::read(p)) tuples.push_back(bws::tuple_from_json(j));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("tuples " + p.string() + ": " + e.what());
  }
  return tuples;
}

inline std::vector<bws::Judgement> load_judgements(const RunConfig& cfg) {
  if (!cfg.bws.judgements) throw DataError("config: bws.judgements is required");
  const fs::path& p = *cfg.bws.judgements;
  std::vector<fs::path> files;
  if (fs::is_directory(p)) {
    for (const auto& e : fs::directory_iterator(p))
      if (e.is_regular_file() && e.path().extension() == ".tsv") files.push_back(e.path());
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(p);
  }
  std::vector<bws::Judgement> out;
  for (const auto& f : files) {
    auto js = bws::parse_judgements(jsonl::read_file(f), f.string());
    out.insert(out.end(), js.begin(), js.end());
  }
  return out;
}

inline int cmd_bws(Context& ctx, const std::string& action) {
  const RunConfig& cfg = ctx.cfg;
  Manifest m("bws-" + action, cfg);
  if (action == "build-tuples") {
    if (!cfg.bws.summaries) throw DataError("config: bws.summaries is required");
    bws::SummaryGrid grid;
    for (const auto& j : jsonl::read(*cfg.bws.summaries)) {
      try {
        grid[{j.at("article_id").get<std::string>(), j.at("model_id").get<std::string>()}] = j.at("text").get<std::string>();
      } catch (const nlohmann::json::exception& e) {
        throw DataError("summaries " + cfg.bws.summaries->string() + ": " + e.what());
      }
    }
    auto tuples = bws::build_tuples(grid, cfg.seed);
    std::vector<nlohmann::json> rows;
    for (const auto& t : tuples) rows.push_back(bws::to_json(t));
    const auto f_tuples = ctx.out_dir / "tuples.jsonl";
    jsonl::write(f_tuples, rows);
    m.output(f_tuples, ctx.out_dir);
    const std::string form = bws::annotation_form(tuples);
    std::vector<std::string> annotators = cfg.bws.annotators;
    if (annotators.empty()) annotators.push_back("annotator");
    for (const auto& a : annotators) {
      const auto f = ctx.out_dir / ("form." + a + ".tsv");
      jsonl::write_file(f, form);
      m.output(f, ctx.out_dir);
    }
    ctx.out << "built " << tuples.size() << " tuples\n";
  } else if (action == "score" || action == "alpha") {
    auto tuples = load_tuples(cfg, ctx.out_dir);
    auto judgements = load_judgements(cfg);
    const auto scores = bws::score_bws(tuples, judgements, cfg.bws.aggregation);
    std::optional<bws::AgreementReport> agreement;
    if (action == "alpha") agreement = bws::krippendorff_alpha(tuples, judgements, cfg.bws.metric);
    nlohmann::json report = {{"bws", bws::to_json(scores)}};
    if (agreement) report["agreement"] = bws::to_json(*agreement);
    const auto f_json = ctx.out_dir / (action == "score" ? "bws_scores.json" : "bws_alpha.json");
    const auto f_tsv = ctx.out_dir / (action == "score" ? "bws_scores.tsv" : "bws_alpha.tsv");
    write_json_file(f_json, report);
    jsonl::write_file(f_tsv, bws::render_report(scores, agreement));
    m.output(f_json, ctx.out_dir);
    m.output(f_tsv, ctx.out_dir);
    ctx.out << bws::render_report(scores, agreement);
  } else {
    throw UsageError("unknown bws action '" + action + "' (expected build-tuples, score or alpha)");
  }
  m.write(ctx.out_dir);
  return 0;
}

// ---------------------------------------------------------------------------

inline std::string reason_line(std::string_view kind, std::string_view reason,
                               const std::optional<std::string>& endpoint = std::nullopt) {
  std::string line = "sysrev: error=" + std::string(kind);
  if (endpoint) line += " endpoint=" + *endpoint;
  line += " reason=" + nlohmann::json(std::string(reason)).dump();
  return line;
}

inline int run_command(const std::vector<std::string>& args, std::ostream& out = std::cout,
                       std::ostream& err = std::cerr) {
  CLI::App app{"sysrev: passage retrieval, augmentation, summarisation and evaluation for systematic reviews"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::string> query, theme;
  std::string bws_action;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "Run config (YAML)")->required();
    sub->add_option("-o,--out", out_dir, "Output directory");
  };
  std::map<std::string, CLI::App*> subs;
  for (const char* name : {"ingest", "index", "retrieve", "pipeline", "augment", "summarise", "eval", "difficulty", "bws"}) {
    subs[name] = app.add_subcommand(name);
    add_common(subs[name]);
  }
  subs["ingest"]->description("Ingest documents, themes and gold annotations into the corpus store");
  subs["index"]->description("Build the BM25 index");
  subs["retrieve"]->description("First-stage BM25 ranking for a query or theme");
  subs["pipeline"]->description("Retrieve then rerank for a query or theme");
  subs["augment"]->description("Generate, filter and mine synthetic training triplets");
  subs["summarise"]->description("Generate theme-targeted document summaries");
  subs["eval"]->description("Precision/recall@k result tables");
  subs["difficulty"]->description("Keyword-based retrieval difficulty labels");
  subs["bws"]->description("Best-Worst tuples, scores and agreement");
  for (const char* name : {"retrieve", "pipeline"}) {
    auto* g = subs[name]->add_option_group("query")->require_option(1);
    g->add_option("-q,--query", query, "Query text");
    g->add_option("-t,--theme", theme, "Theme id (runs every query variant)");
  }
  subs["bws"]->add_option("action", bws_action, "build-tuples | score | alpha")->required();

  std::vector<const char*> argv{"sysrev"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << reason_line("usage", e.what()) << "\n";
    return static_cast<int>(ErrorKind::usage);
  }

  try {
    Context ctx{load_config(config_path), fs::path(out_dir), out};
    fs::create_directories(ctx.out_dir);
    if (subs["ingest"]->parsed()) return cmd_ingest(ctx);
    if (subs["index"]->parsed()) return cmd_index(ctx);
    if (subs["retrieve"]->parsed()) return cmd_rank(ctx, false, query, theme);
    if (subs["pipeline"]->parsed()) return cmd_rank(ctx, true, query, theme);
    if (subs["augment"]->parsed()) return cmd_augment(ctx);
    if (subs["summarise"]->parsed()) return cmd_summarise(ctx);
    if (subs["eval"]->parsed()) return cmd_eval(ctx);
    if (subs["difficulty"]->parsed()) return cmd_difficulty(ctx);
    if (subs["bws"]->parsed()) return cmd_bws(ctx, bws_action);
    throw UsageError("no subcommand");
  } catch (const RemoteError& e) {
    err << reason_line("remote", e.what(), e.endpoint()) << "\n";
    return static_cast<int>(ErrorKind::remote);
  } catch (const Error& e) {
    err << reason_line(e.kind() == ErrorKind::usage ? "usage" : "data", e.what()) << "\n";
    return static_cast<int>(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << reason_line("data", e.what()) << "\n";
    return static_cast<int>(ErrorKind::data);
  }
}

}  // namespace sysrev::cli
