#include <gtest/gtest.h>

#include <cstdlib>
#include <map>
#include <set>
#include <tuple>
#include <sstream>

#include "test_support.hpp"

#include "sysrev/cli.hpp"

using namespace sysrev;
using sysrev::testing::MockService;
using sysrev::testing::TempDir;
using sysrev::testing::reply_json;
namespace fs = std::filesystem;

namespace {

std::string base_config(const TempDir& dir, const std::string& extra = "") {
  const auto src = sysrev::testing::source_dir();
  std::string cfg = "corpus_dir: store\n"
                    "theme_file: " + (src / "data/themes.yaml").string() + "\n"
                    "seed: 3\n"
                    "ingest:\n"
                    "  documents: " + (src / "tests/fixtures/corpus/docs").string() + "\n"
                    "  gold: " + (src / "tests/fixtures/corpus/gold.jsonl").string() + "\n"
                    "eval:\n  k_values: [1, 5, 20]\n" + extra;
  jsonl::write_file(dir / "config.yaml", cfg);
  return (dir / "config.yaml").string();
}

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = cli::run_command(args, out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST(Cli, IngestIndexEvalWritesTablesAndManifest) {
  TempDir dir;
  const auto cfg = base_config(dir);
  const auto out = (dir / "out").string();
  ASSERT_EQ(run({"ingest", "--config", cfg, "--out", out}).code, 0);
  EXPECT_TRUE(fs::exists(dir / "store/documents.jsonl"));
  ASSERT_EQ(run({"index", "--config", cfg, "--out", out}).code, 0);
  auto r = run({"eval", "--config", cfg, "--out", out});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "out/results.study_design.tsv"));
  const auto manifest = jsonl::read_file(dir / "out/manifest.eval.txt");
  EXPECT_NE(manifest.find("command=eval\n"), std::string::npos);
  EXPECT_NE(manifest.find("seed=3\n"), std::string::npos);
  EXPECT_NE(manifest.find("config_sha256=" + cli::sha256_hex(jsonl::read_file(cfg))), std::string::npos);
  EXPECT_NE(manifest.find("output.cells.jsonl="), std::string::npos);
}

// Each persisted cell is recomputed from the persisted ranking and the gold file.
TEST(Cli, CellsMatchRecomputationFromRankings) {
  TempDir dir;
  const auto cfg = base_config(dir);
  const auto out = (dir / "out").string();
  run({"ingest", "-c", cfg, "-o", out});
  run({"index", "-c", cfg, "-o", out});
  ASSERT_EQ(run({"eval", "-c", cfg, "-o", out}).code, 0);
  std::map<std::pair<std::string, std::string>, std::set<std::string>> gold;
  for (const auto& g : jsonl::read(sysrev::testing::fixture("corpus/gold.jsonl")))
    for (const auto& id : g["gold_passage_ids"]) gold[{g["doc_id"], g["theme_id"]}].insert(id.get<std::string>());
  std::map<std::tuple<std::string, std::string, std::string>, std::vector<std::string>> rankings;
  for (const auto& r : jsonl::read(dir / "out/rankings.jsonl")) {
    std::vector<std::string> ids;
    for (const auto& e : r["entries"]) ids.push_back(e["passage_id"]);
    rankings[{r["doc_id"], r["theme_id"], r["variant"]}] = ids;
  }
  std::size_t checked = 0;
  for (const auto& cell : jsonl::read(dir / "out/cells.jsonl")) {
    const auto& ids = rankings.at({cell["doc_id"], cell["theme_id"], cell["variant"]});
    const auto& g = gold[{cell["doc_id"], cell["theme_id"]}];
    if (g.empty()) {
      EXPECT_TRUE(cell["precision"].is_null());
      EXPECT_TRUE(cell["recall"].is_null());
      continue;
    }
    const std::size_t k = cell["k"];
    std::size_t hits = 0;
    for (std::size_t i = 0; i < std::min(k, ids.size()); ++i) hits += g.count(ids[i]);
    EXPECT_EQ(cell["precision"].get<double>(), static_cast<double>(hits) / static_cast<double>(k));
    EXPECT_EQ(cell["recall"].get<double>(), static_cast<double>(hits) / static_cast<double>(g.size()));
    ++checked;
  }
  EXPECT_GT(checked, 100u);
}

TEST(Cli, RetrieveAndPipelinePrintRankedLists) {
  TempDir dir;
  const auto cfg = base_config(dir);
  const auto out = (dir / "out").string();
  run({"ingest", "-c", cfg, "-o", out});
  run({"index", "-c", cfg, "-o", out});
  auto r = run({"retrieve", "-c", cfg, "-o", out, "--query", "target population"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = nlohmann::json::parse(r.out.substr(0, r.out.find('\n')));
  EXPECT_EQ(j["stage"], "retrieved");
  auto p = run({"pipeline", "-c", cfg, "-o", out, "--theme", "financial_costs"});
  ASSERT_EQ(p.code, 0) << p.err;
  EXPECT_EQ(std::count(p.out.begin(), p.out.end(), '\n'), 6);  // five questions + concatenation
}

TEST(Cli, ExitCodes) {
  TempDir dir;
  const auto cfg = base_config(dir);
  auto usage = run({"retrieve", "-c", cfg});
  EXPECT_EQ(usage.code, 1);
  EXPECT_TRUE(usage.err.starts_with("sysrev: error=usage"));
  EXPECT_EQ(run({"nonsense"}).code, 1);
  auto missing_store = run({"eval", "-c", cfg, "-o", (dir / "out").string()});
  EXPECT_EQ(missing_store.code, 2);
  EXPECT_TRUE(missing_store.err.starts_with("sysrev: error=data"));
  EXPECT_EQ(run({"eval", "-c", (dir / "no-such.yaml").string()}).code, 2);
  EXPECT_EQ(missing_store.err.find('\n'), missing_store.err.size() - 1);  // one line
}

TEST(Cli, RemoteFailureExitsThreeNamingEndpoint) {
  TempDir dir;
  const std::string ep = sysrev::testing::dead_endpoint();
  const auto cfg = base_config(dir, "scorer:\n  kind: remote\n  endpoint: " + ep + "\n  timeout_ms: 500\n");
  const auto out = (dir / "out").string();
  ASSERT_EQ(run({"ingest", "-c", cfg, "-o", out}).code, 0);
  ASSERT_EQ(run({"index", "-c", cfg, "-o", out}).code, 0);
  auto r = run({"pipeline", "-c", cfg, "-o", out, "-q", "target population"});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("endpoint=" + ep), std::string::npos);
}

TEST(Cli, EndpointEnvOverridesConfig) {
  MockService svc;
  svc.on("/score", [](const httplib::Request& req, httplib::Response& res) {
    auto body = nlohmann::json::parse(req.body);
    reply_json(res, {{"scores", std::vector<double>(body["passages"].size(), 0.5)}});
  });
  TempDir dir;
  const auto cfg = base_config(dir, "scorer:\n  kind: remote\n  endpoint: " + sysrev::testing::dead_endpoint() + "\n");
  const auto out = (dir / "out").string();
  run({"ingest", "-c", cfg, "-o", out});
  run({"index", "-c", cfg, "-o", out});
  setenv(cli::kEndpointEnv, svc.endpoint().c_str(), 1);
  auto r = run({"pipeline", "-c", cfg, "-o", out, "-q", "target population"});
  unsetenv(cli::kEndpointEnv);
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_GT(svc.requests(), 0);
  EXPECT_NE(jsonl::read_file(dir / "out/manifest.pipeline.txt").find("endpoint_override=" + svc.endpoint()),
            std::string::npos);
}

TEST(Cli, AugmentAndSummariseAgainstMockService) {
  MockService svc;
  svc.on("/generate", [](const httplib::Request& req, httplib::Response& res) {
    auto body = nlohmann::json::parse(req.body);
    const std::string prompt = body["prompt"];
    reply_json(res, {{"text", "what is described in " + std::to_string(prompt.size() % 97)},
                     {"mean_logprob", -static_cast<double>(prompt.size() % 13) / 10.0}});
  });
  TempDir dir;
  const auto src = sysrev::testing::source_dir();
  const auto cfg = base_config(dir, "generation:\n  endpoint: " + svc.endpoint() +
                                        "\naugment:\n  seeds: " + (src / "data/inpars_seeds.jsonl").string() +
                                        "\n  filter:\n    top_k: 5\n  negatives_pool: 10\n  price_table: " +
                                        (src / "data/prices.tsv").string() + "\n  price_model: Curie\n"
                                        "summarise:\n  theme: study_design\n");
  const auto out = (dir / "out").string();
  ASSERT_EQ(run({"ingest", "-c", cfg, "-o", out}).code, 0);
  auto a = run({"augment", "-c", cfg, "-o", out});
  ASSERT_EQ(a.code, 0) << a.err;
  auto report = nlohmann::json::parse(jsonl::read_file(dir / "out/augment_report.json"));
  EXPECT_EQ(report["survivors"], 5);
  EXPECT_GT(report["estimated_usage_cost"].get<double>(), 0.0);
  EXPECT_EQ(augment::read_triplets(dir / "out/triplets.tsv").size(), report["triplets"].get<std::size_t>());

  ASSERT_EQ(run({"index", "-c", cfg, "-o", out}).code, 0);
  auto s = run({"summarise", "-c", cfg, "-o", out});
  ASSERT_EQ(s.code, 0) << s.err;
  EXPECT_EQ(jsonl::read(dir / "out/summaries.jsonl").size(), 5u);  // documents with study_design gold
  run({"summarise", "-c", cfg, "-o", out});
  EXPECT_EQ(jsonl::read(dir / "store/summaries.jsonl").size(), 10u);  // append-only store
}

TEST(Cli, BwsCommands) {
  TempDir dir;
  const auto src = sysrev::testing::source_dir();
  const auto cfg = base_config(dir, "bws:\n  summaries: " + (src / "tests/fixtures/bws/summaries.jsonl").string() +
                                        "\n  judgements: " + (src / "tests/fixtures/bws/judgements").string() +
                                        "\n  annotators: [ann1, ann2]\n  aggregation: sum\n");
  const auto out = (dir / "out").string();
  ASSERT_EQ(run({"bws", "build-tuples", "-c", cfg, "-o", out}).code, 0);
  EXPECT_TRUE(fs::exists(dir / "out/form.ann1.tsv"));
  auto sc = run({"bws", "score", "-c", cfg, "-o", out});
  ASSERT_EQ(sc.code, 0) << sc.err;
  auto j = nlohmann::json::parse(jsonl::read_file(dir / "out/bws_scores.json"));
  EXPECT_EQ(j["bws"]["total"].get<double>(), 12 * 1.5);
  auto al = run({"bws", "alpha", "-c", cfg, "-o", out});
  ASSERT_EQ(al.code, 0) << al.err;
  EXPECT_EQ(run({"bws", "rank", "-c", cfg, "-o", out}).code, 1);
}
