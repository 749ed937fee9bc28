#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "debias/cli/cli.hpp"
#include "debias/common/io.hpp"
#include "debias/metrics/report.hpp"

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <sstream>

using namespace debias;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kData = DEBIAS_DATA_DIR;

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() / ("debias_cli_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

json read_json(const std::string& path) { return json::parse(read_file(path)); }

const json& at_path(const json& j, const std::string& dotted) {
  const json* cur = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    cur = &cur->at(dotted.substr(start, dot - start));
    if (dot == std::string::npos) return *cur;
    start = dot + 1;
  }
}

json nest(const std::string& dotted, const json& value) {
  json doc = value;
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (auto dot = dotted.find('.'); ; dot = dotted.find('.', start)) {
    parts.push_back(dotted.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) doc = json{{*it, doc}};
  return doc;
}

}  // namespace

TEST_CASE("exit codes") {
  auto r = run({});
  CHECK(r.code == cli::kExitUsage);
  r = run({"frobnicate"});
  CHECK(r.code == cli::kExitUsage);
  CHECK(r.err.find("Usage") != std::string::npos);
  r = run({"train", "warp"});
  CHECK(r.code == cli::kExitUsage);

  r = run({"eval", "bias-sts", "--scores", "missing.tsv"});
  CHECK(r.code == cli::kExitUsage);
  CHECK(r.err.find("missing.tsv") != std::string::npos);

  TempDir t;
  write_file_atomic(t / "bad.jsonl", "{\"id\":\"a\"}\n");
  r = run({"eval", "stereoset", "--scores", t / "bad.jsonl", "--out", t / "o"});
  CHECK(r.code == cli::kExitFailure);
  CHECK(r.err.find("line 1") != std::string::npos);

  write_file_atomic(t / "cfg.json", R"({"training": {"learning_rat": 0.1}})");
  r = run({"pairs", "filter", "--pairs", kData + "/pairs/gender.tsv", "--freq", kData + "/fixtures/frequencies.tsv",
           "--config", t / "cfg.json", "--out", t / "f.tsv"});
  CHECK(r.code == cli::kExitUsage);
  CHECK(r.err.find("learning_rat") != std::string::npos);
  r = run({"pairs", "filter", "--pairs", kData + "/pairs/gender.tsv", "--freq", kData + "/fixtures/frequencies.tsv",
           "--set", "paths.outt=x", "--out", t / "f.tsv"});
  CHECK(r.code == cli::kExitUsage);
  CHECK_FALSE(fs::exists(t / "f.tsv"));
}

TEST_CASE("config precedence is flag over file over default for every field") {
  struct Field {
    std::string path;
    json file, flag;
  };
  const std::vector<Field> fields = {
      {"pipeline.thresholds.gender", 0.5, 0.7},        {"pipeline.thresholds.race", 2.0, 3.0},
      {"pipeline.thresholds.religion", 2.0, 3.0},      {"pipeline.thresholds.profession", 2.0, 3.0},
      {"pipeline.max_retries", 5, 7},                  {"model.num_layers", 3, 4},
      {"model.hidden_dim", 48, 96},                    {"model.num_heads", 2, 8},
      {"model.ff_dim", 64, 256},                       {"model.max_seq_len", 16, 48},
      {"model.max_vocab", 500, 900},                   {"model.reduction_factor", 8, 4},
      {"training.learning_rate", 1e-3, 2e-3},          {"training.epochs", 3, 4},
      {"training.batch_size", 8, 16},                  {"training.warmup_ratio", 0.2, 0.3},
      {"training.weight_decay", 0.01, 0.02},           {"training.beta1", 0.8, 0.85},
      {"training.beta2", 0.99, 0.995},                 {"training.epsilon", 1e-6, 1e-7},
      {"training.grad_clip", 2.0, 0.5},                {"training.mlm_probability", 0.2, 0.25},
      {"training.adapter_drop_prob", 0.6, 0.3},        {"training.seed", 11, 13},
      {"training.max_steps", 40, 50},                  {"evaluation.aggregation", "mean_prob", "mean_log_prob"},
      {"evaluation.alpha", 0.5, 0.75},                 {"evaluation.jigsaw_power", -3.0, -2.0},
      {"evaluation.subsample", 100, 200},              {"paths.templates", "a.json", "b.json"}};

  // Every configurable leaf is covered.
  std::size_t leaves = 0;
  const json defaults = cli::to_json(cli::CliConfig{});
  for (const auto& [section, body] : defaults.items()) {
    for (const auto& [key, v] : body.items()) {
      if (v.is_object()) leaves += v.size();
      else if (!v.is_string() || section != "training") ++leaves;  // fixed descriptive strings
    }
  }
  CHECK(leaves == fields.size() + 1);  // + paths.out, exercised below through --out

  TempDir t;
  const std::vector<std::string> base = {"pairs", "filter", "--pairs", kData + "/pairs/gender.tsv", "--freq",
                                         kData + "/fixtures/frequencies.tsv"};
  auto resolved = [&](const std::vector<std::string>& extra, const std::string& out) {
    auto args = base;
    args.insert(args.end(), extra.begin(), extra.end());
    args.push_back("--out");
    args.push_back(out);
    const auto r = run(args);
    REQUIRE_MESSAGE(r.code == 0, r.err);
    return read_json(out + ".manifest.json").at("cli_config");
  };
  int n = 0;
  for (const auto& f : fields) {
    const std::string cfg = t / ("cfg" + std::to_string(n) + ".json");
    write_file_atomic(cfg, nest(f.path, f.file).dump());
    const std::string set = "--set=" + f.path + "=" + f.flag.dump();
    const json none = resolved({}, t / ("a" + std::to_string(n) + ".tsv"));
    const json file = resolved({"--config", cfg}, t / ("b" + std::to_string(n) + ".tsv"));
    const json flag = resolved({"--config", cfg, set}, t / ("c" + std::to_string(n) + ".tsv"));
    CHECK_MESSAGE(at_path(none, f.path) == at_path(defaults, f.path), f.path);
    CHECK_MESSAGE(at_path(file, f.path) == f.file, f.path);
    CHECK_MESSAGE(at_path(flag, f.path) == f.flag, f.path);
    ++n;
  }

  // Dedicated flags and the seed environment variable.
  const std::string cfg = t / "seed.json";
  write_file_atomic(cfg, R"({"training": {"seed": 5}, "paths": {"out": "from-file"}})");
  CHECK(resolved({"--config", cfg}, t / "s1.tsv").at("training").at("seed") == 5);
  CHECK(resolved({"--config", cfg}, t / "s1.tsv").at("paths").at("out") == t / "s1.tsv");
  setenv(cli::kSeedEnv, "21", 1);
  CHECK(resolved({"--config", cfg}, t / "s2.tsv").at("training").at("seed") == 21);
  CHECK(resolved({"--config", cfg, "--seed", "8"}, t / "s3.tsv").at("training").at("seed") == 8);
  unsetenv(cli::kSeedEnv);

  cli::CliConfig c;
  cli::apply_assignment(c, "evaluation.aggregation=mean_prob");
  CHECK(c.evaluation.aggregation == "mean_prob");
  CHECK_THROWS_AS(cli::apply_assignment(c, "evaluation.aggregation=median"), tinylm::ConfigError);
  CHECK_THROWS_AS(cli::apply_assignment(c, "nonsense"), tinylm::ConfigError);
  CHECK(cli::config_from_json(cli::to_json(c)).evaluation.aggregation == "mean_prob");
}

TEST_CASE("pipeline commands write artifacts and manifests atomically") {
  TempDir t;
  auto r = run({"pairs", "extract", "--dump", kData + "/fixtures/kb_dump.jsonl", "--out", t / "terms.tsv"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto m = read_json(t / "terms.tsv.manifest.json");
  CHECK(m.at("diagnostics").at("malformed_lines") == json::array({6, 12, 18}));
  CHECK(m.at("command") == "pairs extract");

  r = run({"pairs", "filter", "--pairs", kData + "/pairs/gender.tsv", "--freq", kData + "/fixtures/frequencies.tsv",
           "--out", t / "g.tsv"});
  REQUIRE(r.code == 0);
  r = run({"pairs", "propose", "--terms", t / "terms.tsv", "--seed-pairs", t / "g.tsv", "--dimension", "gender",
           "--out", t / "p.tsv"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(fs::exists(t / "p.tsv.manifest.json"));
  r = run({"cda", "--pairs", t / "g.tsv", "--corpus", kData + "/fixtures/toy_corpus.txt", "--out", t / "cda.txt"});
  REQUIRE(r.code == 0);
  CHECK(read_lines(t / "cda.txt").size() == 24);
  CHECK(fs::exists(t / "cda.txt.manifest.json"));
  for (const auto& e : fs::directory_iterator(t.path)) {
    CHECK_MESSAGE(e.path().filename().string().find(".tmp") == std::string::npos, e.path());
  }
}

TEST_CASE("training reruns give byte-identical checkpoints") {
  TempDir t;
  auto train = [&](const std::string& out) {
    return run({"train", "dba", "--pairs", kData + "/pairs/gender.tsv", "--corpus", kData + "/fixtures/toy_corpus.txt",
                "--out", out, "--max-steps", "4", "--set", "model.hidden_dim=32", "--seed", "3"});
  };
  REQUIRE(train(t / "a").code == 0);
  REQUIRE(train(t / "b").code == 0);
  CHECK(read_file(t / "a/checkpoint.bin") == read_file(t / "b/checkpoint.bin"));
  const auto m = read_json(t / "a/manifest.json");
  CHECK(m.at("total_steps") == 4);
  CHECK(m.at("mode").at("kind") == "dba_pretrain");
  CHECK(m.at("cli_config").at("model").at("hidden_dim") == 32);
  CHECK(m.at("seed") == 3);
  CHECK(m.at("dataset_fingerprints").contains("train"));

  REQUIRE(run({"train", "dba", "--pairs", kData + "/pairs/gender.tsv", "--corpus",
               kData + "/fixtures/toy_corpus.txt", "--out", t / "c", "--max-steps", "4", "--set",
               "model.hidden_dim=32", "--seed", "4"})
              .code == 0);
  CHECK(read_file(t / "a/checkpoint.bin") != read_file(t / "c/checkpoint.bin"));
}

TEST_CASE("every wiring mode trains and evaluates from the command line") {
  TempDir t;
  const std::string corpus = kData + "/fixtures/toy_corpus.txt", sts = kData + "/fixtures/sts_small.tsv";
  const std::vector<std::string> quick = {"--max-steps", "2", "--set", "model.hidden_dim=32", "--set",
                                          "model.reduction_factor=4"};
  auto train = [&](std::vector<std::string> args) {
    args.insert(args.end(), quick.begin(), quick.end());
    const auto r = run(args);
    REQUIRE_MESSAGE(r.code == 0, r.err);
  };
  train({"train", "full", "--corpus", corpus, "--out", t / "base"});
  const std::string base = t / "base/checkpoint.bin";
  train({"train", "dba", "--base", base, "--pairs", kData + "/pairs/gender.tsv", "--corpus", corpus, "--out", t / "g"});
  train({"train", "dba", "--base", base, "--pairs", kData + "/pairs/religion.tsv", "--corpus", corpus, "--out",
         t / "r"});
  train({"train", "all-cda", "--base", base, "--pairs", kData + "/pairs/gender.tsv", "--pairs",
         kData + "/pairs/religion.tsv", "--corpus", corpus, "--out", t / "all"});
  train({"train", "task", "--base", base, "--dba", t / "g/checkpoint.bin", "--task-data", sts, "--out", t / "task"});
  train({"train", "fusion", "--base", base, "--dba", t / "g/checkpoint.bin", "--dba", t / "r/checkpoint.bin",
         "--task-data", sts, "--out", t / "fusion", "--adapter-drop", "0.6"});
  CHECK(read_json(t / "fusion/manifest.json").at("config").at("adapter_drop_prob") == 0.6);
  CHECK(read_json(t / "fusion/manifest.json").at("mode").at("kind") == "fusion");
  train({"train", "full", "--task-data", kData + "/fixtures/jigsaw_200.jsonl", "--task-kind", "classifier", "--out",
         t / "tox"});

  // Mixing DBAs trained on different bases is refused.
  auto r = run({"train", "fusion", "--base", base, "--dba", t / "task/checkpoint.bin", "--task-data", sts, "--out",
                t / "bad"});
  CHECK(r.code == cli::kExitUsage);

  r = run({"eval", "bias-sts", "--model", t / "fusion/checkpoint.bin", "--sts", sts, "--set", "evaluation.subsample=5",
           "--out", t / "run1", "--name", "fusion"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  r = run({"eval", "bias-sts", "--model", t / "task/checkpoint.bin", "--sts", sts, "--set", "evaluation.subsample=5",
           "--out", t / "run2", "--name", "task"});
  REQUIRE(r.code == 0);
  write_file_atomic(t / "crows.jsonl",
                    "{\"id\":\"c1\",\"dimension\":\"gender\",\"stereotypical\":\"He is a doctor\","
                    "\"anti_stereotypical\":\"She is a doctor\"}\n");
  r = run({"eval", "crows", "--model", t / "g/checkpoint.bin", "--data", t / "crows.jsonl", "--out", t / "run2",
           "--name", "task"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  r = run({"eval", "jigsaw", "--model", t / "tox/checkpoint.bin", "--comments", kData + "/fixtures/jigsaw_200.jsonl",
           "--out", t / "run3", "--name", "tox"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  r = run({"eval", "jigsaw", "--model", t / "fusion/checkpoint.bin", "--comments",
           kData + "/fixtures/jigsaw_200.jsonl", "--out", t / "run4"});
  CHECK(r.code == cli::kExitUsage);

  r = run({"report", "--in", t / "run1", t / "run2"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.rfind("model", 0) == 0);
  CHECK(r.out.find("rho  d_gender  d_race  d_religion  d_average  psi_average") != std::string::npos);
  CHECK(r.out.find("\nfusion ") != std::string::npos);
  CHECK(r.out.find("\ntask ") != std::string::npos);

  r = run({"report", "--in", t / "run1", t / "run2", t / "run3", "--format", "records", "--out", t / "all.jsonl"});
  REQUIRE(r.code == 0);
  const auto reports = metrics::parse_records(read_file(t / "all.jsonl"));
  REQUIRE(reports.size() == 3);
  CHECK(reports[1].dimensions.at(cda::BiasDimension::gender).crows_ss.has_value());
  CHECK(reports[2].jigsaw.has_value());
  CHECK(metrics::parse_records(metrics::report_emit(reports, metrics::ReportFormat::records)) == reports);
  CHECK(run({"report", "--in", t / "nowhere"}).code == cli::kExitUsage);
}
