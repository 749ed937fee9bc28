#include "debias/cli/cli.hpp"

#include "debias/bench/bench.hpp"
#include "debias/cda/proposer.hpp"
#include "debias/cda/swap.hpp"
#include "debias/cda/terms.hpp"
#include "debias/common/hash.hpp"
#include "debias/common/io.hpp"
#include "debias/common/text.hpp"
#include "debias/metrics/benchmarks.hpp"
#include "debias/metrics/fairness.hpp"
#include "debias/metrics/report.hpp"
#include "debias/tinylm/checkpoint.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <set>

namespace debias::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using tinylm::ConfigError;

// ---- configuration ----

std::string default_data_dir() {
  if (const char* env = std::getenv("DEBIAS_DATA_DIR"); env && *env) return env;
  return DEBIAS_DEFAULT_DATA_DIR;
}

namespace {

template <typename T>
void take(const json& section, const std::string& key, T& dst, const std::string& where) {
  try {
    dst = section.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + where + "." + key + "': " + e.what());
  }
}

void require_object(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config section '" + where + "' must be an object");
}

}  // namespace

json to_json(const CliConfig& c) {
  json thresholds = json::object();
  for (const auto& [d, v] : c.pipeline.thresholds.per_million) thresholds[std::string(cda::to_string(d))] = v;
  return {{"pipeline", {{"thresholds", thresholds}, {"max_retries", c.pipeline.max_retries}}},
          {"model",
           {{"num_layers", c.model.num_layers},
            {"hidden_dim", c.model.hidden_dim},
            {"num_heads", c.model.num_heads},
            {"ff_dim", c.model.ff_dim},
            {"max_seq_len", c.model.max_seq_len},
            {"max_vocab", c.model.max_vocab},
            {"reduction_factor", c.model.reduction_factor}}},
          {"training", training::to_json(c.training)},
          {"evaluation",
           {{"aggregation", c.evaluation.aggregation},
            {"alpha", c.evaluation.alpha},
            {"jigsaw_power", c.evaluation.jigsaw_power},
            {"subsample", c.evaluation.subsample ? json(*c.evaluation.subsample) : json(nullptr)}}},
          {"paths", {{"out", c.paths.out}, {"templates", c.paths.templates}}}};
}

CliConfig config_from_json(const json& j, CliConfig c) {
  require_object(j, "<root>");
  for (const auto& [section, body] : j.items()) {
    if (section == "training") {
      c.training = training::train_config_from_json(body, c.training);
      continue;
    }
    require_object(body, section);
    for (const auto& [key, v] : body.items()) {
      const std::string where = section;
      bool known = true;
      if (section == "pipeline") {
        if (key == "thresholds") {
          require_object(v, "pipeline.thresholds");
          for (const auto& [dim, t] : v.items()) {
            auto d = cda::try_parse_dimension(dim);
            if (!d) throw ConfigError("unknown config key 'pipeline.thresholds." + dim + "'");
            double value = 0;
            take(t, "thresholds." + dim, value, where);
            if (!(value >= 0.0)) throw ConfigError("threshold for " + dim + " must be non-negative");
            c.pipeline.thresholds.per_million[*d] = value;
          }
        } else if (key == "max_retries") {
          take(v, key, c.pipeline.max_retries, where);
        } else {
          known = false;
        }
      } else if (section == "model") {
        int* field = key == "num_layers"         ? &c.model.num_layers
                     : key == "hidden_dim"       ? &c.model.hidden_dim
                     : key == "num_heads"        ? &c.model.num_heads
                     : key == "ff_dim"           ? &c.model.ff_dim
                     : key == "max_seq_len"      ? &c.model.max_seq_len
                     : key == "max_vocab"        ? &c.model.max_vocab
                     : key == "reduction_factor" ? &c.model.reduction_factor
                                                 : nullptr;
        if (field) take(v, key, *field, where);
        known = field != nullptr;
      } else if (section == "evaluation") {
        if (key == "aggregation") {
          take(v, key, c.evaluation.aggregation, where);
          if (c.evaluation.aggregation != "mean_log_prob" && c.evaluation.aggregation != "mean_prob") {
            throw ConfigError("evaluation.aggregation must be mean_log_prob or mean_prob");
          }
        } else if (key == "alpha") {
          take(v, key, c.evaluation.alpha, where);
        } else if (key == "jigsaw_power") {
          take(v, key, c.evaluation.jigsaw_power, where);
        } else if (key == "subsample") {
          if (v.is_null()) {
            c.evaluation.subsample.reset();
          } else {
            std::size_t n = 0;
            take(v, key, n, where);
            c.evaluation.subsample = n;
          }
        } else {
          known = false;
        }
      } else if (section == "paths") {
        if (key == "out") {
          take(v, key, c.paths.out, where);
        } else if (key == "templates") {
          take(v, key, c.paths.templates, where);
        } else {
          known = false;
        }
      } else {
        throw ConfigError("unknown config section '" + section + "'");
      }
      if (!known) throw ConfigError("unknown config key '" + section + "." + key + "'");
    }
  }
  return c;
}

void apply_assignment(CliConfig& c, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("--set expects section.key=value, got '" + std::string(assignment) + "'");
  }
  const auto path = text::split(assignment.substr(0, eq), '.');
  if (path.size() < 2) throw ConfigError("--set key must name a section and a key: '" + std::string(assignment) + "'");
  const std::string raw(assignment.substr(eq + 1));
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json doc = value;
  for (auto it = path.rbegin(); it != path.rend(); ++it) doc = json{{*it, doc}};
  c = config_from_json(doc, c);
}

// ---- shared helpers ----

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  std::string out;
};

struct TrainFlags {
  double lr = 0;
  int epochs = 0, batch_size = 0, max_steps = 0;
  double adapter_drop = 0;
  CLI::Option *lr_opt = nullptr, *epochs_opt = nullptr, *batch_opt = nullptr, *steps_opt = nullptr,
              *drop_opt = nullptr;
};

std::uint64_t parse_seed(const std::string& s, const std::string& source) {
  try {
    std::size_t pos = 0;
    const auto v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(source + " must be a non-negative integer, got '" + s + "'");
  }
}

CliConfig resolve(const Common& common, const TrainFlags* tf = nullptr) {
  CliConfig c;
  if (!common.config.empty()) {
    json j = json::parse(read_file(common.config), nullptr, false);
    if (j.is_discarded()) throw ConfigError("config file " + common.config + " is not valid JSON");
    c = config_from_json(j, c);
  }
  if (const char* env = std::getenv(kSeedEnv); env && *env) c.training.seed = parse_seed(env, kSeedEnv);
  for (const auto& s : common.sets) apply_assignment(c, s);
  if (common.seed_opt && common.seed_opt->count()) c.training.seed = common.seed;
  if (!common.out.empty()) c.paths.out = common.out;
  if (tf) {
    if (tf->lr_opt->count()) c.training.learning_rate = tf->lr;
    if (tf->epochs_opt->count()) c.training.epochs = tf->epochs;
    if (tf->batch_opt->count()) c.training.batch_size = tf->batch_size;
    if (tf->steps_opt->count()) c.training.max_steps = tf->max_steps;
    if (tf->drop_opt->count()) c.training.adapter_drop_prob = tf->adapter_drop;
  }
  c.training.validate();
  return c;
}

std::string file_digest(const std::string& path) { return hex64(fnv1a(read_file(path))); }

class Manifest {
public:
  Manifest(std::string command, const CliConfig& cfg)
      : started_(std::chrono::steady_clock::now()),
        doc_{{"command", std::move(command)},
             {"cli_config", to_json(cfg)},
             {"seed", cfg.training.seed},
             {"inputs", json::object()},
             {"outputs", json::array()}} {}

  void input(const std::string& path) {
    doc_["inputs"][path] = file_digest(path);
    digests_[fs::path(path).filename().string()] = doc_["inputs"][path];
  }
  // Location-independent input record for reports: file name -> digest.
  const json& digests() const { return digests_; }
  void output(const std::string& path) { doc_["outputs"].push_back(path); }
  json& doc() { return doc_; }

  void write(const std::string& path) {
    if (!doc_.contains("wall_clock_seconds")) {
      doc_["wall_clock_seconds"] =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
    }
    write_file_atomic(path, doc_.dump(2) + "\n");
  }

private:
  std::chrono::steady_clock::time_point started_;
  json doc_;
  json digests_ = json::object();
};

std::string manifest_path_for(const std::string& artifact) { return artifact + ".manifest.json"; }

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

// ---- terms file: "term<TAB>dimension<TAB>source_property" ----

std::string serialize_terms(const cda::TermCatalog& catalog) {
  std::string out;
  for (const auto& e : catalog.entries()) {
    out += e.term + '\t' + std::string(cda::to_string(e.dimension)) + '\t' + e.source_property + '\n';
  }
  return out;
}

cda::TermCatalog parse_terms(const std::string& path) {
  cda::TermCatalog catalog;
  std::size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    if (text::trim(line).empty() || line.front() == '#') continue;
    const auto cols = text::split(line, '\t');
    const auto dim = cols.size() >= 2 ? cda::try_parse_dimension(text::trim(cols[1])) : std::nullopt;
    if (cols.size() < 2 || cols.size() > 3 || !dim) {
      throw cda::PairListError(path + " line " + std::to_string(line_no) +
                               ": expected term<TAB>dimension[<TAB>property]");
    }
    catalog.insert({text::normalize_space(cols[0]), *dim, cols.size() == 3 ? cols[2] : ""});
  }
  return catalog;
}

std::vector<cda::CounterfactualPair> load_pairs(const std::vector<std::string>& paths, Manifest& m) {
  std::vector<cda::CounterfactualPair> all;
  for (const auto& p : paths) {
    auto pairs = cda::load_pair_list(p);
    m.input(p);
    all.insert(all.end(), pairs.begin(), pairs.end());
  }
  return all;
}

// ---- models ----

tinylm::EncoderConfig encoder_config(const CliConfig& c, int vocab_size) {
  tinylm::EncoderConfig e;
  e.num_layers = c.model.num_layers;
  e.hidden_dim = c.model.hidden_dim;
  e.num_heads = c.model.num_heads;
  e.ff_dim = c.model.ff_dim;
  e.max_seq_len = c.model.max_seq_len;
  e.vocab_size = vocab_size;
  e.seed = c.training.seed;
  return e;
}

tinylm::Vocabulary vocab_from(const std::vector<std::string>& texts, const CliConfig& c) {
  return tinylm::Vocabulary::build(texts, c.model.max_vocab);
}

std::vector<std::string> corpus_texts(const cda::Corpus& corpus) {
  std::vector<std::string> t;
  t.reserve(corpus.size());
  for (const auto& s : corpus.sentences) t.push_back(s.text);
  return t;
}

tinylm::Checkpoint load_model(const std::string& path, Manifest& m) {
  auto ck = tinylm::load_checkpoint(path);
  m.input(path);
  return ck;
}

struct TaskInput {
  tinylm::TaskKind kind = tinylm::TaskKind::regression;
  std::vector<std::pair<std::string, std::string>> texts;  // second empty for single sentences
  std::vector<double> targets;
};

TaskInput load_task_input(const std::string& path, const std::string& kind) {
  TaskInput in;
  in.kind = tinylm::parse_task_kind(kind);
  if (in.kind == tinylm::TaskKind::regression) {
    const auto ds = bench::load_similarity_dataset(path);
    for (const auto& e : ds.examples) {
      in.texts.emplace_back(e.sentence_a, e.sentence_b);
      in.targets.push_back(e.score);
    }
  } else {
    for (const auto& c : metrics::parse_comments(read_file(path))) {
      in.texts.emplace_back(c.text, "");
      in.targets.push_back(c.label);
    }
  }
  if (in.texts.empty()) throw UsageError("task data " + path + " has no examples");
  return in;
}

std::vector<std::string> task_texts(const TaskInput& in) {
  std::vector<std::string> t;
  for (const auto& [a, b] : in.texts) {
    t.push_back(a);
    if (!b.empty()) t.push_back(b);
  }
  return t;
}

std::vector<int> encode_input(const tinylm::Vocabulary& v, const std::string& a, const std::string& b, int max_len) {
  return b.empty() ? training::encode_truncated(v, a, max_len) : training::encode_pair_truncated(v, a, b, max_len);
}

training::TaskData encode_task(const TaskInput& in, const tinylm::Vocabulary& v, int max_len) {
  training::TaskData d{in.kind, {}};
  for (std::size_t i = 0; i < in.texts.size(); ++i) {
    d.examples.push_back({encode_input(v, in.texts[i].first, in.texts[i].second, max_len), in.targets[i]});
  }
  return d;
}

const tinylm::AdapterConfig& adapter_config(const tinylm::ModelGraph& m, const std::string& name) {
  for (const auto& a : m.adapters()) {
    if (a.name == name) return a;
  }
  throw ConfigError("model has no adapter named '" + name + "'");
}

// Brings the debiasing adapter of each checkpoint into `model`.
std::vector<std::string> attach_dbas(tinylm::ModelGraph& model, const std::vector<std::string>& paths, Manifest& m) {
  std::vector<std::string> names;
  for (const auto& path : paths) {
    const auto ck = load_model(path, m);
    if (ck.mode.kind != tinylm::ModeKind::dba_pretrain || ck.mode.adapters.size() != 1) {
      throw UsageError(path + " is not a debiasing-adapter checkpoint");
    }
    const std::string& name = ck.mode.adapters.front();
    if (std::find(names.begin(), names.end(), name) != names.end()) {
      throw UsageError("debiasing adapter '" + name + "' given twice");
    }
    if (!model.has_adapter(name)) {
      model = tinylm::extend(model, {adapter_config(ck.model, name)}, false, {false, std::nullopt});
    }
    tinylm::import_adapter(model, ck.model, name);
    names.push_back(name);
  }
  return names;
}

int finish_training(const std::string& command, const CliConfig& cfg, tinylm::ModelGraph model,
                    const tinylm::Vocabulary& vocab, const tinylm::WiringMode& mode, const training::TrainData& data,
                    Manifest& manifest, std::ostream& out) {
  const fs::path dir = cfg.paths.out;
  fs::create_directories(dir);
  auto result = training::train(std::move(model), mode, data, cfg.training, "train");
  const std::string ckpt = (dir / "checkpoint.bin").string();
  const json extra = {{"command", command},
                      {"seed", cfg.training.seed},
                      {"training", training::to_json(cfg.training)},
                      {"dataset_fingerprint", result.manifest.fingerprints.at("train")}};
  tinylm::save_checkpoint(ckpt, result.model, vocab, mode, extra);
  result.manifest.checkpoint_path = ckpt;
  const json run = result.manifest.to_json();
  for (const auto& [k, v] : run.items()) manifest.doc()[k] = v;
  manifest.output(ckpt);
  manifest.write((dir / "manifest.json").string());
  char line[200];
  std::snprintf(line, sizeof line, "%d steps, final loss %.6f\n", result.manifest.total_steps,
                result.manifest.final_loss);
  out << command << ": " << line << "checkpoint: " << ckpt << "\n";
  return kExitOk;
}

// ---- evaluation helpers ----

tinylm::ForwardPlan mlm_plan(const tinylm::Checkpoint& ck) {
  if (!ck.model.heads().mlm) throw UsageError("checkpoint has no MLM head");
  auto p = tinylm::plan_for(ck.mode);
  p.task_adapter.clear();
  p.task_adapter_active.clear();
  p.objective = tinylm::Objective::mlm;
  return p;
}

tinylm::ForwardPlan task_plan(const tinylm::Checkpoint& ck, tinylm::TaskKind kind) {
  if (ck.model.heads().task != kind) {
    throw UsageError("checkpoint has no " + tinylm::to_string(kind) + " head");
  }
  auto p = tinylm::plan_for(ck.mode);
  p.task_adapter_active.clear();
  p.objective = tinylm::Objective::task;
  return p;
}

metrics::Aggregation aggregation(const CliConfig& c) {
  return c.evaluation.aggregation == "mean_prob" ? metrics::Aggregation::mean_prob
                                                 : metrics::Aggregation::mean_log_prob;
}

std::string default_name(const std::string& model_path, const std::string& fallback) {
  if (model_path.empty()) return fallback;
  const fs::path p(model_path);
  const auto parent = p.parent_path().filename().string();
  return parent.empty() ? p.stem().string() : parent;
}

int write_report(const std::string& benchmark, const CliConfig& cfg, metrics::BiasReport report, Manifest& manifest,
                 std::ostream& out) {
  report.alpha = cfg.evaluation.alpha;
  report.derive();
  const fs::path dir = cfg.paths.out;
  fs::create_directories(dir);
  const std::string path = (dir / (benchmark + ".report.json")).string();
  write_file_atomic(path, report.to_json().dump(2) + "\n");
  manifest.output(path);
  manifest.write(manifest_path_for(path));
  out << metrics::report_emit({report}, metrics::ReportFormat::table);
  out << "report: " << path << "\n";
  return kExitOk;
}

template <typename T, typename Key>
std::map<cda::BiasDimension, std::vector<T>> by_dimension(const std::vector<T>& items, Key key) {
  std::map<cda::BiasDimension, std::vector<T>> out;
  for (const auto& it : items) out[key(it)].push_back(it);
  return out;
}

}  // namespace

// ---- commands ----

namespace {

struct Args {
  Common common;
  TrainFlags train;
  // pairs
  std::string dump, properties, terms, lexicon, freq, dimension, corpus, task_data, task_kind = "regression",
                                                                        base, name, data, scores, model, sts,
                                                                        score_log, comments, templates, format = "table";
  std::vector<std::string> pairs, seed_pairs, dbas, dimensions, in;
  double rho = 0;
  CLI::Option* rho_opt = nullptr;
};

int cmd_pairs_extract(const Args& a, std::ostream& out) {
  const CliConfig cfg = resolve(a.common);
  Manifest m("pairs extract", cfg);
  const auto props = a.properties.empty() ? cda::PropertyConfig::defaults() : cda::PropertyConfig::load(a.properties);
  if (!a.properties.empty()) m.input(a.properties);
  const auto result = cda::extract_terms_file(a.dump, props);
  m.input(a.dump);
  const std::string path = a.common.out.empty() ? (fs::path(cfg.paths.out) / "terms.tsv").string() : a.common.out;
  ensure_parent(path);
  write_file_atomic(path, serialize_terms(result.catalog));
  const auto& d = result.diagnostics;
  m.doc()["diagnostics"] = {{"records", d.records},
                            {"malformed", d.malformed},
                            {"malformed_lines", d.malformed_lines},
                            {"filtered", d.filtered},
                            {"duplicates", d.duplicates},
                            {"terms", result.catalog.size()}};
  m.output(path);
  m.write(manifest_path_for(path));
  out << "extracted " << result.catalog.size() << " terms from " << d.records << " records (" << d.malformed
      << " malformed, " << d.filtered << " filtered, " << d.duplicates << " duplicates) -> " << path << "\n";
  return kExitOk;
}

int cmd_pairs_propose(const Args& a, std::ostream& out) {
  const CliConfig cfg = resolve(a.common);
  Manifest m("pairs propose", cfg);
  const auto dim = cda::try_parse_dimension(a.dimension);
  if (!dim) throw UsageError("unknown dimension '" + a.dimension + "'");
  const auto catalog = parse_terms(a.terms);
  m.input(a.terms);
  const auto seeds = load_pairs(a.seed_pairs, m);
  std::vector<cda::CounterfactualPair> lexicon = seeds;
  if (!a.lexicon.empty()) {
    auto extra = cda::load_pair_list(a.lexicon);
    m.input(a.lexicon);
    lexicon.insert(lexicon.end(), extra.begin(), extra.end());
  }
  auto proposer = cda::proposer_from_env(cda::StubProposer::from_pairs(lexicon));
  cda::ProposeOptions opts;
  opts.max_retries = cfg.pipeline.max_retries;
  const auto result = cda::propose_pairs(catalog, seeds, *proposer, *dim, opts);
  const std::string path = a.common.out.empty() ? (fs::path(cfg.paths.out) / "proposed.tsv").string() : a.common.out;
  ensure_parent(path);
  write_file_atomic(path, cda::serialize_pair_list(result.pairs));
  const auto& d = result.diagnostics;
  m.doc()["diagnostics"] = {
      {"covered", d.covered}, {"refused", d.refused}, {"rejected", d.rejected}, {"unresolved", d.unresolved}};
  m.doc()["proposer"] = std::getenv(cda::kProposerUrlEnv) ? "http" : "stub";
  m.output(path);
  m.write(manifest_path_for(path));
  out << "proposed " << result.pairs.size() << " pairs (" << d.covered.size() << " covered, " << d.refused.size()
      << " refused, " << d.rejected.size() << " rejected, " << d.unresolved.size() << " unresolved) -> " << path
      << "\n";
  return kExitOk;
}

int cmd_pairs_filter(const Args& a, std::ostream& out) {
  const CliConfig cfg = resolve(a.common);
  Manifest m("pairs filter", cfg);
  const auto pairs = load_pairs(a.pairs, m);
  const auto freq = cda::FrequencyTable::load(a.freq);
  m.input(a.freq);
  const auto kept = cda::filter_pairs(pairs, freq, cfg.pipeline.thresholds);
  const std::string path = a.common.out.empty() ? (fs::path(cfg.paths.out) / "filtered.tsv").string() : a.common.out;
  ensure_parent(path);
  write_file_atomic(path, cda::serialize_pair_list(kept));
  m.doc()["kept"] = kept.size();
  m.doc()["dropped"] = pairs.size() - kept.size();
  m.output(path);
  m.write(manifest_path_for(path));
  out << "kept " << kept.size() << " of " << pairs.size() << " pairs -> " << path << "\n";
  return kExitOk;
}

int cmd_cda(const Args& a, std::ostream& out) {
  const CliConfig cfg = resolve(a.common);
  Manifest m("cda", cfg);
  const auto pairs = load_pairs(a.pairs, m);
  const auto corpus = cda::load_corpus(a.corpus);
  m.input(a.corpus);
  const auto augmented = cda::apply_cda(corpus, pairs);
  const std::string path = a.common.out.empty() ? (fs::path(cfg.paths.out) / "cda.txt").string() : a.common.out;
  ensure_parent(path);
  write_file_atomic(path, cda::serialize_corpus(augmented));
  m.output(path);
  m.write(manifest_path_for(path));
  out << "augmented " << corpus.size() << " sentences to " << augmented.size() << " -> " << path << "\n";
  return kExitOk;
}

// Shared by `train dba` and `train all-cda`: the latter only differs in how
// the corpus is composed.
int train_dba(const Args& a, const std::string& command, const std::vector<std::vector<std::string>>& pair_groups,
              const std::string& default_name_, std::ostream& out) {
  const CliConfig cfg = resolve(a.common, &a.train);
  Manifest m(command, cfg);
  const auto source = cda::load_corpus(a.corpus);
  m.input(a.corpus);
  cda::Corpus corpus;
  std::string name = a.name;
  if (pair_groups.empty()) {
    corpus = source;
  } else {
    for (const auto& group : pair_groups) {
      const auto pairs = load_pairs(group, m);
      if (name.empty() && !pairs.empty() && pair_groups.size() == 1) {
        name = std::string(cda::to_string(pairs.front().dimension));
      }
      const auto part = cda::apply_cda(source, pairs);
      corpus.sentences.insert(corpus.sentences.end(), part.sentences.begin(), part.sentences.end());
    }
  }
  if (name.empty()) name = default_name_;
  if (corpus.empty()) throw UsageError("training corpus " + a.corpus + " is empty");

  std::optional<tinylm::Checkpoint> base;
  if (!a.base.empty()) base = load_model(a.base, m);
  const auto vocab = base ? base->vocab : vocab_from(corpus_texts(corpus), cfg);
  auto model = base ? tinylm::extend(base->model, {{name, cfg.model.reduction_factor}}, false, {true, std::nullopt})
                    : tinylm::ModelGraph::build(encoder_config(cfg, vocab.size()), {{name, cfg.model.reduction_factor}},
                                                false, {true, std::nullopt});
  const auto data = training::encode_corpus(corpus, vocab, model.config().max_seq_len);
  return finish_training(command, cfg, std::move(model), vocab, tinylm::WiringMode::dba_pretrain(name), data, m, out);
}

int cmd_train_full(const Args& a, std::ostream& out) {
  const CliConfig cfg = resolve(a.common, &a.train);
  Manifest m("train full", cfg);
  if (a.corpus.empty() == a.task_data.empty()) throw UsageError("train full needs exactly one of --corpus, --task-data");
  std::optional<tinylm::Checkpoint> base;
  if (!a.base.empty()) base = load_model(a.base, m);

  if (!a.corpus.empty()) {
    const auto corpus = cda::load_corpus(a.corpus);
    m.input(a.corpus);
    const auto vocab = base ? base->vocab : vocab_from(corpus_texts(corpus), cfg);
    auto model = base ? base->model
                      : tinylm::ModelGraph::build(encoder_config(cfg, vocab.size()), {}, false, {true, std::nullopt});
    if (!model.heads().mlm) model = tinylm::extend(model, {}, false, {true, std::nullopt});
    const auto data = training::encode_corpus(corpus, vocab, model.config().max_seq_len);
    return finish_training("train full", cfg, std::move(model), vocab,
                           tinylm::WiringMode::full_finetune(tinylm::Objective::mlm), data, m, out);
  }
  const auto input = load_task_input(a.task_data, a.task_kind);
  m.input(a.task_data);
  const auto vocab = base ? base->vocab : vocab_from(task_texts(input), cfg);
  auto model = base ? tinylm::extend(base->model, {}, false, {false, input.kind})
                    : tinylm::ModelGraph::build(encoder_config(cfg, vocab.size()), {}, false, {false, input.kind});
  const auto data = encode_task(input, vocab, model.config().max_seq_len);
  return finish_training("train full", cfg, std::move(model), vocab,
                         tinylm::WiringMode::full_finetune(tinylm::Objective::task), data, m, out);
}

int cmd_train_task(const Args& a, bool fusion, std::ostream& out) {
  const std::string command = fusion ? "train fusion" : "train task";
  const CliConfig cfg = resolve(a.common, &a.train);
  Manifest m(command, cfg);
  if (fusion && a.dbas.empty()) throw UsageError("train fusion needs at least one --dba checkpoint");
  if (!fusion && a.dbas.size() > 1) throw UsageError("train task stacks at most one --dba checkpoint");
  auto base = load_model(a.base, m);
  const auto input = load_task_input(a.task_data, a.task_kind);
  m.input(a.task_data);
  auto model = base.model;
  const auto dbas = attach_dbas(model, a.dbas, m);
  const std::string name = a.name.empty() ? "task" : a.name;
  model = tinylm::extend(model, {{name, cfg.model.reduction_factor}}, fusion, {false, input.kind});
  const auto mode = fusion ? tinylm::WiringMode::fusion(dbas, name)
                           : tinylm::WiringMode::with_task_adapter(
                                 name, dbas.empty() ? std::nullopt : std::optional<std::string>(dbas.front()));
  const auto data = encode_task(input, base.vocab, model.config().max_seq_len);
  return finish_training(command, cfg, std::move(model), base.vocab, mode, data, m, out);
}

int cmd_eval_stereoset(const Args& a, std::ostream& out) {
  const CliConfig cfg = resolve(a.common);
  Manifest m("eval stereoset", cfg);
  std::vector<metrics::TripleScores> scores;
  if (!a.scores.empty()) {
    scores = metrics::triples_from_log(metrics::load_score_log(a.scores));
    m.input(a.scores);
  } else {
    if (a.model.empty() || a.data.empty()) throw UsageError("eval stereoset needs --scores or both --model and --data");
    const auto ck = load_model(a.model, m);
    const auto triples = metrics::parse_stereo_triples(read_file(a.data));
    m.input(a.data);
    metrics::ModelScorer scorer(ck.model, ck.vocab, mlm_plan(ck), aggregation(cfg));
    scores = metrics::score_triples(scorer, triples);
  }
  if (!a.score_log.empty()) write_file_atomic(a.score_log, metrics::serialize_score_log(metrics::to_records(scores)));
  metrics::BiasReport report;
  report.name = a.name.empty() ? default_name(a.model.empty() ? a.scores : a.model, "model") : a.name;
  for (const auto& [dim, subset] : by_dimension(scores, [](const auto& s) { return s.dimension; })) {
    const auto r = metrics::stereoset_from_scores(subset);
    report.dimensions[dim].ss = r.ss;
    report.dimensions[dim].lm_score = r.lm_score;
  }
  report.provenance = {{"benchmark", "stereoset"}, {"inputs", m.digests()}, {"count", scores.size()}};
  return write_report("stereoset", cfg, report, m, out);
}

int cmd_eval_crows(const Args& a, std::ostream& out) {
  const CliConfig cfg = resolve(a.common);
  Manifest m("eval crows", cfg);
  std::vector<metrics::PairScores> scores;
  std::vector<std::string> skipped;
  if (!a.scores.empty()) {
    scores = metrics::pairs_from_log(metrics::load_score_log(a.scores));
    m.input(a.scores);
  } else {
    if (a.model.empty() || a.data.empty()) throw UsageError("eval crows needs --scores or both --model and --data");
    const auto ck = load_model(a.model, m);
    const auto pairs = metrics::parse_crows_pairs(read_file(a.data));
    m.input(a.data);
    metrics::ModelScorer scorer(ck.model, ck.vocab, mlm_plan(ck), aggregation(cfg));
    for (const auto& p : pairs) {
      const auto wa = tinylm::Vocabulary::words(p.stereotypical), wb = tinylm::Vocabulary::words(p.anti_stereotypical);
      const auto u = metrics::unique_tokens(wa, wb);
      if (u.first.empty() || u.second.empty()) {
        skipped.push_back(p.id);
        continue;
      }
      scores.push_back({p.id, p.dimension, scorer.score(wa, u.first), scorer.score(wb, u.second)});
    }
  }
  if (!a.score_log.empty()) write_file_atomic(a.score_log, metrics::serialize_score_log(metrics::to_records(scores)));
  metrics::BiasReport report;
  report.name = a.name.empty() ? default_name(a.model.empty() ? a.scores : a.model, "model") : a.name;
  for (const auto& [dim, subset] : by_dimension(scores, [](const auto& s) { return s.dimension; })) {
    report.dimensions[dim].crows_ss = metrics::crows_from_scores(subset).ss;
  }
  report.provenance = {
      {"benchmark", "crows"}, {"inputs", m.digests()}, {"count", scores.size()}, {"skipped", skipped}};
  return write_report("crows", cfg, report, m, out);
}

int cmd_eval_bias_sts(const Args& a, std::ostream& out) {
  const CliConfig cfg = resolve(a.common);
  Manifest m("eval bias-sts", cfg);
  std::vector<metrics::SimilarityScores> tuples;
  std::optional<double> rho;
  if (a.rho_opt->count()) rho = a.rho;
  if (!a.scores.empty()) {
    tuples = metrics::tuples_from_log(metrics::load_score_log(a.scores));
    m.input(a.scores);
  } else {
    if (a.model.empty()) throw UsageError("eval bias-sts needs --scores or --model");
    const auto ck = load_model(a.model, m);
    const auto plan = task_plan(ck, tinylm::TaskKind::regression);
    const int max_len = ck.model.config().max_seq_len;
    const std::string templates = a.templates.empty() ? cfg.paths.templates : a.templates;
    const auto spec = bench::load_template_spec(templates);
    m.input(templates);
    std::vector<std::string> dims = a.dimensions;
    if (dims.empty()) {
      for (const auto& [d, ids] : spec.identities) dims.emplace_back(cda::to_string(d));
    }
    for (const auto& dname : dims) {
      const auto dim = cda::try_parse_dimension(dname);
      if (!dim) throw UsageError("unknown dimension '" + dname + "'");
      auto suite = bench::expand_bias_suite(spec, *dim);
      if (cfg.evaluation.subsample) {
        suite = bench::subsample(suite, std::min(*cfg.evaluation.subsample, suite.size()), cfg.training.seed);
      }
      for (const auto& t : suite) {
        std::vector<std::vector<int>> seqs;
        for (const auto& c : t.components) {
          seqs.push_back(training::encode_pair_truncated(ck.vocab, c.sentence_a, c.sentence_b, max_len));
        }
        tuples.push_back({t.tuple_id, t.dimension, training::predict(ck.model, plan, seqs)});
      }
    }
    if (!a.sts.empty()) {
      const auto ds = bench::load_similarity_dataset(a.sts);
      m.input(a.sts);
      std::vector<std::vector<int>> seqs;
      std::vector<double> gold;
      for (const auto& e : ds.examples) {
        seqs.push_back(training::encode_pair_truncated(ck.vocab, e.sentence_a, e.sentence_b, max_len));
        gold.push_back(e.score);
      }
      rho = metrics::pearson(training::predict(ck.model, plan, seqs), gold);
    }
  }
  if (!a.score_log.empty()) write_file_atomic(a.score_log, metrics::serialize_score_log(metrics::to_records(tuples)));
  metrics::BiasReport report;
  report.name = a.name.empty() ? default_name(a.model.empty() ? a.scores : a.model, "model") : a.name;
  report.rho = rho;
  for (const auto& [dim, subset] : by_dimension(tuples, [](const auto& s) { return s.dimension; })) {
    report.dimensions[dim].delta = metrics::bias_sts_delta(subset);
  }
  report.provenance = {{"benchmark", "bias-sts"}, {"inputs", m.digests()}, {"tuples", tuples.size()}};
  return write_report("bias-sts", cfg, report, m, out);
}

int cmd_eval_jigsaw(const Args& a, std::ostream& out) {
  const CliConfig cfg = resolve(a.common);
  Manifest m("eval jigsaw", cfg);
  auto comments = metrics::parse_comments(read_file(a.comments));
  m.input(a.comments);
  if (!a.model.empty()) {
    const auto ck = load_model(a.model, m);
    const auto plan = task_plan(ck, tinylm::TaskKind::classifier);
    std::vector<std::vector<int>> seqs;
    for (const auto& c : comments) {
      seqs.push_back(training::encode_truncated(ck.vocab, c.text, ck.model.config().max_seq_len));
    }
    const auto probs = training::predict(ck.model, plan, seqs);
    for (std::size_t i = 0; i < comments.size(); ++i) comments[i].score = probs[i];
  }
  metrics::BiasReport report;
  report.name = a.name.empty() ? default_name(a.model.empty() ? a.comments : a.model, "model") : a.name;
  report.jigsaw = metrics::jigsaw_report(comments, {}, cfg.evaluation.jigsaw_power);
  report.provenance = {{"benchmark", "jigsaw"}, {"inputs", m.digests()}, {"count", comments.size()}};
  return write_report("jigsaw", cfg, report, m, out);
}

metrics::BiasReport load_run(const std::string& in) {
  const fs::path p(in);
  std::vector<fs::path> files;
  if (fs::is_directory(p)) {
    for (const auto& e : fs::directory_iterator(p)) {
      const auto name = e.path().filename().string();
      if (e.is_regular_file() && name.size() > 12 && name.ends_with(".report.json")) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw UsageError("no *.report.json files in " + in);
  } else {
    files.push_back(p);
  }
  std::optional<metrics::BiasReport> merged;
  for (const auto& f : files) {
    const json j = json::parse(read_file(f), nullptr, false);
    if (j.is_discarded()) throw metrics::ReportError(f.string() + " is not valid JSON");
    const auto r = metrics::BiasReport::from_json(j);
    merged = merged ? metrics::merge(*merged, r) : r;
  }
  if (merged->name.empty()) merged->name = p.filename().empty() ? p.parent_path().filename().string() : p.filename().string();
  return *merged;
}

int cmd_report(const Args& a, std::ostream& out) {
  const CliConfig cfg = resolve(a.common);
  const auto format = metrics::parse_report_format(a.format);
  std::vector<metrics::BiasReport> reports;
  for (const auto& in : a.in) reports.push_back(load_run(in));
  const std::string doc = metrics::report_emit(reports, format);
  if (!a.common.out.empty()) {
    ensure_parent(a.common.out);
    write_file_atomic(a.common.out, doc);
    Manifest m("report", cfg);
    m.output(a.common.out);
    m.write(manifest_path_for(a.common.out));
  }
  out << doc;
  return kExitOk;
}

}  // namespace

// ---- entry point ----

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Counterfactual debiasing adapters: pair lists, CDA corpora, training, evaluation and reports",
               "debias"};
  app.require_subcommand(1);
  Args a;

  auto common = [&](CLI::App* c, bool with_out = true) {
    c->add_option("--config", a.common.config, "JSON configuration file");
    c->add_option("--set", a.common.sets, "override a config field: section.key=value");
    auto* seed = c->add_option("--seed", a.common.seed, "global seed (overrides MAFIA_SEED and the config)");
    if (with_out) c->add_option("--out", a.common.out, "output path");
    return seed;
  };
  std::map<CLI::App*, CLI::Option*> seeds;
  auto leaf = [&](CLI::App* parent, const std::string& name, const std::string& desc) {
    auto* c = parent->add_subcommand(name, desc);
    seeds[c] = common(c);
    return c;
  };
  std::map<CLI::App*, TrainFlags> train_opts;

  auto* pairs = app.add_subcommand("pairs", "build counterfactual pair lists");
  pairs->require_subcommand(1);
  auto* extract = leaf(pairs, "extract", "extract identity terms from a knowledge-base dump");
  extract->add_option("--dump", a.dump, "newline-delimited JSON records")->required();
  extract->add_option("--properties", a.properties, "property allowlist (code<TAB>dimension)");
  auto* propose = leaf(pairs, "propose", "propose counterparts for uncovered terms");
  propose->add_option("--terms", a.terms, "terms file from 'pairs extract'")->required();
  propose->add_option("--seed-pairs", a.seed_pairs, "seed pair lists")->required();
  propose->add_option("--dimension", a.dimension, "bias dimension")->required();
  propose->add_option("--lexicon", a.lexicon, "extra pairs for the offline proposer");
  auto* filter = leaf(pairs, "filter", "drop pairs with rare terms");
  filter->add_option("--pairs", a.pairs, "pair lists")->required();
  filter->add_option("--freq", a.freq, "term<TAB>per-million frequency table")->required();

  auto* cda_cmd = leaf(&app, "cda", "build a counterfactually augmented corpus");
  cda_cmd->add_option("--pairs", a.pairs, "pair lists")->required();
  cda_cmd->add_option("--corpus", a.corpus, "one sentence per line")->required();

  auto* train = app.add_subcommand("train", "train a model in one wiring mode");
  train->require_subcommand(1);
  auto* dba = leaf(train, "dba", "debiasing adapter with MLM on a CDA corpus (base frozen)");
  auto* all_cda = leaf(train, "all-cda", "one debiasing adapter on the union of several CDA corpora");
  for (auto* c : {dba, all_cda}) {
    c->add_option("--corpus", a.corpus, "source corpus")->required();
    c->add_option("--base", a.base, "base checkpoint (default: fresh model)");
    c->add_option("--name", a.name, "adapter name");
  }
  dba->add_option("--pairs", a.pairs, "pair lists; omit if the corpus is already augmented");
  all_cda->add_option("--pairs", a.pairs, "one pair list per dimension")->required();
  auto* full = leaf(train, "full", "update every parameter (MLM or task)");
  full->add_option("--corpus", a.corpus, "MLM corpus");
  full->add_option("--task-data", a.task_data, "task data");
  full->add_option("--task-kind", a.task_kind, "regression | classifier");
  full->add_option("--base", a.base, "base checkpoint (default: fresh model)");
  auto* task = leaf(train, "task", "task adapter and head on a frozen base (optionally over one DBA)");
  auto* fusion = leaf(train, "fusion", "fuse debiasing adapters under a task adapter");
  for (auto* c : {task, fusion}) {
    c->add_option("--base", a.base, "base checkpoint")->required();
    c->add_option("--task-data", a.task_data, "similarity TSV (regression) or comment JSONL (classifier)")
        ->required();
    c->add_option("--task-kind", a.task_kind, "regression | classifier");
    c->add_option("--dba", a.dbas, "debiasing-adapter checkpoint");
    c->add_option("--name", a.name, "task adapter name");
  }
  for (auto* c : {dba, all_cda, full, task, fusion}) {
    TrainFlags& tf = train_opts[c];
    tf.lr_opt = c->add_option("--lr", tf.lr, "learning rate");
    tf.epochs_opt = c->add_option("--epochs", tf.epochs, "epochs");
    tf.batch_opt = c->add_option("--batch-size", tf.batch_size, "batch size");
    tf.steps_opt = c->add_option("--max-steps", tf.max_steps, "fixed optimizer step budget");
    tf.drop_opt = c->add_option("--adapter-drop", tf.adapter_drop, "AdapterDrop probability");
  }

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint or a score log");
  eval->require_subcommand(1);
  auto* stereoset = leaf(eval, "stereoset", "stereotype triples");
  auto* crows = leaf(eval, "crows", "minimal pairs");
  auto* bias_sts = leaf(eval, "bias-sts", "multi-way similarity delta and Pearson correlation");
  auto* jigsaw = leaf(eval, "jigsaw", "toxicity subgroup AUCs");
  for (auto* c : {stereoset, crows, bias_sts, jigsaw}) {
    c->add_option("--model", a.model, "checkpoint");
    c->add_option("--name", a.name, "report row name");
  }
  for (auto* c : {stereoset, crows, bias_sts}) {
    c->add_option("--scores", a.scores, "score log (JSONL) produced elsewhere");
    c->add_option("--score-log", a.score_log, "also write the per-item scores here");
  }
  stereoset->add_option("--data", a.data, "triples JSONL");
  crows->add_option("--data", a.data, "minimal pairs JSONL");
  bias_sts->add_option("--templates", a.templates, "template spec JSON");
  bias_sts->add_option("--dimension", a.dimensions, "dimensions to expand (default: all in the spec)");
  bias_sts->add_option("--sts", a.sts, "similarity TSV for Pearson correlation");
  a.rho_opt = bias_sts->add_option("--rho", a.rho, "Pearson correlation measured elsewhere");
  jigsaw->add_option("--comments", a.comments, "annotated comments JSONL")->required();

  auto* report = app.add_subcommand("report", "merge run directories into a table or records");
  seeds[report] = common(report);
  report->add_option("--in", a.in, "run directories or report files")->required();
  report->add_option("--format", a.format, "table | records");

  std::vector<std::string> argv_store{"debias"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    CLI::App* leaf_cmd = nullptr;
    for (CLI::App* c = &app; c;) {
      auto subs = c->get_subcommands();
      leaf_cmd = c;
      c = subs.empty() ? nullptr : subs.front();
    }
    a.common.seed_opt = seeds.count(leaf_cmd) ? seeds[leaf_cmd] : nullptr;
    if (train_opts.count(leaf_cmd)) a.train = train_opts[leaf_cmd];

    if (leaf_cmd == extract) return cmd_pairs_extract(a, out);
    if (leaf_cmd == propose) return cmd_pairs_propose(a, out);
    if (leaf_cmd == filter) return cmd_pairs_filter(a, out);
    if (leaf_cmd == cda_cmd) return cmd_cda(a, out);
    if (leaf_cmd == dba) {
      std::vector<std::vector<std::string>> groups;
      if (!a.pairs.empty()) groups.push_back(a.pairs);
      return train_dba(a, "train dba", groups, "dba", out);
    }
    if (leaf_cmd == all_cda) {
      std::vector<std::vector<std::string>> groups;
      for (const auto& p : a.pairs) groups.push_back({p});
      return train_dba(a, "train all-cda", groups, "all", out);
    }
    if (leaf_cmd == full) return cmd_train_full(a, out);
    if (leaf_cmd == task) return cmd_train_task(a, false, out);
    if (leaf_cmd == fusion) return cmd_train_task(a, true, out);
    if (leaf_cmd == stereoset) return cmd_eval_stereoset(a, out);
    if (leaf_cmd == crows) return cmd_eval_crows(a, out);
    if (leaf_cmd == bias_sts) return cmd_eval_bias_sts(a, out);
    if (leaf_cmd == jigsaw) return cmd_eval_jigsaw(a, out);
    if (leaf_cmd == report) return cmd_report(a, out);
    err << app.help();
    return kExitUsage;
  } catch (const MissingInputError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace debias::cli
