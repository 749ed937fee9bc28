#include "debias/training/train.hpp"

#include "debias/common/hash.hpp"
#include "debias/tinylm/checkpoint.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>

namespace debias::training {

using tinylm::ConfigError;
using tinylm::EncodeTrace;
using tinylm::ForwardPlan;
using tinylm::Mat;
using tinylm::ModelGraph;
using tinylm::Objective;
using tinylm::TaskKind;

TrainConfig TrainConfig::dba_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::downstream_defaults() {
  TrainConfig c;
  c.learning_rate = 2e-5;
  c.epochs = 10;
  return c;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) throw ConfigError("warmup_ratio must be in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("AdamW betas must be in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (!(mlm_probability > 0.0 && mlm_probability < 1.0)) throw ConfigError("mlm_probability must be in (0, 1)");
  if (!(adapter_drop_prob >= 0.0 && adapter_drop_prob < 1.0)) throw ConfigError("adapter_drop_prob must be in [0, 1)");
  if (max_steps && *max_steps < 1) throw ConfigError("max_steps must be >= 1");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"scheduler", "cosine"},
          {"warmup", "linear"},
          {"warmup_ratio", c.warmup_ratio},
          {"optimizer", "adamw"},
          {"weight_decay", c.weight_decay},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon},
          {"grad_clip", c.grad_clip},
          {"mlm_probability", c.mlm_probability},
          {"adapter_drop_prob", c.adapter_drop_prob},
          {"seed", c.seed},
          {"max_steps", c.max_steps ? nlohmann::json(*c.max_steps) : nlohmann::json(nullptr)}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  if (!j.is_object()) throw ConfigError("training config must be an object");
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "learning_rate") c.learning_rate = v.get<double>();
      else if (key == "epochs") c.epochs = v.get<int>();
      else if (key == "batch_size") c.batch_size = v.get<int>();
      else if (key == "warmup_ratio") c.warmup_ratio = v.get<double>();
      else if (key == "weight_decay") c.weight_decay = v.get<double>();
      else if (key == "beta1") c.beta1 = v.get<double>();
      else if (key == "beta2") c.beta2 = v.get<double>();
      else if (key == "epsilon") c.epsilon = v.get<double>();
      else if (key == "grad_clip") c.grad_clip = v.get<double>();
      else if (key == "mlm_probability") c.mlm_probability = v.get<double>();
      else if (key == "adapter_drop_prob") c.adapter_drop_prob = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "max_steps") c.max_steps = v.is_null() ? std::nullopt : std::optional<int>(v.get<int>());
      else if (key == "scheduler") {
        if (v != "cosine") throw ConfigError("only the cosine scheduler is supported");
      } else if (key == "warmup") {
        if (v != "linear") throw ConfigError("only linear warmup is supported");
      } else if (key == "optimizer") {
        if (v != "adamw") throw ConfigError("only the adamw optimizer is supported");
      } else {
        throw ConfigError("unknown training config key: " + key);
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("training config key '" + key + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

// ---- data ----

namespace {

std::vector<int> truncate(std::vector<int> ids, int max_seq_len) {
  if (max_seq_len > 0 && static_cast<int>(ids.size()) > max_seq_len) {
    ids.resize(static_cast<std::size_t>(max_seq_len));
    ids.back() = tinylm::kSepId;
  }
  return ids;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::vector<int> encode_truncated(const tinylm::Vocabulary& vocab, std::string_view sentence, int max_seq_len) {
  return truncate(vocab.encode(sentence), max_seq_len);
}

std::vector<int> encode_pair_truncated(const tinylm::Vocabulary& vocab, std::string_view a, std::string_view b,
                                       int max_seq_len) {
  return truncate(vocab.encode_pair(a, b), max_seq_len);
}

MlmData encode_corpus(const cda::Corpus& corpus, const tinylm::Vocabulary& vocab, int max_seq_len) {
  MlmData data;
  data.vocab_size = vocab.size();
  data.sequences.reserve(corpus.size());
  for (const auto& s : corpus.sentences) data.sequences.push_back(encode_truncated(vocab, s.text, max_seq_len));
  return data;
}

std::uint64_t fingerprint(const TrainData& data) {
  Fnv1a h;
  auto ids_line = [&](const std::vector<int>& ids) {
    std::string line;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) line += ' ';
      line += std::to_string(ids[i]);
    }
    h.update(line);
  };
  if (const auto* mlm = std::get_if<MlmData>(&data)) {
    h.update("mlm\n" + std::to_string(mlm->vocab_size) + "\n");
    for (const auto& s : mlm->sequences) {
      ids_line(s);
      h.update("\n");
    }
  } else {
    const auto& task = std::get<TaskData>(data);
    h.update("task:" + tinylm::to_string(task.kind) + "\n");
    for (const auto& e : task.examples) {
      ids_line(e.ids);
      h.update("\t" + format_double(e.target) + "\n");
    }
  }
  return h.digest();
}

// ---- masking ----

MlmExample mask_tokens(const std::vector<int>& ids, int vocab_size, double p, Rng& rng, MlmStats* stats) {
  if (vocab_size <= tinylm::kNumSpecial) throw std::invalid_argument("vocabulary has no non-special tokens");
  MlmExample ex{ids, std::vector<int>(ids.size(), kIgnoreLabel)};
  const auto regular = static_cast<std::uint64_t>(vocab_size - tinylm::kNumSpecial);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (tinylm::Vocabulary::is_special(ids[i])) continue;
    if (stats) ++stats->eligible;
    if (!rng.bernoulli(p)) continue;
    ex.labels[i] = ids[i];
    if (stats) ++stats->selected;
    const double r = rng.uniform();
    if (r < 0.8) {
      ex.input_ids[i] = tinylm::kMaskId;
      if (stats) ++stats->masked;
    } else if (r < 0.9) {
      ex.input_ids[i] = tinylm::kNumSpecial + static_cast<int>(rng.below(regular));
      if (stats) ++stats->randomized;
    } else if (stats) {
      ++stats->kept;
    }
  }
  return ex;
}

namespace {

Rng epoch_rng(std::uint64_t seed, int epoch, std::uint64_t stream) {
  return Rng(Rng::splitmix(Rng::splitmix(seed ^ 0x6d6c6d5f65706f63ULL) + static_cast<std::uint64_t>(epoch) * 2 + stream));
}

}  // namespace

std::vector<MlmBatch> mlm_batches(const MlmData& data, const TrainConfig& cfg, int epoch, MlmStats* stats) {
  std::vector<MlmBatch> batches;
  if (data.sequences.empty()) return batches;
  Rng order_rng = epoch_rng(cfg.seed, epoch, 0);
  Rng mask_rng = epoch_rng(cfg.seed, epoch, 1);
  const auto order = order_rng.permutation(data.sequences.size());
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
    MlmBatch b;
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
    for (std::size_t i = start; i < end; ++i) {
      b.examples.push_back(mask_tokens(data.sequences[order[i]], data.vocab_size, cfg.mlm_probability, mask_rng, stats));
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

std::vector<MlmBatch> mlm_batches(const cda::Corpus& corpus, const tinylm::Vocabulary& vocab, const TrainConfig& cfg,
                                  int max_seq_len, int epoch, MlmStats* stats) {
  return mlm_batches(encode_corpus(corpus, vocab, max_seq_len), cfg, epoch, stats);
}

// ---- schedule ----

int warmup_steps(int total_steps, double warmup_ratio) {
  return static_cast<int>(std::ceil(warmup_ratio * static_cast<double>(total_steps) - 1e-12));
}

double learning_rate_at(int step, int total, const TrainConfig& cfg) {
  const int w = warmup_steps(total, cfg.warmup_ratio);
  if (step < w) return cfg.learning_rate * static_cast<double>(step + 1) / static_cast<double>(w);
  if (step >= total) return 0.0;
  const double progress = static_cast<double>(step - w) / static_cast<double>(total - w);
  return cfg.learning_rate * 0.5 * (1.0 + std::cos(M_PI * progress));
}

AdapterDropSchedule adapter_drop_hook(const TrainConfig& cfg, int num_layers, int total) {
  AdapterDropSchedule keep(static_cast<std::size_t>(total), std::vector<bool>(static_cast<std::size_t>(num_layers), true));
  if (cfg.adapter_drop_prob <= 0.0) return keep;
  Rng rng(Rng::splitmix(cfg.seed ^ 0x6164726f70ULL));
  for (auto& step : keep) {
    for (std::size_t l = 0; l < step.size(); ++l) step[l] = !rng.bernoulli(cfg.adapter_drop_prob);
  }
  return keep;
}

// ---- losses ----

namespace {

std::vector<std::uint8_t> full_mask(std::size_t n) { return std::vector<std::uint8_t>(n, 1); }

// Sum of target cross-entropies; with `model` non-null, backpropagates
// gradients scaled by `scale`.
double mlm_example_loss(const ModelGraph& model, ModelGraph* grad_model, const ForwardPlan& plan,
                        const MlmExample& ex, double scale) {
  std::vector<int> targets;
  for (std::size_t i = 0; i < ex.labels.size(); ++i) {
    if (ex.labels[i] != kIgnoreLabel) targets.push_back(static_cast<int>(i));
  }
  if (targets.empty()) return 0.0;
  const auto mask = full_mask(ex.input_ids.size());
  EncodeTrace tr;
  Mat h = model.encode(ex.input_ids, mask, plan, grad_model ? &tr : nullptr);
  Mat rows(static_cast<Eigen::Index>(targets.size()), h.cols());
  for (std::size_t i = 0; i < targets.size(); ++i) rows.row(static_cast<Eigen::Index>(i)) = h.row(targets[i]);
  Mat logits = model.mlm_logits(rows);
  Mat dlogits(logits.rows(), logits.cols());
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int gold = ex.labels[static_cast<std::size_t>(targets[static_cast<std::size_t>(r)])];
    Eigen::VectorXd p = tinylm::softmax(logits.row(r).transpose());
    total -= std::log(std::max(p(gold), 1e-300));
    dlogits.row(r) = p.transpose() * scale;
    dlogits(r, gold) -= scale;
  }
  if (grad_model) {
    Mat drows = grad_model->mlm_backward(rows, dlogits);
    Mat dh = Mat::Zero(h.rows(), h.cols());
    for (std::size_t i = 0; i < targets.size(); ++i) dh.row(targets[i]) += drows.row(static_cast<Eigen::Index>(i));
    grad_model->backward_encode(tr, dh);
  }
  return total;
}

double task_example_loss(const ModelGraph& model, ModelGraph* grad_model, const ForwardPlan& plan,
                         const TaskExample& ex, double scale) {
  const auto mask = full_mask(ex.ids.size());
  EncodeTrace tr;
  Mat h = model.encode(ex.ids, mask, plan, grad_model ? &tr : nullptr);
  const double z = model.task_logit(h, mask);
  double loss, dz;
  if (model.heads().task == TaskKind::classifier) {
    const double y = ex.target;
    // Stable BCE with logits.
    loss = std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    dz = 1.0 / (1.0 + std::exp(-z)) - y;
  } else {
    loss = (z - ex.target) * (z - ex.target);
    dz = 2.0 * (z - ex.target);
  }
  if (grad_model) grad_model->backward_encode(tr, grad_model->task_backward(h, mask, dz * scale));
  return loss;
}

void check_task_data(const ModelGraph& model, const TaskData& data) {
  if (!model.heads().task) throw ConfigError("task data requires a task head");
  if (*model.heads().task != data.kind) {
    throw ConfigError("task data kind " + tinylm::to_string(data.kind) + " does not match the model's " +
                      tinylm::to_string(*model.heads().task) + " head");
  }
  for (std::size_t i = 0; i < data.examples.size(); ++i) {
    const double t = data.examples[i].target;
    const bool ok = data.kind == TaskKind::regression ? (t >= 0.0 && t <= 5.0) : (t == 0.0 || t == 1.0);
    if (!ok) {
      throw ConfigError("example " + std::to_string(i) + ": target " + format_double(t) +
                        (data.kind == TaskKind::regression ? " outside [0, 5]" : " is not a 0/1 label"));
    }
  }
}

}  // namespace

double mlm_loss(const ModelGraph& model, const ForwardPlan& plan, const std::vector<MlmExample>& batch) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& ex : batch) {
    for (int l : ex.labels) count += l != kIgnoreLabel;
    total += mlm_example_loss(model, nullptr, plan, ex, 0.0);
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

double task_loss(const ModelGraph& model, const ForwardPlan& plan, const TaskData& data) {
  if (data.examples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& ex : data.examples) total += task_example_loss(model, nullptr, plan, ex, 0.0);
  return total / static_cast<double>(data.examples.size());
}

std::vector<double> predict(const ModelGraph& model, const ForwardPlan& plan,
                            const std::vector<std::vector<int>>& sequences) {
  if (!model.heads().task) throw ConfigError("prediction requires a task head");
  const bool classifier = *model.heads().task == TaskKind::classifier;
  std::vector<double> out;
  out.reserve(sequences.size());
  for (const auto& ids : sequences) {
    const auto mask = full_mask(ids.size());
    const double z = model.task_logit(model.encode(ids, mask, plan), mask);
    out.push_back(classifier ? 1.0 / (1.0 + std::exp(-z)) : z);
  }
  return out;
}

// ---- manifest ----

nlohmann::json RunManifest::to_json() const {
  nlohmann::json fp = nlohmann::json::object();
  for (const auto& [k, v] : fingerprints) fp[k] = v;
  return {{"config", config},
          {"mode", mode},
          {"dataset_fingerprints", fp},
          {"seed", seed},
          {"wall_clock_seconds", wall_clock_seconds},
          {"total_steps", total_steps},
          {"epoch_losses", epoch_losses},
          {"final_loss", final_loss},
          {"checkpoint_path", checkpoint_path}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  RunManifest m;
  m.config = j.at("config");
  m.mode = j.at("mode");
  for (const auto& [k, v] : j.at("dataset_fingerprints").items()) m.fingerprints[k] = v.get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
  m.total_steps = j.at("total_steps").get<int>();
  m.epoch_losses = j.at("epoch_losses").get<std::vector<double>>();
  m.final_loss = j.at("final_loss").get<double>();
  m.checkpoint_path = j.at("checkpoint_path").get<std::string>();
  return m;
}

void RunManifest::verify_fingerprint(const std::string& name, const TrainData& data) const {
  auto it = fingerprints.find(name);
  if (it == fingerprints.end()) throw TrainingError("manifest has no fingerprint for dataset '" + name + "'");
  const std::string now = hex64(fingerprint(data));
  if (it->second != now) {
    throw TrainingError("dataset '" + name + "' fingerprint mismatch: manifest " + it->second + ", recomputed " + now);
  }
}

// ---- training ----

int total_steps(std::size_t dataset_size, const TrainConfig& cfg) {
  if (cfg.max_steps) return *cfg.max_steps;
  const auto per_epoch = (dataset_size + static_cast<std::size_t>(cfg.batch_size) - 1) / static_cast<std::size_t>(cfg.batch_size);
  return static_cast<int>(per_epoch) * cfg.epochs;
}

TrainResult train(ModelGraph model, const tinylm::WiringMode& mode, const TrainData& data, const TrainConfig& cfg,
                  const std::string& dataset_name) {
  cfg.validate();
  model.validate(mode);
  const auto started = std::chrono::steady_clock::now();

  const bool is_mlm = std::holds_alternative<MlmData>(data);
  if (is_mlm != (mode.objective == Objective::mlm)) {
    throw ConfigError(std::string("wiring mode trains the ") + (mode.objective == Objective::mlm ? "MLM" : "task") +
                      " objective but the dataset is " + (is_mlm ? "MLM text" : "task-labelled"));
  }
  if (!is_mlm) check_task_data(model, std::get<TaskData>(data));
  const std::size_t n =
      is_mlm ? std::get<MlmData>(data).sequences.size() : std::get<TaskData>(data).examples.size();

  const std::set<std::string> trainable = model.trainable_mask(mode);
  const ForwardPlan base_plan = tinylm::plan_for(mode);
  const int total = n == 0 ? 0 : total_steps(n, cfg);
  const int layers = model.config().num_layers;
  const AdapterDropSchedule drop =
      base_plan.task_adapter.empty() ? AdapterDropSchedule{} : adapter_drop_hook(cfg, layers, total);

  struct Moments {
    Mat m, v;
  };
  std::map<std::string, Moments> adam;
  for (const auto& name : trainable) {
    const Mat& value = model.params().at(name).value;
    adam[name] = {Mat::Zero(value.rows(), value.cols()), Mat::Zero(value.rows(), value.cols())};
  }

  RunManifest manifest;
  manifest.config = to_json(cfg);
  manifest.mode = tinylm::to_json(mode);
  manifest.fingerprints[dataset_name] = hex64(fingerprint(data));
  manifest.seed = cfg.seed;
  manifest.total_steps = total;

  int step = 0;
  for (int epoch = 0; step < total; ++epoch) {
    // Materialize this epoch's batches as index lists (task) or masked examples (MLM).
    std::vector<MlmBatch> mlm;
    std::vector<std::vector<std::size_t>> task;
    if (is_mlm) {
      mlm = mlm_batches(std::get<MlmData>(data), cfg, epoch);
    } else {
      Rng order_rng = epoch_rng(cfg.seed, epoch, 0);
      const auto order = order_rng.permutation(n);
      for (std::size_t s = 0; s < n; s += static_cast<std::size_t>(cfg.batch_size)) {
        task.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                          order.begin() + static_cast<std::ptrdiff_t>(std::min(n, s + static_cast<std::size_t>(cfg.batch_size))));
      }
    }
    const std::size_t batches = is_mlm ? mlm.size() : task.size();
    double epoch_total = 0.0;
    int epoch_batches = 0;
    for (std::size_t b = 0; b < batches && step < total; ++b, ++step) {
      ForwardPlan plan = base_plan;
      if (!drop.empty()) plan.task_adapter_active = drop[static_cast<std::size_t>(step)];
      model.zero_grad();
      double loss = 0.0;
      if (is_mlm) {
        std::size_t count = 0;
        for (const auto& ex : mlm[b].examples) {
          for (int l : ex.labels) count += l != kIgnoreLabel;
        }
        if (count > 0) {
          const double scale = 1.0 / static_cast<double>(count);
          for (const auto& ex : mlm[b].examples) loss += mlm_example_loss(model, &model, plan, ex, scale);
          loss *= scale;
        }
      } else {
        const auto& examples = std::get<TaskData>(data).examples;
        const double scale = 1.0 / static_cast<double>(task[b].size());
        for (std::size_t i : task[b]) loss += task_example_loss(model, &model, plan, examples[i], scale);
        loss *= scale;
      }
      const double lr = learning_rate_at(step, total, cfg);
      if (!std::isfinite(loss)) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "non-finite loss at step %d (learning rate %.6g)", step, lr);
        throw TrainingError(buf);
      }
      epoch_total += loss;
      ++epoch_batches;

      double sq = 0.0;
      for (const auto& name : trainable) sq += model.params().at(name).grad.squaredNorm();
      const double norm = std::sqrt(sq);
      const double clip = cfg.grad_clip > 0.0 && norm > cfg.grad_clip ? cfg.grad_clip / norm : 1.0;

      const double t = static_cast<double>(step + 1);
      const double c1 = 1.0 - std::pow(cfg.beta1, t);
      const double c2 = 1.0 - std::pow(cfg.beta2, t);
      for (const auto& name : trainable) {
        auto& p = model.params().at(name);
        auto& mo = adam.at(name);
        const Mat g = p.grad * clip;
        mo.m = cfg.beta1 * mo.m + (1.0 - cfg.beta1) * g;
        mo.v = cfg.beta2 * mo.v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
        if (cfg.weight_decay > 0.0) p.value *= 1.0 - lr * cfg.weight_decay;
        p.value.array() -= lr * (mo.m.array() / c1) / ((mo.v.array() / c2).sqrt() + cfg.epsilon);
      }
    }
    if (epoch_batches > 0) manifest.epoch_losses.push_back(epoch_total / epoch_batches);
    if (batches == 0) break;
  }
  model.zero_grad();
  manifest.final_loss = manifest.epoch_losses.empty() ? 0.0 : manifest.epoch_losses.back();
  manifest.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return {std::move(model), std::move(manifest)};
}

}  // namespace debias::training
