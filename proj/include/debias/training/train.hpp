#pragma once

#include "debias/cda/types.hpp"
#include "debias/common/rng.hpp"
#include "debias/tinylm/model.hpp"
#include "debias/tinylm/tokenizer.hpp"

#include <nlohmann/json.hpp>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace debias::training {

class TrainingError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kIgnoreLabel = -100;
inline constexpr int kPaperBatchSize = 512;

struct TrainConfig {
  double learning_rate = 3e-5;
  int epochs = 2;
  int batch_size = 32;
  double warmup_ratio = 0.1;  // linear warmup, then cosine decay to 0
  double weight_decay = 0.0;  // AdamW, decoupled
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double grad_clip = 1.0;  // global L2 norm; <= 0 disables
  double mlm_probability = 0.15;
  double adapter_drop_prob = 0.0;
  std::uint64_t seed = 0;
  std::optional<int> max_steps;  // fixed step budget; epochs cycle until reached

  // Debiasing-adapter pretraining and downstream finetuning defaults at desk
  // batch size; set batch_size = kPaperBatchSize for the original setting.
  static TrainConfig dba_defaults();
  static TrainConfig downstream_defaults();

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

nlohmann::json to_json(const TrainConfig& c);
// Missing keys keep their defaults; unknown keys throw tinylm::ConfigError.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

// ---- data ----

struct MlmData {
  std::vector<std::vector<int>> sequences;  // [CLS] ... [SEP]
  int vocab_size = 0;                       // random replacements are drawn from non-special ids below this
};

struct TaskExample {
  std::vector<int> ids;
  double target = 0.0;  // regression score in [0,5] or class label 0/1
};

struct TaskData {
  tinylm::TaskKind kind = tinylm::TaskKind::regression;
  std::vector<TaskExample> examples;
};

using TrainData = std::variant<MlmData, TaskData>;

// Encodes every sentence, truncating to max_seq_len while keeping [SEP] last.
MlmData encode_corpus(const cda::Corpus& corpus, const tinylm::Vocabulary& vocab, int max_seq_len);
std::vector<int> encode_truncated(const tinylm::Vocabulary& vocab, std::string_view sentence, int max_seq_len);
std::vector<int> encode_pair_truncated(const tinylm::Vocabulary& vocab, std::string_view a, std::string_view b,
                                       int max_seq_len);

// 64-bit hash of the canonical serialization.
std::uint64_t fingerprint(const TrainData& data);

// ---- masking ----

struct MlmExample {
  std::vector<int> input_ids;
  std::vector<int> labels;  // original id at prediction targets, kIgnoreLabel elsewhere
};

struct MlmStats {
  std::size_t eligible = 0;  // non-special tokens seen
  std::size_t selected = 0;
  std::size_t masked = 0;
  std::size_t randomized = 0;
  std::size_t kept = 0;
};

// Selects each non-special token with probability p; selected tokens become
// [MASK] (80%), a random non-special id (10%) or stay unchanged (10%).
MlmExample mask_tokens(const std::vector<int>& ids, int vocab_size, double p, Rng& rng, MlmStats* stats = nullptr);

struct MlmBatch {
  std::vector<MlmExample> examples;
};

// One epoch of shuffled, masked batches. Identical (data, cfg, epoch) give
// identical batches.
std::vector<MlmBatch> mlm_batches(const MlmData& data, const TrainConfig& cfg, int epoch = 0,
                                  MlmStats* stats = nullptr);
std::vector<MlmBatch> mlm_batches(const cda::Corpus& corpus, const tinylm::Vocabulary& vocab, const TrainConfig& cfg,
                                  int max_seq_len, int epoch = 0, MlmStats* stats = nullptr);

// ---- schedule and regularization ----

int warmup_steps(int total_steps, double warmup_ratio);
// Learning rate applied at optimizer step s (0-based) of total_steps.
double learning_rate_at(int step, int total_steps, const TrainConfig& cfg);

// keep[s][l]: whether block l's task adapter runs at training step s.
using AdapterDropSchedule = std::vector<std::vector<bool>>;
AdapterDropSchedule adapter_drop_hook(const TrainConfig& cfg, int num_layers, int total_steps);

// ---- loops ----

struct RunManifest {
  nlohmann::json config;
  nlohmann::json mode;
  std::map<std::string, std::string> fingerprints;  // dataset name -> hex64
  std::uint64_t seed = 0;
  double wall_clock_seconds = 0.0;
  int total_steps = 0;
  std::vector<double> epoch_losses;
  double final_loss = 0.0;  // mean loss over the last epoch
  std::string checkpoint_path;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
  // Throws TrainingError when a recomputed fingerprint disagrees.
  void verify_fingerprint(const std::string& name, const TrainData& data) const;
};

struct TrainResult {
  tinylm::ModelGraph model;
  RunManifest manifest;
};

// Optimizes the parameters in model.trainable_mask(mode); all others keep
// their exact bytes. Throws TrainingError on a non-finite loss.
TrainResult train(tinylm::ModelGraph model, const tinylm::WiringMode& mode, const TrainData& data,
                  const TrainConfig& cfg, const std::string& dataset_name = "train");

// Number of optimizer steps train() will take.
int total_steps(std::size_t dataset_size, const TrainConfig& cfg);

// Losses without updates (eval plan: every adapter active).
double mlm_loss(const tinylm::ModelGraph& model, const tinylm::ForwardPlan& plan, const std::vector<MlmExample>& batch);
double task_loss(const tinylm::ModelGraph& model, const tinylm::ForwardPlan& plan, const TaskData& data);

// Regression scores or classifier probabilities for every example.
std::vector<double> predict(const tinylm::ModelGraph& model, const tinylm::ForwardPlan& plan,
                            const std::vector<std::vector<int>>& sequences);

}  // namespace debias::training
