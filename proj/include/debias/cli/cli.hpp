#pragma once

#include "debias/cda/filter.hpp"
#include "debias/training/train.hpp"

#include <nlohmann/json.hpp>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace debias::cli {

// Bad invocation or configuration; maps to exit code 2.
class UsageError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

inline constexpr const char* kSeedEnv = "MAFIA_SEED";

struct PipelineSection {
  cda::FrequencyThresholds thresholds;
  int max_retries = 3;
};

struct ModelSection {
  int num_layers = 2;
  int hidden_dim = 64;
  int num_heads = 4;
  int ff_dim = 128;
  int max_seq_len = 32;
  int max_vocab = 2048;
  int reduction_factor = 16;
};

struct EvaluationSection {
  std::string aggregation = "mean_log_prob";  // or mean_prob
  double alpha = 1.0;
  double jigsaw_power = -5.0;
  std::optional<std::size_t> subsample;  // similarity tuples kept per dimension
};

// Directory holding the shipped data files (pair lists, templates).
std::string default_data_dir();

struct PathsSection {
  std::string out = "out";
  std::string templates = default_data_dir() + "/bias_sts_templates.json";
};

// Defaults < config file < MAFIA_SEED < command-line flags. training.seed is
// the global seed: it also seeds model initialization and subsampling.
struct CliConfig {
  PipelineSection pipeline;
  ModelSection model;
  training::TrainConfig training;
  EvaluationSection evaluation;
  PathsSection paths;
};

nlohmann::json to_json(const CliConfig& c);
// Missing keys keep `base`; unknown sections or keys throw tinylm::ConfigError.
CliConfig config_from_json(const nlohmann::json& j, CliConfig base = {});
// "section.key=value"; value is read as JSON when it parses, else as a string.
void apply_assignment(CliConfig& c, std::string_view assignment);

// args excludes the program name. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace debias::cli
