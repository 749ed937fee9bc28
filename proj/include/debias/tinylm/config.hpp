#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace debias::tinylm {

class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

struct EncoderConfig {
  int num_layers = 2;
  int hidden_dim = 64;
  int num_heads = 4;
  int ff_dim = 128;
  int vocab_size = 2048;
  int max_seq_len = 32;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// Pfeiffer bottleneck adapter: LN -> down -> SiLU -> up -> residual.
struct AdapterConfig {
  std::string name;
  int reduction_factor = 16;

  int bottleneck_dim(int hidden_dim) const { return hidden_dim / reduction_factor; }
  void validate(int hidden_dim) const;
  friend bool operator==(const AdapterConfig&, const AdapterConfig&) = default;
};

enum class TaskKind { regression, classifier };

struct HeadSpec {
  bool mlm = true;
  std::optional<TaskKind> task;

  friend bool operator==(const HeadSpec&, const HeadSpec&) = default;
};

enum class ModeKind { dba_pretrain, full_finetune, task_adapter, fusion };
enum class Objective { mlm, task };

// Which parts of the graph run and which are trained.
//   dba_pretrain:  base + one DBA + MLM decoder; trains the DBA and decoder.
//   full_finetune: base (+ any listed adapters); trains everything.
//   task_adapter:  base + optional frozen DBA + task adapter + task head.
//   fusion:        base + fused DBAs + task adapter + task head; trains fusion,
//                  task adapter and head.
struct WiringMode {
  ModeKind kind = ModeKind::dba_pretrain;
  std::vector<std::string> adapters;
  std::string task_adapter;
  Objective objective = Objective::mlm;

  static WiringMode dba_pretrain(std::string dba);
  static WiringMode full_finetune(Objective objective, std::vector<std::string> adapters = {});
  static WiringMode with_task_adapter(std::string task_adapter, std::optional<std::string> dba = std::nullopt);
  static WiringMode fusion(std::vector<std::string> dbas, std::string task_adapter);

  friend bool operator==(const WiringMode&, const WiringMode&) = default;
};

std::string to_string(ModeKind k);
ModeKind parse_mode_kind(const std::string& s);
std::string to_string(TaskKind k);
TaskKind parse_task_kind(const std::string& s);

}  // namespace debias::tinylm
