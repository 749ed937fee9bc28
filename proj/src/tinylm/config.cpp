#include "debias/tinylm/config.hpp"

namespace debias::tinylm {

void EncoderConfig::validate() const {
  if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
  if (hidden_dim < 1 || num_heads < 1 || ff_dim < 1 || vocab_size < 1 || max_seq_len < 1) {
    throw ConfigError("encoder dimensions must be positive");
  }
  if (hidden_dim % num_heads != 0) {
    throw ConfigError("hidden_dim " + std::to_string(hidden_dim) + " is not divisible by num_heads " +
                      std::to_string(num_heads));
  }
}

void AdapterConfig::validate(int hidden_dim) const {
  if (name.empty() || name.find('.') != std::string::npos) {
    throw ConfigError("adapter name must be non-empty and contain no '.': '" + name + "'");
  }
  if (reduction_factor < 1) throw ConfigError("adapter reduction factor must be >= 1");
  if (bottleneck_dim(hidden_dim) < 1) {
    throw ConfigError("adapter '" + name + "': bottleneck " + std::to_string(hidden_dim) + "/" +
                      std::to_string(reduction_factor) + " is empty");
  }
}

WiringMode WiringMode::dba_pretrain(std::string dba) {
  return {ModeKind::dba_pretrain, {std::move(dba)}, "", Objective::mlm};
}

WiringMode WiringMode::full_finetune(Objective objective, std::vector<std::string> adapters) {
  return {ModeKind::full_finetune, std::move(adapters), "", objective};
}

WiringMode WiringMode::with_task_adapter(std::string task_adapter, std::optional<std::string> dba) {
  WiringMode m{ModeKind::task_adapter, {}, std::move(task_adapter), Objective::task};
  if (dba) m.adapters.push_back(std::move(*dba));
  return m;
}

WiringMode WiringMode::fusion(std::vector<std::string> dbas, std::string task_adapter) {
  return {ModeKind::fusion, std::move(dbas), std::move(task_adapter), Objective::task};
}

std::string to_string(ModeKind k) {
  switch (k) {
    case ModeKind::dba_pretrain: return "dba_pretrain";
    case ModeKind::full_finetune: return "full_finetune";
    case ModeKind::task_adapter: return "task_adapter";
    case ModeKind::fusion: return "fusion";
  }
  return "unknown";
}

ModeKind parse_mode_kind(const std::string& s) {
  for (ModeKind k : {ModeKind::dba_pretrain, ModeKind::full_finetune, ModeKind::task_adapter, ModeKind::fusion}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown wiring mode: " + s);
}

std::string to_string(TaskKind k) { return k == TaskKind::regression ? "regression" : "classifier"; }

TaskKind parse_task_kind(const std::string& s) {
  if (s == "regression") return TaskKind::regression;
  if (s == "classifier") return TaskKind::classifier;
  throw ConfigError("unknown task kind: " + s);
}

}  // namespace debias::tinylm
