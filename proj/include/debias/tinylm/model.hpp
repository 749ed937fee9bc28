#pragma once

#include "debias/tinylm/config.hpp"
#include "debias/tinylm/ops.hpp"

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace debias::tinylm {

// Rectangular batch of token ids. mask[b][t] == 0 marks padding keys; an empty
// mask means every position is real.
struct Batch {
  std::vector<std::vector<int>> ids;
  std::vector<std::vector<std::uint8_t>> mask;
};

// Resolved forward wiring for one pass.
struct ForwardPlan {
  std::vector<std::string> stack;  // adapters applied in sequence after the FFN
  std::vector<std::string> fused;  // adapters combined by the fusion layer
  std::string task_adapter;        // empty: none
  Objective objective = Objective::mlm;
  std::vector<bool> task_adapter_active;  // per layer; empty: all active
};

ForwardPlan plan_for(const WiringMode& mode);

struct ForwardOutput {
  std::vector<Mat> mlm_logits;  // [T, vocab] per sequence
  std::vector<double> scores;   // regression value or classifier probability
};

struct BlockTrace {
  AttentionCache attention;
  LayerNormCache ln1, ln2;
  Mat x1, ffn_pre, ffn_act;
  std::vector<AdapterCache> stacked;
  std::vector<AdapterCache> fused;
  FusionCache fusion;
  bool task_active = false;
  AdapterCache task;
};

struct EncodeTrace {
  std::vector<int> ids;
  std::vector<std::uint8_t> mask;
  ForwardPlan plan;
  LayerNormCache embed_ln;
  std::vector<BlockTrace> blocks;
};

class ModelGraph {
public:
  static ModelGraph build(const EncoderConfig& encoder, const std::vector<AdapterConfig>& adapters, bool fusion,
                          const HeadSpec& heads);

  ModelGraph(const ModelGraph& other);
  ModelGraph& operator=(const ModelGraph& other);
  ModelGraph(ModelGraph&&) noexcept;
  ModelGraph& operator=(ModelGraph&&) noexcept;
  ~ModelGraph();

  const EncoderConfig& config() const { return config_; }
  const std::vector<AdapterConfig>& adapters() const { return adapter_configs_; }
  bool has_adapter(const std::string& name) const;
  bool has_fusion() const { return fusion_; }
  const HeadSpec& heads() const { return heads_; }

  std::map<std::string, Param>& params() { return params_; }
  const std::map<std::string, Param>& params() const { return params_; }
  std::vector<std::string> parameter_names() const;

  // Parameter names the given mode may update; everything else stays frozen.
  std::set<std::string> trainable_mask(const WiringMode& mode) const;
  void validate(const WiringMode& mode) const;
  void validate(const ForwardPlan& plan) const;

  ForwardOutput forward(const Batch& batch, const WiringMode& mode) const;
  ForwardOutput forward(const Batch& batch, const ForwardPlan& plan) const;

  // Final hidden states [T, d] for one sequence.
  Mat encode(std::span<const int> ids, std::span<const std::uint8_t> mask, const ForwardPlan& plan,
             EncodeTrace* trace = nullptr) const;
  void backward_encode(const EncodeTrace& trace, const Mat& dhidden);

  // Decoder over selected hidden rows.
  Mat mlm_logits(const Mat& hidden_rows) const;
  Mat mlm_backward(const Mat& hidden_rows, const Mat& dlogits);

  // Linear task output over the masked mean of hidden states (pre-sigmoid for
  // classifiers).
  double task_logit(const Mat& hidden, std::span<const std::uint8_t> mask) const;
  Mat task_backward(const Mat& hidden, std::span<const std::uint8_t> mask, double dlogit);

  void zero_grad();

  AdapterWeights adapter_weights(const std::string& name, int layer) const;
  FusionWeights fusion_weights(int layer) const;

private:
  ModelGraph() = default;
  Param& add(const std::string& name, int rows, int cols);
  void init_parameters();
  void bind();
  Param* p(const std::string& name) const;

  struct BlockWeights {
    AttentionWeights attention;
    Param *ln1_gain, *ln1_bias, *ln2_gain, *ln2_bias;
    LinearWeights ffn_in, ffn_out;
  };

  EncoderConfig config_;
  std::vector<AdapterConfig> adapter_configs_;
  bool fusion_ = false;
  HeadSpec heads_;
  std::map<std::string, Param> params_;

  Param *tok_embed_ = nullptr, *pos_embed_ = nullptr, *embed_ln_gain_ = nullptr, *embed_ln_bias_ = nullptr;
  std::vector<BlockWeights> blocks_;
  std::map<std::string, std::vector<AdapterWeights>> adapter_weights_;
  std::vector<FusionWeights> fusion_weights_;
  LinearWeights mlm_head_{}, task_head_{};
};

// A graph with `base`'s components plus `extra_adapters`, optional fusion and
// the union of heads. Existing weights are copied; new ones are initialized
// from the encoder seed.
ModelGraph extend(const ModelGraph& base, const std::vector<AdapterConfig>& extra_adapters, bool fusion,
                  const HeadSpec& heads);

// Copies adapter `name` from `source` into `target`. Throws ConfigError unless
// both graphs carry bit-identical encoder weights.
void import_adapter(ModelGraph& target, const ModelGraph& source, const std::string& name);

// Coarse grouping used by freeze checks: "encoder", "adapter.<name>",
// "fusion", "head.mlm", "head.task".
std::string parameter_group(const std::string& name);

}  // namespace debias::tinylm
