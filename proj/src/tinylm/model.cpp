#include "debias/tinylm/model.hpp"

#include "debias/common/hash.hpp"
#include "debias/common/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace debias::tinylm {

namespace {

std::string layer_prefix(int l) { return "encoder.layer" + std::to_string(l) + "."; }
std::string adapter_prefix(const std::string& name, int l) {
  return "adapter." + name + ".layer" + std::to_string(l) + ".";
}
std::string fusion_prefix(int l) { return "fusion.layer" + std::to_string(l) + "."; }

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

std::string parameter_group(const std::string& name) {
  if (name.rfind("embed.", 0) == 0 || name.rfind("encoder.", 0) == 0) return "encoder";
  if (name.rfind("adapter.", 0) == 0) {
    auto dot = name.find('.', 8);
    return name.substr(0, dot);
  }
  if (name.rfind("fusion.", 0) == 0) return "fusion";
  if (name.rfind("head.mlm.", 0) == 0) return "head.mlm";
  if (name.rfind("head.task.", 0) == 0) return "head.task";
  return name;
}

ForwardPlan plan_for(const WiringMode& mode) {
  ForwardPlan plan;
  plan.objective = mode.objective;
  switch (mode.kind) {
    case ModeKind::dba_pretrain:
      plan.stack = mode.adapters;
      plan.objective = Objective::mlm;
      break;
    case ModeKind::full_finetune:
      plan.stack = mode.adapters;
      plan.task_adapter = mode.task_adapter;
      break;
    case ModeKind::task_adapter:
      plan.stack = mode.adapters;
      plan.task_adapter = mode.task_adapter;
      plan.objective = Objective::task;
      break;
    case ModeKind::fusion:
      plan.fused = mode.adapters;
      plan.task_adapter = mode.task_adapter;
      plan.objective = Objective::task;
      break;
  }
  return plan;
}

ModelGraph ModelGraph::build(const EncoderConfig& encoder, const std::vector<AdapterConfig>& adapters, bool fusion,
                             const HeadSpec& heads) {
  encoder.validate();
  for (std::size_t i = 0; i < adapters.size(); ++i) {
    adapters[i].validate(encoder.hidden_dim);
    for (std::size_t j = 0; j < i; ++j) {
      if (adapters[j].name == adapters[i].name) throw ConfigError("duplicate adapter name: " + adapters[i].name);
    }
  }
  if (fusion && adapters.empty()) throw ConfigError("fusion requires at least one attached adapter");
  if (!heads.mlm && !heads.task) throw ConfigError("model needs at least one head");

  ModelGraph g;
  g.config_ = encoder;
  g.adapter_configs_ = adapters;
  g.fusion_ = fusion;
  g.heads_ = heads;

  const int d = encoder.hidden_dim;
  g.add("embed.token", encoder.vocab_size, d);
  g.add("embed.position", encoder.max_seq_len, d);
  g.add("embed.ln.gain", 1, d);
  g.add("embed.ln.bias", 1, d);
  for (int l = 0; l < encoder.num_layers; ++l) {
    const std::string pre = layer_prefix(l);
    for (const char* proj : {"query", "key", "value", "output"}) {
      g.add(pre + "attention." + proj + ".weight", d, d);
      g.add(pre + "attention." + proj + ".bias", 1, d);
    }
    g.add(pre + "ln1.gain", 1, d);
    g.add(pre + "ln1.bias", 1, d);
    g.add(pre + "ffn.in.weight", d, encoder.ff_dim);
    g.add(pre + "ffn.in.bias", 1, encoder.ff_dim);
    g.add(pre + "ffn.out.weight", encoder.ff_dim, d);
    g.add(pre + "ffn.out.bias", 1, d);
    g.add(pre + "ln2.gain", 1, d);
    g.add(pre + "ln2.bias", 1, d);
    for (const AdapterConfig& a : adapters) {
      const std::string ap = adapter_prefix(a.name, l);
      const int m = a.bottleneck_dim(d);
      g.add(ap + "ln.gain", 1, d);
      g.add(ap + "ln.bias", 1, d);
      g.add(ap + "down.weight", d, m);
      g.add(ap + "down.bias", 1, m);
      g.add(ap + "up.weight", m, d);
      g.add(ap + "up.bias", 1, d);
    }
    if (fusion) {
      for (const char* proj : {"query", "key", "value"}) {
        g.add(fusion_prefix(l) + proj + ".weight", d, d);
        g.add(fusion_prefix(l) + proj + ".bias", 1, d);
      }
    }
  }
  if (heads.mlm) {
    g.add("head.mlm.weight", d, encoder.vocab_size);
    g.add("head.mlm.bias", 1, encoder.vocab_size);
  }
  if (heads.task) {
    g.add("head.task.weight", d, 1);
    g.add("head.task.bias", 1, 1);
  }
  g.init_parameters();
  g.bind();
  return g;
}

ModelGraph::ModelGraph(const ModelGraph& other)
    : config_(other.config_),
      adapter_configs_(other.adapter_configs_),
      fusion_(other.fusion_),
      heads_(other.heads_),
      params_(other.params_) {
  bind();
}

ModelGraph& ModelGraph::operator=(const ModelGraph& other) {
  if (this != &other) {
    config_ = other.config_;
    adapter_configs_ = other.adapter_configs_;
    fusion_ = other.fusion_;
    heads_ = other.heads_;
    params_ = other.params_;
    bind();
  }
  return *this;
}

// std::map nodes keep their addresses across moves, so the bound pointers stay valid.
ModelGraph::ModelGraph(ModelGraph&&) noexcept = default;
ModelGraph& ModelGraph::operator=(ModelGraph&&) noexcept = default;
ModelGraph::~ModelGraph() = default;

Param& ModelGraph::add(const std::string& name, int rows, int cols) {
  Param param{Mat::Zero(rows, cols), Mat::Zero(rows, cols)};
  auto [it, inserted] = params_.emplace(name, std::move(param));
  if (!inserted) throw ConfigError("duplicate parameter name: " + name);
  return it->second;
}

void ModelGraph::init_parameters() {
  constexpr double kStd = 0.02;
  for (auto& [name, param] : params_) {
    Rng rng(Rng::splitmix(config_.seed ^ fnv1a(name)));
    Mat& v = param.value;
    auto fill_normal = [&](double std) {
      for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = rng.normal() * std;
    };
    const bool is_adapter = name.rfind("adapter.", 0) == 0;
    const bool is_fusion = name.rfind("fusion.", 0) == 0;
    if (ends_with(name, ".gain")) {
      v.setOnes();
    } else if (ends_with(name, ".bias")) {
      v.setZero();
    } else if (is_adapter && ends_with(name, "up.weight")) {
      fill_normal(1e-4);
    } else if (is_fusion && ends_with(name, "value.weight")) {
      fill_normal(1e-3);
      v += Mat::Identity(v.rows(), v.cols());
    } else if (ends_with(name, ".weight")) {
      // Fan-in scaling keeps a frozen random encoder informative at toy widths.
      fill_normal(1.0 / std::sqrt(static_cast<double>(v.rows())));
    } else {
      fill_normal(kStd);
    }
  }
}

Param* ModelGraph::p(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter named " + name);
  return const_cast<Param*>(&it->second);
}

void ModelGraph::bind() {
  tok_embed_ = p("embed.token");
  pos_embed_ = p("embed.position");
  embed_ln_gain_ = p("embed.ln.gain");
  embed_ln_bias_ = p("embed.ln.bias");
  auto lin = [&](const std::string& prefix) { return LinearWeights{p(prefix + ".weight"), p(prefix + ".bias")}; };
  blocks_.clear();
  adapter_weights_.clear();
  fusion_weights_.clear();
  for (int l = 0; l < config_.num_layers; ++l) {
    const std::string pre = layer_prefix(l);
    BlockWeights b;
    b.attention = {lin(pre + "attention.query"), lin(pre + "attention.key"), lin(pre + "attention.value"),
                   lin(pre + "attention.output")};
    b.ln1_gain = p(pre + "ln1.gain");
    b.ln1_bias = p(pre + "ln1.bias");
    b.ln2_gain = p(pre + "ln2.gain");
    b.ln2_bias = p(pre + "ln2.bias");
    b.ffn_in = lin(pre + "ffn.in");
    b.ffn_out = lin(pre + "ffn.out");
    blocks_.push_back(b);
    for (const AdapterConfig& a : adapter_configs_) {
      const std::string ap = adapter_prefix(a.name, l);
      adapter_weights_[a.name].push_back(
          AdapterWeights{p(ap + "ln.gain"), p(ap + "ln.bias"), lin(ap + "down"), lin(ap + "up")});
    }
    if (fusion_) {
      fusion_weights_.push_back(
          FusionWeights{lin(fusion_prefix(l) + "query"), lin(fusion_prefix(l) + "key"), lin(fusion_prefix(l) + "value")});
    }
  }
  mlm_head_ = heads_.mlm ? lin("head.mlm") : LinearWeights{};
  task_head_ = heads_.task ? lin("head.task") : LinearWeights{};
}

bool ModelGraph::has_adapter(const std::string& name) const { return adapter_weights_.count(name) > 0; }

std::vector<std::string> ModelGraph::parameter_names() const {
  std::vector<std::string> names;
  names.reserve(params_.size());
  for (const auto& [name, _] : params_) names.push_back(name);
  return names;
}

AdapterWeights ModelGraph::adapter_weights(const std::string& name, int layer) const {
  auto it = adapter_weights_.find(name);
  if (it == adapter_weights_.end()) throw ConfigError("no adapter named '" + name + "'");
  return it->second.at(static_cast<std::size_t>(layer));
}

FusionWeights ModelGraph::fusion_weights(int layer) const {
  if (!fusion_) throw ConfigError("model has no fusion layer");
  return fusion_weights_.at(static_cast<std::size_t>(layer));
}

void ModelGraph::validate(const ForwardPlan& plan) const {
  auto require_adapter = [&](const std::string& name) {
    if (!has_adapter(name)) throw ConfigError("wiring references missing adapter '" + name + "'");
  };
  for (const auto& n : plan.stack) require_adapter(n);
  for (const auto& n : plan.fused) require_adapter(n);
  if (!plan.task_adapter.empty()) require_adapter(plan.task_adapter);
  if (!plan.fused.empty() && !fusion_) throw ConfigError("fused adapters requested but the model has no fusion layer");
  if (!plan.fused.empty() && !plan.stack.empty()) throw ConfigError("stacked and fused adapters cannot be mixed");
  if (plan.objective == Objective::mlm && !heads_.mlm) throw ConfigError("MLM objective needs an MLM head");
  if (plan.objective == Objective::task && !heads_.task) throw ConfigError("task objective needs a task head");
  if (!plan.task_adapter_active.empty() &&
      plan.task_adapter_active.size() != static_cast<std::size_t>(config_.num_layers)) {
    throw ConfigError("task adapter schedule must have one entry per layer");
  }
}

void ModelGraph::validate(const WiringMode& mode) const {
  auto require_adapter = [&](const std::string& name) {
    if (!has_adapter(name)) throw ConfigError("wiring references missing adapter '" + name + "'");
  };
  for (const auto& n : mode.adapters) require_adapter(n);
  switch (mode.kind) {
    case ModeKind::dba_pretrain:
      if (mode.adapters.size() != 1) throw ConfigError("DBA pretraining trains exactly one adapter");
      if (!heads_.mlm) throw ConfigError("DBA pretraining needs an MLM head");
      break;
    case ModeKind::full_finetune:
      if (!mode.task_adapter.empty()) require_adapter(mode.task_adapter);
      break;
    case ModeKind::task_adapter:
      if (!heads_.task) throw ConfigError("task-adapter mode needs a task head");
      if (mode.task_adapter.empty()) throw ConfigError("task-adapter mode needs a task adapter");
      require_adapter(mode.task_adapter);
      if (mode.adapters.size() > 1) throw ConfigError("task-adapter mode stacks at most one frozen DBA");
      break;
    case ModeKind::fusion:
      if (mode.adapters.empty()) throw ConfigError("fusion mode needs at least one DBA");
      if (!fusion_) throw ConfigError("fusion mode needs a fusion layer");
      if (!heads_.task) throw ConfigError("fusion mode needs a task head");
      if (mode.task_adapter.empty()) throw ConfigError("fusion mode needs a task adapter");
      require_adapter(mode.task_adapter);
      break;
  }
  for (const auto& n : mode.adapters) {
    if (n == mode.task_adapter) throw ConfigError("adapter '" + n + "' cannot be both DBA and task adapter");
  }
  validate(plan_for(mode));
}

std::set<std::string> ModelGraph::trainable_mask(const WiringMode& mode) const {
  validate(mode);
  std::set<std::string> groups;
  switch (mode.kind) {
    case ModeKind::dba_pretrain:
      groups = {"adapter." + mode.adapters.front(), "head.mlm"};
      break;
    case ModeKind::full_finetune: {
      const auto names = parameter_names();
      return {names.begin(), names.end()};
    }
    case ModeKind::task_adapter:
      groups = {"adapter." + mode.task_adapter, "head.task"};
      break;
    case ModeKind::fusion:
      groups = {"fusion", "adapter." + mode.task_adapter, "head.task"};
      break;
  }
  std::set<std::string> mask;
  for (const auto& [name, _] : params_) {
    if (groups.count(parameter_group(name))) mask.insert(name);
  }
  return mask;
}

Mat ModelGraph::encode(std::span<const int> ids, std::span<const std::uint8_t> mask, const ForwardPlan& plan,
                       EncodeTrace* trace) const {
  const auto t = static_cast<Eigen::Index>(ids.size());
  if (t == 0) throw std::invalid_argument("cannot encode an empty sequence");
  if (t > config_.max_seq_len) {
    throw std::invalid_argument("sequence length " + std::to_string(t) + " exceeds max_seq_len " +
                                std::to_string(config_.max_seq_len));
  }
  if (mask.size() != ids.size()) throw std::invalid_argument("attention mask shape does not match token ids");
  const int d = config_.hidden_dim;
  Mat e(t, d);
  for (Eigen::Index i = 0; i < t; ++i) {
    const int id = ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= config_.vocab_size) {
      throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of size " +
                              std::to_string(config_.vocab_size));
    }
    e.row(i) = tok_embed_->value.row(id) + pos_embed_->value.row(i);
  }
  if (trace) {
    trace->ids.assign(ids.begin(), ids.end());
    trace->mask.assign(mask.begin(), mask.end());
    trace->plan = plan;
    trace->blocks.assign(blocks_.size(), BlockTrace{});
  }
  Mat x = layer_norm(e, embed_ln_gain_->value, embed_ln_bias_->value, trace ? &trace->embed_ln : nullptr);

  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const BlockWeights& b = blocks_[l];
    BlockTrace local;
    BlockTrace& bt = trace ? trace->blocks[l] : local;
    Mat attn = self_attention(x, mask, b.attention, config_.num_heads, trace ? &bt.attention : nullptr);
    Mat x1 = layer_norm(x + attn, b.ln1_gain->value, b.ln1_bias->value, &bt.ln1);
    Mat pre = linear(x1, b.ffn_in.w->value, b.ffn_in.b->value);
    Mat act = gelu(pre);
    Mat h = x1 + linear(act, b.ffn_out.w->value, b.ffn_out.b->value);
    if (trace) {
      bt.x1 = x1;
      bt.ffn_pre = std::move(pre);
      bt.ffn_act = std::move(act);
    }

    Mat z;
    if (!plan.fused.empty()) {
      std::vector<Mat> outs;
      outs.reserve(plan.fused.size());
      bt.fused.assign(plan.fused.size(), AdapterCache{});
      for (std::size_t i = 0; i < plan.fused.size(); ++i) {
        outs.push_back(adapter_forward(h, adapter_weights_.at(plan.fused[i])[l], trace ? &bt.fused[i] : nullptr));
      }
      z = fusion_forward(h, outs, fusion_weights_[l], trace ? &bt.fusion : nullptr).output;
    } else {
      z = std::move(h);
      bt.stacked.assign(plan.stack.size(), AdapterCache{});
      for (std::size_t i = 0; i < plan.stack.size(); ++i) {
        z = adapter_forward(z, adapter_weights_.at(plan.stack[i])[l], trace ? &bt.stacked[i] : nullptr);
      }
    }
    bt.task_active = !plan.task_adapter.empty() &&
                     (plan.task_adapter_active.empty() || plan.task_adapter_active[l]);
    if (bt.task_active) {
      z = adapter_forward(z, adapter_weights_.at(plan.task_adapter)[l], trace ? &bt.task : nullptr);
    }
    x = layer_norm(z, b.ln2_gain->value, b.ln2_bias->value, trace ? &bt.ln2 : nullptr);
  }
  return x;
}

void ModelGraph::backward_encode(const EncodeTrace& trace, const Mat& dhidden) {
  const ForwardPlan& plan = trace.plan;
  Mat dx = dhidden;
  for (std::size_t li = blocks_.size(); li-- > 0;) {
    const BlockWeights& b = blocks_[li];
    const BlockTrace& bt = trace.blocks[li];
    Mat dz = layer_norm_backward(bt.ln2, b.ln2_gain->value, dx, b.ln2_gain->grad, b.ln2_bias->grad);
    if (bt.task_active) dz = adapter_backward(bt.task, adapter_weights_.at(plan.task_adapter)[li], dz);
    Mat dh;
    if (!plan.fused.empty()) {
      FusionGrads fg = fusion_backward(bt.fusion, fusion_weights_[li], dz);
      dh = std::move(fg.dh);
      for (std::size_t i = 0; i < plan.fused.size(); ++i) {
        dh += adapter_backward(bt.fused[i], adapter_weights_.at(plan.fused[i])[li], fg.dinputs[i]);
      }
    } else {
      for (std::size_t i = plan.stack.size(); i-- > 0;) {
        dz = adapter_backward(bt.stacked[i], adapter_weights_.at(plan.stack[i])[li], dz);
      }
      dh = std::move(dz);
    }
    Mat dact = linear_backward(bt.ffn_act, b.ffn_out.w->value, dh, b.ffn_out.w->grad, b.ffn_out.b->grad);
    Mat dpre = dact.cwiseProduct(gelu_derivative(bt.ffn_pre));
    Mat dx1 = dh + linear_backward(bt.x1, b.ffn_in.w->value, dpre, b.ffn_in.w->grad, b.ffn_in.b->grad);
    Mat dr1 = layer_norm_backward(bt.ln1, b.ln1_gain->value, dx1, b.ln1_gain->grad, b.ln1_bias->grad);
    dx = dr1 + self_attention_backward(bt.attention, b.attention, config_.num_heads, dr1);
  }
  Mat de = layer_norm_backward(trace.embed_ln, embed_ln_gain_->value, dx, embed_ln_gain_->grad, embed_ln_bias_->grad);
  for (Eigen::Index i = 0; i < de.rows(); ++i) {
    tok_embed_->grad.row(trace.ids[static_cast<std::size_t>(i)]) += de.row(i);
    pos_embed_->grad.row(i) += de.row(i);
  }
}

Mat ModelGraph::mlm_logits(const Mat& hidden_rows) const {
  if (!heads_.mlm) throw ConfigError("model has no MLM head");
  return linear(hidden_rows, mlm_head_.w->value, mlm_head_.b->value);
}

Mat ModelGraph::mlm_backward(const Mat& hidden_rows, const Mat& dlogits) {
  return linear_backward(hidden_rows, mlm_head_.w->value, dlogits, mlm_head_.w->grad, mlm_head_.b->grad);
}

namespace {

Eigen::RowVectorXd masked_mean(const Mat& hidden, std::span<const std::uint8_t> mask, double* count_out) {
  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(hidden.cols());
  double count = 0;
  for (Eigen::Index i = 0; i < hidden.rows(); ++i) {
    if (mask[static_cast<std::size_t>(i)]) {
      sum += hidden.row(i);
      count += 1;
    }
  }
  if (count == 0) {
    sum = hidden.colwise().sum();
    count = static_cast<double>(hidden.rows());
  }
  *count_out = count;
  return sum / count;
}

}  // namespace

double ModelGraph::task_logit(const Mat& hidden, std::span<const std::uint8_t> mask) const {
  if (!heads_.task) throw ConfigError("model has no task head");
  double count = 0;
  Eigen::RowVectorXd pooled = masked_mean(hidden, mask, &count);
  return (pooled * task_head_.w->value)(0, 0) + task_head_.b->value(0, 0);
}

Mat ModelGraph::task_backward(const Mat& hidden, std::span<const std::uint8_t> mask, double dlogit) {
  double count = 0;
  Eigen::RowVectorXd pooled = masked_mean(hidden, mask, &count);
  task_head_.w->grad += pooled.transpose() * dlogit;
  task_head_.b->grad(0, 0) += dlogit;
  Eigen::RowVectorXd drow = task_head_.w->value.transpose() * (dlogit / count);
  const bool any = std::any_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; });
  Mat dh = Mat::Zero(hidden.rows(), hidden.cols());
  for (Eigen::Index i = 0; i < hidden.rows(); ++i) {
    if (!any || mask[static_cast<std::size_t>(i)]) dh.row(i) = drow;
  }
  return dh;
}

void ModelGraph::zero_grad() {
  for (auto& [_, param] : params_) param.grad.setZero();
}

ForwardOutput ModelGraph::forward(const Batch& batch, const WiringMode& mode) const {
  validate(mode);
  return forward(batch, plan_for(mode));
}

ForwardOutput ModelGraph::forward(const Batch& batch, const ForwardPlan& plan) const {
  validate(plan);
  if (!batch.mask.empty() && batch.mask.size() != batch.ids.size()) {
    throw std::invalid_argument("attention mask batch size does not match token ids");
  }
  ForwardOutput out;
  for (std::size_t b = 0; b < batch.ids.size(); ++b) {
    const auto& ids = batch.ids[b];
    std::vector<std::uint8_t> ones;
    std::span<const std::uint8_t> mask;
    if (batch.mask.empty()) {
      ones.assign(ids.size(), 1);
      mask = ones;
    } else {
      mask = batch.mask[b];
    }
    Mat hidden = encode(ids, mask, plan);
    if (plan.objective == Objective::mlm) {
      out.mlm_logits.push_back(mlm_logits(hidden));
    } else {
      const double logit = task_logit(hidden, mask);
      out.scores.push_back(heads_.task == TaskKind::classifier ? sigmoid(logit) : logit);
    }
  }
  return out;
}

}  // namespace debias::tinylm

namespace debias::tinylm {

ModelGraph extend(const ModelGraph& base, const std::vector<AdapterConfig>& extra_adapters, bool fusion,
                  const HeadSpec& heads) {
  std::vector<AdapterConfig> adapters = base.adapters();
  adapters.insert(adapters.end(), extra_adapters.begin(), extra_adapters.end());
  HeadSpec merged{heads.mlm || base.heads().mlm, heads.task ? heads.task : base.heads().task};
  if (base.heads().task && heads.task && base.heads().task != heads.task) {
    throw ConfigError("model already has a " + to_string(*base.heads().task) + " head");
  }
  ModelGraph g = ModelGraph::build(base.config(), adapters, fusion || base.has_fusion(), merged);
  for (auto& [name, p] : g.params()) {
    auto it = base.params().find(name);
    if (it != base.params().end()) p.value = it->second.value;
  }
  return g;
}

void import_adapter(ModelGraph& target, const ModelGraph& source, const std::string& name) {
  if (!source.has_adapter(name)) throw ConfigError("source model has no adapter named '" + name + "'");
  if (!target.has_adapter(name)) throw ConfigError("target model has no adapter named '" + name + "'");
  for (const auto& [pname, p] : target.params()) {
    if (parameter_group(pname) != "encoder") continue;
    auto it = source.params().find(pname);
    if (it == source.params().end() || it->second.value != p.value) {
      throw ConfigError("adapter '" + name + "' was trained on a different base model (" + pname + " differs)");
    }
  }
  const std::string prefix = "adapter." + name + ".";
  for (auto& [pname, p] : target.params()) {
    if (pname.rfind(prefix, 0) == 0) p.value = source.params().at(pname).value;
  }
}

}  // namespace debias::tinylm
