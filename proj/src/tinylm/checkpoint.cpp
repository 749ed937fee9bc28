#include "debias/tinylm/checkpoint.hpp"

#include "debias/common/io.hpp"

#include <bit>
#include <cstring>
#include <stdexcept>

namespace debias::tinylm {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'D', 'B', 'C', 'K', 'P', 'T', '\0', '\1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(const std::string& in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

}  // namespace

json to_json(const EncoderConfig& c) {
  return {{"num_layers", c.num_layers}, {"hidden_dim", c.hidden_dim}, {"num_heads", c.num_heads},
          {"ff_dim", c.ff_dim},         {"vocab_size", c.vocab_size}, {"max_seq_len", c.max_seq_len},
          {"seed", c.seed}};
}

EncoderConfig encoder_from_json(const json& j) {
  EncoderConfig c;
  c.num_layers = j.at("num_layers").get<int>();
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.ff_dim = j.at("ff_dim").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

json to_json(const WiringMode& m) {
  return {{"kind", to_string(m.kind)},
          {"adapters", m.adapters},
          {"task_adapter", m.task_adapter},
          {"objective", m.objective == Objective::mlm ? "mlm" : "task"}};
}

WiringMode wiring_from_json(const json& j) {
  WiringMode m;
  m.kind = parse_mode_kind(j.at("kind").get<std::string>());
  m.adapters = j.at("adapters").get<std::vector<std::string>>();
  m.task_adapter = j.at("task_adapter").get<std::string>();
  m.objective = j.at("objective").get<std::string>() == "mlm" ? Objective::mlm : Objective::task;
  return m;
}

std::string serialize_checkpoint(const ModelGraph& model, const Vocabulary& vocab, const WiringMode& mode,
                                 const json& extra) {
  json adapters = json::array();
  for (const auto& a : model.adapters()) adapters.push_back({{"name", a.name}, {"reduction_factor", a.reduction_factor}});
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, param] : model.params()) {
    const auto count = static_cast<std::uint64_t>(param.value.size());
    tensors.push_back({{"name", name}, {"shape", {param.value.rows(), param.value.cols()}}, {"offset", offset},
                       {"count", count}});
    offset += count * sizeof(float);
  }
  json manifest = {
      {"format_version", kCheckpointFormatVersion},
      {"encoder", to_json(model.config())},
      {"adapters", adapters},
      {"fusion", model.has_fusion()},
      {"heads", {{"mlm", model.heads().mlm}, {"task", model.heads().task ? json(to_string(*model.heads().task)) : json(nullptr)}}},
      {"mode", to_json(mode)},
      {"seed", model.config().seed},
      {"vocab", vocab.tokens()},
      {"tensors", tensors},
      {"extra", extra},
  };
  const std::string header = manifest.dump();
  std::string out(kMagic, sizeof kMagic);
  put_u64(out, header.size());
  out += header;
  out.reserve(out.size() + offset);
  for (const auto& [name, param] : model.params()) {
    for (Eigen::Index i = 0; i < param.value.size(); ++i) {
      const float f = static_cast<float>(param.value.data()[i]);
      char buf[sizeof f];
      std::memcpy(buf, &f, sizeof f);
      out.append(buf, sizeof buf);
    }
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw std::runtime_error("not a checkpoint archive (bad magic)");
  }
  const std::uint64_t header_len = get_u64(bytes, 8);
  if (16 + header_len > bytes.size()) throw std::runtime_error("truncated checkpoint manifest");
  json manifest = json::parse(bytes.substr(16, header_len));
  if (manifest.at("format_version").get<int>() != kCheckpointFormatVersion) {
    throw std::runtime_error("unsupported checkpoint format version");
  }
  std::vector<AdapterConfig> adapters;
  for (const auto& a : manifest.at("adapters")) {
    adapters.push_back({a.at("name").get<std::string>(), a.at("reduction_factor").get<int>()});
  }
  HeadSpec heads;
  heads.mlm = manifest.at("heads").at("mlm").get<bool>();
  if (!manifest.at("heads").at("task").is_null()) {
    heads.task = parse_task_kind(manifest.at("heads").at("task").get<std::string>());
  }
  ModelGraph model = ModelGraph::build(encoder_from_json(manifest.at("encoder")), adapters,
                                       manifest.at("fusion").get<bool>(), heads);
  const std::size_t blob_start = 16 + header_len;
  std::size_t seen = 0;
  for (const auto& t : manifest.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    auto it = model.params().find(name);
    if (it == model.params().end()) throw std::runtime_error("checkpoint tensor not in model: " + name);
    Mat& v = it->second.value;
    const auto shape = t.at("shape").get<std::vector<Eigen::Index>>();
    if (shape.size() != 2 || shape[0] != v.rows() || shape[1] != v.cols()) {
      throw std::runtime_error("checkpoint tensor shape mismatch: " + name);
    }
    const std::size_t at = blob_start + t.at("offset").get<std::size_t>();
    if (at + static_cast<std::size_t>(v.size()) * sizeof(float) > bytes.size()) {
      throw std::runtime_error("truncated checkpoint tensor: " + name);
    }
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      float f;
      std::memcpy(&f, bytes.data() + at + static_cast<std::size_t>(i) * sizeof f, sizeof f);
      v.data()[i] = f;
    }
    ++seen;
  }
  if (seen != model.params().size()) throw std::runtime_error("checkpoint is missing tensors");
  Vocabulary vocab = Vocabulary::from_tokens(manifest.at("vocab").get<std::vector<std::string>>());
  WiringMode mode = wiring_from_json(manifest.at("mode"));
  return {std::move(model), std::move(vocab), std::move(mode), std::move(manifest)};
}

void save_checkpoint(const std::string& path, const ModelGraph& model, const Vocabulary& vocab,
                     const WiringMode& mode, const json& extra) {
  write_file_atomic(path, serialize_checkpoint(model, vocab, mode, extra));
}

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file(path)); }

void round_to_float32(ModelGraph& model) {
  for (auto& [_, param] : model.params()) {
    for (Eigen::Index i = 0; i < param.value.size(); ++i) {
      param.value.data()[i] = static_cast<float>(param.value.data()[i]);
    }
  }
}

}  // namespace debias::tinylm
