#pragma once

#include "debias/tinylm/model.hpp"
#include "debias/tinylm/tokenizer.hpp"

#include <nlohmann/json.hpp>
#include <string>

namespace debias::tinylm {

inline constexpr int kCheckpointFormatVersion = 1;

nlohmann::json to_json(const EncoderConfig& c);
EncoderConfig encoder_from_json(const nlohmann::json& j);
nlohmann::json to_json(const WiringMode& m);
WiringMode wiring_from_json(const nlohmann::json& j);

struct Checkpoint {
  ModelGraph model;
  Vocabulary vocab;
  WiringMode mode;
  nlohmann::json manifest;
};

// Single-file archive: 8-byte magic, u64 little-endian manifest length, JSON
// manifest (configs, wiring mode, seed, vocabulary, name -> shape/offset
// table, format version), then little-endian float32 parameter blobs in
// manifest order.
std::string serialize_checkpoint(const ModelGraph& model, const Vocabulary& vocab, const WiringMode& mode,
                                 const nlohmann::json& extra = nlohmann::json::object());
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::string& path, const ModelGraph& model, const Vocabulary& vocab,
                     const WiringMode& mode, const nlohmann::json& extra = nlohmann::json::object());
Checkpoint load_checkpoint(const std::string& path);

// Rounds every parameter through float32 so in-memory state matches what a
// checkpoint round trip would produce.
void round_to_float32(ModelGraph& model);

}  // namespace debias::tinylm
