#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "ambl/transformer.hpp"
#include "json.hpp"

// Binary container:
//   "AMBL" | u32 version | u64 metadata length | metadata JSON
//   u32 tensor count | per tensor: u32 name length, name, u32 rank, u32 dims[rank], f32 data
// All integers and floats little-endian.
namespace ambl::ckpt {

inline constexpr uint32_t kFormatVersion = 1;

enum class ErrorKind { Io, BadMagic, VersionMismatch, Truncated, ShapeMismatch, Malformed };

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

nlohmann::json hyperparams_to_json(const model::HyperParams& hp);
model::HyperParams hyperparams_from_json(const nlohmann::json& j);

// `metadata` may carry anything; a "hyperparams" key is always written from
// model.hp and overrides any caller value.
std::string encode_checkpoint(const model::ModelRecord& model, const nlohmann::json& metadata);
void save_checkpoint(const model::ModelRecord& model, const nlohmann::json& metadata, const std::filesystem::path& path);

struct LoadedCheckpoint {
  model::ModelRecord model;
  nlohmann::json metadata;
};

LoadedCheckpoint decode_checkpoint(std::string_view bytes, const std::string& origin = "<memory>");
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ambl::ckpt
