#pragma once

#include <filesystem>
#include <optional>

#include "json.hpp"
#include "rfs/model/transformer.hpp"

namespace rfs::model {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Checkpoint layout:
///   8 bytes  magic "RFSCKPT\0"
///   u32 LE   format version
///   u64 LE   manifest byte length
///   manifest JSON {version, config, metadata, tensors: [{name, shape, offset, count}]}
///   raw little-endian float32 tensor data, offsets relative to the data start
void save_checkpoint(const std::filesystem::path& path, const Transformer<float>& model,
                     const nlohmann::json& metadata = nlohmann::json::object());

struct LoadedCheckpoint {
  Transformer<float> model;
  nlohmann::json metadata;
};

/// Throws RuntimeFailure for missing or corrupt files, and ConfigError when
/// `expected` is given and differs from the embedded config.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 const std::optional<ModelConfig>& expected = std::nullopt);

}  // namespace rfs::model
