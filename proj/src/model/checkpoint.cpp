#include "rfs/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace rfs::model {
namespace {

constexpr char kMagic[8] = {'R', 'F', 'S', 'C', 'K', 'P', 'T', '\0'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <typename U>
void write_pod(std::ostream& os, U value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(U));
}

template <typename U>
U read_pod(std::istream& is) {
  U value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(U));
  if (!is) throw RuntimeFailure("checkpoint: truncated header");
  return value;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Transformer<float>& model,
                     const nlohmann::json& metadata) {
  nlohmann::json manifest;
  manifest["version"] = kCheckpointVersion;
  manifest["config"] = model.config();
  manifest["metadata"] = metadata;
  manifest["tensors"] = nlohmann::json::array();
  std::size_t offset = 0;
  const auto params = model.parameters();
  for (const auto& p : params) {
    manifest["tensors"].push_back({{"name", p.name},
                                   {"shape", p.tensor.shape()},
                                   {"offset", offset},
                                   {"count", p.tensor.numel()}});
    offset += p.tensor.numel() * sizeof(float);
  }
  const std::string text = manifest.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw RuntimeFailure("checkpoint: cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(os, kCheckpointVersion);
  write_pod<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : params) {
    os.write(reinterpret_cast<const char*>(p.tensor.data().data()),
             static_cast<std::streamsize>(p.tensor.numel() * sizeof(float)));
  }
  if (!os) throw RuntimeFailure("checkpoint: write failed for " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 const std::optional<ModelConfig>& expected) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw RuntimeFailure("checkpoint: cannot open " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw RuntimeFailure("checkpoint: bad magic in " + path.string());
  }
  const auto version = read_pod<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw RuntimeFailure("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto len = read_pod<std::uint64_t>(is);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw RuntimeFailure("checkpoint: truncated manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw RuntimeFailure(std::string("checkpoint: corrupt manifest: ") + e.what());
  }
  const auto cfg = manifest.at("config").get<ModelConfig>();
  if (expected && nlohmann::json(*expected) != manifest.at("config")) {
    throw ConfigError("checkpoint: config in " + path.string() +
                      " does not match the requested model config");
  }
  LoadedCheckpoint out{Transformer<float>(cfg, 0), manifest.value("metadata", nlohmann::json::object())};
  const auto data_start = is.tellg();
  auto params = out.model.parameters();
  const auto& entries = manifest.at("tensors");
  if (entries.size() != params.size()) {
    throw RuntimeFailure("checkpoint: tensor count mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = entries[i];
    if (e.at("name").get<std::string>() != params[i].name ||
        e.at("shape").get<Shape>() != params[i].tensor.shape()) {
      throw RuntimeFailure("checkpoint: tensor " + params[i].name + " has unexpected layout");
    }
    is.seekg(data_start + static_cast<std::streamoff>(e.at("offset").get<std::size_t>()));
    auto dst = params[i].tensor.mutable_data();
    is.read(reinterpret_cast<char*>(dst.data()),
            static_cast<std::streamsize>(dst.size() * sizeof(float)));
    if (!is) throw RuntimeFailure("checkpoint: truncated data for " + params[i].name);
  }
  return out;
}

}  // namespace rfs::model
