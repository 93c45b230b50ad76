#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "rfs/harness/experiment.hpp"

namespace rfs::io {

inline constexpr int kArtifactSchemaVersion = 1;

struct DataSettings {
  tasks::Task task = tasks::Task::Copy;
  std::size_t n_train = 10000;
  std::size_t n_test = 2000;
  std::size_t train_max = 10;
  std::size_t test_max = 20;
  std::uint64_t seed = 1;
};

struct SweepSettings {
  std::vector<std::string> strategies{"extension", "rfs"};
  std::vector<std::string> encodings{"rope"};
  std::vector<std::string> tasks{"copy"};
  std::vector<std::uint64_t> seeds{1, 2, 3};
};

struct AblationSettings {
  std::vector<std::string> variants{"baseline", "normal", "normal-cdf", "L=10"};
  std::vector<std::uint64_t> seeds{1, 2, 3};
};

struct SpectrumSettings {
  std::size_t d = 256;
  double range_L = 2048.0;
  double tolerance = 1e-6;
  std::vector<std::size_t> lengths{256, 512, 768, 1024, 1280, 1536, 1792, 2048};
  std::vector<std::string> strategies{"extension", "rfs"};
};

/// Complete description of a lab invocation. Documents are parsed over a
/// named preset, so missing keys keep the preset's value and unknown keys
/// are rejected with their JSON path.
struct RunConfig {
  std::string preset = "desk";
  model::ModelConfig model;
  harness::TrainSpec train;
  DataSettings data;
  bool auto_scale = false;  // "scale_L": "auto"
  SweepSettings sweep;
  AblationSettings ablation;
  SpectrumSettings spectrum;
  std::string output_dir = "runs";
  bool deterministic = true;

  /// "desk", "paper" or "fig6".
  static RunConfig from_preset(const std::string& name);

  /// The single-run experiment this config describes.
  harness::Experiment experiment() const;
  /// Hash of the canonical serialized config.
  std::string hash() const;
};

nlohmann::json to_json(const RunConfig& c);
/// Parses `doc` over the preset named by doc["preset"] (default "desk").
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);

/// Paper-preset split sizes and lengths per task.
DataSettings paper_data(tasks::Task task);

/// Output root: $RFS_OUTPUT_ROOT when set, else the current directory.
std::filesystem::path output_root();
/// Resolves a config's output_dir against the output root.
std::filesystem::path output_dir(const RunConfig& c);

}  // namespace rfs::io
