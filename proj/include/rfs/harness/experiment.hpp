#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "rfs/harness/train.hpp"

namespace rfs::harness {

/// Everything one training run needs except its seed.
struct Experiment {
  model::ModelConfig model;
  TrainSpec train;
  tasks::Task task = tasks::Task::Copy;
  std::size_t n_train = 10000;
  std::size_t n_test = 2000;
  std::size_t train_max = 10;
  std::size_t test_max = 20;
  // RFS scale chosen from the data: the longest input for ALiBi, 1000 otherwise.
  bool auto_scale = false;
  std::string variant = "baseline";

  /// Desk Copy setup with the given encoding and strategy.
  static Experiment desk(encoding::EncodingKind kind, indexing::Strategy strategy);
};

void to_json(nlohmann::json& j, const Experiment& e);

/// Hex FNV-1a hash of the canonical JSON of the experiment (seed excluded),
/// shared by all seeds of one configuration.
std::string config_hash(const Experiment& e);

struct RunOutput {
  RunRecord record;
  model::Transformer<float> model;
  EvalResult eval;
};

/// Trains on `data` with `seed` and evaluates on its test split. In
/// deterministic mode the wall time is reported as 0.
RunOutput run_on_dataset(const Experiment& e, const tasks::Dataset& data, std::uint64_t seed,
                         bool deterministic = true, const TrainOptions& options = {});

/// Generates the dataset from `seed`, then run_on_dataset.
RunOutput run_experiment(const Experiment& e, std::uint64_t seed, bool deterministic = true,
                         const TrainOptions& options = {});

/// Ablation variants applied to RFS indexing: "baseline" (uniform),
/// "normal", "beta", "normal-cdf", "beta-cdf", "L=<value>".
void apply_variant(Experiment& e, const std::string& variant);
const std::vector<std::string>& known_variants();

/// One record per (variant, seed), variants in the given order, each run
/// using the same seeds.
std::vector<RunRecord> run_ablation(const Experiment& base, const std::vector<std::string>& variants,
                                    const std::vector<std::uint64_t>& seeds,
                                    bool deterministic = true);

struct SweepGrid {
  std::vector<indexing::Strategy> strategies;
  std::vector<encoding::EncodingKind> encodings;
  std::vector<tasks::Task> tasks;
  std::vector<std::uint64_t> seeds;
};

/// Runs the grid strategy x encoding x task x seed. Each run depends only on
/// its own seed, so the order of runs does not change any record.
std::vector<RunRecord> run_sweep(const Experiment& base, const SweepGrid& grid,
                                 bool deterministic = true);

/// Mean OOD average over records.
double mean_ood(const std::vector<RunRecord>& records);

}  // namespace rfs::harness
