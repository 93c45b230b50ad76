#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rfs/harness/optimizer.hpp"
#include "rfs/model/transformer.hpp"
#include "rfs/tasks/tasks.hpp"

namespace rfs::harness {

inline constexpr int kSchemaVersion = 1;

struct TrainSpec {
  double lr = 1e-3;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 1.0;
  std::size_t batch_size = 32;
  std::size_t steps = 5000;
  std::size_t warmup_steps = 250;
  Schedule schedule = Schedule::Constant;
  std::uint64_t seed = 1;

  void validate() const;
  /// lr 3e-5, wd 0.05, betas (0.9, 0.999), clip 1.0, batch 64, 40000 steps,
  /// 2400 warmup.
  static TrainSpec paper();
  /// batch 32, 5000 steps, lr 1e-3 with 250 warmup steps.
  static TrainSpec desk();
};

void to_json(nlohmann::json& j, const TrainSpec& s);
void from_json(const nlohmann::json& j, TrainSpec& s);

/// A padded training batch: inputs are each sequence minus its last token,
/// targets are the next tokens where they belong to the answer, else -1.
struct Batch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<TokenId> tokens;
  std::vector<double> positions;
  std::vector<TokenId> targets;
};

/// Positions for one sequence of `full_length` tokens come from the indexing
/// policy's training indices; pads continue past the last real index.
Batch make_batch(std::span<const tasks::TaskSample* const> samples,
                 const indexing::IndexingSpec& indexing, Rng& index_rng);

struct TrainLog {
  std::vector<double> losses;  // one per step
  std::size_t steps = 0;
  double final_loss = 0.0;
};

struct TrainResult {
  model::Transformer<float> model;
  TrainLog log;
};

struct TrainOptions {
  // Written before aborting on a non-finite loss.
  std::optional<std::filesystem::path> diagnostic_checkpoint;
  // Called every `progress_every` steps with (step, loss).
  std::function<void(std::size_t, double)> progress;
  std::size_t progress_every = 500;
};

/// Thrown when the loss stops being finite; carries the step.
class TrainingDiverged : public RuntimeFailure {
 public:
  TrainingDiverged(std::size_t step, const std::string& what)
      : RuntimeFailure(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// Trains from scratch. Fills cfg.indexing.n_train_ref from the data when it
/// is zero. Randomness comes only from spec.seed.
TrainResult train(model::ModelConfig cfg, const TrainSpec& spec, const tasks::Dataset& data,
                  const TrainOptions& options = {});

/// Greedy-decodes one sample with a generation budget of the target length
/// and returns the generated tokens.
std::vector<TokenId> predict(const model::Transformer<float>& model, const tasks::TaskSample& sample);

struct EvalResult {
  std::map<std::size_t, double> accuracy;       // length -> exact-match ratio
  std::map<std::size_t, std::size_t> counts;    // length -> samples
  std::vector<std::size_t> empty_lengths;       // lengths in [1, test_max] without samples
  double id_average = 0.0;   // mean over lengths <= train_max
  double ood_average = 0.0;  // mean over lengths > train_max
};

/// Per-length accuracy given a correctness verdict per sample.
EvalResult summarize_by_length(std::span<const tasks::TaskSample> samples,
                               std::span<const bool> correct, std::size_t train_max,
                               std::size_t test_max);

/// Exact-match accuracy by problem length over `samples`.
EvalResult evaluate_by_length(const model::Transformer<float>& model,
                              std::span<const tasks::TaskSample> samples, std::size_t train_max,
                              std::size_t test_max);

/// Mean accuracy over lengths in [lo, hi] present in the result.
double mean_accuracy(const EvalResult& r, std::size_t lo, std::size_t hi);

struct RunRecord {
  std::string run_id;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string task;
  std::string strategy;
  std::string encoding;
  std::string variant;
  std::size_t train_max = 0;
  std::size_t test_max = 0;
  std::size_t steps = 0;
  double final_loss = 0.0;
  std::map<std::size_t, double> accuracy;
  std::vector<std::size_t> empty_lengths;
  double id_average = 0.0;
  double ood_average = 0.0;
  double wall_time_s = 0.0;  // 0 in deterministic mode
  int schema_version = kSchemaVersion;
};

void to_json(nlohmann::json& j, const RunRecord& r);
void from_json(const nlohmann::json& j, RunRecord& r);

}  // namespace rfs::harness
