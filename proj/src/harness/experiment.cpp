#include "rfs/harness/experiment.hpp"

#include <chrono>

namespace rfs::harness {

using nlohmann::json;

Experiment Experiment::desk(encoding::EncodingKind kind, indexing::Strategy strategy) {
  Experiment e;
  e.model = model::ModelConfig::desk(tasks::Vocab::standard().size(), kind);
  e.model.indexing.strategy = strategy;
  e.train = TrainSpec::desk();
  e.auto_scale = kind == encoding::EncodingKind::ALiBi;
  return e;
}

void to_json(json& j, const Experiment& e) {
  json train = e.train;
  train.erase("seed");
  j = json{{"model", e.model},
           {"train", train},
           {"task", std::string(tasks::to_string(e.task))},
           {"n_train", e.n_train},
           {"n_test", e.n_test},
           {"train_max", e.train_max},
           {"test_max", e.test_max},
           {"auto_scale", e.auto_scale},
           {"variant", e.variant}};
}

std::string config_hash(const Experiment& e) { return hex64(fnv1a64(json(e).dump())); }

RunOutput run_on_dataset(const Experiment& e, const tasks::Dataset& data, std::uint64_t seed,
                         bool deterministic, const TrainOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  model::ModelConfig cfg = e.model;
  cfg.vocab_size = tasks::Vocab::standard().size();
  if (e.auto_scale) {
    cfg.indexing.scale_L = cfg.encoding.kind == encoding::EncodingKind::ALiBi
                               ? static_cast<double>(data.max_sequence())
                               : 1000.0;
  }
  TrainSpec spec = e.train;
  spec.seed = seed;
  TrainResult trained = train(cfg, spec, data, options);
  EvalResult eval = evaluate_by_length(trained.model, data.test, data.train_max, data.test_max);

  RunRecord r;
  r.config_hash = config_hash(e);
  r.seed = seed;
  r.task = std::string(tasks::to_string(data.task));
  r.strategy = std::string(indexing::to_string(cfg.indexing.strategy));
  r.encoding = std::string(encoding::to_string(cfg.encoding.kind));
  r.variant = e.variant;
  r.run_id = r.task + "-" + r.strategy + "-" + r.encoding + "-" + r.variant + "-s" +
             std::to_string(seed) + "-" + r.config_hash.substr(0, 8);
  r.train_max = data.train_max;
  r.test_max = data.test_max;
  r.steps = trained.log.steps;
  r.final_loss = trained.log.final_loss;
  r.accuracy = eval.accuracy;
  r.empty_lengths = eval.empty_lengths;
  r.id_average = eval.id_average;
  r.ood_average = eval.ood_average;
  r.wall_time_s = deterministic
                      ? 0.0
                      : std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                            .count();
  return RunOutput{std::move(r), std::move(trained.model), std::move(eval)};
}

RunOutput run_experiment(const Experiment& e, std::uint64_t seed, bool deterministic,
                         const TrainOptions& options) {
  const tasks::Dataset data =
      tasks::make_split(e.task, e.n_train, e.n_test, e.train_max, e.test_max, seed);
  return run_on_dataset(e, data, seed, deterministic, options);
}

const std::vector<std::string>& known_variants() {
  static const std::vector<std::string> v{"baseline",   "normal",   "beta", "normal-cdf",
                                          "beta-cdf",   "L=10",     "L=100000"};
  return v;
}

void apply_variant(Experiment& e, const std::string& variant) {
  auto& idx = e.model.indexing;
  idx.strategy = indexing::Strategy::RFS;
  if (variant == "baseline") {
    idx.distribution = indexing::TrainDistribution::uniform();
  } else if (variant == "normal" || variant == "normal-cdf") {
    idx.distribution = indexing::TrainDistribution::normal(0.5, 0.2);
    idx.distribution.cdf_matched_inference = variant == "normal-cdf";
  } else if (variant == "beta" || variant == "beta-cdf") {
    idx.distribution = indexing::TrainDistribution::beta_dist(0.5, 0.5);
    idx.distribution.cdf_matched_inference = variant == "beta-cdf";
  } else if (variant.starts_with("L=")) {
    double L = 0.0;
    try {
      std::size_t used = 0;
      L = std::stod(variant.substr(2), &used);
      if (used != variant.size() - 2) L = 0.0;
    } catch (const std::exception&) {
      L = 0.0;
    }
    if (!(L > 0.0)) throw ConfigError("ablation: bad scale in variant '" + variant + "'");
    idx.distribution = indexing::TrainDistribution::uniform();
    idx.scale_L = L;
    e.auto_scale = false;
  } else {
    throw ConfigError("ablation: unknown variant '" + variant + "'");
  }
  e.variant = variant;
}

std::vector<RunRecord> run_ablation(const Experiment& base, const std::vector<std::string>& variants,
                                    const std::vector<std::uint64_t>& seeds, bool deterministic) {
  std::vector<RunRecord> out;
  for (const auto& v : variants) {
    Experiment e = base;
    apply_variant(e, v);
    for (auto seed : seeds) out.push_back(run_experiment(e, seed, deterministic).record);
  }
  return out;
}

std::vector<RunRecord> run_sweep(const Experiment& base, const SweepGrid& grid,
                                 bool deterministic) {
  std::vector<RunRecord> out;
  for (auto task : grid.tasks)
    for (auto kind : grid.encodings)
      for (auto strategy : grid.strategies) {
        Experiment e = base;
        e.task = task;
        const std::size_t rotary = base.model.encoding.rotary_dim;
        e.model.encoding = encoding::EncodingSpec::make(
            kind, e.model.d_model, e.model.n_heads,
            kind == encoding::EncodingKind::RoPE ? rotary : 0, base.model.encoding.base);
        e.model.indexing.strategy = strategy;
        e.auto_scale = kind == encoding::EncodingKind::ALiBi;
        for (auto seed : grid.seeds) out.push_back(run_experiment(e, seed, deterministic).record);
      }
  return out;
}

double mean_ood(const std::vector<RunRecord>& records) {
  if (records.empty()) return 0.0;
  double total = 0.0;
  for (const auto& r : records) total += r.ood_average;
  return total / static_cast<double>(records.size());
}

}  // namespace rfs::harness
