#include "rfs/harness/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "rfs/model/checkpoint.hpp"
#include "rfs/numeric/ops.hpp"

namespace rfs::harness {

using nlohmann::json;

void TrainSpec::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train: lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("train: eps must be positive");
  if (!(grad_clip > 0.0)) throw ConfigError("train: grad_clip must be positive");
  if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
}

TrainSpec TrainSpec::paper() {
  TrainSpec s;
  s.lr = 3e-5;
  s.weight_decay = 0.05;
  s.beta1 = 0.9;
  s.beta2 = 0.999;
  s.grad_clip = 1.0;
  s.batch_size = 64;
  s.steps = 40000;
  s.warmup_steps = 2400;
  return s;
}

TrainSpec TrainSpec::desk() { return TrainSpec{}; }

void to_json(json& j, const TrainSpec& s) {
  j = json{{"lr", s.lr},
           {"weight_decay", s.weight_decay},
           {"beta1", s.beta1},
           {"beta2", s.beta2},
           {"eps", s.eps},
           {"grad_clip", s.grad_clip},
           {"batch_size", s.batch_size},
           {"steps", s.steps},
           {"warmup_steps", s.warmup_steps},
           {"schedule", std::string(to_string(s.schedule))},
           {"seed", s.seed}};
}

void from_json(const json& j, TrainSpec& s) {
  s = TrainSpec{};
  s.lr = j.value("lr", s.lr);
  s.weight_decay = j.value("weight_decay", s.weight_decay);
  s.beta1 = j.value("beta1", s.beta1);
  s.beta2 = j.value("beta2", s.beta2);
  s.eps = j.value("eps", s.eps);
  s.grad_clip = j.value("grad_clip", s.grad_clip);
  s.batch_size = j.value("batch_size", s.batch_size);
  s.steps = j.value("steps", s.steps);
  s.warmup_steps = j.value("warmup_steps", s.warmup_steps);
  if (j.contains("schedule")) s.schedule = parse_schedule(j.at("schedule").get<std::string>());
  s.seed = j.value("seed", s.seed);
}

Batch make_batch(std::span<const tasks::TaskSample* const> samples,
                 const indexing::IndexingSpec& indexing, Rng& index_rng) {
  Batch b;
  b.batch = samples.size();
  for (const auto* s : samples) {
    b.seq = std::max(b.seq, s->prompt_ids.size() + s->target_ids.size() - 1);
  }
  b.tokens.assign(b.batch * b.seq, tasks::Vocab::kPad);
  b.positions.assign(b.batch * b.seq, 0.0);
  b.targets.assign(b.batch * b.seq, -1);
  for (std::size_t r = 0; r < b.batch; ++r) {
    const auto& s = *samples[r];
    const auto full = s.full_sequence();
    const std::size_t n = full.size();
    const auto pos = indexing.train(n, index_rng).values;
    const std::size_t len = n - 1;
    const std::size_t base = r * b.seq;
    for (std::size_t t = 0; t < len; ++t) {
      b.tokens[base + t] = full[t];
      b.positions[base + t] = pos[t];
      if (t + 1 >= s.prompt_ids.size()) b.targets[base + t] = full[t + 1];
    }
    const double last = len > 0 ? pos[len - 1] : -1.0;
    for (std::size_t t = len; t < b.seq; ++t) {
      b.positions[base + t] = last + static_cast<double>(t - len + 1);
    }
  }
  return b;
}

namespace {

void check_vocab(const model::ModelConfig& cfg, const tasks::Dataset& data) {
  for (const auto* split : {&data.train, &data.test}) {
    for (const auto& s : *split) {
      for (auto id : s.full_sequence()) {
        if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) {
          throw ConfigError("train: token id " + std::to_string(id) +
                            " outside the model vocabulary of " +
                            std::to_string(cfg.vocab_size));
        }
      }
    }
  }
}

}  // namespace

TrainResult train(model::ModelConfig cfg, const TrainSpec& spec, const tasks::Dataset& data,
                  const TrainOptions& options) {
  spec.validate();
  if (data.train.empty()) throw ConfigError("train: the training split is empty");
  if (cfg.indexing.n_train_ref == 0) cfg.indexing.n_train_ref = data.max_train_sequence();
  cfg.validate();
  check_vocab(cfg, data);

  TrainResult result{model::Transformer<float>(cfg, derive_seed(spec.seed, "model", 0)), {}};
  auto& net = result.model;

  const auto named = net.parameters();
  std::vector<Tensor<float>> params;
  std::vector<bool> decay;
  for (const auto& p : named) {
    params.push_back(p.tensor);
    decay.push_back(p.tensor.rank() == 2);
  }
  AdamW<float> opt(params, decay,
                   AdamWConfig{spec.beta1, spec.beta2, spec.eps, spec.weight_decay});

  Rng order_rng(derive_seed(spec.seed, "order", 0));
  Rng index_rng(derive_seed(spec.seed, "indices", 0));
  Rng dropout_rng(derive_seed(spec.seed, "dropout", 0));
  Rng* drop = cfg.dropout > 0.0 ? &dropout_rng : nullptr;

  // Epoch-wise shuffled order over the training split.
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  std::vector<const tasks::TaskSample*> picked(spec.batch_size);
  result.log.losses.reserve(spec.steps);
  for (std::size_t step = 1; step <= spec.steps; ++step) {
    for (auto& slot : picked) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), order_rng);
        cursor = 0;
      }
      slot = &data.train[order[cursor++]];
    }
    const Batch batch = make_batch(picked, cfg.indexing, index_rng);
    opt.zero_grad();
    auto logits = net.forward(batch.tokens, batch.positions, batch.batch, batch.seq, drop);
    auto loss = ops::cross_entropy(logits, batch.targets);
    const double value = static_cast<double>(loss.item());
    if (!std::isfinite(value)) {
      std::string where;
      if (options.diagnostic_checkpoint) {
        json meta{{"reason", "non-finite loss"}, {"step", step}};
        model::save_checkpoint(*options.diagnostic_checkpoint, net, meta);
        where = "; diagnostic checkpoint at " + options.diagnostic_checkpoint->string();
      }
      throw TrainingDiverged(step, "train: loss became non-finite at step " +
                                       std::to_string(step) + where);
    }
    backward(loss);
    clip_grad_norm<float>(params, spec.grad_clip);
    opt.step(learning_rate_at(step, spec.lr, spec.warmup_steps, spec.steps, spec.schedule));
    result.log.losses.push_back(value);
    if (options.progress && options.progress_every > 0 && step % options.progress_every == 0) {
      options.progress(step, value);
    }
  }
  opt.zero_grad();
  result.log.steps = spec.steps;
  result.log.final_loss = result.log.losses.empty() ? 0.0 : result.log.losses.back();
  return result;
}

std::vector<TokenId> predict(const model::Transformer<float>& model,
                             const tasks::TaskSample& sample) {
  auto out = model::greedy_decode(model, std::span<const TokenId>(sample.prompt_ids),
                                  sample.target_ids.size(), tasks::Vocab::kEos);
  return {out.begin() + static_cast<std::ptrdiff_t>(sample.prompt_ids.size()), out.end()};
}

EvalResult summarize_by_length(std::span<const tasks::TaskSample> samples,
                               std::span<const bool> correct, std::size_t train_max,
                               std::size_t test_max) {
  if (samples.size() != correct.size()) {
    throw ShapeError("summarize_by_length: " + std::to_string(samples.size()) + " samples but " +
                     std::to_string(correct.size()) + " verdicts");
  }
  EvalResult r;
  std::map<std::size_t, std::size_t> hits;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    ++r.counts[samples[i].length];
    if (correct[i]) ++hits[samples[i].length];
  }
  for (const auto& [len, n] : r.counts) {
    r.accuracy[len] = static_cast<double>(hits[len]) / static_cast<double>(n);
  }
  for (std::size_t len = 1; len <= test_max; ++len) {
    if (!r.counts.contains(len)) r.empty_lengths.push_back(len);
  }
  r.id_average = mean_accuracy(r, 1, train_max);
  r.ood_average = mean_accuracy(r, train_max + 1, std::numeric_limits<std::size_t>::max());
  return r;
}

EvalResult evaluate_by_length(const model::Transformer<float>& model,
                              std::span<const tasks::TaskSample> samples, std::size_t train_max,
                              std::size_t test_max) {
  // std::vector<bool> is not contiguous, so verdicts live in a plain array.
  auto flags = std::make_unique<bool[]>(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    flags[i] = tasks::exact_match(predict(model, samples[i]), samples[i].target_ids);
  }
  return summarize_by_length(samples, std::span<const bool>(flags.get(), samples.size()),
                             train_max, test_max);
}

double mean_accuracy(const EvalResult& r, std::size_t lo, std::size_t hi) {
  double total = 0.0;
  std::size_t n = 0;
  for (auto it = r.accuracy.lower_bound(lo); it != r.accuracy.end() && it->first <= hi; ++it) {
    total += it->second;
    ++n;
  }
  return n == 0 ? 0.0 : total / static_cast<double>(n);
}

void to_json(json& j, const RunRecord& r) {
  json acc = json::object();
  for (const auto& [len, a] : r.accuracy) acc[std::to_string(len)] = a;
  j = json{{"run_id", r.run_id},
           {"config_hash", r.config_hash},
           {"seed", r.seed},
           {"task", r.task},
           {"strategy", r.strategy},
           {"encoding", r.encoding},
           {"variant", r.variant},
           {"train_max", r.train_max},
           {"test_max", r.test_max},
           {"steps", r.steps},
           {"final_loss", r.final_loss},
           {"accuracy", acc},
           {"empty_lengths", r.empty_lengths},
           {"id_average", r.id_average},
           {"ood_average", r.ood_average},
           {"wall_time_s", r.wall_time_s},
           {"schema_version", r.schema_version}};
}

void from_json(const json& j, RunRecord& r) {
  r = RunRecord{};
  j.at("run_id").get_to(r.run_id);
  j.at("config_hash").get_to(r.config_hash);
  j.at("seed").get_to(r.seed);
  j.at("task").get_to(r.task);
  j.at("strategy").get_to(r.strategy);
  j.at("encoding").get_to(r.encoding);
  r.variant = j.value("variant", std::string{});
  j.at("train_max").get_to(r.train_max);
  j.at("test_max").get_to(r.test_max);
  r.steps = j.value("steps", std::size_t{0});
  r.final_loss = j.value("final_loss", 0.0);
  for (const auto& [k, v] : j.at("accuracy").items()) {
    r.accuracy[static_cast<std::size_t>(std::stoull(k))] = v.get<double>();
  }
  r.empty_lengths = j.value("empty_lengths", std::vector<std::size_t>{});
  r.id_average = j.value("id_average", 0.0);
  j.at("ood_average").get_to(r.ood_average);
  r.wall_time_s = j.value("wall_time_s", 0.0);
  r.schema_version = j.value("schema_version", kSchemaVersion);
}

}  // namespace rfs::harness
