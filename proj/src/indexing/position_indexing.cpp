#include "rfs/indexing/position_indexing.hpp"

#include <algorithm>
#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

namespace rfs::indexing {

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::RFS: return "rfs";
    case Strategy::Extension: return "extension";
    case Strategy::Interpolation: return "interpolation";
    case Strategy::RandomInt: return "random_int";
  }
  return "?";
}

std::string_view to_string(Phase p) { return p == Phase::Train ? "train" : "inference"; }

std::string_view to_string(DistKind k) {
  switch (k) {
    case DistKind::Uniform: return "uniform";
    case DistKind::Normal: return "normal";
    case DistKind::Beta: return "beta";
  }
  return "?";
}

Strategy parse_strategy(std::string_view s) {
  if (s == "rfs") return Strategy::RFS;
  if (s == "extension") return Strategy::Extension;
  if (s == "interpolation") return Strategy::Interpolation;
  if (s == "random_int") return Strategy::RandomInt;
  throw ConfigError("unknown indexing strategy '" + std::string(s) + "'");
}

DistKind parse_dist_kind(std::string_view s) {
  if (s == "uniform") return DistKind::Uniform;
  if (s == "normal") return DistKind::Normal;
  if (s == "beta") return DistKind::Beta;
  throw ConfigError("unknown train distribution '" + std::string(s) + "'");
}

namespace {

Phase parse_phase(std::string_view s) {
  if (s == "train") return Phase::Train;
  if (s == "inference") return Phase::Inference;
  throw ConfigError("unknown phase '" + std::string(s) + "'");
}

double clamp_unit(double v) {
  if (std::isnan(v)) return 0.0;
  return std::clamp(v, 0.0, kUnitUpper);
}

}  // namespace

TrainDistribution TrainDistribution::normal(double mean, double stddev) {
  TrainDistribution d;
  d.kind = DistKind::Normal;
  d.mean = mean;
  d.stddev = stddev;
  return d;
}

TrainDistribution TrainDistribution::beta_dist(double alpha, double beta) {
  TrainDistribution d;
  d.kind = DistKind::Beta;
  d.alpha = alpha;
  d.beta = beta;
  return d;
}

void TrainDistribution::validate() const {
  if (kind == DistKind::Normal && !(stddev > 0.0)) {
    throw ConfigError("normal train distribution needs stddev > 0");
  }
  if (kind == DistKind::Beta && !(alpha > 0.0 && beta > 0.0)) {
    throw ConfigError("beta train distribution needs alpha, beta > 0");
  }
}

double TrainDistribution::sample(Rng& rng) const {
  switch (kind) {
    case DistKind::Uniform:
      return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    case DistKind::Normal:
      return std::normal_distribution<double>(mean, stddev)(rng);
    case DistKind::Beta: {
      const double x = std::gamma_distribution<double>(alpha, 1.0)(rng);
      const double y = std::gamma_distribution<double>(beta, 1.0)(rng);
      return x + y > 0.0 ? x / (x + y) : 0.0;
    }
  }
  return 0.0;
}

double TrainDistribution::quantile(double u) const {
  u = std::clamp(u, 0.0, 1.0);
  switch (kind) {
    case DistKind::Uniform:
      return u;
    case DistKind::Normal:
      if (u <= 0.0) return -INFINITY;
      if (u >= 1.0) return INFINITY;
      return boost::math::quantile(boost::math::normal_distribution<double>(mean, stddev), u);
    case DistKind::Beta:
      return boost::math::quantile(boost::math::beta_distribution<double>(alpha, beta), u);
  }
  return u;
}

double TrainDistribution::cdf(double x) const {
  switch (kind) {
    case DistKind::Uniform:
      return std::clamp(x, 0.0, 1.0);
    case DistKind::Normal:
      return boost::math::cdf(boost::math::normal_distribution<double>(mean, stddev), x);
    case DistKind::Beta:
      if (x <= 0.0) return 0.0;
      if (x >= 1.0) return 1.0;
      return boost::math::cdf(boost::math::beta_distribution<double>(alpha, beta), x);
  }
  return x;
}

std::string TrainDistribution::label() const {
  std::string out;
  char buf[64];
  switch (kind) {
    case DistKind::Uniform: out = "uniform"; break;
    case DistKind::Normal:
      std::snprintf(buf, sizeof(buf), "normal(%g,%g)", mean, stddev);
      out = buf;
      break;
    case DistKind::Beta:
      std::snprintf(buf, sizeof(buf), "beta(%g,%g)", alpha, beta);
      out = buf;
      break;
  }
  if (cdf_matched_inference) out += "-cdf";
  return out;
}

bool IndexSequence::non_decreasing() const {
  return std::is_sorted(values.begin(), values.end());
}

void to_json(nlohmann::json& j, const IndexSequence& seq) {
  j = nlohmann::json{{"strategy", to_string(seq.strategy)},
                     {"phase", to_string(seq.phase)},
                     {"L", seq.scale_L},
                     {"n_train_ref", seq.n_train_ref},
                     {"values", seq.values}};
}

void from_json(const nlohmann::json& j, IndexSequence& seq) {
  seq.strategy = parse_strategy(j.at("strategy").get<std::string>());
  seq.phase = parse_phase(j.at("phase").get<std::string>());
  seq.scale_L = j.at("L").get<double>();
  seq.n_train_ref = j.value("n_train_ref", std::size_t{0});
  seq.values = j.at("values").get<std::vector<double>>();
}

IndexSequence rfs_from_draws(std::vector<double> draws) {
  if (draws.empty()) throw ConfigError("rfs_train_indices: n_tr must be >= 1");
  for (auto& v : draws) v = clamp_unit(v);
  std::sort(draws.begin(), draws.end());
  for (std::size_t i = 1; i < draws.size(); ++i) {
    if (draws[i] <= draws[i - 1]) draws[i] = std::nextafter(draws[i - 1], 1.0);
  }
  IndexSequence seq;
  seq.n_train_ref = draws.size();
  seq.values = std::move(draws);
  seq.strategy = Strategy::RFS;
  seq.phase = Phase::Train;
  seq.scale_L = 1.0;
  return seq;
}

IndexSequence rfs_train_indices(std::size_t n_tr, const TrainDistribution& dist, Rng& rng) {
  if (n_tr == 0) throw ConfigError("rfs_train_indices: n_tr must be >= 1");
  std::vector<double> draws(n_tr);
  for (auto& v : draws) v = dist.sample(rng);
  return rfs_from_draws(std::move(draws));
}

IndexSequence rfs_inference_indices(std::size_t n_tr, std::size_t n_in) {
  if (n_tr == 0 || n_in == 0) {
    throw ConfigError("rfs_inference_indices: n_tr and n_in must be >= 1");
  }
  const double denom = 2.0 * static_cast<double>(std::max(n_tr, n_in));
  IndexSequence seq;
  seq.values.resize(n_in);
  for (std::size_t i = 1; i <= n_in; ++i) {
    seq.values[i - 1] = static_cast<double>(2 * i - 1) / denom;
  }
  seq.strategy = Strategy::RFS;
  seq.phase = Phase::Inference;
  seq.n_train_ref = n_tr;
  return seq;
}

IndexSequence cdf_matched_inference_indices(std::size_t n_tr, std::size_t n_in,
                                            const TrainDistribution& dist) {
  IndexSequence seq = rfs_inference_indices(n_tr, n_in);
  if (dist.kind == DistKind::Uniform) return seq;
  for (auto& v : seq.values) v = clamp_unit(dist.quantile(v));
  return seq;
}

IndexSequence scale(IndexSequence seq, double L) {
  if (!(L > 0.0) || !std::isfinite(L)) {
    throw ConfigError("scale: L must be a positive finite real");
  }
  for (auto& v : seq.values) v *= L;
  seq.scale_L *= L;
  return seq;
}

IndexSequence extension_indices(std::size_t n_in) {
  if (n_in == 0) throw ConfigError("extension_indices: n_in must be >= 1");
  IndexSequence seq;
  seq.values.resize(n_in);
  std::iota(seq.values.begin(), seq.values.end(), 0.0);
  seq.strategy = Strategy::Extension;
  seq.phase = Phase::Inference;
  return seq;
}

IndexSequence interpolation_indices(std::size_t n_in, std::size_t n_train_max) {
  if (n_train_max == 0) throw ConfigError("interpolation_indices: n_train_max must be >= 1");
  IndexSequence seq = extension_indices(n_in);
  seq.strategy = Strategy::Interpolation;
  seq.n_train_ref = n_train_max;
  if (n_in > n_train_max) {
    const double ratio = static_cast<double>(n_train_max) / static_cast<double>(n_in);
    for (auto& v : seq.values) v *= ratio;
  }
  return seq;
}

IndexSequence random_int_from_selection(std::vector<std::size_t> chosen, std::size_t l_max) {
  if (chosen.empty()) throw ConfigError("random_int_train_indices: n_tr must be >= 1");
  std::sort(chosen.begin(), chosen.end());
  if (std::adjacent_find(chosen.begin(), chosen.end()) != chosen.end()) {
    throw ConfigError("random_int_train_indices: selection must be distinct");
  }
  if (chosen.front() < 1 || chosen.back() > l_max) {
    throw ConfigError("random_int_train_indices: selection outside {1.." +
                      std::to_string(l_max) + "}");
  }
  IndexSequence seq;
  seq.values.assign(chosen.begin(), chosen.end());
  seq.strategy = Strategy::RandomInt;
  seq.phase = Phase::Train;
  seq.n_train_ref = l_max;
  return seq;
}

IndexSequence random_int_train_indices(std::size_t n_tr, std::size_t l_max, Rng& rng) {
  if (n_tr == 0) throw ConfigError("random_int_train_indices: n_tr must be >= 1");
  if (n_tr > l_max) {
    throw ConfigError("random_int: sequence length " + std::to_string(n_tr) +
                      " exceeds the strategy's maximum length " + std::to_string(l_max));
  }
  std::vector<std::size_t> pool(l_max);
  std::iota(pool.begin(), pool.end(), std::size_t{1});
  std::vector<std::size_t> chosen;
  chosen.reserve(n_tr);
  std::sample(pool.begin(), pool.end(), std::back_inserter(chosen), n_tr, rng);
  return random_int_from_selection(std::move(chosen), l_max);
}

IndexSequence random_int_inference_indices(std::size_t n_in, std::size_t l_max) {
  if (n_in == 0) throw ConfigError("random_int_inference_indices: n_in must be >= 1");
  if (n_in > l_max) {
    throw ConfigError("random_int: context length " + std::to_string(n_in) +
                      " exceeds the strategy's maximum length " + std::to_string(l_max));
  }
  IndexSequence seq;
  seq.values.resize(n_in);
  std::iota(seq.values.begin(), seq.values.end(), 1.0);
  seq.strategy = Strategy::RandomInt;
  seq.phase = Phase::Inference;
  seq.n_train_ref = l_max;
  return seq;
}

void IndexingSpec::validate() const {
  distribution.validate();
  if (!(scale_L > 0.0)) throw ConfigError("indexing: scale L must be > 0");
  if (strategy == Strategy::RandomInt && random_int_max == 0) {
    throw ConfigError("indexing: random_int_max must be >= 1");
  }
}

IndexSequence IndexingSpec::train(std::size_t n, Rng& rng) const {
  IndexSequence seq;
  switch (strategy) {
    case Strategy::RFS:
      seq = scale(rfs_train_indices(n, distribution, rng), scale_L);
      break;
    case Strategy::Extension:
    case Strategy::Interpolation:
      seq = extension_indices(n);
      seq.strategy = strategy;
      break;
    case Strategy::RandomInt:
      seq = random_int_train_indices(n, random_int_max, rng);
      break;
  }
  seq.phase = Phase::Train;
  return seq;
}

IndexSequence IndexingSpec::inference(std::size_t n_in) const {
  switch (strategy) {
    case Strategy::RFS: {
      if (n_train_ref == 0) throw ConfigError("indexing: rfs inference needs n_train_ref");
      IndexSequence seq = distribution.cdf_matched_inference
                              ? cdf_matched_inference_indices(n_train_ref, n_in, distribution)
                              : rfs_inference_indices(n_train_ref, n_in);
      return scale(std::move(seq), scale_L);
    }
    case Strategy::Extension:
      return extension_indices(n_in);
    case Strategy::Interpolation:
      if (n_train_ref == 0) {
        throw ConfigError("indexing: interpolation inference needs n_train_ref");
      }
      return interpolation_indices(n_in, n_train_ref);
    case Strategy::RandomInt:
      return random_int_inference_indices(n_in, random_int_max);
  }
  throw ConfigError("indexing: unknown strategy");
}

std::size_t IndexingSpec::length_cap() const {
  return strategy == Strategy::RandomInt ? random_int_max : 0;
}

void to_json(nlohmann::json& j, const TrainDistribution& d) {
  j = nlohmann::json{{"kind", to_string(d.kind)},
                     {"mean", d.mean},
                     {"stddev", d.stddev},
                     {"alpha", d.alpha},
                     {"beta", d.beta},
                     {"cdf_matched_inference", d.cdf_matched_inference}};
}

void from_json(const nlohmann::json& j, TrainDistribution& d) {
  d = TrainDistribution{};
  d.kind = parse_dist_kind(j.at("kind").get<std::string>());
  d.mean = j.value("mean", d.mean);
  d.stddev = j.value("stddev", d.stddev);
  d.alpha = j.value("alpha", d.alpha);
  d.beta = j.value("beta", d.beta);
  d.cdf_matched_inference = j.value("cdf_matched_inference", false);
}

void to_json(nlohmann::json& j, const IndexingSpec& s) {
  j = nlohmann::json{{"strategy", to_string(s.strategy)},
                     {"distribution", s.distribution},
                     {"scale_L", s.scale_L},
                     {"random_int_max", s.random_int_max},
                     {"n_train_ref", s.n_train_ref}};
}

void from_json(const nlohmann::json& j, IndexingSpec& s) {
  s = IndexingSpec{};
  s.strategy = parse_strategy(j.at("strategy").get<std::string>());
  s.distribution = j.at("distribution").get<TrainDistribution>();
  s.scale_L = j.at("scale_L").get<double>();
  s.random_int_max = j.at("random_int_max").get<std::size_t>();
  s.n_train_ref = j.at("n_train_ref").get<std::size_t>();
}

}  // namespace rfs::indexing
