#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "rfs/common.hpp"

namespace rfs::indexing {

enum class Strategy { RFS, Extension, Interpolation, RandomInt };
enum class Phase { Train, Inference };
enum class DistKind { Uniform, Normal, Beta };

std::string_view to_string(Strategy s);
std::string_view to_string(Phase p);
std::string_view to_string(DistKind k);
Strategy parse_strategy(std::string_view s);
DistKind parse_dist_kind(std::string_view s);

/// Largest value a unit-interval draw is clamped to: 1 - 2^-32.
inline constexpr double kUnitUpper = 1.0 - 0x1p-32;

/// Distribution RFS training indices are drawn from, before scaling.
struct TrainDistribution {
  DistKind kind = DistKind::Uniform;
  double mean = 0.5;    // Normal
  double stddev = 0.2;  // Normal
  double alpha = 0.5;   // Beta
  double beta = 0.5;    // Beta
  // Inference midpoints are mapped through this distribution's quantile.
  bool cdf_matched_inference = false;

  static TrainDistribution uniform() { return {}; }
  static TrainDistribution normal(double mean = 0.5, double stddev = 0.2);
  static TrainDistribution beta_dist(double alpha = 0.5, double beta = 0.5);

  void validate() const;
  /// One raw draw; may fall outside [0,1) for Normal.
  double sample(Rng& rng) const;
  double quantile(double u) const;
  double cdf(double x) const;
  std::string label() const;
};

/// Position indices for one sequence.
///
/// Conventions: extension and interpolation are 0-based, random integer
/// sampling is 1-based, RFS values are the formula values times scale_L.
struct IndexSequence {
  std::vector<double> values;
  Strategy strategy = Strategy::Extension;
  Phase phase = Phase::Train;
  double scale_L = 1.0;
  std::size_t n_train_ref = 0;

  std::size_t size() const { return values.size(); }
  bool non_decreasing() const;
};

void to_json(nlohmann::json& j, const IndexSequence& seq);
void from_json(const nlohmann::json& j, IndexSequence& seq);

/// Sorts unit-interval draws into RFS training indices: values are clamped
/// to [0, kUnitUpper] and ties are broken by nudging the later value up one
/// ULP, so the result is strictly increasing.
IndexSequence rfs_from_draws(std::vector<double> draws);

IndexSequence rfs_train_indices(std::size_t n_tr, const TrainDistribution& dist, Rng& rng);

/// p_i = (2i - 1) / (2 max(n_tr, n_in)), i = 1..n_in.
IndexSequence rfs_inference_indices(std::size_t n_tr, std::size_t n_in);

/// Inference midpoints mapped through the distribution's quantile function and
/// clamped to [0, kUnitUpper]. Uniform reduces to rfs_inference_indices.
IndexSequence cdf_matched_inference_indices(std::size_t n_tr, std::size_t n_in,
                                            const TrainDistribution& dist);

/// Multiplies every value by L (> 0).
IndexSequence scale(IndexSequence seq, double L);

/// 0, 1, ..., n_in - 1.
IndexSequence extension_indices(std::size_t n_in);

/// Consecutive integers, compressed by n_train_max / n_in once n_in exceeds
/// n_train_max.
IndexSequence interpolation_indices(std::size_t n_in, std::size_t n_train_max);

/// n_tr distinct integers from {1..l_max}, ascending.
IndexSequence random_int_train_indices(std::size_t n_tr, std::size_t l_max, Rng& rng);

/// Sorts a chosen subset of {1..l_max} into a training index sequence.
IndexSequence random_int_from_selection(std::vector<std::size_t> chosen, std::size_t l_max);

/// 1, 2, ..., n_in; n_in beyond l_max is an error.
IndexSequence random_int_inference_indices(std::size_t n_in, std::size_t l_max);

/// Indexing policy of a model: which strategy, and everything it needs to
/// produce training and inference indices.
struct IndexingSpec {
  Strategy strategy = Strategy::RFS;
  TrainDistribution distribution;
  double scale_L = 1000.0;
  std::size_t random_int_max = 512;
  // Longest training sequence; RFS and interpolation use it at inference.
  std::size_t n_train_ref = 0;

  void validate() const;
  IndexSequence train(std::size_t n, Rng& rng) const;
  IndexSequence inference(std::size_t n_in) const;
  /// Largest sequence length the strategy can index at inference, or 0 when
  /// there is no cap.
  std::size_t length_cap() const;
};

void to_json(nlohmann::json& j, const TrainDistribution& d);
void from_json(const nlohmann::json& j, TrainDistribution& d);
void to_json(nlohmann::json& j, const IndexingSpec& s);
void from_json(const nlohmann::json& j, IndexingSpec& s);

}  // namespace rfs::indexing
