#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rfs/indexing/position_indexing.hpp"
#include "rfs/model/transformer.hpp"

namespace rfs::spectrum {

inline constexpr double kDefaultTolerance = 1e-6;
inline constexpr double kDefaultRange = 2048.0;

struct SpectrumReport {
  indexing::Strategy strategy = indexing::Strategy::Extension;
  std::size_t n = 0;
  std::size_t d = 0;
  double range_L = kDefaultRange;
  std::vector<double> singular_values;  // descending
  std::size_t numerical_rank = 0;
  double tolerance = kDefaultTolerance;
};

/// Count of values strictly above tol * max(values).
std::size_t numerical_rank(std::span<const double> singular_values, double tol);

/// Singular spectrum of the n x d sinusoidal position matrix. Extension uses
/// indices 0..n-1; RFS uses the inference midpoints scaled by range_L.
SpectrumReport position_spectrum(indexing::Strategy strategy, std::size_t n, std::size_t d,
                                 double range_L = kDefaultRange,
                                 double tol = kDefaultTolerance);

/// Sequence lengths of the rank sweep.
std::vector<std::size_t> fig6_lengths();

struct ProbeStat {
  double distance = 0.0;
  double mean_abs = 0.0;
  double max_abs = 0.0;
  bool seen = false;
};

/// Largest index gap the model's strategy produced during training: gaps below
/// scale_L for RFS, up to n_train_ref - 1 for extension and interpolation,
/// up to random_int_max - 1 for random integers.
bool distance_seen(const indexing::IndexingSpec& idx, double distance);

/// First-layer pre-softmax attention scores between a query at position
/// `distance` and a key at position 0, over ordered pairs of the first
/// `tokens` word-pool tokens and all heads. Reports mean and max |score| per
/// distance.
std::vector<ProbeStat> attention_score_probe(const model::Transformer<float>& model,
                                             std::span<const double> distances,
                                             std::size_t tokens = 16);

}  // namespace rfs::spectrum
