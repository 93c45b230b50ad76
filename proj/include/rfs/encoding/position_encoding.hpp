#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "rfs/indexing/position_indexing.hpp"
#include "rfs/numeric/tensor.hpp"

namespace rfs::encoding {

enum class EncodingKind { Sinusoidal, RoPE, ALiBi, NoPE };

std::string_view to_string(EncodingKind k);
EncodingKind parse_encoding(std::string_view s);

/// Geometric ALiBi slopes 2^(-8h/H), h = 1..H.
std::vector<double> alibi_slopes(std::size_t heads);

struct EncodingSpec {
  EncodingKind kind = EncodingKind::RoPE;
  std::size_t d_model = 0;
  std::size_t head_dim = 0;
  std::size_t rotary_dim = 0;
  double base = 10000.0;
  std::vector<double> alibi_slopes;

  /// Fills head_dim and slopes from the head count. rotary_dim 0 picks a
  /// quarter of the head dim (rounded down to even, at least 2).
  static EncodingSpec make(EncodingKind kind, std::size_t d_model, std::size_t heads,
                           std::size_t rotary_dim = 0, double base = 10000.0);
  std::size_t heads() const { return head_dim ? d_model / head_dim : 0; }
  void validate() const;
};

void to_json(nlohmann::json& j, const EncodingSpec& s);
void from_json(const nlohmann::json& j, EncodingSpec& s);

/// Row-major n x d sinusoidal values: column 2k holds sin(p / 10000^(2k/d)),
/// column 2k+1 the matching cosine. d must be even.
template <typename T>
std::vector<T> sinusoidal_values(std::span<const double> positions, std::size_t d);

Tensor<double> sinusoidal_matrix(const indexing::IndexSequence& seq, std::size_t d);

/// Rotation frequency of channel pair k: base^(-2k / rotary_dim).
double rope_inverse_frequency(std::size_t pair, std::size_t rotary_dim, double base);

/// Rotates the first rotary_dim channels of a head vector by position p.
std::vector<double> rope_rotate(std::span<const double> v, double p, const EncodingSpec& spec);

/// Additive ALiBi scores [H, Tq, Tk] for queries at query_pos against keys at
/// key_pos. Query i sits at key index q_offset + i; later keys get -inf.
template <typename T>
std::vector<T> alibi_bias_values(std::span<const double> query_pos,
                                 std::span<const double> key_pos,
                                 std::span<const double> slopes, std::size_t q_offset);

/// Causal ALiBi bias: bias[h,i,j] = -slope_h (p_i - p_j) for j <= i, -inf
/// above the diagonal. The sequence must be non-decreasing.
Tensor<double> alibi_bias(const indexing::IndexSequence& seq, const EncodingSpec& spec);

/// NoPE contributes nothing: an n x 0 tensor.
Tensor<double> nope(const indexing::IndexSequence& seq);

}  // namespace rfs::encoding
