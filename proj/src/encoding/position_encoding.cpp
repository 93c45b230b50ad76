#include "rfs/encoding/position_encoding.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace rfs::encoding {

std::string_view to_string(EncodingKind k) {
  switch (k) {
    case EncodingKind::Sinusoidal: return "sinusoidal";
    case EncodingKind::RoPE: return "rope";
    case EncodingKind::ALiBi: return "alibi";
    case EncodingKind::NoPE: return "nope";
  }
  return "?";
}

EncodingKind parse_encoding(std::string_view s) {
  if (s == "sinusoidal") return EncodingKind::Sinusoidal;
  if (s == "rope") return EncodingKind::RoPE;
  if (s == "alibi") return EncodingKind::ALiBi;
  if (s == "nope") return EncodingKind::NoPE;
  throw ConfigError("unknown encoding '" + std::string(s) + "'");
}

std::vector<double> alibi_slopes(std::size_t heads) {
  std::vector<double> out(heads);
  for (std::size_t h = 1; h <= heads; ++h) {
    out[h - 1] = std::exp2(-8.0 * static_cast<double>(h) / static_cast<double>(heads));
  }
  return out;
}

EncodingSpec EncodingSpec::make(EncodingKind kind, std::size_t d_model, std::size_t heads,
                                std::size_t rotary_dim, double base) {
  if (heads == 0 || d_model % heads != 0) {
    throw ConfigError("encoding: d_model " + std::to_string(d_model) +
                      " not divisible by heads " + std::to_string(heads));
  }
  EncodingSpec spec;
  spec.kind = kind;
  spec.d_model = d_model;
  spec.head_dim = d_model / heads;
  spec.rotary_dim = rotary_dim ? rotary_dim : std::max<std::size_t>(2, (spec.head_dim / 4) & ~std::size_t{1});
  spec.base = base;
  spec.alibi_slopes = encoding::alibi_slopes(heads);
  return spec;
}

void EncodingSpec::validate() const {
  if (head_dim == 0 || d_model % head_dim != 0) throw ConfigError("encoding: bad head_dim");
  if (kind == EncodingKind::Sinusoidal && d_model % 2 != 0) {
    throw ConfigError("encoding: sinusoidal needs an even d_model");
  }
  if (kind == EncodingKind::RoPE && (rotary_dim % 2 != 0 || rotary_dim > head_dim || rotary_dim == 0)) {
    throw ConfigError("encoding: rotary_dim must be even, positive and <= head_dim");
  }
  if (!(base > 0.0)) throw ConfigError("encoding: base must be > 0");
  if (kind == EncodingKind::ALiBi) {
    if (alibi_slopes.size() != heads()) throw ConfigError("encoding: one ALiBi slope per head");
    for (std::size_t h = 0; h < alibi_slopes.size(); ++h) {
      if (!(alibi_slopes[h] > 0.0) || (h && alibi_slopes[h] >= alibi_slopes[h - 1])) {
        throw ConfigError("encoding: ALiBi slopes must be positive and decreasing");
      }
    }
  }
}

void to_json(nlohmann::json& j, const EncodingSpec& s) {
  j = nlohmann::json{{"kind", to_string(s.kind)},   {"d_model", s.d_model},
                     {"head_dim", s.head_dim},      {"rotary_dim", s.rotary_dim},
                     {"base", s.base},              {"alibi_slopes", s.alibi_slopes}};
}

void from_json(const nlohmann::json& j, EncodingSpec& s) {
  s.kind = parse_encoding(j.at("kind").get<std::string>());
  s.d_model = j.at("d_model").get<std::size_t>();
  s.head_dim = j.at("head_dim").get<std::size_t>();
  s.rotary_dim = j.at("rotary_dim").get<std::size_t>();
  s.base = j.at("base").get<double>();
  s.alibi_slopes = j.at("alibi_slopes").get<std::vector<double>>();
}

template <typename T>
std::vector<T> sinusoidal_values(std::span<const double> positions, std::size_t d) {
  if (d == 0 || d % 2 != 0) {
    throw ConfigError("sinusoidal_matrix: d must be even and positive, got " + std::to_string(d));
  }
  std::vector<double> inv(d / 2);
  for (std::size_t k = 0; k < d / 2; ++k) {
    inv[k] = std::pow(10000.0, -static_cast<double>(2 * k) / static_cast<double>(d));
  }
  std::vector<T> out(positions.size() * d);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    for (std::size_t k = 0; k < d / 2; ++k) {
      const double a = positions[i] * inv[k];
      out[i * d + 2 * k] = static_cast<T>(std::sin(a));
      out[i * d + 2 * k + 1] = static_cast<T>(std::cos(a));
    }
  }
  return out;
}

template std::vector<float> sinusoidal_values(std::span<const double>, std::size_t);
template std::vector<double> sinusoidal_values(std::span<const double>, std::size_t);

Tensor<double> sinusoidal_matrix(const indexing::IndexSequence& seq, std::size_t d) {
  return Tensor<double>({seq.size(), d}, sinusoidal_values<double>(seq.values, d));
}

double rope_inverse_frequency(std::size_t pair, std::size_t rotary_dim, double base) {
  return std::pow(base, -static_cast<double>(2 * pair) / static_cast<double>(rotary_dim));
}

std::vector<double> rope_rotate(std::span<const double> v, double p, const EncodingSpec& spec) {
  if (spec.rotary_dim % 2 != 0) throw ConfigError("rope_rotate: rotary_dim must be even");
  if (v.size() < spec.rotary_dim) {
    throw ShapeError("rope_rotate: vector of " + std::to_string(v.size()) +
                     " shorter than rotary_dim " + std::to_string(spec.rotary_dim));
  }
  std::vector<double> out(v.begin(), v.end());
  for (std::size_t k = 0; k < spec.rotary_dim / 2; ++k) {
    const double a = p * rope_inverse_frequency(k, spec.rotary_dim, spec.base);
    const double c = std::cos(a), s = std::sin(a);
    out[2 * k] = v[2 * k] * c - v[2 * k + 1] * s;
    out[2 * k + 1] = v[2 * k] * s + v[2 * k + 1] * c;
  }
  return out;
}

template <typename T>
std::vector<T> alibi_bias_values(std::span<const double> query_pos,
                                 std::span<const double> key_pos,
                                 std::span<const double> slopes, std::size_t q_offset) {
  const std::size_t tq = query_pos.size(), tk = key_pos.size();
  if (q_offset + tq > tk) throw ShapeError("alibi_bias: queries extend past the keys");
  std::vector<T> out(slopes.size() * tq * tk);
  for (std::size_t h = 0; h < slopes.size(); ++h)
    for (std::size_t i = 0; i < tq; ++i)
      for (std::size_t j = 0; j < tk; ++j) {
        out[(h * tq + i) * tk + j] =
            j <= q_offset + i ? static_cast<T>(-slopes[h] * (query_pos[i] - key_pos[j]))
                              : -std::numeric_limits<T>::infinity();
      }
  return out;
}

template std::vector<float> alibi_bias_values(std::span<const double>, std::span<const double>,
                                              std::span<const double>, std::size_t);
template std::vector<double> alibi_bias_values(std::span<const double>, std::span<const double>,
                                               std::span<const double>, std::size_t);

Tensor<double> alibi_bias(const indexing::IndexSequence& seq, const EncodingSpec& spec) {
  if (!seq.non_decreasing()) throw ConfigError("alibi_bias: index sequence is not monotone");
  const std::size_t n = seq.size();
  return Tensor<double>({spec.alibi_slopes.size(), n, n},
                        alibi_bias_values<double>(seq.values, seq.values, spec.alibi_slopes, 0));
}

Tensor<double> nope(const indexing::IndexSequence& seq) {
  return Tensor<double>(Shape{seq.size(), 0});
}

}  // namespace rfs::encoding
