#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "rfs/encoding/position_encoding.hpp"

using namespace rfs;
using namespace rfs::encoding;
using rfs::indexing::IndexSequence;

namespace {

IndexSequence seq_of(std::vector<double> v) {
  IndexSequence s;
  s.values = std::move(v);
  return s;
}

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("sinusoidal row at position zero alternates 0 and 1") {
  auto m = sinusoidal_matrix(seq_of({0.0}), 8);
  for (std::size_t c = 0; c < 8; ++c) CHECK(m.at({0, c}) == (c % 2 ? 1.0 : 0.0));
}

TEST_CASE("sinusoidal rows have squared norm d/2") {
  auto m = sinusoidal_matrix(seq_of({0.0, 1.0, 3.7, 125.0, 999.9}), 16);
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 16; ++c) s += m.at({r, c}) * m.at({r, c});
    CHECK(std::abs(s - 8.0) < 1e-12);
  }
}

TEST_CASE("sinusoidal values at a real-valued position") {
  const double p = std::numbers::pi / 2;
  auto m = sinusoidal_matrix(seq_of({p}), 4);
  CHECK(std::abs(m.at({0, 0}) - 1.0) < 1e-15);
  CHECK(std::abs(m.at({0, 1}) - 0.0) < 1e-15);
  CHECK(std::abs(m.at({0, 2}) - std::sin(p / 100.0)) < 1e-15);
  CHECK(std::abs(m.at({0, 3}) - std::cos(p / 100.0)) < 1e-15);
  CHECK(std::abs(m.at({0, 2}) - 0.015707) < 1e-6);
  CHECK(std::abs(m.at({0, 3}) - 0.999876) < 1e-6);
}

TEST_CASE("sinusoidal rejects odd d") {
  CHECK_THROWS_AS(sinusoidal_matrix(seq_of({0.0}), 5), ConfigError);
}

TEST_CASE("sinusoidal rows follow a permutation of positions") {
  std::vector<double> p{0.5, 17.0, 3.25, 800.0};
  auto a = sinusoidal_matrix(seq_of(p), 6);
  auto b = sinusoidal_matrix(seq_of({p[2], p[0], p[3], p[1]}), 6);
  const std::size_t perm[4] = {2, 0, 3, 1};
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 6; ++c) CHECK(b.at({r, c}) == a.at({perm[r], c}));
}

TEST_CASE("rope rotation") {
  auto spec = EncodingSpec::make(EncodingKind::RoPE, 64, 4, 8);
  std::mt19937_64 rng(1);
  auto v = random_vec(16, rng);

  SUBCASE("position zero is the identity") { CHECK(rope_rotate(v, 0.0, spec) == v); }
  SUBCASE("norm is preserved") {
    auto r = rope_rotate(v, 123.456, spec);
    CHECK(std::abs(std::sqrt(dot(r, r, 16)) - std::sqrt(dot(v, v, 16))) < 1e-12);
  }
  SUBCASE("channels past the rotary dims pass through") {
    auto r = rope_rotate(v, 9.0, spec);
    for (std::size_t i = 8; i < 16; ++i) CHECK(r[i] == v[i]);
  }
  SUBCASE("first pair turns by the position itself") {
    std::vector<double> e(16, 0.0);
    e[0] = 1.0;
    auto r = rope_rotate(e, 0.3, spec);
    CHECK(std::abs(r[0] - std::cos(0.3)) < 1e-15);
    CHECK(std::abs(r[1] - std::sin(0.3)) < 1e-15);
  }
  SUBCASE("too short a vector is rejected") {
    CHECK_THROWS_AS(rope_rotate(std::vector<double>(6, 1.0), 1.0, spec), ShapeError);
  }
}

TEST_CASE("rope scores depend only on relative position") {
  auto spec = EncodingSpec::make(EncodingKind::RoPE, 64, 4, 16);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> pos(0.0, 1000.0);
  for (int trial = 0; trial < 50; ++trial) {
    auto q = random_vec(16, rng), k = random_vec(16, rng);
    const double p1 = pos(rng), p2 = pos(rng), c = pos(rng);
    const double a = dot(rope_rotate(q, p1, spec), rope_rotate(k, p2, spec), 16);
    const double b = dot(rope_rotate(q, p1 + c, spec), rope_rotate(k, p2 + c, spec), 16);
    CHECK(std::abs(a - b) < 1e-9);
    const double same = dot(rope_rotate(q, p1, spec), rope_rotate(k, p1, spec), 16);
    CHECK(std::abs(same - dot(q, k, 16)) < 1e-9);
  }
}

TEST_CASE("alibi slopes follow the geometric schedule") {
  auto s = alibi_slopes(8);
  REQUIRE(s.size() == 8);
  for (std::size_t h = 0; h < 8; ++h) CHECK(s[h] == std::exp2(-8.0 * (h + 1) / 8.0));
  auto s4 = alibi_slopes(4);
  CHECK(s4[0] == 0.25);
  CHECK(s4[3] == std::exp2(-8.0));
  for (std::size_t h = 1; h < 4; ++h) CHECK(s4[h] < s4[h - 1]);
}

TEST_CASE("alibi bias") {
  auto spec = EncodingSpec::make(EncodingKind::ALiBi, 16, 4);
  const std::size_t n = 6;
  std::vector<double> ext(n);
  for (std::size_t i = 0; i < n; ++i) ext[i] = static_cast<double>(i);
  auto b = alibi_bias(seq_of(ext), spec);
  CHECK(b.shape() == Shape{4, n, n});
  for (std::size_t h = 0; h < 4; ++h)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double v = b.at({h, i, j});
        if (j > i) {
          CHECK(std::isinf(v));
          CHECK(v < 0);
        } else {
          CHECK(v == -spec.alibi_slopes[h] * static_cast<double>(i - j));
          if (j > 0) CHECK(b.at({h, i, j - 1}) < v);
        }
      }
  for (std::size_t h = 0; h < 4; ++h)
    for (std::size_t i = 0; i < n; ++i) CHECK(b.at({h, i, i}) == 0.0);
}

TEST_CASE("alibi bias is translation invariant") {
  auto spec = EncodingSpec::make(EncodingKind::ALiBi, 32, 8);
  std::vector<double> p{12.5, 40.0, 41.25, 300.0, 701.0}, shifted;
  for (double v : p) shifted.push_back(v + 1234.5);
  auto a = alibi_bias(seq_of(p), spec), b = alibi_bias(seq_of(shifted), spec);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (std::isinf(a.data()[i])) {
      CHECK(std::isinf(b.data()[i]));
    } else {
      CHECK(std::abs(a.data()[i] - b.data()[i]) < 1e-12);
    }
  }
}

TEST_CASE("alibi bias rejects a non-monotone sequence") {
  auto spec = EncodingSpec::make(EncodingKind::ALiBi, 16, 4);
  CHECK_THROWS_AS(alibi_bias(seq_of({0.0, 2.0, 1.0}), spec), ConfigError);
}

TEST_CASE("nope carries no position information") {
  for (std::size_t n : {1u, 4u, 32u}) {
    IndexSequence s = rfs::indexing::extension_indices(n);
    auto t = nope(s);
    CHECK(t.shape() == Shape{n, 0});
    CHECK(t.numel() == 0);
  }
}

TEST_CASE("encoding spec defaults and validation") {
  auto spec = EncodingSpec::make(EncodingKind::RoPE, 768, 12, 16);
  CHECK(spec.head_dim == 64);
  CHECK(spec.rotary_dim == 16);
  CHECK(spec.base == 10000.0);
  CHECK(EncodingSpec::make(EncodingKind::RoPE, 128, 4).rotary_dim == 8);

  EncodingSpec bad = spec;
  bad.rotary_dim = 15;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.rotary_dim = 66;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  auto alibi = EncodingSpec::make(EncodingKind::ALiBi, 64, 4);
  alibi.alibi_slopes[2] = alibi.alibi_slopes[1];
  CHECK_THROWS_AS(alibi.validate(), ConfigError);
}

TEST_CASE("encoding spec round-trips through JSON") {
  auto spec = EncodingSpec::make(EncodingKind::ALiBi, 64, 4);
  nlohmann::json j = spec;
  auto back = j.get<EncodingSpec>();
  CHECK(back.kind == spec.kind);
  CHECK(back.head_dim == spec.head_dim);
  CHECK(back.alibi_slopes == spec.alibi_slopes);
  for (auto k : {EncodingKind::Sinusoidal, EncodingKind::RoPE, EncodingKind::ALiBi,
                 EncodingKind::NoPE})
    CHECK(parse_encoding(to_string(k)) == k);
}
