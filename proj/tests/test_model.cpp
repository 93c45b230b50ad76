#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "rfs/model/checkpoint.hpp"
#include "rfs/model/transformer.hpp"
#include "rfs/numeric/ops.hpp"
#include "support.hpp"

using namespace rfs;
using namespace rfs::model;
using encoding::EncodingKind;
using indexing::Strategy;

namespace {

ModelConfig tiny(EncodingKind kind, Strategy strategy = Strategy::Extension,
                 std::size_t vocab = 11) {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 16;
  c.d_ff = 32;
  c.vocab_size = vocab;
  c.encoding = encoding::EncodingSpec::make(kind, c.d_model, c.n_heads, 4);
  c.indexing.strategy = strategy;
  c.indexing.n_train_ref = 6;
  c.indexing.random_int_max = 64;
  return c;
}

std::vector<TokenId> random_tokens(std::size_t n, std::size_t vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<TokenId> u(0, static_cast<TokenId>(vocab - 1));
  std::vector<TokenId> t(n);
  for (auto& x : t) x = u(rng);
  return t;
}

std::vector<double> tile(const std::vector<double>& row, std::size_t times) {
  std::vector<double> out;
  for (std::size_t i = 0; i < times; ++i) out.insert(out.end(), row.begin(), row.end());
  return out;
}

const EncodingKind kAllKinds[] = {EncodingKind::Sinusoidal, EncodingKind::RoPE,
                                  EncodingKind::ALiBi, EncodingKind::NoPE};

}  // namespace

TEST_CASE("forward produces batch x time x vocab logits") {
  Transformer<float> m(tiny(EncodingKind::RoPE, Strategy::Extension, 32), 1);
  std::mt19937_64 rng(1);
  auto toks = random_tokens(10, 32, rng);
  auto pos = tile(indexing::extension_indices(5).values, 2);
  auto logits = m.forward(toks, pos, 2, 5);
  CHECK(logits.shape() == Shape{10, 32});
  for (float v : logits.data()) CHECK(std::isfinite(v));
}

TEST_CASE("forward rejects mismatched tokens and positions") {
  Transformer<float> m(tiny(EncodingKind::RoPE), 1);
  std::vector<TokenId> toks(6, 1);
  std::vector<double> pos(5, 0.0);
  CHECK_THROWS_AS(m.forward(toks, pos, 1, 6), ShapeError);
  std::vector<double> pos6(6, 0.0);
  CHECK_THROWS_AS(m.forward(toks, pos6, 2, 6), ShapeError);
}

TEST_CASE("parameters come in a fixed named order") {
  Transformer<float> m(tiny(EncodingKind::RoPE), 1);
  auto p = m.parameters();
  REQUIRE(p.size() == 1 + 2 * 16 + 4);
  CHECK(p.front().name == "tok_emb");
  CHECK(p[1].name == "blocks.0.ln1.gain");
  CHECK(p[3].name == "blocks.0.attn.wq");
  CHECK(p.back().name == "head.b");
  std::size_t count = 0;
  for (auto& t : p) count += t.tensor.numel();
  CHECK(count == m.parameter_count());
}

TEST_CASE("initialization follows the scaled-normal scheme") {
  ModelConfig c = ModelConfig::desk(50, EncodingKind::RoPE);
  Transformer<float> m(c, 3);
  for (auto& [name, t] : m.parameters()) {
    double s = 0.0, s2 = 0.0;
    for (float v : t.data()) {
      s += v;
      s2 += double(v) * v;
    }
    const double n = static_cast<double>(t.numel());
    const double mean = s / n, sd = std::sqrt(s2 / n - mean * mean);
    const bool residual = name.ends_with("attn.wo") || name.ends_with("mlp.w_out");
    if (name.ends_with("gain")) {
      CHECK(mean == 1.0);
    } else if (name.ends_with(".b") || name.ends_with("bias") || name.ends_with(".bq") ||
               name.ends_with(".bk") || name.ends_with(".bv") || name.ends_with(".bo") ||
               name.ends_with("b_in") || name.ends_with("b_out")) {
      CHECK(s2 == 0.0);
    } else {
      const double expect = residual ? 0.02 / std::sqrt(2.0 * c.n_layers) : 0.02;
      CHECK_MESSAGE(std::abs(sd - expect) < 0.1 * expect, name);
    }
  }
}

TEST_CASE("same seed gives the same weights") {
  Transformer<float> a(tiny(EncodingKind::RoPE), 5), b(tiny(EncodingKind::RoPE), 5),
      c(tiny(EncodingKind::RoPE), 6);
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  CHECK(std::equal(pa[3].tensor.data().begin(), pa[3].tensor.data().end(),
                   pb[3].tensor.data().begin()));
  CHECK_FALSE(std::equal(pa[3].tensor.data().begin(), pa[3].tensor.data().end(),
                         pc[3].tensor.data().begin()));
}

TEST_CASE("logits at t ignore later tokens") {
  for (auto kind : kAllKinds) {
    for (auto strategy : {Strategy::Extension, Strategy::RFS}) {
      CAPTURE(encoding::to_string(kind));
      Transformer<double> m(tiny(kind, strategy), 2);
      std::mt19937_64 rng(3);
      const std::size_t T = 7;
      auto toks = random_tokens(T, 11, rng);
      auto pos = m.config().indexing.inference(T).values;
      auto base = m.forward(toks, pos, 1, T);
      for (std::size_t t = 0; t + 1 < T; ++t) {
        auto changed = toks;
        changed[t + 1] = (changed[t + 1] + 1) % 11;
        auto other = m.forward(changed, pos, 1, T);
        for (std::size_t r = 0; r <= t; ++r)
          for (std::size_t v = 0; v < 11; ++v)
            CHECK(std::abs(base.at({r, v}) - other.at({r, v})) <= 1e-12);
      }
    }
  }
}

TEST_CASE("cached decoding matches a full forward") {
  for (auto kind : kAllKinds) {
    CAPTURE(encoding::to_string(kind));
    ModelConfig c = ModelConfig::desk(40, kind);
    c.indexing.strategy = Strategy::RFS;
    c.indexing.n_train_ref = 10;
    Transformer<float> m(c, 4);
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 3; ++trial) {
      const std::size_t prompt = 3 + trial * 4, extra = 6, T = prompt + extra;
      auto toks = random_tokens(T, 40, rng);
      auto pos = c.indexing.inference(T).values;
      auto full = m.forward(toks, pos, 1, T);
      KVCache<float> cache;
      auto first = m.forward_incremental(cache, std::span(toks).first(prompt),
                                         std::span<const double>(pos).first(prompt));
      double worst = 0.0;
      for (std::size_t r = 0; r < prompt; ++r)
        for (std::size_t v = 0; v < 40; ++v)
          worst = std::max(worst, double(std::abs(first[r * 40 + v] - full.at({r, v}))));
      for (std::size_t t = prompt; t < T; ++t) {
        auto step = m.forward_incremental(cache, std::span(toks).subspan(t, 1),
                                          std::span<const double>(pos).subspan(t, 1));
        for (std::size_t v = 0; v < 40; ++v)
          worst = std::max(worst, double(std::abs(step[v] - full.at({t, v}))));
      }
      CHECK(cache.length == T);
      CHECK(worst <= 1e-5);
    }
  }
}

TEST_CASE("a sequence gets the same logits alone or in a batch") {
  for (auto kind : kAllKinds) {
    CAPTURE(encoding::to_string(kind));
    ModelConfig c = ModelConfig::desk(30, kind);
    Transformer<float> m(c, 6);
    std::mt19937_64 rng(7);
    const std::size_t T = 9, B = 4;
    auto toks = random_tokens(B * T, 30, rng);
    std::vector<double> pos;
    for (std::size_t b = 0; b < B; ++b) {
      auto row = indexing::extension_indices(T).values;
      for (auto& p : row) p += static_cast<double>(b) * 3.5;
      pos.insert(pos.end(), row.begin(), row.end());
    }
    auto batched = m.forward(toks, pos, B, T);
    double worst = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      auto alone = m.forward(std::span(toks).subspan(b * T, T),
                             std::span<const double>(pos).subspan(b * T, T), 1, T);
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t v = 0; v < 30; ++v)
          worst =
              std::max(worst, double(std::abs(alone.at({t, v}) - batched.at({b * T + t, v}))));
    }
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("alibi logits are unchanged when indices scale and slopes shrink alike") {
  for (double c : {4.0, 0.5, 1024.0}) {
    ModelConfig cfg = ModelConfig::desk(20, EncodingKind::ALiBi);
    Transformer<float> m(cfg, 8);
    std::mt19937_64 rng(9);
    const std::size_t T = 12;
    auto toks = random_tokens(T, 20, rng);
    std::vector<double> pos(T), scaled(T);
    indexing::IndexingSpec spec;
    spec.n_train_ref = 10;
    auto rfs_pos = spec.inference(T).values;
    for (std::size_t i = 0; i < T; ++i) {
      pos[i] = rfs_pos[i];
      scaled[i] = rfs_pos[i] * c;
    }
    auto a = m.forward(toks, pos, 1, T);
    for (auto& s : m.mutable_config().encoding.alibi_slopes) s /= c;
    auto b = m.forward(toks, scaled, 1, T);
    std::size_t differing = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) differing += a.data()[i] != b.data()[i];
    CHECK(differing == 0);
  }
}

TEST_CASE("every parameter gradient matches finite differences") {
  for (auto kind : kAllKinds) {
    CAPTURE(encoding::to_string(kind));
    ModelConfig c = tiny(kind, Strategy::RFS, 8);
    Transformer<double> m(c, 10);
    // Lift parameters off the init scale so every path carries signal.
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n(0.0, 0.3);
    for (auto& p : m.parameters())
      for (auto& v : p.tensor.mutable_data()) v += n(rng);
    const std::size_t B = 2, T = 4;
    auto toks = random_tokens(B * T, 8, rng);
    std::vector<TokenId> targets(toks.begin() + 1, toks.end());
    targets.push_back(-1);
    Rng idx_rng(12);
    std::vector<double> pos;
    for (std::size_t b = 0; b < B; ++b) {
      auto row = c.indexing.train(T, idx_rng).values;
      pos.insert(pos.end(), row.begin(), row.end());
    }
    std::vector<Tensor<double>> params;
    for (auto& p : m.parameters()) params.push_back(p.tensor);
    auto r = rfs::testing::check_gradients(
        params, [&] { return ops::cross_entropy(m.forward(toks, pos, B, T), targets); });
    CHECK_MESSAGE(r.max_rel_err < 1e-4, r.worst);
  }
}

TEST_CASE("greedy decode") {
  ModelConfig c = tiny(EncodingKind::RoPE, Strategy::RFS);
  Transformer<double> m(c, 13);
  std::mt19937_64 rng(14);
  for (auto& p : m.parameters())
    for (auto& v : p.tensor.mutable_data()) v += std::normal_distribution<double>(0, 0.5)(rng);
  std::vector<TokenId> prompt{1, 4, 2};

  SUBCASE("zero budget returns the prompt") { CHECK(greedy_decode(m, prompt, 0, 10) == prompt); }
  SUBCASE("repeated calls agree") {
    CHECK(greedy_decode(m, prompt, 8, 99) == greedy_decode(m, prompt, 8, 99));
  }
  SUBCASE("matches step-by-step full forward argmax") {
    const std::size_t max_new = 8;
    auto pos = c.indexing.inference(prompt.size() + max_new).values;
    std::vector<TokenId> oracle = prompt;
    for (std::size_t s = 0; s < max_new; ++s) {
      auto logits = m.forward(oracle, std::span<const double>(pos).first(oracle.size()), 1,
                              oracle.size());
      const std::size_t last = oracle.size() - 1;
      TokenId best = 0;
      for (std::size_t v = 1; v < c.vocab_size; ++v)
        if (logits.at({last, v}) > logits.at({last, std::size_t(best)})) best = TokenId(v);
      oracle.push_back(best);
    }
    CHECK(greedy_decode(m, prompt, max_new, 99) == oracle);
    // Stops right after the end token when it appears.
    const TokenId eos = oracle[prompt.size() + 2];
    auto stopped = greedy_decode(m, prompt, max_new, eos);
    auto it = std::find(oracle.begin() + prompt.size(), oracle.end(), eos);
    CHECK(stopped == std::vector<TokenId>(oracle.begin(), it + 1));
  }
  SUBCASE("empty prompt is rejected") {
    CHECK_THROWS_AS(greedy_decode(m, std::vector<TokenId>{}, 3, 10), ConfigError);
  }
}

TEST_CASE("random integer strategy caps the decode length") {
  ModelConfig c = tiny(EncodingKind::RoPE, Strategy::RandomInt);
  c.indexing.random_int_max = 8;
  Transformer<float> m(c, 15);
  std::vector<TokenId> prompt{1, 2, 3, 4, 5};
  CHECK_NOTHROW(greedy_decode(m, prompt, 3, 10));
  try {
    greedy_decode(m, prompt, 4, 10);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("random") != std::string::npos);
  }
}

TEST_CASE("model config validation and JSON") {
  ModelConfig c = tiny(EncodingKind::ALiBi);
  CHECK_NOTHROW(c.validate());
  nlohmann::json j = c;
  auto back = j.get<ModelConfig>();
  CHECK(nlohmann::json(back) == j);

  ModelConfig bad = c;
  bad.d_model = 15;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.dropout = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.vocab_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  auto paper = ModelConfig::paper(100, EncodingKind::RoPE);
  CHECK(paper.n_layers == 12);
  CHECK(paper.n_heads == 12);
  CHECK(paper.d_model == 768);
  CHECK(paper.dropout == 0.1);
  CHECK(paper.encoding.rotary_dim == 16);
}

TEST_CASE("checkpoints round-trip and reject mismatches") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "rfs_ckpt_test";
  fs::create_directories(dir);
  const fs::path file = dir / "m.ckpt";
  ModelConfig c = tiny(EncodingKind::Sinusoidal, Strategy::RFS);
  Transformer<float> m(c, 16);
  save_checkpoint(file, m, {{"note", "x"}});

  auto loaded = load_checkpoint(file, c);
  CHECK(loaded.metadata.at("note") == "x");
  std::vector<TokenId> toks{1, 2, 3, 4};
  auto pos = indexing::extension_indices(4).values;
  auto a = m.forward(toks, pos, 1, 4), b = loaded.model.forward(toks, pos, 1, 4);
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));

  ModelConfig other = c;
  other.n_layers = 3;
  CHECK_THROWS_AS(load_checkpoint(file, other), ConfigError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), RuntimeFailure);

  {
    std::ofstream junk(dir / "junk.ckpt", std::ios::binary);
    junk << "not a checkpoint";
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), RuntimeFailure);

  // Truncate the tensor data.
  const auto size = fs::file_size(file);
  fs::copy_file(file, dir / "short.ckpt", fs::copy_options::overwrite_existing);
  fs::resize_file(dir / "short.ckpt", size - 16);
  CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), RuntimeFailure);
  fs::remove_all(dir);
}
