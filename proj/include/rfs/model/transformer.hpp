#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rfs/common.hpp"
#include "rfs/encoding/position_encoding.hpp"
#include "rfs/indexing/position_indexing.hpp"
#include "rfs/numeric/tensor.hpp"

namespace rfs::model {

struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_model = 128;
  std::size_t d_ff = 512;
  std::size_t vocab_size = 0;
  double dropout = 0.0;
  encoding::EncodingSpec encoding;
  indexing::IndexingSpec indexing;

  void validate() const;

  /// 12 layers, 12 heads, 768 dims, dropout 0.1, rotary dim 16.
  static ModelConfig paper(std::size_t vocab_size, encoding::EncodingKind kind);
  /// 2 layers, 4 heads, 128 dims, no dropout, rotary dim 8 (a quarter of the
  /// head dim, as in the "paper" preset).
  static ModelConfig desk(std::size_t vocab_size, encoding::EncodingKind kind);
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
struct Block {
  Tensor<T> ln1_gain, ln1_bias;
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<T> ln2_gain, ln2_bias;
  Tensor<T> w_in, b_in, w_out, b_out;
};

/// Per-layer keys (post-rotation) and values of everything decoded so far.
template <typename T>
struct KVCache {
  std::vector<std::vector<T>> keys;    // per layer, [H, length, Dh]
  std::vector<std::vector<T>> values;  // per layer, [H, length, Dh]
  std::vector<double> positions;
  std::size_t length = 0;
};

/// Decoder-only causal transformer, pre-LayerNorm, GELU MLP, untied head.
template <typename T>
class Transformer {
 public:
  /// GPT-2 style init: N(0, 0.02), residual projections scaled by
  /// 1/sqrt(2 n_layers), zero biases, unit gains.
  Transformer(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ModelConfig& mutable_config() { return cfg_; }

  /// All parameters in a fixed order. Handles share storage with the model.
  std::vector<NamedTensor<T>> parameters() const;
  std::size_t parameter_count() const;

  /// Logits [B*T, V] for row-major tokens [B, T] at positions [B, T].
  /// `dropout_rng` enables dropout (training); nullptr runs deterministically.
  Tensor<T> forward(std::span<const TokenId> tokens, std::span<const double> positions,
                    std::size_t batch, std::size_t seq, Rng* dropout_rng = nullptr) const;

  /// Appends tokens at the given positions to the cache and returns their
  /// logits, row-major [tokens.size(), V]. Never records a graph.
  std::vector<T> forward_incremental(KVCache<T>& cache, std::span<const TokenId> tokens,
                                     std::span<const double> positions) const;

 private:
  ModelConfig cfg_;
  Tensor<T> tok_emb_;
  std::vector<Block<T>> blocks_;
  Tensor<T> lnf_gain_, lnf_bias_;
  Tensor<T> head_w_, head_b_;
};

/// Greedy decoding: returns prompt followed by up to max_new argmax tokens,
/// stopping after `eos`. Positions come from the model's indexing policy for a
/// context of prompt.size() + max_new and stay fixed for the whole decode.
template <typename T>
std::vector<TokenId> greedy_decode(const Transformer<T>& model, std::span<const TokenId> prompt,
                                   std::size_t max_new, TokenId eos);

extern template class Transformer<float>;
extern template class Transformer<double>;

}  // namespace rfs::model
