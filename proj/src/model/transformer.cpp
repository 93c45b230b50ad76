#include "rfs/model/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "rfs/numeric/ops.hpp"

namespace rfs::model {

using encoding::EncodingKind;

void ModelConfig::validate() const {
  if (n_layers == 0 || n_heads == 0 || d_model == 0 || d_ff == 0) {
    throw ConfigError("model: layers, heads, d_model and d_ff must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("model: d_model " + std::to_string(d_model) +
                      " not divisible by n_heads " + std::to_string(n_heads));
  }
  if (vocab_size == 0) throw ConfigError("model: vocab_size must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must be in [0,1)");
  if (encoding.d_model != d_model || encoding.head_dim * n_heads != d_model) {
    throw ConfigError("model: encoding spec does not match d_model / n_heads");
  }
  encoding.validate();
  indexing.validate();
}

ModelConfig ModelConfig::paper(std::size_t vocab_size, EncodingKind kind) {
  ModelConfig c;
  c.n_layers = 12;
  c.n_heads = 12;
  c.d_model = 768;
  c.d_ff = 3072;
  c.vocab_size = vocab_size;
  c.dropout = 0.1;
  c.encoding = encoding::EncodingSpec::make(kind, c.d_model, c.n_heads, 16);
  return c;
}

ModelConfig ModelConfig::desk(std::size_t vocab_size, EncodingKind kind) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.encoding = encoding::EncodingSpec::make(kind, c.d_model, c.n_heads, 0);
  return c;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"n_layers", c.n_layers},   {"n_heads", c.n_heads},
                     {"d_model", c.d_model},     {"d_ff", c.d_ff},
                     {"vocab_size", c.vocab_size}, {"dropout", c.dropout},
                     {"encoding", c.encoding},   {"indexing", c.indexing}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.encoding = j.at("encoding").get<encoding::EncodingSpec>();
  c.indexing = j.at("indexing").get<indexing::IndexingSpec>();
}

namespace {

template <typename T>
Tensor<T> normal_init(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> data(shape_numel(shape));
  for (auto& v : data) v = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(data), true);
}

template <typename T>
Tensor<T> constant_init(std::size_t n, T value) {
  return Tensor<T>::full({n}, value, true);
}

}  // namespace

template <typename T>
Transformer<T>::Transformer(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  const std::size_t d = cfg_.d_model, f = cfg_.d_ff, v = cfg_.vocab_size;
  const double std_base = 0.02;
  const double std_resid = 0.02 / std::sqrt(2.0 * static_cast<double>(cfg_.n_layers));
  tok_emb_ = normal_init<T>({v, d}, std_base, rng);
  blocks_.resize(cfg_.n_layers);
  for (auto& b : blocks_) {
    b.ln1_gain = constant_init<T>(d, T(1));
    b.ln1_bias = constant_init<T>(d, T(0));
    b.wq = normal_init<T>({d, d}, std_base, rng);
    b.bq = constant_init<T>(d, T(0));
    b.wk = normal_init<T>({d, d}, std_base, rng);
    b.bk = constant_init<T>(d, T(0));
    b.wv = normal_init<T>({d, d}, std_base, rng);
    b.bv = constant_init<T>(d, T(0));
    b.wo = normal_init<T>({d, d}, std_resid, rng);
    b.bo = constant_init<T>(d, T(0));
    b.ln2_gain = constant_init<T>(d, T(1));
    b.ln2_bias = constant_init<T>(d, T(0));
    b.w_in = normal_init<T>({d, f}, std_base, rng);
    b.b_in = constant_init<T>(f, T(0));
    b.w_out = normal_init<T>({f, d}, std_resid, rng);
    b.b_out = constant_init<T>(d, T(0));
  }
  lnf_gain_ = constant_init<T>(d, T(1));
  lnf_bias_ = constant_init<T>(d, T(0));
  head_w_ = normal_init<T>({d, v}, std_base, rng);
  head_b_ = constant_init<T>(v, T(0));
}

template <typename T>
std::vector<NamedTensor<T>> Transformer<T>::parameters() const {
  std::vector<NamedTensor<T>> out;
  out.push_back({"tok_emb", tok_emb_});
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const auto& b = blocks_[l];
    const std::string p = "blocks." + std::to_string(l) + ".";
    out.push_back({p + "ln1.gain", b.ln1_gain});
    out.push_back({p + "ln1.bias", b.ln1_bias});
    out.push_back({p + "attn.wq", b.wq});
    out.push_back({p + "attn.bq", b.bq});
    out.push_back({p + "attn.wk", b.wk});
    out.push_back({p + "attn.bk", b.bk});
    out.push_back({p + "attn.wv", b.wv});
    out.push_back({p + "attn.bv", b.bv});
    out.push_back({p + "attn.wo", b.wo});
    out.push_back({p + "attn.bo", b.bo});
    out.push_back({p + "ln2.gain", b.ln2_gain});
    out.push_back({p + "ln2.bias", b.ln2_bias});
    out.push_back({p + "mlp.w_in", b.w_in});
    out.push_back({p + "mlp.b_in", b.b_in});
    out.push_back({p + "mlp.w_out", b.w_out});
    out.push_back({p + "mlp.b_out", b.b_out});
  }
  out.push_back({"lnf.gain", lnf_gain_});
  out.push_back({"lnf.bias", lnf_bias_});
  out.push_back({"head.w", head_w_});
  out.push_back({"head.b", head_b_});
  return out;
}

template <typename T>
std::size_t Transformer<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

template <typename T>
Tensor<T> Transformer<T>::forward(std::span<const TokenId> tokens,
                                  std::span<const double> positions, std::size_t batch,
                                  std::size_t seq, Rng* dropout_rng) const {
  if (seq == 0 || batch == 0) throw ShapeError("forward: empty batch");
  if (tokens.size() != batch * seq) {
    throw ShapeError("forward: " + std::to_string(tokens.size()) + " tokens for batch " +
                     std::to_string(batch) + " x seq " + std::to_string(seq));
  }
  if (positions.size() != tokens.size()) {
    throw ShapeError("forward: " + std::to_string(positions.size()) +
                     " position indices for " + std::to_string(tokens.size()) + " tokens");
  }
  const auto& enc = cfg_.encoding;
  const std::size_t heads = cfg_.n_heads;
  const double p_drop = dropout_rng ? cfg_.dropout : 0.0;
  auto drop = [&](const Tensor<T>& t) {
    return p_drop > 0.0 ? ops::dropout(t, p_drop, *dropout_rng) : t;
  };

  Tensor<T> x = ops::embed(tokens, tok_emb_);
  if (enc.kind == EncodingKind::Sinusoidal) {
    const auto pe = encoding::sinusoidal_values<T>(positions, cfg_.d_model);
    x = ops::add_constant<T>(x, pe);
  }
  x = drop(x);

  std::vector<T> bias;
  if (enc.kind == EncodingKind::ALiBi) {
    bias.reserve(batch * heads * seq * seq);
    for (std::size_t b = 0; b < batch; ++b) {
      auto row = positions.subspan(b * seq, seq);
      auto part = encoding::alibi_bias_values<T>(row, row, enc.alibi_slopes, 0);
      bias.insert(bias.end(), part.begin(), part.end());
    }
  }

  for (const auto& blk : blocks_) {
    Tensor<T> h = ops::layernorm(x, blk.ln1_gain, blk.ln1_bias);
    Tensor<T> q = ops::split_heads(ops::linear(h, blk.wq, blk.bq), batch, seq, heads);
    Tensor<T> k = ops::split_heads(ops::linear(h, blk.wk, blk.bk), batch, seq, heads);
    Tensor<T> v = ops::split_heads(ops::linear(h, blk.wv, blk.bv), batch, seq, heads);
    if (enc.kind == EncodingKind::RoPE) {
      q = ops::rope(q, positions, enc.rotary_dim, enc.base);
      k = ops::rope(k, positions, enc.rotary_dim, enc.base);
    }
    Tensor<T> a = ops::attention<T>(q, k, v, bias, 0);
    x = ops::add(x, drop(ops::linear(ops::merge_heads(a), blk.wo, blk.bo)));
    Tensor<T> h2 = ops::layernorm(x, blk.ln2_gain, blk.ln2_bias);
    Tensor<T> m = ops::linear(ops::gelu(ops::linear(h2, blk.w_in, blk.b_in)), blk.w_out, blk.b_out);
    x = ops::add(x, drop(m));
  }
  x = ops::layernorm(x, lnf_gain_, lnf_bias_);
  return ops::linear(x, head_w_, head_b_);
}

template <typename T>
std::vector<T> Transformer<T>::forward_incremental(KVCache<T>& cache,
                                                   std::span<const TokenId> tokens,
                                                   std::span<const double> positions) const {
  if (tokens.empty()) return {};
  if (positions.size() != tokens.size()) {
    throw ShapeError("forward_incremental: " + std::to_string(positions.size()) +
                     " positions for " + std::to_string(tokens.size()) + " tokens");
  }
  NoGradGuard no_grad;
  const auto& enc = cfg_.encoding;
  const std::size_t heads = cfg_.n_heads, hd = enc.head_dim, tn = tokens.size();
  const std::size_t past = cache.length, total = past + tn;
  if (cache.keys.size() != blocks_.size()) {
    cache.keys.assign(blocks_.size(), {});
    cache.values.assign(blocks_.size(), {});
  }
  cache.positions.insert(cache.positions.end(), positions.begin(), positions.end());

  Tensor<T> x = ops::embed(tokens, tok_emb_);
  if (enc.kind == EncodingKind::Sinusoidal) {
    const auto pe = encoding::sinusoidal_values<T>(positions, cfg_.d_model);
    x = ops::add_constant<T>(x, pe);
  }
  std::vector<T> bias;
  if (enc.kind == EncodingKind::ALiBi) {
    bias = encoding::alibi_bias_values<T>(positions, cache.positions, enc.alibi_slopes, past);
  }

  // Appends [1,H,tn,Dh] into a [H,past,Dh] buffer, returning [1,H,total,Dh].
  auto extend = [&](std::vector<T>& store, const Tensor<T>& fresh) {
    std::vector<T> merged(heads * total * hd);
    auto src = fresh.data();
    for (std::size_t h = 0; h < heads; ++h) {
      std::copy_n(store.begin() + static_cast<std::ptrdiff_t>(h * past * hd), past * hd,
                  merged.begin() + static_cast<std::ptrdiff_t>(h * total * hd));
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(h * tn * hd), tn * hd,
                  merged.begin() + static_cast<std::ptrdiff_t>((h * total + past) * hd));
    }
    store = merged;
    return Tensor<T>({1, heads, total, hd}, std::move(merged));
  };

  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const auto& blk = blocks_[l];
    Tensor<T> h = ops::layernorm(x, blk.ln1_gain, blk.ln1_bias);
    Tensor<T> q = ops::split_heads(ops::linear(h, blk.wq, blk.bq), 1, tn, heads);
    Tensor<T> k = ops::split_heads(ops::linear(h, blk.wk, blk.bk), 1, tn, heads);
    Tensor<T> v = ops::split_heads(ops::linear(h, blk.wv, blk.bv), 1, tn, heads);
    if (enc.kind == EncodingKind::RoPE) {
      q = ops::rope(q, positions, enc.rotary_dim, enc.base);
      k = ops::rope(k, positions, enc.rotary_dim, enc.base);
    }
    Tensor<T> k_all = extend(cache.keys[l], k);
    Tensor<T> v_all = extend(cache.values[l], v);
    Tensor<T> a = ops::attention<T>(q, k_all, v_all, bias, past);
    x = ops::add(x, ops::linear(ops::merge_heads(a), blk.wo, blk.bo));
    Tensor<T> h2 = ops::layernorm(x, blk.ln2_gain, blk.ln2_bias);
    x = ops::add(x, ops::linear(ops::gelu(ops::linear(h2, blk.w_in, blk.b_in)), blk.w_out,
                                blk.b_out));
  }
  cache.length = total;
  x = ops::layernorm(x, lnf_gain_, lnf_bias_);
  Tensor<T> logits = ops::linear(x, head_w_, head_b_);
  return {logits.data().begin(), logits.data().end()};
}

template <typename T>
std::vector<TokenId> greedy_decode(const Transformer<T>& model, std::span<const TokenId> prompt,
                                   std::size_t max_new, TokenId eos) {
  if (prompt.empty()) throw ConfigError("greedy_decode: prompt must be non-empty");
  std::vector<TokenId> out(prompt.begin(), prompt.end());
  if (max_new == 0) return out;
  const auto& idx = model.config().indexing;
  const std::size_t n_in = prompt.size() + max_new;
  if (idx.length_cap() && n_in > idx.length_cap()) {
    throw ConfigError("greedy_decode: context length " + std::to_string(n_in) +
                      " exceeds the " + std::string(indexing::to_string(idx.strategy)) +
                      " strategy's maximum length " + std::to_string(idx.length_cap()));
  }
  const indexing::IndexSequence positions = idx.inference(n_in);
  const std::size_t vocab = model.config().vocab_size;
  KVCache<T> cache;
  std::vector<T> logits = model.forward_incremental(
      cache, prompt, std::span<const double>(positions.values).first(prompt.size()));
  for (std::size_t step = 0; step < max_new; ++step) {
    const T* last = logits.data() + logits.size() - vocab;
    const auto next = static_cast<TokenId>(std::max_element(last, last + vocab) - last);
    out.push_back(next);
    if (next == eos || step + 1 == max_new) break;
    const std::size_t pos = out.size() - 1;
    const TokenId tok[1] = {next};
    logits = model.forward_incremental(cache, tok,
                                       std::span<const double>(positions.values).subspan(pos, 1));
  }
  return out;
}

template class Transformer<float>;
template class Transformer<double>;
template std::vector<TokenId> greedy_decode(const Transformer<float>&, std::span<const TokenId>,
                                            std::size_t, TokenId);
template std::vector<TokenId> greedy_decode(const Transformer<double>&, std::span<const TokenId>,
                                            std::size_t, TokenId);

}  // namespace rfs::model
