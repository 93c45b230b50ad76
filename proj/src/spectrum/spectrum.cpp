#include "rfs/spectrum/spectrum.hpp"

#include <algorithm>
#include <cmath>

#include "rfs/encoding/position_encoding.hpp"
#include "rfs/numeric/linalg.hpp"
#include "rfs/tasks/tasks.hpp"

namespace rfs::spectrum {

std::size_t numerical_rank(std::span<const double> sv, double tol) {
  if (sv.empty()) return 0;
  const double top = *std::max_element(sv.begin(), sv.end());
  if (!(top > 0.0)) return 0;
  const double cut = tol * top;
  return static_cast<std::size_t>(
      std::count_if(sv.begin(), sv.end(), [cut](double s) { return s > cut; }));
}

SpectrumReport position_spectrum(indexing::Strategy strategy, std::size_t n, std::size_t d,
                                 double range_L, double tol) {
  if (n == 0) throw ConfigError("position_spectrum: n must be >= 1");
  if (d == 0 || d % 2 != 0) throw ConfigError("position_spectrum: d must be even and positive");
  if (!(tol >= 0.0)) throw ConfigError("position_spectrum: tolerance must be >= 0");
  indexing::IndexSequence seq;
  switch (strategy) {
    case indexing::Strategy::Extension: seq = indexing::extension_indices(n); break;
    case indexing::Strategy::RFS:
      seq = indexing::scale(indexing::rfs_inference_indices(n, n), range_L);
      break;
    default:
      throw ConfigError("position_spectrum: strategy " + std::string(indexing::to_string(strategy)) +
                        " is not part of the rank analysis");
  }
  SpectrumReport r;
  r.strategy = strategy;
  r.n = n;
  r.d = d;
  r.range_L = range_L;
  r.tolerance = tol;
  r.singular_values = singular_values(encoding::sinusoidal_matrix(seq, d));
  r.numerical_rank = numerical_rank(r.singular_values, tol);
  return r;
}

std::vector<std::size_t> fig6_lengths() { return {256, 512, 768, 1024, 1280, 1536, 1792, 2048}; }

bool distance_seen(const indexing::IndexingSpec& idx, double distance) {
  const double g = std::abs(distance);
  switch (idx.strategy) {
    case indexing::Strategy::RFS: return g < idx.scale_L;
    case indexing::Strategy::RandomInt:
      return g <= static_cast<double>(idx.random_int_max) - 1.0;
    default: return g <= static_cast<double>(idx.n_train_ref) - 1.0;
  }
}

namespace {

const Tensor<float>& find(const std::vector<model::NamedTensor<float>>& params,
                          const std::string& name) {
  for (const auto& p : params) {
    if (p.name == name) return p.tensor;
  }
  throw RuntimeFailure("attention_score_probe: model has no parameter " + name);
}

// Layer-0 projection of one token at one position: LN(emb + pe) * W + b.
std::vector<double> project(std::span<const float> emb, std::span<const double> pe,
                            const Tensor<float>& gain, const Tensor<float>& bias,
                            const Tensor<float>& w, const Tensor<float>& b) {
  const std::size_t d = emb.size();
  std::vector<double> x(d);
  for (std::size_t i = 0; i < d; ++i) x[i] = emb[i] + (pe.empty() ? 0.0 : pe[i]);
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(d);
  const double inv = 1.0 / std::sqrt(var + 1e-5);
  for (std::size_t i = 0; i < d; ++i) x[i] = (x[i] - mean) * inv * gain.data()[i] + bias.data()[i];
  const std::size_t out = w.dim(1);
  std::vector<double> y(out);
  for (std::size_t j = 0; j < out; ++j) {
    double acc = b.data()[j];
    for (std::size_t i = 0; i < d; ++i) acc += x[i] * w.data()[i * out + j];
    y[j] = acc;
  }
  return y;
}

}  // namespace

std::vector<ProbeStat> attention_score_probe(const model::Transformer<float>& model,
                                             std::span<const double> distances,
                                             std::size_t tokens) {
  const auto& cfg = model.config();
  const auto& enc = cfg.encoding;
  const auto params = model.parameters();
  const auto& emb = find(params, "tok_emb");
  const auto& gain = find(params, "blocks.0.ln1.gain");
  const auto& bias = find(params, "blocks.0.ln1.bias");
  const auto& wq = find(params, "blocks.0.attn.wq");
  const auto& bq = find(params, "blocks.0.attn.bq");
  const auto& wk = find(params, "blocks.0.attn.wk");
  const auto& bk = find(params, "blocks.0.attn.bk");

  const auto& vocab = tasks::Vocab::standard();
  std::vector<TokenId> ids;
  for (const auto& w : vocab.word_pool()) {
    if (ids.size() == tokens) break;
    const TokenId id = vocab.id(w);
    if (static_cast<std::size_t>(id) < emb.dim(0)) ids.push_back(id);
  }
  if (ids.empty()) throw ConfigError("attention_score_probe: no probe tokens");

  const std::size_t d = cfg.d_model, heads = cfg.n_heads, dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool sinus = enc.kind == encoding::EncodingKind::Sinusoidal;
  auto row = [&](TokenId id) {
    return std::span<const float>(emb.data().data() + static_cast<std::size_t>(id) * d, d);
  };

  std::vector<ProbeStat> out;
  for (double dist : distances) {
    const double query_pos = dist, key_pos = 0.0;
    std::vector<double> pe_q, pe_k;
    if (sinus) {
      pe_q = encoding::sinusoidal_values<double>(std::span<const double>(&query_pos, 1), d);
      pe_k = encoding::sinusoidal_values<double>(std::span<const double>(&key_pos, 1), d);
    }
    ProbeStat st;
    st.distance = dist;
    st.seen = distance_seen(cfg.indexing, dist);
    std::size_t count = 0;
    for (TokenId a : ids) {
      const auto q = project(row(a), pe_q, gain, bias, wq, bq);
      for (TokenId b : ids) {
        const auto k = project(row(b), pe_k, gain, bias, wk, bk);
        for (std::size_t h = 0; h < heads; ++h) {
          std::span<const double> qh(q.data() + h * dh, dh), kh(k.data() + h * dh, dh);
          std::vector<double> qr(qh.begin(), qh.end()), kr(kh.begin(), kh.end());
          if (enc.kind == encoding::EncodingKind::RoPE) {
            qr = encoding::rope_rotate(qh, query_pos, enc);
            kr = encoding::rope_rotate(kh, key_pos, enc);
          }
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += qr[c] * kr[c];
          s *= inv_sqrt;
          if (enc.kind == encoding::EncodingKind::ALiBi) {
            s -= enc.alibi_slopes[h] * (query_pos - key_pos);
          }
          st.mean_abs += std::abs(s);
          st.max_abs = std::max(st.max_abs, std::abs(s));
          ++count;
        }
      }
    }
    st.mean_abs /= static_cast<double>(count);
    out.push_back(st);
  }
  return out;
}

}  // namespace rfs::spectrum
