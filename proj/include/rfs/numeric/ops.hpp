#pragma once

#include <cstddef>
#include <optional>
#include <span>

#include "rfs/common.hpp"
#include "rfs/numeric/tensor.hpp"

// Differentiable tensor operations. Every op validates shapes and throws
// ShapeError naming itself and the dims on mismatch.
namespace rfs::ops {

/// [M,K] x [K,N] -> [M,N].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// x[M,K] * w[K,N] + bias[N]; bias may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

/// Elementwise product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

/// Adds a tensor that never receives gradients (position matrices, biases).
template <typename T>
Tensor<T> add_constant(const Tensor<T>& a, std::span<const T> constant);

/// Sum of all elements, as a scalar.
template <typename T>
Tensor<T> sum(const Tensor<T>& a);

/// Softmax over the last axis.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a);

/// Row-wise layer normalization of x[..., D] with per-feature gain and bias.
/// Variance uses eps inside the square root, so a constant row maps to bias.
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain,
                    const Tensor<T>& bias, T eps = T(1e-5));

/// GELU, tanh approximation.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

/// Rows of table[V,D] selected by ids -> [N,D].
template <typename T>
Tensor<T> embed(std::span<const TokenId> ids, const Tensor<T>& table);

/// Mean token cross-entropy of logits[N,V] against targets. Positions with a
/// negative target are ignored; with no valid position the loss is zero.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const TokenId> targets);

/// Inverted dropout with keep probability 1-p. Identity when p == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng);

/// [B*T, H*Dh] -> [B,H,T,Dh].
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t batch, std::size_t seq,
                      std::size_t heads);

/// [B,H,T,Dh] -> [B*T, H*Dh].
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x);

/// Rotary embedding of x[B,H,T,Dh]: the pair (2k, 2k+1), k < rotary_dim/2, of
/// row (b,t) turns by positions[b*T+t] / base^(2k/rotary_dim). Remaining
/// channels pass through.
template <typename T>
Tensor<T> rope(const Tensor<T>& x, std::span<const double> positions,
               std::size_t rotary_dim, double base);

/// Scaled dot-product attention with causal masking.
///
/// q[B,H,Tq,Dh], k and v [B,H,Tk,Dh]. Query row i sits at key index
/// q_offset + i and may attend to keys 0..q_offset+i. `bias`, when given,
/// holds B*H*Tq*Tk additive score terms (ALiBi); it gets no gradient.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    std::span<const T> bias, std::size_t q_offset = 0);

}  // namespace rfs::ops
