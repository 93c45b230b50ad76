#include "rfs/numeric/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

namespace rfs::ops {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

[[noreturn]] void shape_fail(const char* op, const std::string& what) {
  throw ShapeError(std::string(op) + ": " + what);
}

template <typename T>
void require_rank(const char* op, const Tensor<T>& t, std::size_t rank) {
  if (!t.defined()) shape_fail(op, "undefined input");
  if (t.rank() != rank) {
    shape_fail(op, "expected rank " + std::to_string(rank) + ", got " +
                       shape_str(t.shape()));
  }
}

template <typename T>
void require_same(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    shape_fail(op, "shape mismatch " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
  }
}

template <typename T>
using NodePtr = std::shared_ptr<detail::TensorNode<T>>;

template <typename T>
bool wants(const NodePtr<T>& p) {
  return p->requires_grad;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), kk = a.dim(1), n = b.dim(1);
  if (b.dim(0) != kk) {
    shape_fail("matmul", "inner dims differ: " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
  }
  std::vector<T> out(m * n);
  MapMat<T>(out.data(), m, n).noalias() =
      CMapMat<T>(a.data().data(), m, kk) * CMapMat<T>(b.data().data(), kk, n);
  return Tensor<T>::make_result(
      {m, n}, std::move(out), {a, b}, [m, kk, n](detail::TensorNode<T>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        CMapMat<T> g(self.grad.data(), m, n);
        if (wants<T>(pa)) {
          MapMat<T>(pa->grad_buffer().data(), m, kk).noalias() +=
              g * CMapMat<T>(pb->data.data(), kk, n).transpose();
        }
        if (wants<T>(pb)) {
          MapMat<T>(pb->grad_buffer().data(), kk, n).noalias() +=
              CMapMat<T>(pa->data.data(), m, kk).transpose() * g;
        }
      });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  require_rank("linear", x, 2);
  require_rank("linear", w, 2);
  const std::size_t m = x.dim(0), kk = x.dim(1), n = w.dim(1);
  if (w.dim(0) != kk) {
    shape_fail("linear", "input " + shape_str(x.shape()) + " vs weight " +
                             shape_str(w.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != n)) {
    shape_fail("linear", "bias " + shape_str(bias.shape()) + " vs out dim " +
                             std::to_string(n));
  }
  std::vector<T> out(m * n);
  MapMat<T> y(out.data(), m, n);
  y.noalias() = CMapMat<T>(x.data().data(), m, kk) * CMapMat<T>(w.data().data(), kk, n);
  if (has_bias) {
    y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(
        bias.data().data(), n);
  }
  std::vector<Tensor<T>> parents{x, w};
  if (has_bias) parents.push_back(bias);
  return Tensor<T>::make_result(
      {m, n}, std::move(out), std::move(parents),
      [m, kk, n, has_bias](detail::TensorNode<T>& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        CMapMat<T> g(self.grad.data(), m, n);
        if (wants<T>(px)) {
          MapMat<T>(px->grad_buffer().data(), m, kk).noalias() +=
              g * CMapMat<T>(pw->data.data(), kk, n).transpose();
        }
        if (wants<T>(pw)) {
          MapMat<T>(pw->grad_buffer().data(), kk, n).noalias() +=
              CMapMat<T>(px->data.data(), m, kk).transpose() * g;
        }
        if (has_bias && wants<T>(self.parents[2])) {
          // Plain row-order loop: Eigen's partial reduction changes its
          // summation order with the buffer's alignment.
          auto& gb = self.parents[2]->grad_buffer();
          const T* gr = self.grad.data();
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) gb[c] += gr[r * n + c];
        }
      });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same("add", a, b);
  std::vector<T> out(a.numel());
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b},
                                [](detail::TensorNode<T>& self) {
                                  for (auto& p : self.parents) {
                                    if (!wants<T>(p)) continue;
                                    auto& g = p->grad_buffer();
                                    for (std::size_t i = 0; i < g.size(); ++i) {
                                      g[i] += self.grad[i];
                                    }
                                  }
                                });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same("mul", a, b);
  std::vector<T> out(a.numel());
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
  return Tensor<T>::make_result(
      a.shape(), std::move(out), {a, b}, [](detail::TensorNode<T>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (wants<T>(pa)) {
          auto& g = pa->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->data[i];
        }
        if (wants<T>(pb)) {
          auto& g = pb->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->data[i];
        }
      });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return Tensor<T>::make_result(a.shape(), std::move(out), {a},
                                [factor](detail::TensorNode<T>& self) {
                                  auto& g = self.parents[0]->grad_buffer();
                                  for (std::size_t i = 0; i < g.size(); ++i) {
                                    g[i] += factor * self.grad[i];
                                  }
                                });
}

template <typename T>
Tensor<T> add_constant(const Tensor<T>& a, std::span<const T> constant) {
  if (constant.size() != a.numel()) {
    shape_fail("add_constant", "constant has " + std::to_string(constant.size()) +
                                   " values for tensor " + shape_str(a.shape()));
  }
  std::vector<T> out(a.numel());
  auto da = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + constant[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a},
                                [](detail::TensorNode<T>& self) {
                                  auto& g = self.parents[0]->grad_buffer();
                                  for (std::size_t i = 0; i < g.size(); ++i) {
                                    g[i] += self.grad[i];
                                  }
                                });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = 0;
  for (T v : a.data()) total += v;
  return Tensor<T>::make_result({}, {total}, {a}, [](detail::TensorNode<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a) {
  if (!a.defined() || a.rank() == 0) shape_fail("softmax", "needs at least one axis");
  const std::size_t cols = a.shape().back();
  const std::size_t rows = cols == 0 ? 0 : a.numel() / cols;
  std::vector<T> out(a.numel());
  auto in = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = in.data() + r * cols;
    T* y = out.data() + r * cols;
    T mx = *std::max_element(x, x + cols);
    T z = 0;
    for (std::size_t c = 0; c < cols; ++c) z += (y[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) y[c] /= z;
  }
  return Tensor<T>::make_result(
      a.shape(), std::move(out), {a}, [rows, cols](detail::TensorNode<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          const T* y = self.data.data() + r * cols;
          const T* gy = self.grad.data() + r * cols;
          T dot = 0;
          for (std::size_t c = 0; c < cols; ++c) dot += y[c] * gy[c];
          for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += y[c] * (gy[c] - dot);
        }
      });
}

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                    T eps) {
  if (!x.defined() || x.rank() == 0) shape_fail("layernorm", "needs at least one axis");
  const std::size_t d = x.shape().back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    shape_fail("layernorm", "gain " + shape_str(gain.shape()) + " / bias " +
                                shape_str(bias.shape()) + " vs feature dim " +
                                std::to_string(d));
  }
  const std::size_t rows = x.numel() / d;
  std::vector<T> out(x.numel());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  auto in = x.data();
  auto g = gain.data();
  auto b = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = in.data() + r * d;
    T mean = 0;
    for (std::size_t c = 0; c < d; ++c) mean += xr[c];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t c = 0; c < d; ++c) {
      const T h = (xr[c] - mean) * rs;
      (*xhat)[r * d + c] = h;
      out[r * d + c] = h * g[c] + b[c];
    }
  }
  return Tensor<T>::make_result(
      x.shape(), std::move(out), {x, gain, bias},
      [rows, d, xhat, rstd](detail::TensorNode<T>& self) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pb = self.parents[2];
        const T* gy = self.grad.data();
        const T* h = xhat->data();
        if (wants<T>(pg)) {
          auto& gg = pg->grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c) gg[c] += gy[r * d + c] * h[r * d + c];
        }
        if (wants<T>(pb)) {
          auto& gb = pb->grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c) gb[c] += gy[r * d + c];
        }
        if (wants<T>(px)) {
          auto& gx = px->grad_buffer();
          const T* gain_v = pg->data.data();
          std::vector<T> dh(d);
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_dh = 0, mean_dh_h = 0;
            for (std::size_t c = 0; c < d; ++c) {
              dh[c] = gy[r * d + c] * gain_v[c];
              mean_dh += dh[c];
              mean_dh_h += dh[c] * h[r * d + c];
            }
            mean_dh /= static_cast<T>(d);
            mean_dh_h /= static_cast<T>(d);
            for (std::size_t c = 0; c < d; ++c) {
              gx[r * d + c] += (*rstd)[r] * (dh[c] - mean_dh - h[r * d + c] * mean_dh_h);
            }
          }
        }
      });
}

// Eigen peels unaligned heads into scalar code, whose tanh differs from the
// packet version in the last bits. Staging through an aligned buffer keeps
// every element on a path fixed by its index, so results never depend on
// where the allocator placed the data.
template <typename T, typename F>
void aligned_chunks(std::size_t n, F&& f) {
  constexpr std::size_t kChunk = 512;
  for (std::size_t lo = 0; lo < n; lo += kChunk) f(lo, std::min(kChunk, n - lo));
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  using Buf = Eigen::Map<Arr, Eigen::Aligned64>;
  static constexpr T kAlpha = T(0.7978845608028654);  // sqrt(2/pi)
  static constexpr T kCubic = T(0.044715);
  const std::size_t n = x.numel();
  // tanh of the inner polynomial, kept for the backward pass.
  auto t = std::make_shared<std::vector<T>>(n);
  std::vector<T> out(n);
  const T* src = x.data().data();
  aligned_chunks<T>(n, [&](std::size_t lo, std::size_t len) {
    alignas(64) T vb[512];
    alignas(64) T tb[512];
    const auto ln = static_cast<Eigen::Index>(len);
    std::copy(src + lo, src + lo + len, vb);
    Buf v(vb, ln), tm(tb, ln);
    tm = (kAlpha * (v + kCubic * v.cube())).tanh();
    std::copy(tb, tb + len, t->data() + lo);
    v = T(0.5) * v * (T(1) + tm);
    std::copy(vb, vb + len, out.data() + lo);
  });
  return Tensor<T>::make_result(
      x.shape(), std::move(out), {x}, [t](detail::TensorNode<T>& self) {
        auto& p = self.parents[0];
        auto& g = p->grad_buffer();
        aligned_chunks<T>(g.size(), [&](std::size_t lo, std::size_t len) {
          alignas(64) T vb[512];
          alignas(64) T tb[512];
          alignas(64) T ub[512];
          const auto ln = static_cast<Eigen::Index>(len);
          std::copy(p->data.data() + lo, p->data.data() + lo + len, vb);
          std::copy(t->data() + lo, t->data() + lo + len, tb);
          std::copy(self.grad.data() + lo, self.grad.data() + lo + len, ub);
          Buf vv(vb, ln), tt(tb, ln), up(ub, ln);
          up = up * (T(0.5) * (T(1) + tt) +
                     T(0.5) * vv * (T(1) - tt.square()) * kAlpha *
                         (T(1) + T(3) * kCubic * vv.square()));
          for (std::size_t i = 0; i < len; ++i) g[lo + i] += ub[i];
        });
      });
}

template <typename T>
Tensor<T> embed(std::span<const TokenId> ids, const Tensor<T>& table) {
  require_rank("embed", table, 2);
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  auto rows = std::make_shared<std::vector<TokenId>>(ids.begin(), ids.end());
  std::vector<T> out(rows->size() * d);
  auto tab = table.data();
  for (std::size_t i = 0; i < rows->size(); ++i) {
    const TokenId id = (*rows)[i];
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      shape_fail("embed", "token id " + std::to_string(id) + " outside vocab of " +
                              std::to_string(vocab));
    }
    std::copy_n(tab.data() + static_cast<std::size_t>(id) * d, d, out.data() + i * d);
  }
  return Tensor<T>::make_result({rows->size(), d}, std::move(out), {table},
                                [rows, d](detail::TensorNode<T>& self) {
                                  auto& g = self.parents[0]->grad_buffer();
                                  for (std::size_t i = 0; i < rows->size(); ++i) {
                                    T* dst = g.data() + static_cast<std::size_t>((*rows)[i]) * d;
                                    const T* src = self.grad.data() + i * d;
                                    for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
                                  }
                                });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const TokenId> targets) {
  require_rank("cross_entropy", logits, 2);
  const std::size_t n = logits.dim(0), v = logits.dim(1);
  if (targets.size() != n) {
    shape_fail("cross_entropy", "logits " + shape_str(logits.shape()) + " vs " +
                                    std::to_string(targets.size()) + " targets");
  }
  auto probs = std::make_shared<std::vector<T>>(n * v);
  auto tgt = std::make_shared<std::vector<TokenId>>(targets.begin(), targets.end());
  auto in = logits.data();
  T total = 0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const TokenId t = targets[r];
    if (t < 0) continue;
    if (static_cast<std::size_t>(t) >= v) {
      shape_fail("cross_entropy", "target " + std::to_string(t) + " >= vocab " +
                                      std::to_string(v));
    }
    const T* x = in.data() + r * v;
    T* p = probs->data() + r * v;
    const T mx = *std::max_element(x, x + v);
    T z = 0;
    for (std::size_t c = 0; c < v; ++c) z += (p[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < v; ++c) p[c] /= z;
    total += -(x[t] - mx - std::log(z));
    ++count;
  }
  const T inv = count ? T(1) / static_cast<T>(count) : T(0);
  return Tensor<T>::make_result(
      {}, {total * inv}, {logits}, [n, v, inv, probs, tgt](detail::TensorNode<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        const T up = self.grad[0] * inv;
        for (std::size_t r = 0; r < n; ++r) {
          const TokenId t = (*tgt)[r];
          if (t < 0) continue;
          for (std::size_t c = 0; c < v; ++c) g[r * v + c] += up * (*probs)[r * v + c];
          g[r * v + static_cast<std::size_t>(t)] -= up;
        }
      });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) shape_fail("dropout", "p must be in [0,1), got " + std::to_string(p));
  if (p == 0.0) return x;
  auto mask = std::make_shared<std::vector<T>>(x.numel());
  std::bernoulli_distribution keep(1.0 - p);
  const T s = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = keep(rng) ? s : T(0);
    out[i] = in[i] * (*mask)[i];
  }
  return Tensor<T>::make_result(x.shape(), std::move(out), {x},
                                [mask](detail::TensorNode<T>& self) {
                                  auto& g = self.parents[0]->grad_buffer();
                                  for (std::size_t i = 0; i < g.size(); ++i) {
                                    g[i] += self.grad[i] * (*mask)[i];
                                  }
                                });
}

template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t batch, std::size_t seq,
                      std::size_t heads) {
  require_rank("split_heads", x, 2);
  if (heads == 0 || x.dim(0) != batch * seq || x.dim(1) % heads != 0) {
    shape_fail("split_heads", shape_str(x.shape()) + " vs batch " + std::to_string(batch) +
                                  ", seq " + std::to_string(seq) + ", heads " +
                                  std::to_string(heads));
  }
  const std::size_t hd = x.dim(1) / heads;
  const std::size_t width = x.dim(1);
  std::vector<T> out(x.numel());
  auto in = x.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < seq; ++t)
      for (std::size_t h = 0; h < heads; ++h)
        std::copy_n(in.data() + (b * seq + t) * width + h * hd, hd,
                    out.data() + ((b * heads + h) * seq + t) * hd);
  return Tensor<T>::make_result(
      {batch, heads, seq, hd}, std::move(out), {x},
      [batch, seq, heads, hd, width](detail::TensorNode<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t t = 0; t < seq; ++t)
            for (std::size_t h = 0; h < heads; ++h) {
              T* dst = g.data() + (b * seq + t) * width + h * hd;
              const T* src = self.grad.data() + ((b * heads + h) * seq + t) * hd;
              for (std::size_t c = 0; c < hd; ++c) dst[c] += src[c];
            }
      });
}

template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x) {
  require_rank("merge_heads", x, 4);
  const std::size_t batch = x.dim(0), heads = x.dim(1), seq = x.dim(2), hd = x.dim(3);
  const std::size_t width = heads * hd;
  std::vector<T> out(x.numel());
  auto in = x.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < seq; ++t)
        std::copy_n(in.data() + ((b * heads + h) * seq + t) * hd, hd,
                    out.data() + (b * seq + t) * width + h * hd);
  return Tensor<T>::make_result(
      {batch * seq, width}, std::move(out), {x},
      [batch, seq, heads, hd, width](detail::TensorNode<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t t = 0; t < seq; ++t) {
              T* dst = g.data() + ((b * heads + h) * seq + t) * hd;
              const T* src = self.grad.data() + (b * seq + t) * width + h * hd;
              for (std::size_t c = 0; c < hd; ++c) dst[c] += src[c];
            }
      });
}

template <typename T>
Tensor<T> rope(const Tensor<T>& x, std::span<const double> positions,
               std::size_t rotary_dim, double base) {
  require_rank("rope", x, 4);
  const std::size_t batch = x.dim(0), heads = x.dim(1), seq = x.dim(2), hd = x.dim(3);
  if (rotary_dim % 2 != 0 || rotary_dim > hd) {
    shape_fail("rope", "rotary dim " + std::to_string(rotary_dim) +
                           " must be even and <= head dim " + std::to_string(hd));
  }
  if (positions.size() != batch * seq) {
    shape_fail("rope", std::to_string(positions.size()) + " positions for batch*seq " +
                           std::to_string(batch * seq));
  }
  const std::size_t pairs = rotary_dim / 2;
  // cos/sin per (row, pair)
  auto table = std::make_shared<std::vector<T>>(batch * seq * pairs * 2);
  for (std::size_t r = 0; r < batch * seq; ++r)
    for (std::size_t k = 0; k < pairs; ++k) {
      const double inv_freq =
          std::pow(base, -static_cast<double>(2 * k) / static_cast<double>(rotary_dim));
      const double angle = positions[r] * inv_freq;
      (*table)[(r * pairs + k) * 2] = static_cast<T>(std::cos(angle));
      (*table)[(r * pairs + k) * 2 + 1] = static_cast<T>(std::sin(angle));
    }
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < seq; ++t) {
        T* v = out.data() + ((b * heads + h) * seq + t) * hd;
        const T* cs = table->data() + (b * seq + t) * pairs * 2;
        for (std::size_t k = 0; k < pairs; ++k) {
          const T c = cs[2 * k], s = cs[2 * k + 1];
          const T x0 = v[2 * k], x1 = v[2 * k + 1];
          v[2 * k] = x0 * c - x1 * s;
          v[2 * k + 1] = x0 * s + x1 * c;
        }
      }
  return Tensor<T>::make_result(
      x.shape(), std::move(out), {x},
      [batch, heads, seq, hd, pairs, table](detail::TensorNode<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t t = 0; t < seq; ++t) {
              const std::size_t off = ((b * heads + h) * seq + t) * hd;
              const T* gy = self.grad.data() + off;
              T* gx = g.data() + off;
              const T* cs = table->data() + (b * seq + t) * pairs * 2;
              for (std::size_t k = 0; k < pairs; ++k) {
                const T c = cs[2 * k], s = cs[2 * k + 1];
                gx[2 * k] += gy[2 * k] * c + gy[2 * k + 1] * s;
                gx[2 * k + 1] += -gy[2 * k] * s + gy[2 * k + 1] * c;
              }
              for (std::size_t c = 2 * pairs; c < hd; ++c) gx[c] += gy[c];
            }
      });
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    std::span<const T> bias, std::size_t q_offset) {
  require_rank("attention", q, 4);
  require_rank("attention", k, 4);
  require_same("attention", k, v);
  const std::size_t batch = q.dim(0), heads = q.dim(1), tq = q.dim(2), hd = q.dim(3);
  const std::size_t tk = k.dim(2);
  if (k.dim(0) != batch || k.dim(1) != heads || k.dim(3) != hd) {
    shape_fail("attention", "query " + shape_str(q.shape()) + " vs key " +
                                shape_str(k.shape()));
  }
  if (q_offset + tq > tk) {
    shape_fail("attention", "queries end at " + std::to_string(q_offset + tq) +
                                " but only " + std::to_string(tk) + " keys");
  }
  const bool has_bias = !bias.empty();
  if (has_bias && bias.size() != batch * heads * tq * tk) {
    shape_fail("attention", "bias has " + std::to_string(bias.size()) + " values, need " +
                                std::to_string(batch * heads * tq * tk));
  }
  const T scl = T(1) / std::sqrt(static_cast<T>(hd));
  auto probs = std::make_shared<std::vector<T>>(batch * heads * tq * tk, T(0));
  std::vector<T> out(batch * heads * tq * hd);
  RowMat<T> scores(tq, tk);
  for (std::size_t bh = 0; bh < batch * heads; ++bh) {
    CMapMat<T> qm(q.data().data() + bh * tq * hd, tq, hd);
    CMapMat<T> km(k.data().data() + bh * tk * hd, tk, hd);
    CMapMat<T> vm(v.data().data() + bh * tk * hd, tk, hd);
    scores.noalias() = (qm * km.transpose()) * scl;
    MapMat<T> pm(probs->data() + bh * tq * tk, tq, tk);
    for (std::size_t i = 0; i < tq; ++i) {
      const std::size_t limit = q_offset + i + 1;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < limit; ++j) {
        if (has_bias) scores(i, j) += bias[(bh * tq + i) * tk + j];
        mx = std::max(mx, scores(i, j));
      }
      T z = 0;
      for (std::size_t j = 0; j < limit; ++j) z += (pm(i, j) = std::exp(scores(i, j) - mx));
      for (std::size_t j = 0; j < limit; ++j) pm(i, j) /= z;
    }
    MapMat<T>(out.data() + bh * tq * hd, tq, hd).noalias() = pm * vm;
  }
  return Tensor<T>::make_result(
      q.shape(), std::move(out), {q, k, v},
      [batch, heads, tq, tk, hd, q_offset, scl, probs](detail::TensorNode<T>& self) {
        auto& pq = self.parents[0];
        auto& pk = self.parents[1];
        auto& pv = self.parents[2];
        RowMat<T> dp(tq, tk);
        for (std::size_t bh = 0; bh < batch * heads; ++bh) {
          CMapMat<T> go(self.grad.data() + bh * tq * hd, tq, hd);
          CMapMat<T> pm(probs->data() + bh * tq * tk, tq, tk);
          CMapMat<T> qm(pq->data.data() + bh * tq * hd, tq, hd);
          CMapMat<T> km(pk->data.data() + bh * tk * hd, tk, hd);
          CMapMat<T> vm(pv->data.data() + bh * tk * hd, tk, hd);
          if (wants<T>(pv)) {
            MapMat<T>(pv->grad_buffer().data() + bh * tk * hd, tk, hd).noalias() +=
                pm.transpose() * go;
          }
          if (!wants<T>(pq) && !wants<T>(pk)) continue;
          dp.noalias() = go * vm.transpose();
          for (std::size_t i = 0; i < tq; ++i) {
            const std::size_t limit = q_offset + i + 1;
            T dot = 0;
            for (std::size_t j = 0; j < limit; ++j) dot += pm(i, j) * dp(i, j);
            for (std::size_t j = 0; j < limit; ++j) dp(i, j) = pm(i, j) * (dp(i, j) - dot) * scl;
            for (std::size_t j = limit; j < tk; ++j) dp(i, j) = 0;
          }
          if (wants<T>(pq)) {
            MapMat<T>(pq->grad_buffer().data() + bh * tq * hd, tq, hd).noalias() += dp * km;
          }
          if (wants<T>(pk)) {
            MapMat<T>(pk->grad_buffer().data() + bh * tk * hd, tk, hd).noalias() +=
                dp.transpose() * qm;
          }
        }
      });
}

#define RFS_INSTANTIATE_OPS(T)                                                       \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> scale(const Tensor<T>&, T);                                     \
  template Tensor<T> add_constant(const Tensor<T>&, std::span<const T>);             \
  template Tensor<T> sum(const Tensor<T>&);                                          \
  template Tensor<T> softmax(const Tensor<T>&);                                      \
  template Tensor<T> layernorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                               T);                                                   \
  template Tensor<T> gelu(const Tensor<T>&);                                         \
  template Tensor<T> embed(std::span<const TokenId>, const Tensor<T>&);              \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const TokenId>);      \
  template Tensor<T> dropout(const Tensor<T>&, double, Rng&);                        \
  template Tensor<T> split_heads(const Tensor<T>&, std::size_t, std::size_t,         \
                                 std::size_t);                                       \
  template Tensor<T> merge_heads(const Tensor<T>&);                                  \
  template Tensor<T> rope(const Tensor<T>&, std::span<const double>, std::size_t,    \
                          double);                                                   \
  template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                               std::span<const T>, std::size_t);

RFS_INSTANTIATE_OPS(float)
RFS_INSTANTIATE_OPS(double)

#undef RFS_INSTANTIATE_OPS

}  // namespace rfs::ops
