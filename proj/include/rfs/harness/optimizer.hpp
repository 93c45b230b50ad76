#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "rfs/numeric/tensor.hpp"

namespace rfs::harness {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

/// Adam with decoupled weight decay:
///   theta -= lr * wd * theta
///   m = b1 m + (1-b1) g;  v = b2 v + (1-b2) g^2
///   theta -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
template <typename T>
class AdamW {
 public:
  /// `decay[i]` selects which parameters receive weight decay.
  AdamW(std::vector<Tensor<T>> params, std::vector<bool> decay, AdamWConfig cfg);

  /// One update with the gradients currently stored on the parameters.
  void step(double lr);
  void zero_grad();
  std::size_t steps_taken() const { return t_; }

  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<bool> decay_;
  AdamWConfig cfg_;
  std::vector<std::vector<T>> m_, v_;
  std::size_t t_ = 0;
};

/// Scales all gradients so their global L2 norm is at most max_norm, using
/// factor max_norm / (norm + 1e-6). Returns the norm before clipping.
template <typename T>
double clip_grad_norm(std::span<Tensor<T>> params, double max_norm);

template <typename T>
double global_grad_norm(std::span<const Tensor<T>> params);

enum class Schedule { Constant, Cosine };

std::string_view to_string(Schedule s);
Schedule parse_schedule(std::string_view s);

/// Learning rate for 1-based step s: lr * s / warmup during warmup, then
/// constant, or cosine decay to zero at total_steps.
double learning_rate_at(std::size_t step, double base_lr, std::size_t warmup,
                        std::size_t total_steps, Schedule schedule);

extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace rfs::harness
