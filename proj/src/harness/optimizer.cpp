#include "rfs/harness/optimizer.hpp"

#include <cmath>
#include <numbers>

namespace rfs::harness {

template <typename T>
AdamW<T>::AdamW(std::vector<Tensor<T>> params, std::vector<bool> decay, AdamWConfig cfg)
    : params_(std::move(params)), decay_(std::move(decay)), cfg_(cfg) {
  if (decay_.size() != params_.size()) {
    throw ConfigError("AdamW: decay mask size differs from parameter count");
  }
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), T(0));
    v_.emplace_back(p.numel(), T(0));
  }
}

template <typename T>
void AdamW<T>::step(double lr) {
  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    auto w = p.mutable_data();
    auto g = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    const double decay = decay_[i] ? lr * cfg_.weight_decay : 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      double wj = static_cast<double>(w[j]);
      wj -= decay * wj;
      const double gj = static_cast<double>(g[j]);
      const double mj = b1 * static_cast<double>(m[j]) + (1.0 - b1) * gj;
      const double vj = b2 * static_cast<double>(v[j]) + (1.0 - b2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      wj -= lr * (mj / bc1) / (std::sqrt(vj / bc2) + cfg_.eps);
      w[j] = static_cast<T>(wj);
    }
  }
}

template <typename T>
void AdamW<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
double global_grad_norm(std::span<const Tensor<T>> params) {
  double total = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (T g : p.grad()) total += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(total);
}

template <typename T>
double clip_grad_norm(std::span<Tensor<T>> params, double max_norm) {
  const double norm = global_grad_norm<T>(std::span<const Tensor<T>>(params.data(), params.size()));
  if (norm > max_norm) {
    const double factor = max_norm / (norm + 1e-6);
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (auto& g : p.mutable_grad()) g = static_cast<T>(static_cast<double>(g) * factor);
    }
  }
  return norm;
}

std::string_view to_string(Schedule s) { return s == Schedule::Constant ? "constant" : "cosine"; }

Schedule parse_schedule(std::string_view s) {
  if (s == "constant") return Schedule::Constant;
  if (s == "cosine") return Schedule::Cosine;
  throw ConfigError("unknown lr schedule '" + std::string(s) + "'");
}

double learning_rate_at(std::size_t step, double base_lr, std::size_t warmup,
                        std::size_t total_steps, Schedule schedule) {
  if (warmup > 0 && step <= warmup) {
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  }
  if (schedule == Schedule::Constant || total_steps <= warmup) return base_lr;
  const double progress = static_cast<double>(step - warmup) /
                          static_cast<double>(total_steps - warmup);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(1.0, progress)));
}

template class AdamW<float>;
template class AdamW<double>;
template double clip_grad_norm(std::span<Tensor<float>>, double);
template double clip_grad_norm(std::span<Tensor<double>>, double);
template double global_grad_norm(std::span<const Tensor<float>>);
template double global_grad_norm(std::span<const Tensor<double>>);

}  // namespace rfs::harness
