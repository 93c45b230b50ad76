#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "rfs/numeric/ops.hpp"
#include "rfs/numeric/tensor.hpp"

namespace rfs::testing {

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, bool grad = true,
                                    double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor<double>(std::move(shape), std::move(v), grad);
}

/// Weighted sum of every element so the gradient reaching `out` is dense and
/// non-uniform.
inline Tensor<double> probe_loss(const Tensor<double>& out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto w = random_tensor(out.shape(), rng, false);
  return ops::sum(ops::mul(out, w));
}

struct GradCheck {
  double max_rel_err = 0.0;
  std::string worst;
};

/// Compares autodiff gradients of `loss(inputs)` w.r.t. every element of every
/// input against central differences. Error per element is
/// |a - n| / max(|a|, |n|, floor). `order` 4 uses the five-point stencil,
/// whose larger usable step keeps round-off below tiny gradients.
inline GradCheck check_gradients(std::vector<Tensor<double>> inputs,
                                 const std::function<Tensor<double>()>& loss, double h = 1e-5,
                                 double floor = 1e-6, int order = 2) {
  for (auto& t : inputs) t.zero_grad();
  auto l = loss();
  backward(l);
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    auto g = t.grad();
    analytic.emplace_back(g.begin(), g.end());
  }
  GradCheck res;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto data = inputs[k].mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      auto at = [&](double x) {
        data[i] = x;
        return loss().item();
      };
      double num;
      {
        NoGradGuard ng;
        if (order == 4)
          num = (at(orig - 2 * h) - 8 * at(orig - h) + 8 * at(orig + h) - at(orig + 2 * h)) /
                (12 * h);
        else
          num = (at(orig + h) - at(orig - h)) / (2 * h);
      }
      data[i] = orig;
      const double a = analytic[k][i];
      const double err = std::abs(a - num) / std::max({std::abs(a), std::abs(num), floor});
      if (err > res.max_rel_err) {
        res.max_rel_err = err;
        res.worst = "input " + std::to_string(k) + " elem " + std::to_string(i) +
                    " analytic " + std::to_string(a) + " numeric " + std::to_string(num);
      }
    }
  }
  return res;
}

/// Symmetric eigenvalues by cyclic Jacobi rotations, descending.
inline std::vector<double> jacobi_eigenvalues(std::vector<double> a, std::size_t n) {
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a[i * n + i];
  std::sort(ev.rbegin(), ev.rend());
  return ev;
}

}  // namespace rfs::testing
