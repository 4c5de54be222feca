#pragma once

// Central finite-difference oracle for autodiff gradients. Lives in test code
// only; it evaluates the forward function with recording disabled.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "mimic/tensor.hpp"

namespace mimic::testing {

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

inline std::vector<std::vector<double>> numeric_gradients(const ScalarFn& f, std::vector<Tensor>& inputs,
                                                          double h = 1e-5) {
  std::vector<std::vector<double>> out;
  NoGradGuard guard;
  for (auto& in : inputs) {
    auto values = in.mutable_data();
    std::vector<double> g(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = f(inputs).item();
      values[i] = saved - h;
      const double down = f(inputs).item();
      values[i] = saved;
      g[i] = (up - down) / (2.0 * h);
    }
    out.push_back(std::move(g));
  }
  return out;
}

/// ||autodiff - numeric|| / max(||autodiff||, ||numeric||), over all inputs.
inline double gradient_relative_error(const ScalarFn& f, std::vector<Tensor> inputs, double h = 1e-5) {
  for (auto& in : inputs) in.set_requires_grad(true);
  const Tensor loss = f(inputs);
  const auto analytic = backward(loss, std::span<const Tensor>(inputs));
  const auto numeric = numeric_gradients(f, inputs, h);
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto a = analytic[k].data();
    for (std::size_t i = 0; i < a.size(); ++i) {
      diff += (a[i] - numeric[k][i]) * (a[i] - numeric[k][i]);
      na += a[i] * a[i];
      nn += numeric[k][i] * numeric[k][i];
    }
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
  return std::sqrt(diff) / denom;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

}  // namespace mimic::testing
