#include "mimic/optim.hpp"

#include <cmath>

#include "mimic/error.hpp"

namespace mimic {

double global_norm(const TensorMap& grads) {
  double total = 0.0;
  for (const auto& [name, g] : grads) {
    for (double v : g.data()) total += v * v;
  }
  return std::sqrt(total);
}

TensorMap clip_global_norm(const TensorMap& grads, double threshold) {
  if (!(threshold > 0.0)) throw ContractError("clip_global_norm: threshold must be positive");
  const double norm = global_norm(grads);
  // Rescaled gradients land on the threshold only up to rounding; the slack
  // keeps a second clip a no-op.
  if (norm <= threshold * (1.0 + 1e-12)) return grads;
  const double factor = threshold / norm;
  TensorMap out;
  for (const auto& [name, g] : grads) {
    std::vector<double> v = g.to_vector();
    for (double& x : v) x *= factor;
    out.emplace(name, Tensor::from(g.shape(), std::move(v)));
  }
  return out;
}

void adam_step(TensorMap& params, const TensorMap& grads, AdamState& state, const AdamConfig& config) {
  for (const auto& [name, p] : params) {
    auto g = grads.find(name);
    if (g == grads.end()) throw ContractError("adam_step: no gradient for parameter '" + name + "'");
    if (g->second.shape() != p.shape()) {
      throw ContractError("adam_step: gradient shape " + shape_to_string(g->second.shape()) + " != parameter shape " +
                          shape_to_string(p.shape()) + " for '" + name + "'");
    }
    auto m = state.first_moment.find(name);
    if (m == state.first_moment.end()) {
      m = state.first_moment.emplace(name, Tensor::zeros(p.shape())).first;
      state.second_moment.emplace(name, Tensor::zeros(p.shape()));
    }
    if (m->second.shape() != p.shape() || state.second_moment.at(name).shape() != p.shape()) {
      throw ContractError("adam_step: moment shape mismatch for '" + name + "'");
    }
  }

  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);

  for (auto& [name, p] : params) {
    auto values = p.mutable_data();
    auto grad = grads.at(name).data();
    auto m = state.first_moment.at(name).mutable_data();
    auto v = state.second_moment.at(name).mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double gi = grad[i];
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      values[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.epsilon);
      if (!std::isfinite(values[i])) {
        throw NumericError("adam_step: parameter '" + name + "' became non-finite at step " +
                           std::to_string(state.step_count));
      }
    }
  }
}

}  // namespace mimic
