#pragma once

#include <cstdint>

#include "mimic/tensor.hpp"

namespace mimic {

/// L2 norm over every element of every tensor in the map.
double global_norm(const TensorMap& grads);

/// Rescales all gradients by threshold / N when their global norm N exceeds
/// the threshold; otherwise returns them unchanged.
TensorMap clip_global_norm(const TensorMap& grads, double threshold);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::int64_t step_count = 0;
  TensorMap first_moment;
  TensorMap second_moment;
};

/// One bias-corrected Adam update, applied in place to the parameter values.
/// Moments are created lazily on the first step. Every parameter must have a
/// gradient of identical shape. Throws NumericError if any updated parameter
/// becomes non-finite.
void adam_step(TensorMap& params, const TensorMap& grads, AdamState& state, const AdamConfig& config = {});

}  // namespace mimic
