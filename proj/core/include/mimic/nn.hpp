#pragma once

// Neural-network layers on top of the tensor module.
//
// Layers keep handles to leaf tensors registered in a ParameterStore under
// stable path names ("embedder/conv0/weight"). The optimizer and checkpoint
// loader update those leaves in place, so layer handles stay valid.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mimic/tensor.hpp"

namespace mimic::nn {

/// Training flag plus the generator that drives dropout. Batch norm and
/// dropout read nothing else.
struct Mode {
  bool training = false;
  std::mt19937_64* rng = nullptr;

  static Mode infer() { return {}; }
  static Mode train(std::mt19937_64& rng) { return {true, &rng}; }
};

enum class Init { kZeros, kOnes, kGlorotUniform, kNormal };

class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0);

  /// Registers a trainable leaf. kNormal uses `stddev`; kGlorotUniform
  /// treats the first axis as fan-in and the product of the rest as fan-out.
  Tensor create(const std::string& name, Shape shape, Init init, double stddev = 0.0);
  /// Registers a non-trainable state tensor (batch-norm running stats).
  Tensor create_buffer(const std::string& name, Shape shape, double fill);

  const TensorMap& parameters() const { return params_; }
  const TensorMap& buffers() const { return buffers_; }
  std::size_t parameter_count() const;

  /// Overwrites values in place; names and shapes must match exactly.
  void assign(const TensorMap& params, const TensorMap& buffers);

 private:
  TensorMap params_;
  TensorMap buffers_;
  std::mt19937_64 rng_;
};

class Dense {
 public:
  Dense() = default;
  Dense(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, bool bias = true);
  /// [..., in] -> [..., out] for rank 2 or 3 inputs.
  Tensor operator()(const Tensor& x) const;
  std::size_t out_features() const { return out_; }

 private:
  Tensor weight_, bias_;
  std::size_t in_ = 0, out_ = 0;
};

/// Output length of a "same-ceil" convolution: ceil(T / stride).
std::size_t conv_output_length(std::size_t length, std::size_t stride);

/// Time convolution over [B, T, C_in] with symmetric zero padding so the
/// output has ceil(T / stride) frames.
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
         std::size_t stride = 1);
  Tensor operator()(const Tensor& x) const;
  std::size_t stride() const { return stride_; }
  /// Weight laid out [kernel * in, out], row k * in + c.
  const Tensor& weight() const { return weight_; }

 private:
  Tensor weight_, bias_;
  std::size_t in_ = 0, out_ = 0, kernel_ = 0, stride_ = 1;
};

/// Normalizes the last axis. Train mode uses batch statistics over all
/// leading positions (optionally weighted by a 0/1 `mask` shaped like the
/// leading axes) and folds them into the running stats; infer mode uses the
/// running stats.
class BatchNorm {
 public:
  static constexpr double kMomentum = 0.99;
  static constexpr double kEpsilon = 1e-3;

  BatchNorm() = default;
  BatchNorm(ParameterStore& store, const std::string& name, std::size_t channels);
  Tensor operator()(const Tensor& x, const Mode& mode, const Tensor& mask = {}) const;

  const Tensor& running_mean() const { return running_mean_; }
  const Tensor& running_var() const { return running_var_; }
  const Tensor& gamma() const { return gamma_; }
  const Tensor& beta() const { return beta_; }

 private:
  Tensor gamma_, beta_, running_mean_, running_var_;
  std::size_t channels_ = 0;
};

/// Inverted dropout: survivors are scaled by 1 / (1 - ratio) in train mode;
/// identity otherwise. Throws ConfigError unless 0 <= ratio < 1.
Tensor dropout(const Tensor& x, double ratio, const Mode& mode);

/// z = sig(x Wz + h Uz + bz), r = sig(x Wr + h Ur + br),
/// n = tanh(x Wn + r * (h Un) + bn), h' = (1 - z) * n + z * h.
class GRUCell {
 public:
  GRUCell() = default;
  GRUCell(ParameterStore& store, const std::string& name, std::size_t input, std::size_t hidden);

  /// x Wx + b for a whole sequence at once: [..., input] -> [..., 3 * hidden].
  Tensor project_input(const Tensor& x) const;
  /// One step from a pre-projected input row block [B, 3 * hidden].
  Tensor step_projected(const Tensor& projected, const Tensor& h) const;
  Tensor operator()(const Tensor& x, const Tensor& h) const;

  std::size_t hidden() const { return hidden_; }
  std::size_t input() const { return input_; }

 private:
  Tensor w_input_, w_hidden_, bias_;
  std::size_t input_ = 0, hidden_ = 0;
};

struct AttentionOutput {
  Tensor context;  // [B, memory_dim]
  Tensor weights;  // [B, T]
};

/// Additive attention: score_t = v . tanh(W q + U m_t), softmax over the
/// unmasked positions, context = sum_t w_t m_t.
class Attention {
 public:
  Attention() = default;
  Attention(ParameterStore& store, const std::string& name, std::size_t query_dim, std::size_t memory_dim,
            std::size_t attention_dim);

  /// U m for every memory row; compute once per sequence.
  Tensor project_memory(const Tensor& memory) const;
  /// `memory` [B, T, D], `keys` from project_memory, `mask` [B, T] (optional).
  AttentionOutput operator()(const Tensor& query, const Tensor& memory, const Tensor& keys,
                             const Tensor& mask = {}) const;

 private:
  Tensor w_query_, w_memory_, v_;
  std::size_t attention_dim_ = 0;
};

/// Lookup of rows of `table` [V, D] for integer ids; returns [ids.size(), D].
Tensor embedding_lookup(const Tensor& table, const std::vector<std::int64_t>& ids);

/// Per-channel maximum over time: [T, C] -> [C].
Tensor max_over_time(const Tensor& x);
/// Batched variant over the first `lengths[b]` frames: [B, T, C] -> [B, C].
Tensor max_over_time(const Tensor& x, const std::vector<std::size_t>& lengths);

}  // namespace mimic::nn
