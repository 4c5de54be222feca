#include "mimic/nn.hpp"

#include <algorithm>
#include <cmath>

#include "mimic/error.hpp"

namespace mimic::nn {

namespace {

Shape leading(const Shape& shape) { return Shape(shape.begin(), shape.end() - 1); }

void copy_into(Tensor& dst, const Tensor& src, const std::string& name) {
  if (dst.shape() != src.shape()) {
    throw DimensionError("parameter '" + name + "' expects shape " + shape_to_string(dst.shape()) + ", got " +
                         shape_to_string(src.shape()));
  }
  std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
}

}  // namespace

// ---- ParameterStore ----------------------------------------------------------

ParameterStore::ParameterStore(std::uint64_t seed) : rng_(seed) {}

Tensor ParameterStore::create(const std::string& name, Shape shape, Init init, double stddev) {
  if (params_.count(name) || buffers_.count(name)) throw ContractError("duplicate parameter '" + name + "'");
  const std::size_t n = shape_numel(shape);
  std::vector<double> values(n, 0.0);
  switch (init) {
    case Init::kZeros:
      break;
    case Init::kOnes:
      std::fill(values.begin(), values.end(), 1.0);
      break;
    case Init::kGlorotUniform: {
      const double fan_in = static_cast<double>(shape.empty() ? 1 : shape.front());
      const double fan_out = static_cast<double>(n) / std::max(1.0, fan_in);
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (double& v : values) v = dist(rng_);
      break;
    }
    case Init::kNormal: {
      std::normal_distribution<double> dist(0.0, stddev);
      for (double& v : values) v = dist(rng_);
      break;
    }
  }
  Tensor t = Tensor::from(std::move(shape), std::move(values), true);
  params_.emplace(name, t);
  return t;
}

Tensor ParameterStore::create_buffer(const std::string& name, Shape shape, double fill) {
  if (params_.count(name) || buffers_.count(name)) throw ContractError("duplicate parameter '" + name + "'");
  Tensor t = Tensor::full(std::move(shape), fill);
  buffers_.emplace(name, t);
  return t;
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

void ParameterStore::assign(const TensorMap& params, const TensorMap& buffers) {
  auto apply = [](TensorMap& own, const TensorMap& incoming, const char* what) {
    if (own.size() != incoming.size()) {
      throw DimensionError(std::string("expected ") + std::to_string(own.size()) + " " + what + ", got " +
                           std::to_string(incoming.size()));
    }
    for (auto& [name, t] : own) {
      const auto it = incoming.find(name);
      if (it == incoming.end()) throw DimensionError(std::string("missing ") + what + " '" + name + "'");
      copy_into(t, it->second, name);
    }
  };
  apply(params_, params, "parameters");
  apply(buffers_, buffers, "buffers");
}

// ---- Dense -------------------------------------------------------------------

Dense::Dense(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, bool bias)
    : in_(in), out_(out) {
  weight_ = store.create(name + "/weight", {in, out}, Init::kGlorotUniform);
  if (bias) bias_ = store.create(name + "/bias", {out}, Init::kZeros);
}

Tensor Dense::operator()(const Tensor& x) const {
  if (x.rank() < 2 || x.shape().back() != in_) {
    throw DimensionError("Dense: expected [..., " + std::to_string(in_) + "], got " + shape_to_string(x.shape()));
  }
  Tensor y = matmul(x, weight_);
  return bias_.defined() ? y + bias_ : y;
}

// ---- Conv1d ------------------------------------------------------------------

std::size_t conv_output_length(std::size_t length, std::size_t stride) {
  if (stride == 0) throw ContractError("conv1d: stride must be >= 1");
  return (length + stride - 1) / stride;
}

Conv1d::Conv1d(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
               std::size_t kernel, std::size_t stride)
    : in_(in), out_(out), kernel_(kernel), stride_(stride) {
  if (kernel % 2 == 0) throw ContractError("conv1d: kernel width must be odd");
  if (stride == 0) throw ContractError("conv1d: stride must be >= 1");
  weight_ = store.create(name + "/weight", {kernel * in, out}, Init::kGlorotUniform);
  bias_ = store.create(name + "/bias", {out}, Init::kZeros);
}

Tensor Conv1d::operator()(const Tensor& x) const {
  if (x.rank() != 3 || x.dim(2) != in_) {
    throw DimensionError("Conv1d: expected [B, T, " + std::to_string(in_) + "], got " + shape_to_string(x.shape()));
  }
  const std::size_t batch = x.dim(0), length = x.dim(1);
  if (length == 0) throw ContractError("Conv1d: empty time axis");
  const std::size_t out_len = conv_output_length(length, stride_);
  const std::size_t needed = (out_len - 1) * stride_ + kernel_;
  const std::size_t pad_left = needed > length ? (needed - length) / 2 : 0;

  const std::size_t row = kernel_ * in_;
  std::vector<std::int64_t> index(batch * out_len * row);
  std::size_t i = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < out_len; ++t) {
      for (std::size_t k = 0; k < kernel_; ++k) {
        const auto src = static_cast<std::int64_t>(t * stride_ + k) - static_cast<std::int64_t>(pad_left);
        const bool inside = src >= 0 && src < static_cast<std::int64_t>(length);
        const auto base = static_cast<std::int64_t>(b * length * in_) + src * static_cast<std::int64_t>(in_);
        for (std::size_t c = 0; c < in_; ++c) index[i++] = inside ? base + static_cast<std::int64_t>(c) : -1;
      }
    }
  }
  const Tensor columns = gather(x, std::move(index), {batch, out_len, row});
  return matmul(columns, weight_) + bias_;
}

// ---- BatchNorm ---------------------------------------------------------------

BatchNorm::BatchNorm(ParameterStore& store, const std::string& name, std::size_t channels) : channels_(channels) {
  gamma_ = store.create(name + "/gamma", {channels}, Init::kOnes);
  beta_ = store.create(name + "/beta", {channels}, Init::kZeros);
  running_mean_ = store.create_buffer(name + "/running_mean", {channels}, 0.0);
  running_var_ = store.create_buffer(name + "/running_var", {channels}, 1.0);
}

Tensor BatchNorm::operator()(const Tensor& x, const Mode& mode, const Tensor& mask) const {
  if (x.rank() < 2 || x.shape().back() != channels_) {
    throw DimensionError("BatchNorm: expected [..., " + std::to_string(channels_) + "], got " +
                         shape_to_string(x.shape()));
  }
  if (!mode.training) {
    const Tensor inv_std = Tensor::from({channels_}, [&] {
      std::vector<double> v(channels_);
      for (std::size_t c = 0; c < channels_; ++c) v[c] = 1.0 / std::sqrt(running_var_.data()[c] + kEpsilon);
      return v;
    }());
    return (x - running_mean_) * inv_std * gamma_ + beta_;
  }

  Tensor mean, var, centered;
  if (mask.defined()) {
    if (mask.shape() != leading(x.shape())) {
      throw DimensionError("BatchNorm: mask " + shape_to_string(mask.shape()) + " does not match " +
                           shape_to_string(x.shape()));
    }
    double count = 0.0;
    for (double m : mask.data()) count += m;
    if (count < 2.0) throw ContractError("BatchNorm: train mode needs >= 2 elements per channel");
    Shape mask_shape = mask.shape();
    mask_shape.push_back(1);
    const Tensor m = reshape(mask, mask_shape);
    mean = scale(sum_rows(x * m), 1.0 / count);
    centered = x - mean;
    var = scale(sum_rows(centered * centered * m), 1.0 / count);
  } else {
    if (x.numel() / channels_ < 2) throw ContractError("BatchNorm: train mode needs >= 2 elements per channel");
    mean = mean_rows(x);
    centered = x - mean;
    var = mean_rows(centered * centered);
  }

  // Handles share storage with the registered buffers.
  Tensor running_mean = running_mean_, running_var = running_var_;
  auto rm = running_mean.mutable_data();
  auto rv = running_var.mutable_data();
  for (std::size_t c = 0; c < channels_; ++c) {
    rm[c] = kMomentum * rm[c] + (1.0 - kMomentum) * mean.data()[c];
    rv[c] = kMomentum * rv[c] + (1.0 - kMomentum) * var.data()[c];
  }
  return centered / sqrt(var + kEpsilon) * gamma_ + beta_;
}

// ---- dropout -----------------------------------------------------------------

Tensor dropout(const Tensor& x, double ratio, const Mode& mode) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw ConfigError("dropout ratio must be in [0, 1), got " + std::to_string(ratio));
  if (!mode.training || ratio == 0.0) return x;
  if (mode.rng == nullptr) throw ContractError("dropout: train mode needs a generator");
  std::bernoulli_distribution keep(1.0 - ratio);
  const double survivor = 1.0 / (1.0 - ratio);
  std::vector<double> mask(x.numel());
  for (double& m : mask) m = keep(*mode.rng) ? survivor : 0.0;
  return x * Tensor::from(x.shape(), std::move(mask));
}

// ---- GRUCell -----------------------------------------------------------------

GRUCell::GRUCell(ParameterStore& store, const std::string& name, std::size_t input, std::size_t hidden)
    : input_(input), hidden_(hidden) {
  w_input_ = store.create(name + "/w_input", {input, 3 * hidden}, Init::kGlorotUniform);
  w_hidden_ = store.create(name + "/w_hidden", {hidden, 3 * hidden}, Init::kGlorotUniform);
  bias_ = store.create(name + "/bias", {3 * hidden}, Init::kZeros);
}

Tensor GRUCell::project_input(const Tensor& x) const {
  if (x.rank() < 2 || x.shape().back() != input_) {
    throw ContractError("GRUCell: input " + shape_to_string(x.shape()) + " does not end in " +
                        std::to_string(input_));
  }
  return matmul(x, w_input_) + bias_;
}

Tensor GRUCell::step_projected(const Tensor& projected, const Tensor& h) const {
  if (h.rank() != 2 || h.dim(1) != hidden_ || projected.rank() != 2 || projected.dim(1) != 3 * hidden_ ||
      projected.dim(0) != h.dim(0)) {
    throw ContractError("GRUCell: state " + shape_to_string(h.shape()) + " / input " +
                        shape_to_string(projected.shape()) + " do not match hidden size " + std::to_string(hidden_));
  }
  const Tensor hu = matmul(h, w_hidden_);
  const std::size_t H = hidden_;
  const Tensor z = sigmoid(slice(projected, 1, 0, H) + slice(hu, 1, 0, H));
  const Tensor r = sigmoid(slice(projected, 1, H, 2 * H) + slice(hu, 1, H, 2 * H));
  const Tensor n = tanh(slice(projected, 1, 2 * H, 3 * H) + r * slice(hu, 1, 2 * H, 3 * H));
  return n + z * (h - n);
}

Tensor GRUCell::operator()(const Tensor& x, const Tensor& h) const { return step_projected(project_input(x), h); }

// ---- Attention ---------------------------------------------------------------

Attention::Attention(ParameterStore& store, const std::string& name, std::size_t query_dim, std::size_t memory_dim,
                     std::size_t attention_dim)
    : attention_dim_(attention_dim) {
  w_query_ = store.create(name + "/w_query", {query_dim, attention_dim}, Init::kGlorotUniform);
  w_memory_ = store.create(name + "/w_memory", {memory_dim, attention_dim}, Init::kGlorotUniform);
  v_ = store.create(name + "/v", {attention_dim, 1}, Init::kGlorotUniform);
}

Tensor Attention::project_memory(const Tensor& memory) const { return matmul(memory, w_memory_); }

AttentionOutput Attention::operator()(const Tensor& query, const Tensor& memory, const Tensor& keys,
                                      const Tensor& mask) const {
  if (memory.rank() != 3 || memory.dim(1) == 0) {
    throw ContractError("attention: memory must be [B, T, D] with T >= 1, got " + shape_to_string(memory.shape()));
  }
  const std::size_t batch = memory.dim(0), steps = memory.dim(1);
  const Tensor q = reshape(matmul(query, w_query_), {batch, 1, attention_dim_});
  Tensor scores = reshape(matmul(tanh(keys + q), v_), {batch, steps});
  if (mask.defined()) {
    std::vector<double> penalty(mask.numel());
    for (std::size_t i = 0; i < penalty.size(); ++i) penalty[i] = mask.data()[i] > 0.0 ? 0.0 : -1e9;
    scores = scores + Tensor::from(mask.shape(), std::move(penalty));
  }
  AttentionOutput out;
  out.weights = softmax(scores);
  out.context = reshape(matmul(reshape(out.weights, {batch, 1, steps}), memory), {batch, memory.dim(2)});
  return out;
}

// ---- pooling and lookup --------------------------------------------------------

Tensor embedding_lookup(const Tensor& table, const std::vector<std::int64_t>& ids) {
  if (table.rank() != 2) throw DimensionError("embedding_lookup: table must be 2-D");
  const std::size_t rows = table.dim(0), dim = table.dim(1);
  std::vector<std::int64_t> index(ids.size() * dim);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows) {
      throw ContractError("embedding_lookup: id " + std::to_string(ids[i]) + " outside table of " +
                          std::to_string(rows) + " rows");
    }
    for (std::size_t d = 0; d < dim; ++d) index[i * dim + d] = ids[i] * static_cast<std::int64_t>(dim) + static_cast<std::int64_t>(d);
  }
  return gather(table, std::move(index), {ids.size(), dim});
}

Tensor max_over_time(const Tensor& x) {
  if (x.rank() != 2 || x.dim(0) == 0) {
    throw ContractError("max_over_time: expected [T, C] with T >= 1, got " + shape_to_string(x.shape()));
  }
  return max_rows(x);
}

Tensor max_over_time(const Tensor& x, const std::vector<std::size_t>& lengths) {
  if (x.rank() != 3) throw ContractError("max_over_time: expected [B, T, C], got " + shape_to_string(x.shape()));
  const std::size_t batch = x.dim(0), steps = x.dim(1), channels = x.dim(2);
  if (!lengths.empty() && lengths.size() != batch) throw ContractError("max_over_time: one length per item");
  std::vector<Tensor> rows;
  rows.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t len = lengths.empty() ? steps : std::min(lengths[b], steps);
    if (len == 0) throw ContractError("max_over_time: item " + std::to_string(b) + " has no frames");
    const Tensor item = reshape(slice(slice(x, 0, b, b + 1), 1, 0, len), {len, channels});
    rows.push_back(reshape(max_rows(item), {1, channels}));
  }
  return concat(rows, 0);
}

}  // namespace mimic::nn
