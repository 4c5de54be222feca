#include "mimic/model.hpp"

#include <algorithm>
#include <numeric>

#include "mimic/error.hpp"

namespace mimic {

namespace {

constexpr std::size_t kEncoderConvKernel = 5;
constexpr std::size_t kPostKernel = 3;

Tensor length_mask(const std::vector<std::size_t>& lengths, std::size_t steps) {
  std::vector<double> m(lengths.size() * steps, 0.0);
  for (std::size_t b = 0; b < lengths.size(); ++b) {
    std::fill_n(m.begin() + static_cast<std::ptrdiff_t>(b * steps), std::min(lengths[b], steps), 1.0);
  }
  return Tensor::from({lengths.size(), steps}, std::move(m));
}

Tensor step_row(const Tensor& x, std::size_t t) {
  return reshape(slice(x, 1, t, t + 1), {x.dim(0), x.dim(2)});
}

}  // namespace

const char* to_string(Conditioning mode) { return mode == Conditioning::kLookup ? "lookup" : "embedder"; }

Conditioning conditioning_from_string(const std::string& name) {
  if (name == "lookup" || name == "lookup-table") return Conditioning::kLookup;
  if (name == "embedder") return Conditioning::kEmbedder;
  throw ConfigError("unknown conditioning mode '" + name + "' (expected lookup or embedder)");
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("model.") + name + " must be positive");
  };
  if (vocab_size < 3) throw ConfigError("model.vocab_size must cover padding, end-of-sequence and a character");
  positive(char_embed_dim, "char_embed_dim");
  positive(encoder_dim, "encoder_dim");
  if (encoder_dim % 2 != 0) throw ConfigError("model.encoder_dim must be even (two GRU directions)");
  positive(decoder_dim, "decoder_dim");
  positive(attention_dim, "attention_dim");
  positive(embedding_dim, "embedding_dim");
  positive(r, "r");
  positive(n_mels, "n_mels");
  positive(n_linear_bins, "n_linear_bins");
  positive(postnet_channels, "postnet_channels");
  positive(max_decoder_steps, "max_decoder_steps");
  positive(stop_patience, "stop_patience");
  if (prenet_dims.empty()) throw ConfigError("model.prenet_dims must not be empty");
  for (std::size_t d : prenet_dims) positive(d, "prenet_dims");
  for (double p : {prenet_dropout, embedder_dropout}) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("model dropout ratios must be in [0, 1)");
  }
  if (conditioning == Conditioning::kLookup && n_speakers == 0) {
    throw ConfigError("lookup conditioning needs model.n_speakers > 0");
  }
  if (conditioning == Conditioning::kEmbedder) {
    if (embedder_strides.empty()) throw ConfigError("model.embedder_strides must not be empty");
    for (std::size_t s : embedder_strides) positive(s, "embedder_strides");
    if (embedder_kernel % 2 == 0) throw ConfigError("model.embedder_kernel must be odd");
    positive(embedder_channels, "embedder_channels");
    positive(embedder_hidden, "embedder_hidden");
  }
}

std::size_t ModelConfig::min_reference_frames() const {
  return std::accumulate(embedder_strides.begin(), embedder_strides.end(), std::size_t{1}, std::multiplies<>());
}

DecoderState DecoderState::detached() const {
  return {attention_hidden.detach(), decoder_hidden.detach(), context.detach()};
}

VoiceModel::VoiceModel(const ModelConfig& config, std::uint64_t seed) : config_(config), store_(seed) {
  config_.validate();
  const ModelConfig& c = config_;
  char_table_ = store_.create("encoder/char_embedding", {c.vocab_size, c.char_embed_dim}, nn::Init::kNormal, 0.3);

  std::size_t width = c.char_embed_dim;
  for (std::size_t i = 0; i < c.prenet_dims.size(); ++i) {
    encoder_prenet_.emplace_back(store_, "encoder/prenet" + std::to_string(i), width, c.prenet_dims[i]);
    width = c.prenet_dims[i];
  }
  for (std::size_t i = 0; i < c.encoder_conv_layers; ++i) {
    const std::string name = "encoder/conv" + std::to_string(i);
    encoder_convs_.emplace_back(store_, name, width, width, kEncoderConvKernel);
    encoder_conv_norms_.emplace_back(store_, name + "/bn", width);
  }
  encoder_forward_ = nn::GRUCell(store_, "encoder/gru_forward", width, c.encoder_dim / 2);
  encoder_backward_ = nn::GRUCell(store_, "encoder/gru_backward", width, c.encoder_dim / 2);

  width = c.n_mels;
  for (std::size_t i = 0; i < c.prenet_dims.size(); ++i) {
    decoder_prenet_.emplace_back(store_, "decoder/prenet" + std::to_string(i), width, c.prenet_dims[i]);
    width = c.prenet_dims[i];
  }
  const std::size_t s_att = c.condition_attention_rnn ? c.embedding_dim : 0;
  const std::size_t s_dec = c.condition_decoder_rnn ? c.embedding_dim : 0;
  attention_rnn_ = nn::GRUCell(store_, "decoder/attention_rnn", width + c.encoder_dim + s_att, c.decoder_dim);
  attention_ = nn::Attention(store_, "decoder/attention", c.decoder_dim, c.encoder_dim, c.attention_dim);
  decoder_rnn_ = nn::GRUCell(store_, "decoder/decoder_rnn", c.decoder_dim + c.encoder_dim + s_dec, c.decoder_dim);
  frame_projection_ = nn::Dense(store_, "decoder/frame_projection", c.decoder_dim + c.encoder_dim, c.r * c.n_mels);

  post_conv1_ = nn::Conv1d(store_, "postnet/conv0", c.n_mels, c.postnet_channels, kPostKernel);
  post_conv2_ = nn::Conv1d(store_, "postnet/conv1", c.postnet_channels, c.postnet_channels, kPostKernel);
  post_projection_ = nn::Dense(store_, "postnet/projection", c.postnet_channels, c.n_linear_bins);

  if (c.conditioning == Conditioning::kLookup) {
    speaker_table_ = store_.create("speaker/table", {c.n_speakers, c.embedding_dim}, nn::Init::kNormal,
                                   c.lookup_init_stddev);
  } else {
    width = c.n_mels;
    for (std::size_t i = 0; i < c.embedder_strides.size(); ++i) {
      const std::string name = "embedder/conv" + std::to_string(i);
      embedder_.convs.emplace_back(store_, name, width, c.embedder_channels, c.embedder_kernel, c.embedder_strides[i]);
      embedder_.conv_norms.emplace_back(store_, name + "/bn", c.embedder_channels);
      width = c.embedder_channels;
    }
    for (std::size_t i = 0; i < c.embedder_dense_layers; ++i) {
      const std::string name = "embedder/dense" + std::to_string(i);
      embedder_.dense.emplace_back(store_, name, width, c.embedder_hidden);
      embedder_.dense_norms.emplace_back(store_, name + "/bn", c.embedder_hidden);
      width = c.embedder_hidden;
    }
    embedder_.projection = nn::Dense(store_, "embedder/projection", width, c.embedding_dim);
  }
}

Tensor VoiceModel::embed(const Tensor& reference, const std::vector<std::size_t>& lengths,
                         const nn::Mode& mode) const {
  if (config_.conditioning != Conditioning::kEmbedder) {
    throw ConfigError("this model uses a speaker lookup table, not a reference embedder");
  }
  if (reference.rank() != 3 || reference.dim(2) != config_.n_mels || lengths.size() != reference.dim(0)) {
    throw DimensionError("embed: expected [B, T, " + std::to_string(config_.n_mels) + "] with B lengths, got " +
                         shape_to_string(reference.shape()));
  }
  const std::size_t min_frames = config_.min_reference_frames();
  for (std::size_t len : lengths) {
    if (len < min_frames || len > reference.dim(1)) {
      throw InputError("reference of " + std::to_string(len) + " frames is too short; the embedder needs at least " +
                       std::to_string(min_frames));
    }
  }
  ++embedder_calls_;

  std::vector<std::size_t> lens = lengths;
  Tensor x = nn::max_over_time(embedder_frames(reference, lens, mode), lens);
  for (std::size_t i = 0; i < embedder_.dense.size(); ++i) {
    x = nn::dropout(relu(embedder_.dense_norms[i](embedder_.dense[i](x), mode)), config_.embedder_dropout, mode);
  }
  return embedder_.projection(x);
}

Tensor VoiceModel::embedder_frames(const Tensor& reference, std::vector<std::size_t>& lengths,
                                   const nn::Mode& mode) const {
  if (config_.conditioning != Conditioning::kEmbedder) {
    throw ConfigError("this model uses a speaker lookup table, not a reference embedder");
  }
  Tensor x = reference;
  for (std::size_t i = 0; i < embedder_.convs.size(); ++i) {
    x = embedder_.convs[i](x);
    for (auto& len : lengths) len = nn::conv_output_length(len, embedder_.convs[i].stride());
    x = nn::dropout(relu(embedder_.conv_norms[i](x, mode, length_mask(lengths, x.dim(1)))), config_.embedder_dropout,
                    mode);
  }
  return x;
}

Tensor VoiceModel::lookup(const std::vector<std::size_t>& speakers) const {
  if (config_.conditioning != Conditioning::kLookup) {
    throw ConfigError("this model embeds reference audio; it has no speaker lookup table");
  }
  std::vector<std::int64_t> ids(speakers.begin(), speakers.end());
  return nn::embedding_lookup(speaker_table_, ids);
}

Tensor VoiceModel::prenet(const std::vector<nn::Dense>& layers, const Tensor& x, const nn::Mode& mode) const {
  Tensor h = x;
  for (const auto& layer : layers) h = nn::dropout(relu(layer(h)), config_.prenet_dropout, mode);
  return h;
}

Memory VoiceModel::encode(const std::vector<std::int64_t>& ids, std::size_t batch, std::size_t length,
                          const std::vector<std::size_t>& lengths, const nn::Mode& mode) const {
  if (length == 0 || batch == 0) throw InputError("encode: empty text");
  if (ids.size() != batch * length || lengths.size() != batch) throw DimensionError("encode: ids do not match batch");
  for (std::int64_t id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
      throw InputError("encode: character id " + std::to_string(id) + " outside the vocabulary of " +
                       std::to_string(config_.vocab_size));
    }
  }
  for (std::size_t len : lengths) {
    if (len == 0 || len > length) throw InputError("encode: text lengths must be in [1, " + std::to_string(length) + "]");
  }
  Memory memory;
  memory.mask = length_mask(lengths, length);
  Tensor x = reshape(nn::embedding_lookup(char_table_, ids), {batch, length, config_.char_embed_dim});
  x = prenet(encoder_prenet_, x, mode);
  for (std::size_t i = 0; i < encoder_convs_.size(); ++i) {
    x = relu(encoder_conv_norms_[i](encoder_convs_[i](x), mode, memory.mask));
  }

  // Bidirectional GRU; padded positions hold the state instead of advancing.
  const std::size_t H = config_.encoder_dim / 2;
  auto run = [&](const nn::GRUCell& cell, bool reverse) {
    const Tensor projected = cell.project_input(x);
    std::vector<Tensor> outputs(length);
    Tensor h = Tensor::zeros({batch, H});
    for (std::size_t k = 0; k < length; ++k) {
      const std::size_t t = reverse ? length - 1 - k : k;
      const Tensor next = cell.step_projected(step_row(projected, t), h);
      std::vector<double> keep(batch);
      for (std::size_t b = 0; b < batch; ++b) keep[b] = t < lengths[b] ? 1.0 : 0.0;
      h = h + Tensor::from({batch, 1}, std::move(keep)) * (next - h);
      outputs[t] = reshape(h, {batch, 1, H});
    }
    return concat(outputs, 1);
  };
  memory.values = concat({run(encoder_forward_, false), run(encoder_backward_, true)}, 2);
  memory.keys = attention_.project_memory(memory.values);
  return memory;
}

DecoderState VoiceModel::initial_state(std::size_t batch) const {
  return {Tensor::zeros({batch, config_.decoder_dim}), Tensor::zeros({batch, config_.decoder_dim}),
          Tensor::zeros({batch, config_.encoder_dim})};
}

std::pair<Tensor, DecoderState> VoiceModel::step(const Memory& memory, const Tensor& speaker, const Tensor& frame,
                                                 const DecoderState& state, const nn::Mode& mode,
                                                 Tensor* weights) const {
  const Tensor p = prenet(decoder_prenet_, frame, mode);
  std::vector<Tensor> att_in = {p, state.context};
  if (config_.condition_attention_rnn) att_in.push_back(speaker);
  DecoderState next;
  next.attention_hidden = attention_rnn_(concat(att_in, 1), state.attention_hidden);
  const nn::AttentionOutput att = attention_(next.attention_hidden, memory.values, memory.keys, memory.mask);
  next.context = att.context;
  std::vector<Tensor> dec_in = {next.attention_hidden, att.context};
  if (config_.condition_decoder_rnn) dec_in.push_back(speaker);
  next.decoder_hidden = decoder_rnn_(concat(dec_in, 1), state.decoder_hidden);
  if (weights) *weights = att.weights;
  return {frame_projection_(concat({next.decoder_hidden, att.context}, 1)), std::move(next)};
}

DecoderOutput VoiceModel::decode(const Memory& memory, const Tensor& speaker, const Tensor& inputs,
                                 DecoderState state, const nn::Mode& mode) const {
  const std::size_t batch = memory.values.dim(0);
  if (inputs.rank() != 3 || inputs.dim(0) != batch || inputs.dim(2) != config_.n_mels || inputs.dim(1) == 0) {
    throw DimensionError("decode: inputs must be [B, steps, n_mels], got " + shape_to_string(inputs.shape()));
  }
  if (speaker.rank() != 2 || speaker.dim(0) != batch || speaker.dim(1) != config_.embedding_dim) {
    throw DimensionError("decode: speaker embedding must be [B, " + std::to_string(config_.embedding_dim) + "]");
  }
  const std::size_t steps = inputs.dim(1), n_text = memory.values.dim(1);
  std::vector<Tensor> frames, alignments;
  frames.reserve(steps);
  alignments.reserve(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    Tensor weights;
    auto [out, next] = step(memory, speaker, step_row(inputs, k), state, mode, &weights);
    frames.push_back(reshape(out, {batch, config_.r, config_.n_mels}));
    alignments.push_back(reshape(weights, {batch, 1, n_text}));
    state = std::move(next);
  }
  return {concat(frames, 1), concat(alignments, 1), std::move(state)};
}

Tensor VoiceModel::teacher_inputs(const Tensor& targets, std::size_t first, std::size_t count) const {
  const std::size_t batch = targets.dim(0), frames = targets.dim(1), n_mels = targets.dim(2);
  if (frames % config_.r != 0 || first + count > frames / config_.r) {
    throw ContractError("teacher_inputs: steps out of range or targets not a multiple of r");
  }
  std::vector<double> values(batch * count * n_mels, 0.0);
  const auto src = targets.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t s = first + k;
      if (s == 0) continue;
      const std::size_t frame = s * config_.r - 1;
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>((b * frames + frame) * n_mels), n_mels,
                  values.begin() + static_cast<std::ptrdiff_t>((b * count + k) * n_mels));
    }
  }
  return Tensor::from({batch, count, n_mels}, std::move(values));
}

Tensor VoiceModel::postprocess(const Tensor& mel, const nn::Mode&) const {
  if (mel.rank() != 3 || mel.dim(2) != config_.n_mels || mel.dim(1) == 0) {
    throw DimensionError("postprocess: expected [B, M >= 1, n_mels], got " + shape_to_string(mel.shape()));
  }
  return post_projection_(relu(post_conv2_(relu(post_conv1_(mel)))));
}

InferenceResult VoiceModel::infer(const std::vector<std::int64_t>& ids, const Tensor& speaker) const {
  NoGradGuard no_grad;
  const nn::Mode mode = nn::Mode::infer();
  const Memory memory = encode(ids, 1, ids.size(), {ids.size()}, mode);
  DecoderState state = initial_state(1);
  Tensor frame = Tensor::zeros({1, config_.n_mels});
  std::vector<Tensor> groups;
  InferenceResult result;
  result.text_length = ids.size();
  std::size_t quiet = 0;
  bool stopped = false;
  for (std::size_t k = 0; k < config_.max_decoder_steps; ++k) {
    Tensor weights;
    auto [out, next] = step(memory, speaker, frame, state, mode, &weights);
    state = std::move(next);
    result.alignment.insert(result.alignment.end(), weights.data().begin(), weights.data().end());
    groups.push_back(reshape(out, {1, config_.r, config_.n_mels}));
    frame = reshape(slice(out, 1, (config_.r - 1) * config_.n_mels, config_.r * config_.n_mels), {1, config_.n_mels});
    const auto values = out.data();
    const double level = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    quiet = level < config_.stop_threshold ? quiet + 1 : 0;
    if (quiet >= config_.stop_patience) {
      stopped = true;
      break;
    }
  }
  result.truncated = !stopped;
  result.steps = groups.size();
  const Tensor mel = concat(groups, 1);
  result.frames = mel.dim(1);
  result.mel = mel.to_vector();
  result.linear = postprocess(mel, mode).to_vector();
  return result;
}

LossTerms spectrogram_loss(const Tensor& mel_pred, const Tensor& mel_target, const Tensor& linear_pred,
                           const Tensor& linear_target, const Tensor& frame_mask) {
  if (mel_pred.shape() != mel_target.shape() || linear_pred.shape() != linear_target.shape()) {
    throw DimensionError("spectrogram_loss: prediction and target shapes differ");
  }
  if (mel_pred.rank() != 3 || frame_mask.shape() != Shape{mel_pred.dim(0), mel_pred.dim(1)} ||
      linear_pred.dim(0) != mel_pred.dim(0) || linear_pred.dim(1) != mel_pred.dim(1)) {
    throw DimensionError("spectrogram_loss: mask must be [B, T] matching both predictions");
  }
  LossTerms terms;
  for (double m : frame_mask.data()) terms.valid_frames += m;
  if (terms.valid_frames <= 0.0) throw ContractError("spectrogram_loss: every frame is masked");
  const Tensor m = reshape(frame_mask, {frame_mask.dim(0), frame_mask.dim(1), 1});
  terms.mel = scale(sum(abs(mel_pred - mel_target) * m), 1.0 / (terms.valid_frames * mel_pred.dim(2)));
  terms.linear = scale(sum(abs(linear_pred - linear_target) * m), 1.0 / (terms.valid_frames * linear_pred.dim(2)));
  terms.total = terms.mel + terms.linear;
  return terms;
}

}  // namespace mimic
