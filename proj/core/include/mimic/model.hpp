#pragma once

// The voice-imitating synthesis network: a character encoder, an attention
// decoder emitting r mel frames per step, a post-processor predicting the
// linear spectrogram, and a speaker embedding that conditions the decoder.
// The embedding comes from a learned per-speaker table (lookup mode) or from
// a convolutional embedder reading a reference log-mel spectrogram.

#include <atomic>
#include <cstdint>
#include <string>
#include <vector>

#include "mimic/nn.hpp"
#include "mimic/tensor.hpp"

namespace mimic {

enum class Conditioning { kLookup, kEmbedder };

const char* to_string(Conditioning mode);
Conditioning conditioning_from_string(const std::string& name);

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t char_embed_dim = 256;
  std::vector<std::size_t> prenet_dims = {256, 128};
  std::size_t encoder_dim = 256;  // both GRU directions together
  std::size_t encoder_conv_layers = 0;
  std::size_t decoder_dim = 256;
  std::size_t attention_dim = 256;
  std::size_t embedding_dim = 128;
  std::size_t r = 5;
  std::size_t n_mels = 80;
  std::size_t n_linear_bins = 513;
  std::size_t postnet_channels = 256;
  std::size_t max_decoder_steps = 200;
  double stop_threshold = 0.05;
  std::size_t stop_patience = 3;
  double prenet_dropout = 0.5;

  Conditioning conditioning = Conditioning::kEmbedder;
  std::size_t n_speakers = 0;  // lookup rows
  double lookup_init_stddev = 0.1;
  bool condition_attention_rnn = true;
  bool condition_decoder_rnn = true;

  std::size_t embedder_channels = 128;
  std::size_t embedder_kernel = 3;
  std::vector<std::size_t> embedder_strides = {1, 1, 2, 2, 2};
  std::size_t embedder_hidden = 128;
  std::size_t embedder_dense_layers = 2;
  double embedder_dropout = 0.5;

  /// Throws ConfigError on inconsistent settings.
  void validate() const;
  /// Shortest reference the embedder accepts: the product of its strides.
  std::size_t min_reference_frames() const;
};

/// Recurrent state threaded through decoder steps.
struct DecoderState {
  Tensor attention_hidden;  // [B, decoder_dim]
  Tensor decoder_hidden;    // [B, decoder_dim]
  Tensor context;           // [B, encoder_dim]

  /// Same values, no graph history.
  DecoderState detached() const;
};

/// Encoder output plus what attention needs at every decoder step.
struct Memory {
  Tensor values;  // [B, N, encoder_dim]
  Tensor keys;    // projected values
  Tensor mask;    // [B, N]
};

struct DecoderOutput {
  Tensor mel;         // [B, steps * r, n_mels]
  Tensor alignments;  // [B, steps, N]
  DecoderState state;
};

struct InferenceResult {
  std::vector<double> mel;     // [frames, n_mels], normalized
  std::vector<double> linear;  // [frames, n_linear_bins], normalized
  std::vector<double> alignment;  // [steps, N]
  std::size_t frames = 0;
  std::size_t steps = 0;
  std::size_t text_length = 0;
  bool truncated = false;
};

class VoiceModel {
 public:
  VoiceModel(const ModelConfig& config, std::uint64_t seed);
  VoiceModel(const VoiceModel&) = delete;
  VoiceModel& operator=(const VoiceModel&) = delete;

  const ModelConfig& config() const { return config_; }
  nn::ParameterStore& store() { return store_; }
  const nn::ParameterStore& store() const { return store_; }

  /// Reference log-mels [B, T, n_mels] with per-item lengths -> [B, embedding_dim].
  /// Throws InputError for references shorter than min_reference_frames().
  Tensor embed(const Tensor& reference, const std::vector<std::size_t>& lengths, const nn::Mode& mode) const;
  /// Convolution stack of the embedder, before max-over-time pooling:
  /// [B, T, n_mels] -> [B, T', embedder_channels]. `lengths` are updated to
  /// the valid output frames of each item.
  Tensor embedder_frames(const Tensor& reference, std::vector<std::size_t>& lengths, const nn::Mode& mode) const;
  /// Rows of the speaker table -> [B, embedding_dim].
  Tensor lookup(const std::vector<std::size_t>& speakers) const;
  /// Number of embedder forward passes since construction.
  std::size_t embedder_calls() const { return embedder_calls_.load(); }

  /// Character ids [B * N] (row-major, kPad-padded) with lengths -> memory.
  Memory encode(const std::vector<std::int64_t>& ids, std::size_t batch, std::size_t length,
                const std::vector<std::size_t>& lengths, const nn::Mode& mode) const;

  DecoderState initial_state(std::size_t batch) const;

  /// Teacher-forced decoding of `inputs` [B, steps, n_mels]: step k reads
  /// inputs[:, k]. Each step emits r frames.
  DecoderOutput decode(const Memory& memory, const Tensor& speaker, const Tensor& inputs, DecoderState state,
                       const nn::Mode& mode) const;

  /// Decoder inputs for teacher forcing: a zero frame, then the last frame
  /// of each r-group of `targets` [B, steps * r, n_mels], for steps
  /// [first, first + count).
  Tensor teacher_inputs(const Tensor& targets, std::size_t first, std::size_t count) const;

  /// Mel [B, T, n_mels] -> normalized log-linear [B, T, n_linear_bins].
  Tensor postprocess(const Tensor& mel, const nn::Mode& mode) const;

  /// Free-running synthesis for one text, no gradients. Stops once
  /// `stop_patience` consecutive steps have mean mel below
  /// `stop_threshold`, or at max_decoder_steps (flagged as truncated).
  InferenceResult infer(const std::vector<std::int64_t>& ids, const Tensor& speaker) const;

 private:
  struct EmbedderLayers {
    std::vector<nn::Conv1d> convs;
    std::vector<nn::BatchNorm> conv_norms;
    std::vector<nn::Dense> dense;
    std::vector<nn::BatchNorm> dense_norms;
    nn::Dense projection;
  };

  Tensor prenet(const std::vector<nn::Dense>& layers, const Tensor& x, const nn::Mode& mode) const;
  std::pair<Tensor, DecoderState> step(const Memory& memory, const Tensor& speaker, const Tensor& frame,
                                       const DecoderState& state, const nn::Mode& mode, Tensor* weights) const;

  ModelConfig config_;
  nn::ParameterStore store_;
  Tensor char_table_;
  std::vector<nn::Dense> encoder_prenet_;
  std::vector<nn::Conv1d> encoder_convs_;
  std::vector<nn::BatchNorm> encoder_conv_norms_;
  nn::GRUCell encoder_forward_, encoder_backward_;
  std::vector<nn::Dense> decoder_prenet_;
  nn::GRUCell attention_rnn_, decoder_rnn_;
  nn::Attention attention_;
  nn::Dense frame_projection_;
  nn::Conv1d post_conv1_, post_conv2_;
  nn::Dense post_projection_;
  Tensor speaker_table_;
  EmbedderLayers embedder_;
  mutable std::atomic<std::size_t> embedder_calls_{0};
};

struct LossTerms {
  Tensor mel;
  Tensor linear;
  Tensor total;
  double valid_frames = 0.0;
};

/// Mean absolute error over the frames marked in `frame_mask` [B, T], for
/// mel and linear separately; the total is their unweighted sum. Throws
/// ContractError when no frame is valid.
LossTerms spectrogram_loss(const Tensor& mel_pred, const Tensor& mel_target, const Tensor& linear_pred,
                           const Tensor& linear_target, const Tensor& frame_mask);

}  // namespace mimic
