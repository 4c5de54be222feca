#pragma once

// Text-to-waveform synthesis from a trained checkpoint. In embedder mode the
// voice comes from an untranscribed reference recording and costs a single
// embedder forward pass; no parameter is updated.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mimic/audio.hpp"
#include "mimic/model.hpp"
#include "mimic/spectrogram.hpp"
#include "mimic/text.hpp"
#include "mimic/train.hpp"

namespace mimic {

/// Shortest reference accepted after silence trimming, in seconds.
inline constexpr double kMinReferenceSeconds = 1.0;

struct SynthesisResult {
  Waveform wave;
  Spectrogram mel;     // log-mel, de-normalized
  Spectrogram linear;  // log-linear, de-normalized
  std::vector<double> alignment;  // [steps, text_length], rows sum to 1
  std::size_t steps = 0;
  std::size_t text_length = 0;
  bool truncated = false;
  std::vector<double> griffin_lim_errors;
};

class Synthesizer {
 public:
  explicit Synthesizer(Checkpoint checkpoint);

  const Checkpoint& checkpoint() const { return checkpoint_; }
  const VoiceModel& model() const { return *model_; }
  const Vocabulary& vocabulary() const { return vocab_; }

  /// Normalized log-mel of a reference recording: resampled to the
  /// checkpoint rate and trimmed. Throws InputError when less than
  /// kMinReferenceSeconds of speech remains.
  Spectrogram reference_features(const Waveform& reference) const;
  /// One embedder forward pass over a reference -> [1, embedding_dim].
  /// Throws ConfigError on a lookup-mode checkpoint.
  Tensor embed_reference(const Waveform& reference) const;
  /// One embedder forward pass over a normalized log-mel [frames, n_mels].
  Tensor embed_features(const Spectrogram& normalized_mel) const;
  /// Table row of a trained speaker -> [1, embedding_dim]. Throws
  /// ConfigError on an embedder-mode checkpoint or an unknown speaker.
  Tensor speaker_embedding(const std::string& speaker_id) const;

  /// Normalizes and encodes `text`, decodes until the stop rule fires and
  /// inverts the predicted linear spectrogram (exp, power, Griffin-Lim).
  /// `seed` selects the Griffin-Lim starting phase (0 = zero phase).
  SynthesisResult synthesize(const std::string& text, const Tensor& embedding, std::uint64_t seed = 0) const;
  SynthesisResult synthesize(const std::string& text, const Waveform& reference, std::uint64_t seed = 0) const;
  SynthesisResult synthesize(const std::string& text, const std::string& speaker_id, std::uint64_t seed = 0) const;

 private:
  Checkpoint checkpoint_;
  Vocabulary vocab_;
  std::unique_ptr<VoiceModel> model_;
};

}  // namespace mimic
