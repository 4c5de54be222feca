#include "mimic/synthesis.hpp"

#include <algorithm>
#include <cmath>

#include "mimic/batch.hpp"
#include "mimic/error.hpp"
#include "mimic/vad.hpp"

namespace mimic {

namespace {

// Problems with operator-supplied text or audio are input errors here.
std::vector<std::int64_t> encode_text(const Vocabulary& vocab, const std::string& text) {
  try {
    return vocab.encode(normalize_text(text));
  } catch (const DataError& e) {
    throw InputError(std::string("text: ") + e.what());
  }
}

}  // namespace

Synthesizer::Synthesizer(Checkpoint checkpoint)
    : checkpoint_(std::move(checkpoint)), vocab_(checkpoint_.vocabulary), model_(restore_model(checkpoint_)) {
  checkpoint_.dsp.validate();
  if (checkpoint_.dsp.n_mels != checkpoint_.model.n_mels || checkpoint_.dsp.n_bins() != checkpoint_.model.n_linear_bins) {
    throw ConfigError("checkpoint: feature sizes differ between dsp and model settings");
  }
}

Spectrogram Synthesizer::reference_features(const Waveform& reference) const {
  const DspConfig& dsp = checkpoint_.dsp;
  if (reference.samples.empty()) throw InputError("reference audio is empty");
  const Waveform wave = reference.sample_rate == dsp.sample_rate ? reference : resample(reference, dsp.sample_rate);
  Waveform trimmed;
  try {
    trimmed = trim_silence(wave, dsp.vad);
  } catch (const DataError& e) {
    throw InputError(std::string("reference: ") + e.what());
  }
  if (trimmed.duration_s() < kMinReferenceSeconds) {
    throw InputError("reference has " + std::to_string(trimmed.duration_s()) + " s of speech after trimming; at least " +
                     std::to_string(kMinReferenceSeconds) + " s is required");
  }
  const Spectrogram mel = extract_features(trimmed, dsp).mel;
  return normalize(mel, checkpoint_.norm.mel_min, checkpoint_.norm.mel_max);
}

Tensor Synthesizer::embed_reference(const Waveform& reference) const {
  if (checkpoint_.model.conditioning != Conditioning::kEmbedder) {
    throw ConfigError("a reference recording needs an embedder-mode checkpoint; this one uses a speaker table");
  }
  return embed_features(reference_features(reference));
}

Tensor Synthesizer::embed_features(const Spectrogram& mel) const {
  if (checkpoint_.model.conditioning != Conditioning::kEmbedder) {
    throw ConfigError("a reference recording needs an embedder-mode checkpoint; this one uses a speaker table");
  }
  std::vector<double> values(mel.values.begin(), mel.values.end());
  const Tensor x = Tensor::from({1, mel.n_frames, mel.n_bins}, std::move(values));
  NoGradGuard no_grad;
  return model_->embed(x, {mel.n_frames}, nn::Mode::infer());
}

Tensor Synthesizer::speaker_embedding(const std::string& speaker_id) const {
  if (checkpoint_.model.conditioning != Conditioning::kLookup) {
    throw ConfigError("a speaker id needs a lookup-mode checkpoint; this one uses the speaker embedder");
  }
  const auto it = std::find(checkpoint_.speakers.begin(), checkpoint_.speakers.end(), speaker_id);
  if (it == checkpoint_.speakers.end()) throw ConfigError("speaker '" + speaker_id + "' is not in the checkpoint");
  NoGradGuard no_grad;
  return model_->lookup({static_cast<std::size_t>(it - checkpoint_.speakers.begin())});
}

SynthesisResult Synthesizer::synthesize(const std::string& text, const Tensor& embedding, std::uint64_t seed) const {
  const std::vector<std::int64_t> ids = encode_text(vocab_, text);
  const InferenceResult inf = model_->infer(ids, embedding);
  const ModelConfig& mc = checkpoint_.model;
  const DspConfig& dsp = checkpoint_.dsp;
  const NormStats& norm = checkpoint_.norm;

  SynthesisResult out;
  out.alignment = inf.alignment;
  out.steps = inf.steps;
  out.text_length = inf.text_length;
  out.truncated = inf.truncated;

  auto as_spec = [&](const std::vector<double>& v, std::size_t bins, SpecKind kind) {
    Spectrogram s;
    s.n_frames = inf.frames;
    s.n_bins = bins;
    s.kind = kind;
    s.frame_shift_s = dsp.frame_shift_s;
    s.frame_length_s = dsp.frame_length_s;
    s.values.assign(v.begin(), v.end());
    return s;
  };
  out.mel = denormalize(as_spec(inf.mel, mc.n_mels, SpecKind::kLogMel), norm.mel_min, norm.mel_max);
  out.linear = denormalize(as_spec(inf.linear, mc.n_linear_bins, SpecKind::kLogLinear), norm.linear_min,
                           norm.linear_max);

  Spectrogram magnitude = out.linear;
  magnitude.kind = SpecKind::kLinearMagnitude;
  for (float& v : magnitude.values) v = static_cast<float>(std::pow(std::exp(static_cast<double>(v)), dsp.griffin_lim_power));
  GriffinLimResult gl = griffin_lim(magnitude, dsp.griffin_lim_iters, dsp, seed);
  out.wave = std::move(gl.wave);
  out.griffin_lim_errors = std::move(gl.errors);
  return out;
}

SynthesisResult Synthesizer::synthesize(const std::string& text, const Waveform& reference,
                                        std::uint64_t seed) const {
  // Validate the text before spending the embedder pass.
  (void)encode_text(vocab_, text);
  return synthesize(text, embed_reference(reference), seed);
}

SynthesisResult Synthesizer::synthesize(const std::string& text, const std::string& speaker_id,
                                        std::uint64_t seed) const {
  return synthesize(text, speaker_embedding(speaker_id), seed);
}

}  // namespace mimic
