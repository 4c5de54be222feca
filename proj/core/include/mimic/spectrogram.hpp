#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "mimic/audio.hpp"
#include "mimic/dsp_config.hpp"
#include "mimic/stft.hpp"

namespace mimic {

enum class SpecKind : std::uint32_t { kLinearMagnitude = 0, kLogLinear = 1, kLogMel = 2 };

const char* to_string(SpecKind kind);

/// Time x frequency matrix, row-major float32.
struct Spectrogram {
  std::size_t n_frames = 0;
  std::size_t n_bins = 0;
  std::vector<float> values;
  SpecKind kind = SpecKind::kLogMel;
  double frame_shift_s = 0.0125;
  double frame_length_s = 0.050;

  float at(std::size_t frame, std::size_t bin) const { return values[frame * n_bins + bin]; }
  std::span<const float> frame(std::size_t t) const { return {values.data() + t * n_bins, n_bins}; }
};

/// Triangular mel filters (HTK mel scale) from 0 Hz to Nyquist,
/// row-major [n_mels x n_bins], unnormalised peaks of 1.
std::vector<double> mel_filterbank(std::size_t n_mels, std::size_t n_fft, int sample_rate);

Spectrogram magnitude_spectrogram(const StftFrames& frames, const DspConfig& config);
/// log(max(|X|, floor)).
Spectrogram linear_spectrogram(const StftFrames& frames, const DspConfig& config);
/// log(max(mel . |X|, floor)); throws ConfigError for n_mels < 2.
Spectrogram mel_spectrogram(const StftFrames& frames, const DspConfig& config);

/// Per-corpus min/max of the log features, used to map network targets to [0, 1].
struct NormStats {
  double mel_min = 0.0;
  double mel_max = 1.0;
  double linear_min = 0.0;
  double linear_max = 1.0;
};

/// (x - lo) / (hi - lo), clamped to [0, 1].
Spectrogram normalize(const Spectrogram& spec, double lo, double hi);
/// Inverse of `normalize` (up to the clamp).
Spectrogram denormalize(const Spectrogram& spec, double lo, double hi);

/// Griffin-Lim phase reconstruction from a linear-magnitude spectrogram.
struct GriffinLimResult {
  Waveform wave;
  /// spectral_distance after the initial inversion and after each iteration.
  std::vector<double> errors;
};

/// `random_phase_seed` == 0 starts from zero phase, otherwise from uniform
/// random phase drawn with that seed. Throws ContractError on negative
/// magnitudes. `length` (0 = what the frames cover) sets the output size.
GriffinLimResult griffin_lim(const Spectrogram& magnitude, std::size_t n_iters, const DspConfig& config,
                             std::uint64_t random_phase_seed = 0, std::size_t length = 0);

/// Binary container: "MSPG", u32 version, u32 kind, u32 frames, u32 bins,
/// f64 frame shift, f64 frame length, float32 payload (little endian).
void save_spectrogram(const std::filesystem::path& path, const Spectrogram& spec);
Spectrogram load_spectrogram(const std::filesystem::path& path);

}  // namespace mimic
