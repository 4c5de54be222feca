#pragma once

#include <cstddef>

namespace mimic {

/// How analysis frames are laid over a signal.
///   kNone: frames start at sample 0; count = 1 + floor((len - frame) / hop).
///   kSame: (frame - hop) / 2 zeros on each side; count = floor(len / hop).
enum class FramePadding { kNone, kSame };

struct VadConfig {
  double subframe_s = 0.010;
  double absolute_floor = 1e-3;    // RMS, full scale = 1
  double relative_threshold = 0.1; // fraction of the median sub-frame RMS
  double hangover_s = 0.200;
};

struct DspConfig {
  int sample_rate = 16000;
  double frame_length_s = 0.050;
  double frame_shift_s = 0.0125;
  std::size_t n_fft = 0;  // 0 selects the next power of two >= frame length
  std::size_t n_mels = 80;
  double log_floor = 1e-5;
  FramePadding padding = FramePadding::kSame;
  std::size_t griffin_lim_iters = 50;
  double griffin_lim_power = 1.5;
  VadConfig vad;

  std::size_t frame_length() const;
  std::size_t hop_length() const;
  std::size_t fft_size() const;
  std::size_t n_bins() const { return fft_size() / 2 + 1; }
  /// Throws ConfigError on inconsistent values.
  void validate() const;
};

}  // namespace mimic
