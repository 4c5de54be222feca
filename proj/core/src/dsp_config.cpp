#include "mimic/dsp_config.hpp"

#include <cmath>
#include <string>

#include "mimic/error.hpp"

namespace mimic {

std::size_t DspConfig::frame_length() const {
  return static_cast<std::size_t>(std::lround(frame_length_s * sample_rate));
}

std::size_t DspConfig::hop_length() const {
  return static_cast<std::size_t>(std::lround(frame_shift_s * sample_rate));
}

std::size_t DspConfig::fft_size() const {
  if (n_fft != 0) return n_fft;
  std::size_t n = 1;
  while (n < frame_length()) n <<= 1;
  return n;
}

void DspConfig::validate() const {
  if (sample_rate <= 0) throw ConfigError("dsp: sample_rate must be positive");
  if (frame_length() == 0 || hop_length() == 0) throw ConfigError("dsp: frame length and shift must be >= 1 sample");
  if (hop_length() > frame_length()) throw ConfigError("dsp: frame shift exceeds frame length");
  if (fft_size() < frame_length()) {
    throw ConfigError("dsp: n_fft " + std::to_string(fft_size()) + " is shorter than the frame");
  }
  if (n_mels < 2) throw ConfigError("dsp: n_mels must be >= 2");
  if (!(log_floor > 0.0)) throw ConfigError("dsp: log_floor must be positive");
  if (!(griffin_lim_power > 0.0)) throw ConfigError("dsp: griffin_lim_power must be positive");
  if (!(vad.subframe_s > 0.0) || vad.hangover_s < 0.0 || vad.absolute_floor < 0.0 || vad.relative_threshold < 0.0) {
    throw ConfigError("dsp: invalid VAD settings");
  }
}

}  // namespace mimic
