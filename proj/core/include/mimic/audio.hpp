#pragma once

#include <filesystem>
#include <vector>

namespace mimic {

struct Waveform {
  std::vector<double> samples;  // [-1, 1]
  int sample_rate = 0;

  double duration_s() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

/// Reads a PCM (8/16/24/32-bit integer) or IEEE-float WAV file, averages the
/// channels to mono and resamples to `target_rate`. Compressed or malformed
/// files raise InputError naming the path.
Waveform load_audio(const std::filesystem::path& path, int target_rate);

/// Same, but keeps the file's own sample rate.
Waveform load_audio(const std::filesystem::path& path);

/// Writes 16-bit PCM mono. Samples are clipped to [-1, 1].
void save_wav(const std::filesystem::path& path, const Waveform& wave);

/// Band-limited (windowed-sinc) resampling; output length is
/// round(len * target_rate / rate).
Waveform resample(const Waveform& wave, int target_rate);

}  // namespace mimic
