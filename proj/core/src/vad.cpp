#include "mimic/vad.hpp"

#include <algorithm>
#include <cmath>

#include "mimic/error.hpp"

namespace mimic {

namespace {

std::vector<double> subframe_rms(const Waveform& wave, std::size_t width) {
  const auto& x = wave.samples;
  std::vector<double> rms;
  rms.reserve(x.size() / width + 1);
  for (std::size_t start = 0; start < x.size(); start += width) {
    const std::size_t end = std::min(x.size(), start + width);
    double energy = 0.0;
    for (std::size_t i = start; i < end; ++i) energy += x[i] * x[i];
    rms.push_back(std::sqrt(energy / static_cast<double>(end - start)));
  }
  return rms;
}

std::size_t subframe_width(const Waveform& wave, const VadConfig& config) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(config.subframe_s * wave.sample_rate)));
}

}  // namespace

std::vector<bool> detect_speech(const Waveform& wave, const VadConfig& config) {
  if (wave.samples.empty()) throw InputError("detect_speech: empty waveform");
  const std::vector<double> rms = subframe_rms(wave, subframe_width(wave, config));

  std::vector<double> sorted = rms;
  auto mid = sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2);
  std::nth_element(sorted.begin(), mid, sorted.end());
  const double threshold = std::max(config.absolute_floor, config.relative_threshold * *mid);

  std::vector<bool> speech(rms.size());
  for (std::size_t i = 0; i < rms.size(); ++i) speech[i] = rms[i] > threshold;

  const auto hangover = static_cast<std::size_t>(std::lround(config.hangover_s / config.subframe_s));
  std::size_t last = rms.size();
  for (std::size_t i = 0; i < rms.size(); ++i) {
    if (!speech[i]) continue;
    if (last != rms.size() && i - last - 1 <= hangover) {
      for (std::size_t j = last + 1; j < i; ++j) speech[j] = true;
    }
    last = i;
  }
  return speech;
}

Waveform trim_silence(const Waveform& wave, const VadConfig& config) {
  const std::vector<bool> speech = detect_speech(wave, config);
  const auto first = std::find(speech.begin(), speech.end(), true);
  if (first == speech.end()) throw DataError("trim_silence: no speech detected");
  const auto last = std::find(speech.rbegin(), speech.rend(), true);

  const std::size_t width = subframe_width(wave, config);
  const auto begin_frame = static_cast<std::size_t>(first - speech.begin());
  const auto end_frame = speech.size() - static_cast<std::size_t>(last - speech.rbegin());
  const std::size_t begin = begin_frame * width;
  const std::size_t end = std::min(wave.samples.size(), end_frame * width);

  Waveform out;
  out.sample_rate = wave.sample_rate;
  out.samples.assign(wave.samples.begin() + static_cast<std::ptrdiff_t>(begin),
                     wave.samples.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

}  // namespace mimic
