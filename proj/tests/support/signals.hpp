#pragma once

// Synthetic test signals with known structure.

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "mimic/audio.hpp"

namespace mimic::testing {

/// Voiced, speech-like signal: f0 with slow vibrato, 12 harmonics with a
/// 1/h roll-off, and a syllable-rate amplitude envelope.
inline Waveform harmonic_signal(double seconds, int rate = 16000, double f0 = 150.0) {
  Waveform w;
  w.sample_rate = rate;
  const auto n = static_cast<std::size_t>(seconds * rate);
  w.samples.resize(n);
  double phase = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate;
    const double f = f0 * (1.0 + 0.03 * std::sin(2.0 * std::numbers::pi * 5.0 * t));
    phase += 2.0 * std::numbers::pi * f / rate;
    double v = 0.0;
    for (int h = 1; h <= 12; ++h) v += std::sin(h * phase) / h;
    const double env = 0.6 + 0.4 * std::sin(2.0 * std::numbers::pi * 3.0 * t);
    w.samples[i] = 0.2 * env * v;
  }
  return w;
}

inline Waveform sine(double hz, double seconds, int rate = 16000, double amplitude = 0.5) {
  Waveform w;
  w.sample_rate = rate;
  const auto n = static_cast<std::size_t>(std::lround(seconds * rate));
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    w.samples[i] = amplitude * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / rate);
  }
  return w;
}

inline std::vector<double> uniform_noise(std::size_t n, double amplitude, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-amplitude, amplitude);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

}  // namespace mimic::testing
