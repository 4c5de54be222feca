#include "mimic/stft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

#include "mimic/error.hpp"

namespace mimic {

namespace {

// FFTW planning is not thread-safe; execution with the new-array interface is.
struct FftPlans {
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;
};

const FftPlans& plans_for(std::size_t n) {
  static std::mutex mutex;
  static std::map<std::size_t, FftPlans> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  std::vector<double> real(n);
  std::vector<std::complex<double>> spec(n / 2 + 1);
  auto* c = reinterpret_cast<fftw_complex*>(spec.data());
  const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  FftPlans plans;
  plans.forward = fftw_plan_dft_r2c_1d(static_cast<int>(n), real.data(), c, flags);
  plans.inverse = fftw_plan_dft_c2r_1d(static_cast<int>(n), c, real.data(), flags);
  return cache.emplace(n, plans).first->second;
}

std::size_t pad_amount(const DspConfig& config, FramePadding padding) {
  return padding == FramePadding::kSame ? (config.frame_length() - config.hop_length()) / 2 : 0;
}

}  // namespace

std::vector<double> hann_window(std::size_t length) {
  std::vector<double> w(length);
  for (std::size_t i = 0; i < length; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(length));
  }
  return w;
}

std::size_t frame_count(std::size_t n_samples, const DspConfig& config, FramePadding padding) {
  const std::size_t frame = config.frame_length();
  const std::size_t hop = config.hop_length();
  const std::size_t padded = n_samples + 2 * pad_amount(config, padding);
  if (padded < frame) return 0;
  return 1 + (padded - frame) / hop;
}

StftFrames stft(std::span<const double> samples, const DspConfig& config, FramePadding padding) {
  const std::size_t frame = config.frame_length();
  const std::size_t hop = config.hop_length();
  const std::size_t n_fft = config.fft_size();
  const std::size_t count = frame_count(samples.size(), config, padding);
  if (count == 0) {
    throw InputError("stft: " + std::to_string(samples.size()) + " samples is shorter than one " +
                     std::to_string(frame) + "-sample frame");
  }
  const std::size_t pad = pad_amount(config, padding);
  const std::vector<double> window = hann_window(frame);
  const FftPlans& plans = plans_for(n_fft);

  StftFrames out;
  out.n_frames = count;
  out.n_bins = n_fft / 2 + 1;
  out.bins.resize(count * out.n_bins);
  std::vector<double> buffer(n_fft);
  for (std::size_t f = 0; f < count; ++f) {
    std::fill(buffer.begin(), buffer.end(), 0.0);
    for (std::size_t i = 0; i < frame; ++i) {
      const std::size_t padded_index = f * hop + i;
      if (padded_index < pad) continue;
      const std::size_t src = padded_index - pad;
      if (src < samples.size()) buffer[i] = samples[src] * window[i];
    }
    fftw_execute_dft_r2c(plans.forward, buffer.data(),
                         reinterpret_cast<fftw_complex*>(out.bins.data() + f * out.n_bins));
  }
  return out;
}

StftFrames stft(const Waveform& wave, const DspConfig& config) {
  return stft(std::span<const double>(wave.samples), config, FramePadding::kNone);
}

std::vector<double> istft(const StftFrames& frames, const DspConfig& config, FramePadding padding,
                          std::size_t length) {
  const std::size_t frame = config.frame_length();
  const std::size_t hop = config.hop_length();
  const std::size_t n_fft = config.fft_size();
  if (frames.n_bins != n_fft / 2 + 1) {
    throw DimensionError("istft: frames have " + std::to_string(frames.n_bins) + " bins, config expects " +
                         std::to_string(n_fft / 2 + 1));
  }
  const std::size_t pad = pad_amount(config, padding);
  const std::size_t covered = frames.n_frames == 0 ? 0 : (frames.n_frames - 1) * hop + frame;
  const std::vector<double> window = hann_window(frame);
  const FftPlans& plans = plans_for(n_fft);

  std::vector<double> signal(covered, 0.0);
  std::vector<double> weight(covered, 0.0);
  std::vector<std::complex<double>> spec(frames.n_bins);
  std::vector<double> buffer(n_fft);
  for (std::size_t f = 0; f < frames.n_frames; ++f) {
    std::copy_n(frames.bins.begin() + static_cast<std::ptrdiff_t>(f * frames.n_bins), frames.n_bins, spec.begin());
    fftw_execute_dft_c2r(plans.inverse, reinterpret_cast<fftw_complex*>(spec.data()), buffer.data());
    for (std::size_t i = 0; i < frame; ++i) {
      signal[f * hop + i] += window[i] * buffer[i] / static_cast<double>(n_fft);
      weight[f * hop + i] += window[i] * window[i];
    }
  }
  for (std::size_t i = 0; i < covered; ++i) {
    if (weight[i] > 1e-10) signal[i] /= weight[i];
  }

  const std::size_t available = covered > pad ? covered - pad : 0;
  const std::size_t n = length == 0 ? (available > pad ? available - pad : 0) : length;
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n && pad + i < covered; ++i) out[i] = signal[pad + i];
  return out;
}

double spectral_distance(const StftFrames& frames, std::span<const double> magnitude) {
  if (magnitude.size() != frames.bins.size()) {
    throw DimensionError("spectral_distance: " + std::to_string(magnitude.size()) + " magnitudes for " +
                         std::to_string(frames.bins.size()) + " bins");
  }
  double total = 0.0;
  for (std::size_t f = 0; f < frames.n_frames; ++f) {
    for (std::size_t b = 0; b < frames.n_bins; ++b) {
      const std::size_t i = f * frames.n_bins + b;
      const double d = std::abs(frames.bins[i]) - magnitude[i];
      // Interior bins stand for a conjugate pair in the two-sided spectrum.
      const bool edge = b == 0 || (b + 1 == frames.n_bins);
      total += (edge ? 1.0 : 2.0) * d * d;
    }
  }
  return std::sqrt(total);
}

}  // namespace mimic
