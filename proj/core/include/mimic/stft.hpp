#pragma once

#include <complex>
#include <cstdint>
#include <span>
#include <vector>

#include "mimic/audio.hpp"
#include "mimic/dsp_config.hpp"

namespace mimic {

/// Complex half-spectrum frames, row-major [n_frames x n_bins].
struct StftFrames {
  std::size_t n_frames = 0;
  std::size_t n_bins = 0;
  std::vector<std::complex<double>> bins;

  std::complex<double> at(std::size_t frame, std::size_t bin) const { return bins[frame * n_bins + bin]; }
};

/// Periodic Hann window.
std::vector<double> hann_window(std::size_t length);

std::size_t frame_count(std::size_t n_samples, const DspConfig& config, FramePadding padding);

/// Hann-windowed frames zero-padded to the FFT size. Throws InputError when
/// the signal is shorter than one frame.
StftFrames stft(std::span<const double> samples, const DspConfig& config, FramePadding padding);
StftFrames stft(const Waveform& wave, const DspConfig& config);

/// Least-squares overlap-add inverse (window-square normalised). `length`
/// is the output sample count; 0 keeps everything the frames cover.
std::vector<double> istft(const StftFrames& frames, const DspConfig& config, FramePadding padding,
                          std::size_t length = 0);

/// Magnitude distance ||(|X| - S)|| over the full two-sided spectrum, which
/// is the norm Griffin-Lim decreases. `magnitude` is [n_frames x n_bins].
double spectral_distance(const StftFrames& frames, std::span<const double> magnitude);

}  // namespace mimic
