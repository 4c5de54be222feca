#include "mimic/spectrogram.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "binary_io.hpp"
#include "mimic/error.hpp"

namespace mimic {

namespace {

constexpr char kSpecMagic[4] = {'M', 'S', 'P', 'G'};
constexpr std::uint32_t kSpecVersion = 1;

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Spectrogram blank_like(const StftFrames& frames, const DspConfig& config, SpecKind kind, std::size_t bins) {
  Spectrogram s;
  s.n_frames = frames.n_frames;
  s.n_bins = bins;
  s.values.resize(frames.n_frames * bins);
  s.kind = kind;
  s.frame_shift_s = config.frame_shift_s;
  s.frame_length_s = config.frame_length_s;
  return s;
}

}  // namespace

const char* to_string(SpecKind kind) {
  switch (kind) {
    case SpecKind::kLinearMagnitude:
      return "linear-mag";
    case SpecKind::kLogLinear:
      return "log-linear";
    case SpecKind::kLogMel:
      return "log-mel";
  }
  return "unknown";
}

std::vector<double> mel_filterbank(std::size_t n_mels, std::size_t n_fft, int sample_rate) {
  if (n_mels < 2) throw ConfigError("mel_filterbank: n_mels must be >= 2, got " + std::to_string(n_mels));
  const std::size_t n_bins = n_fft / 2 + 1;
  const double nyquist = sample_rate / 2.0;
  const double mel_hi = hz_to_mel(nyquist);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_hi * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  }
  std::vector<double> bank(n_mels * n_bins, 0.0);
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = edges[m], center = edges[m + 1], hi = edges[m + 2];
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(n_fft);
      const double rise = (f - lo) / (center - lo);
      const double fall = (hi - f) / (hi - center);
      bank[m * n_bins + k] = std::max(0.0, std::min(rise, fall));
    }
  }
  return bank;
}

Spectrogram magnitude_spectrogram(const StftFrames& frames, const DspConfig& config) {
  Spectrogram s = blank_like(frames, config, SpecKind::kLinearMagnitude, frames.n_bins);
  for (std::size_t i = 0; i < frames.bins.size(); ++i) s.values[i] = static_cast<float>(std::abs(frames.bins[i]));
  return s;
}

Spectrogram linear_spectrogram(const StftFrames& frames, const DspConfig& config) {
  Spectrogram s = blank_like(frames, config, SpecKind::kLogLinear, frames.n_bins);
  for (std::size_t i = 0; i < frames.bins.size(); ++i) {
    s.values[i] = static_cast<float>(std::log(std::max(std::abs(frames.bins[i]), config.log_floor)));
  }
  return s;
}

Spectrogram mel_spectrogram(const StftFrames& frames, const DspConfig& config) {
  if (config.n_mels < 2) throw ConfigError("mel_spectrogram: n_mels must be >= 2");
  const std::size_t n_fft = (frames.n_bins - 1) * 2;
  const std::vector<double> bank = mel_filterbank(config.n_mels, n_fft, config.sample_rate);
  Spectrogram s = blank_like(frames, config, SpecKind::kLogMel, config.n_mels);
  std::vector<double> mag(frames.n_bins);
  for (std::size_t f = 0; f < frames.n_frames; ++f) {
    for (std::size_t k = 0; k < frames.n_bins; ++k) mag[k] = std::abs(frames.at(f, k));
    for (std::size_t m = 0; m < config.n_mels; ++m) {
      const double* row = bank.data() + m * frames.n_bins;
      double acc = 0.0;
      for (std::size_t k = 0; k < frames.n_bins; ++k) acc += row[k] * mag[k];
      s.values[f * config.n_mels + m] = static_cast<float>(std::log(std::max(acc, config.log_floor)));
    }
  }
  return s;
}

Spectrogram normalize(const Spectrogram& spec, double lo, double hi) {
  if (!(hi > lo)) throw ContractError("normalize: empty range");
  Spectrogram out = spec;
  for (float& v : out.values) v = static_cast<float>(std::clamp((v - lo) / (hi - lo), 0.0, 1.0));
  return out;
}

Spectrogram denormalize(const Spectrogram& spec, double lo, double hi) {
  Spectrogram out = spec;
  for (float& v : out.values) v = static_cast<float>(lo + static_cast<double>(v) * (hi - lo));
  return out;
}

GriffinLimResult griffin_lim(const Spectrogram& magnitude, std::size_t n_iters, const DspConfig& config,
                             std::uint64_t random_phase_seed, std::size_t length) {
  const std::size_t n_bins = config.n_bins();
  if (magnitude.n_bins != n_bins) {
    throw DimensionError("griffin_lim: spectrogram has " + std::to_string(magnitude.n_bins) + " bins, expected " +
                         std::to_string(n_bins));
  }
  std::vector<double> target(magnitude.values.begin(), magnitude.values.end());
  for (double v : target) {
    if (v < 0.0 || !std::isfinite(v)) throw ContractError("griffin_lim: magnitudes must be finite and non-negative");
  }

  StftFrames spec;
  spec.n_frames = magnitude.n_frames;
  spec.n_bins = n_bins;
  spec.bins.resize(target.size());
  if (random_phase_seed == 0) {
    for (std::size_t i = 0; i < target.size(); ++i) spec.bins[i] = target[i];
  } else {
    std::mt19937_64 rng(random_phase_seed);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < target.size(); ++i) spec.bins[i] = std::polar(target[i], phase(rng));
  }

  // Iterate on the full frame-covered signal so each inverse is an exact
  // least-squares projection; crop to the requested span at the end.
  GriffinLimResult result;
  std::vector<double> x = istft(spec, config, FramePadding::kNone);
  StftFrames current = stft(x, config, FramePadding::kNone);
  result.errors.push_back(spectral_distance(current, target));
  for (std::size_t it = 0; it < n_iters; ++it) {
    for (std::size_t i = 0; i < target.size(); ++i) {
      const double mag = std::abs(current.bins[i]);
      current.bins[i] = mag > 0.0 ? current.bins[i] * (target[i] / mag) : std::complex<double>(target[i], 0.0);
    }
    x = istft(current, config, FramePadding::kNone);
    current = stft(x, config, FramePadding::kNone);
    result.errors.push_back(spectral_distance(current, target));
  }

  const std::size_t pad =
      config.padding == FramePadding::kSame ? (config.frame_length() - config.hop_length()) / 2 : 0;
  const std::size_t available = x.size() > 2 * pad ? x.size() - 2 * pad : 0;
  const std::size_t n = length == 0 ? available : length;
  result.wave.sample_rate = config.sample_rate;
  result.wave.samples.assign(n, 0.0);
  for (std::size_t i = 0; i < n && pad + i < x.size(); ++i) result.wave.samples[i] = x[pad + i];
  return result;
}

void save_spectrogram(const std::filesystem::path& path, const Spectrogram& spec) {
  if (spec.values.size() != spec.n_frames * spec.n_bins) throw ContractError("save_spectrogram: inconsistent dims");
  io::Writer w;
  w.put_array(kSpecMagic, 4);
  w.put<std::uint32_t>(kSpecVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(spec.kind));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(spec.n_frames));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(spec.n_bins));
  w.put<double>(spec.frame_shift_s);
  w.put<double>(spec.frame_length_s);
  w.put_array(spec.values.data(), spec.values.size());
  io::write_file(path.string(), w.bytes());
}

Spectrogram load_spectrogram(const std::filesystem::path& path) {
  const std::vector<char> bytes = io::read_file(path.string());
  io::Reader r(bytes.data(), bytes.size(), "spectrogram '" + path.string() + "'");
  if (r.get_bytes(4) != std::string(kSpecMagic, 4)) throw IntegrityError("'" + path.string() + "' is not a spectrogram");
  const auto version = r.get<std::uint32_t>();
  if (version != kSpecVersion) {
    throw VersionError("'" + path.string() + "' has spectrogram format version " + std::to_string(version));
  }
  Spectrogram spec;
  const auto kind = r.get<std::uint32_t>();
  if (kind > 2) throw IntegrityError("'" + path.string() + "' has unknown spectrogram kind");
  spec.kind = static_cast<SpecKind>(kind);
  spec.n_frames = r.get<std::uint32_t>();
  spec.n_bins = r.get<std::uint32_t>();
  spec.frame_shift_s = r.get<double>();
  spec.frame_length_s = r.get<double>();
  spec.values.resize(spec.n_frames * spec.n_bins);
  r.get_array(spec.values.data(), spec.values.size());
  if (r.remaining() != 0) throw IntegrityError("'" + path.string() + "' has trailing bytes");
  return spec;
}

}  // namespace mimic
