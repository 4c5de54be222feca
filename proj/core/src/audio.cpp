#include "mimic/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numbers>
#include <string>

#include "binary_io.hpp"
#include "mimic/error.hpp"

namespace mimic {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

struct WavFormat {
  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t bits = 0;
};

double decode_sample(const unsigned char* p, const WavFormat& fmt) {
  if (fmt.format == kFormatFloat) {
    if (fmt.bits == 32) {
      float f;
      std::memcpy(&f, p, 4);
      return f;
    }
    double d;
    std::memcpy(&d, p, 8);
    return d;
  }
  switch (fmt.bits) {
    case 8:
      return (static_cast<int>(p[0]) - 128) / 128.0;
    case 16: {
      std::int16_t v;
      std::memcpy(&v, p, 2);
      return v / 32768.0;
    }
    case 24: {
      std::int32_t v = (p[0] << 8) | (p[1] << 16) | (p[2] << 24);
      return (v >> 8) / 8388608.0;
    }
    default: {
      std::int32_t v;
      std::memcpy(&v, p, 4);
      return v / 2147483648.0;
    }
  }
}

}  // namespace

Waveform load_audio(const std::filesystem::path& path) {
  const std::string name = path.string();
  std::vector<char> bytes;
  try {
    bytes = io::read_file(name);
  } catch (const InputError&) {
    throw InputError("load_audio: cannot read '" + name + "'");
  }
  if (bytes.size() < 12 || std::string(bytes.data(), 4) != "RIFF" || std::string(bytes.data() + 8, 4) != "WAVE") {
    throw InputError("load_audio: '" + name + "' is not a RIFF/WAVE file");
  }

  WavFormat fmt;
  const char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id(bytes.data() + pos, 4);
    std::uint32_t size;
    std::memcpy(&size, bytes.data() + pos + 4, 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
    if (id == "fmt ") {
      if (avail < 16) throw InputError("load_audio: '" + name + "' has a truncated fmt chunk");
      io::Reader r(bytes.data() + body, avail, name);
      fmt.format = r.get<std::uint16_t>();
      fmt.channels = r.get<std::uint16_t>();
      fmt.sample_rate = r.get<std::uint32_t>();
      (void)r.get<std::uint32_t>();  // byte rate
      (void)r.get<std::uint16_t>();  // block align
      fmt.bits = r.get<std::uint16_t>();
      if (fmt.format == kFormatExtensible && avail >= 26) {
        std::memcpy(&fmt.format, bytes.data() + body + 24, 2);
      }
    } else if (id == "data") {
      data = bytes.data() + body;
      data_size = avail;
    }
    pos = body + size + (size & 1u);
  }

  const bool pcm_ok = fmt.format == kFormatPcm && (fmt.bits == 8 || fmt.bits == 16 || fmt.bits == 24 || fmt.bits == 32);
  const bool float_ok = fmt.format == kFormatFloat && (fmt.bits == 32 || fmt.bits == 64);
  if (!pcm_ok && !float_ok) {
    throw InputError("load_audio: '" + name + "' uses unsupported or compressed encoding (format " +
                     std::to_string(fmt.format) + ", " + std::to_string(fmt.bits) + " bits)");
  }
  if (fmt.channels == 0 || fmt.sample_rate == 0 || data == nullptr) {
    throw InputError("load_audio: '" + name + "' is missing format or data");
  }

  const std::size_t width = fmt.bits / 8;
  const std::size_t frame_bytes = width * fmt.channels;
  const std::size_t n = data_size / frame_bytes;
  Waveform wave;
  wave.sample_rate = static_cast<int>(fmt.sample_rate);
  wave.samples.resize(n);
  const auto* p = reinterpret_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < fmt.channels; ++c) acc += decode_sample(p + i * frame_bytes + c * width, fmt);
    const double v = acc / fmt.channels;
    if (!std::isfinite(v)) throw InputError("load_audio: '" + name + "' contains non-finite samples");
    wave.samples[i] = std::clamp(v, -1.0, 1.0);
  }
  return wave;
}

Waveform load_audio(const std::filesystem::path& path, int target_rate) {
  Waveform wave = load_audio(path);
  if (wave.sample_rate == target_rate) return wave;
  return resample(wave, target_rate);
}

void save_wav(const std::filesystem::path& path, const Waveform& wave) {
  if (wave.sample_rate <= 0) throw ContractError("save_wav: sample rate must be positive");
  const auto n = static_cast<std::uint32_t>(wave.samples.size());
  io::Writer w;
  w.put_bytes("RIFF");
  w.put<std::uint32_t>(36 + n * 2);
  w.put_bytes("WAVE");
  w.put_bytes("fmt ");
  w.put<std::uint32_t>(16);
  w.put<std::uint16_t>(kFormatPcm);
  w.put<std::uint16_t>(1);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(wave.sample_rate));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(wave.sample_rate) * 2);
  w.put<std::uint16_t>(2);
  w.put<std::uint16_t>(16);
  w.put_bytes("data");
  w.put<std::uint32_t>(n * 2);
  for (double s : wave.samples) {
    const double c = std::clamp(s, -1.0, 1.0);
    w.put<std::int16_t>(static_cast<std::int16_t>(std::lround(c * 32767.0)));
  }
  io::write_file(path.string(), w.bytes());
}

Waveform resample(const Waveform& wave, int target_rate) {
  if (wave.sample_rate <= 0 || target_rate <= 0) throw ContractError("resample: sample rates must be positive");
  if (wave.sample_rate == target_rate) return wave;
  const double ratio = static_cast<double>(target_rate) / wave.sample_rate;
  const auto out_len = static_cast<std::size_t>(std::llround(static_cast<double>(wave.samples.size()) * ratio));
  // Low-pass at the lower of the two Nyquist rates; Hann-tapered sinc.
  const double cutoff = std::min(1.0, ratio);
  constexpr double kZeroCrossings = 16.0;
  const double half_width = kZeroCrossings / cutoff;
  const auto& x = wave.samples;
  const auto n_in = static_cast<std::ptrdiff_t>(x.size());

  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(out_len);
  for (std::size_t i = 0; i < out_len; ++i) {
    const double center = static_cast<double>(i) / ratio;
    const auto lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::ceil(center - half_width)));
    const auto hi = std::min<std::ptrdiff_t>(n_in - 1, static_cast<std::ptrdiff_t>(std::floor(center + half_width)));
    double acc = 0.0;
    for (std::ptrdiff_t k = lo; k <= hi; ++k) {
      const double u = center - static_cast<double>(k);
      const double arg = std::numbers::pi * cutoff * u;
      const double sinc = u == 0.0 ? 1.0 : std::sin(arg) / arg;
      const double taper = 0.5 + 0.5 * std::cos(std::numbers::pi * u / half_width);
      acc += x[static_cast<std::size_t>(k)] * cutoff * sinc * taper;
    }
    out.samples[i] = std::clamp(acc, -1.0, 1.0);
  }
  return out;
}

}  // namespace mimic
