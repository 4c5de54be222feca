#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mimic/audio.hpp"
#include "mimic/corpus.hpp"
#include "mimic/dsp_config.hpp"
#include "mimic/spectrogram.hpp"

namespace mimic {

struct PoolConfig {
  double window_s = 6.0;
  double overlap = 0.5;

  void validate() const;
};

/// Sample range [begin, end) of one window over a speaker's concatenated audio.
struct WindowSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool remainder = false;
};

/// Full windows at multiples of the hop, plus one shorter window over any
/// audio left after the last full one when it spans at least half a window.
std::vector<WindowSpan> plan_windows(std::size_t total, std::size_t window, std::size_t hop);

struct SampleWindow {
  std::string speaker_id;
  std::vector<std::string> covered;  // utterance ids the window overlaps
  double offset_s = 0.0;
  double duration_s = 0.0;
  bool remainder = false;
  Spectrogram mel;                  // log-mel; empty when stored on disk
  std::filesystem::path mel_path;   // set for disk-backed pools

  Spectrogram load() const;
};

struct SamplePool {
  std::map<std::string, std::vector<SampleWindow>> windows;
  /// Speakers with less than half a window of audio.
  std::vector<std::string> excluded;

  std::size_t size() const;
  bool has_speaker(const std::string& speaker) const { return windows.count(speaker) != 0; }
};

/// Trimmed audio for one utterance; called concurrently from several threads.
using AudioSource = std::function<Waveform(const Utterance&)>;

/// Concatenates each speaker's trimmed audio in manifest order and cuts it
/// into overlapping log-mel windows. Speakers are processed in parallel.
SamplePool build_sample_pool(const CorpusManifest& manifest, const AudioSource& audio, const DspConfig& dsp,
                             const PoolConfig& config);

/// Uniform draw among `speaker`'s windows that do not cover
/// `exclude_utterance`. Throws SamplingError when none qualifies.
const SampleWindow& pick_reference(const SamplePool& pool, const std::string& speaker,
                                   const std::string& exclude_utterance, std::mt19937_64& rng);
/// pick_reference followed by loading the window's log-mel.
Spectrogram draw_reference(const SamplePool& pool, const std::string& speaker, const std::string& exclude_utterance,
                           std::mt19937_64& rng);

/// Writes each window as a spectrogram container plus index.tsv
/// (speaker, file, offset_s, duration_s, remainder, covered ids ...).
void save_sample_pool(const std::filesystem::path& dir, const SamplePool& pool);
/// Reads the index; spectrograms stay on disk until drawn.
SamplePool load_sample_pool(const std::filesystem::path& dir);

}  // namespace mimic
