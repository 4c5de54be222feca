#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mimic/audio.hpp"
#include "mimic/corpus.hpp"
#include "mimic/dsp_config.hpp"
#include "mimic/sample_pool.hpp"
#include "mimic/spectrogram.hpp"
#include "mimic/tensor.hpp"
#include "mimic/text.hpp"

namespace mimic {

/// Raw (unnormalized) log features of one utterance.
struct UtteranceFeatures {
  Spectrogram mel;
  Spectrogram linear;
};

using FeatureSource = std::function<UtteranceFeatures(const Utterance&)>;

/// Log-mel and log-linear spectrograms of one (already trimmed) waveform.
UtteranceFeatures extract_features(const Waveform& wave, const DspConfig& dsp);

/// Position of a drawn reference window in its speaker's concatenated audio.
struct ReferenceSource {
  double offset_s = 0.0;
  double duration_s = 0.0;
  std::vector<std::string> covered;
};

/// Everything one training step consumes. Targets and references are
/// normalized to [0, 1]; padding uses 0, the normalized silence level.
struct Batch {
  std::vector<std::string> utterance_ids;
  std::vector<std::string> speaker_ids;
  std::vector<std::string> skipped;  // no eligible reference window

  std::size_t text_length = 0;
  std::vector<std::int64_t> text_ids;  // [B * text_length], kPad-filled
  std::vector<std::size_t> text_lengths;
  Tensor text_mask;  // [B, text_length]

  std::size_t frames = 0;  // multiple of the reduction factor
  std::vector<std::size_t> target_frames;
  Tensor mel;         // [B, frames, n_mels]
  Tensor linear;      // [B, frames, n_bins]
  Tensor frame_mask;  // [B, frames]

  std::vector<std::size_t> reference_frames;
  Tensor reference;  // [B, max reference frames, n_mels]
  std::vector<ReferenceSource> reference_sources;  // where each reference was cut from

  std::size_t size() const { return utterance_ids.size(); }
};

/// Normalized reference spectrograms stacked into [B, T, n_mels], padded with 0.
Tensor stack_references(const std::vector<Spectrogram>& refs, const NormStats& stats,
                        std::vector<std::size_t>* lengths = nullptr);

/// Assembles a batch from manifest entries. Items whose speaker has no
/// reference window free of the utterance are dropped into `skipped`. A null
/// `pool` builds a batch without references (lookup conditioning).
/// Throws ContractError for test-split items and DataError for characters
/// outside `vocab`.
Batch make_batch(const std::vector<std::size_t>& items, const CorpusManifest& manifest, const Vocabulary& vocab,
                 const FeatureSource& features, const SamplePool* pool, const NormStats& stats,
                 std::size_t reduction_factor, std::mt19937_64& rng);

/// Shuffled train-split batches for one epoch, fixed by (seed, epoch). A
/// trailing batch of one item joins the previous batch so batch statistics
/// stay defined.
std::vector<std::vector<std::size_t>> plan_epoch(const CorpusManifest& manifest, std::size_t batch_size,
                                                 std::uint64_t seed, std::uint64_t epoch);

}  // namespace mimic
