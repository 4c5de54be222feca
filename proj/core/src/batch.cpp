#include "mimic/batch.hpp"

#include <algorithm>

#include "mimic/error.hpp"
#include "mimic/rng.hpp"
#include "mimic/stft.hpp"

namespace mimic {

namespace {

void copy_normalized(const Spectrogram& spec, double lo, double hi, std::span<double> out) {
  for (std::size_t i = 0; i < spec.values.size(); ++i) {
    out[i] = std::clamp((static_cast<double>(spec.values[i]) - lo) / (hi - lo), 0.0, 1.0);
  }
}

}  // namespace

UtteranceFeatures extract_features(const Waveform& wave, const DspConfig& dsp) {
  if (wave.sample_rate != dsp.sample_rate) {
    throw InputError("extract_features: audio at " + std::to_string(wave.sample_rate) + " Hz, expected " +
                     std::to_string(dsp.sample_rate));
  }
  const StftFrames frames = stft(std::span<const double>(wave.samples), dsp, dsp.padding);
  return {mel_spectrogram(frames, dsp), linear_spectrogram(frames, dsp)};
}

Tensor stack_references(const std::vector<Spectrogram>& refs, const NormStats& stats,
                        std::vector<std::size_t>* lengths) {
  if (refs.empty()) throw ContractError("stack_references: no references");
  std::size_t frames = 0;
  const std::size_t bins = refs.front().n_bins;
  for (const auto& r : refs) {
    if (r.n_bins != bins) throw DimensionError("stack_references: mixed mel sizes");
    frames = std::max(frames, r.n_frames);
  }
  std::vector<double> values(refs.size() * frames * bins, 0.0);
  if (lengths) lengths->clear();
  for (std::size_t b = 0; b < refs.size(); ++b) {
    copy_normalized(refs[b], stats.mel_min, stats.mel_max,
                    std::span(values).subspan(b * frames * bins, refs[b].values.size()));
    if (lengths) lengths->push_back(refs[b].n_frames);
  }
  return Tensor::from({refs.size(), frames, bins}, std::move(values));
}

Batch make_batch(const std::vector<std::size_t>& items, const CorpusManifest& manifest, const Vocabulary& vocab,
                 const FeatureSource& features, const SamplePool* pool, const NormStats& stats,
                 std::size_t reduction_factor, std::mt19937_64& rng) {
  if (reduction_factor == 0) throw ContractError("make_batch: reduction factor must be positive");
  Batch batch;
  std::vector<std::vector<std::int64_t>> texts;
  std::vector<UtteranceFeatures> feats;
  std::vector<Spectrogram> refs;
  for (std::size_t index : items) {
    const Utterance& u = manifest.utterances.at(index);
    const auto split = manifest.split.find(u.speaker_id);
    if (split == manifest.split.end() || split->second != Split::kTrain) {
      throw ContractError("make_batch: '" + u.id + "' belongs to a test-split speaker");
    }
    Spectrogram ref;
    ReferenceSource source;
    if (pool) {
      try {
        const SampleWindow& w = pick_reference(*pool, u.speaker_id, u.id, rng);
        ref = w.load();
        source = {w.offset_s, w.duration_s, w.covered};
      } catch (const SamplingError&) {
        batch.skipped.push_back(u.id);
        continue;
      }
    }
    texts.push_back(vocab.encode(u.transcript));
    feats.push_back(features(u));
    if (pool) {
      refs.push_back(std::move(ref));
      batch.reference_sources.push_back(std::move(source));
    }
    batch.utterance_ids.push_back(u.id);
    batch.speaker_ids.push_back(u.speaker_id);
  }
  const std::size_t n = texts.size();
  if (n == 0) return batch;

  for (const auto& t : texts) batch.text_length = std::max(batch.text_length, t.size());
  batch.text_ids.assign(n * batch.text_length, Vocabulary::kPad);
  std::vector<double> text_mask(n * batch.text_length, 0.0);
  for (std::size_t b = 0; b < n; ++b) {
    std::copy(texts[b].begin(), texts[b].end(), batch.text_ids.begin() + static_cast<std::ptrdiff_t>(b * batch.text_length));
    std::fill_n(text_mask.begin() + static_cast<std::ptrdiff_t>(b * batch.text_length), texts[b].size(), 1.0);
    batch.text_lengths.push_back(texts[b].size());
  }
  batch.text_mask = Tensor::from({n, batch.text_length}, std::move(text_mask));

  std::size_t longest = 0;
  for (const auto& f : feats) {
    if (f.mel.n_frames != f.linear.n_frames) throw DataError("make_batch: mel and linear frame counts differ");
    longest = std::max(longest, f.mel.n_frames);
  }
  batch.frames = (longest + reduction_factor - 1) / reduction_factor * reduction_factor;
  const std::size_t n_mels = feats.front().mel.n_bins;
  const std::size_t n_bins = feats.front().linear.n_bins;
  std::vector<double> mel(n * batch.frames * n_mels, 0.0);
  std::vector<double> linear(n * batch.frames * n_bins, 0.0);
  std::vector<double> frame_mask(n * batch.frames, 0.0);
  for (std::size_t b = 0; b < n; ++b) {
    const auto& f = feats[b];
    if (f.mel.n_bins != n_mels || f.linear.n_bins != n_bins) throw DataError("make_batch: inconsistent feature sizes");
    copy_normalized(f.mel, stats.mel_min, stats.mel_max, std::span(mel).subspan(b * batch.frames * n_mels));
    copy_normalized(f.linear, stats.linear_min, stats.linear_max,
                    std::span(linear).subspan(b * batch.frames * n_bins));
    std::fill_n(frame_mask.begin() + static_cast<std::ptrdiff_t>(b * batch.frames), f.mel.n_frames, 1.0);
    batch.target_frames.push_back(f.mel.n_frames);
  }
  batch.mel = Tensor::from({n, batch.frames, n_mels}, std::move(mel));
  batch.linear = Tensor::from({n, batch.frames, n_bins}, std::move(linear));
  batch.frame_mask = Tensor::from({n, batch.frames}, std::move(frame_mask));
  if (pool) batch.reference = stack_references(refs, stats, &batch.reference_frames);
  return batch;
}

std::vector<std::vector<std::size_t>> plan_epoch(const CorpusManifest& manifest, std::size_t batch_size,
                                                 std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  std::vector<std::size_t> order = manifest.indices(Split::kTrain);
  auto rng = derive_rng(seed, rng_stream::kShuffle, epoch);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

}  // namespace mimic
