#include "mimic/sample_pool.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <sstream>

#include "mimic/error.hpp"
#include "mimic/stft.hpp"

namespace mimic {

namespace {

struct SpeakerResult {
  std::vector<SampleWindow> windows;
  bool excluded = false;
};

SpeakerResult pool_speaker(const std::string& speaker, const std::vector<const Utterance*>& utts,
                           const AudioSource& audio, const DspConfig& dsp, const PoolConfig& config) {
  std::vector<double> joined;
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  for (const Utterance* u : utts) {
    const Waveform w = audio(*u);
    if (w.sample_rate != dsp.sample_rate) {
      throw DataError("sample pool: '" + u->id + "' has rate " + std::to_string(w.sample_rate));
    }
    ranges.emplace_back(joined.size(), joined.size() + w.samples.size());
    joined.insert(joined.end(), w.samples.begin(), w.samples.end());
  }
  const auto window = static_cast<std::size_t>(std::lround(config.window_s * dsp.sample_rate));
  const auto hop = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(window * (1.0 - config.overlap))));

  SpeakerResult result;
  const auto spans = plan_windows(joined.size(), window, hop);
  result.excluded = spans.empty();
  for (const WindowSpan& span : spans) {
    SampleWindow w;
    w.speaker_id = speaker;
    w.offset_s = static_cast<double>(span.begin) / dsp.sample_rate;
    w.duration_s = static_cast<double>(span.end - span.begin) / dsp.sample_rate;
    w.remainder = span.remainder;
    for (std::size_t i = 0; i < utts.size(); ++i) {
      if (ranges[i].first < span.end && span.begin < ranges[i].second) w.covered.push_back(utts[i]->id);
    }
    const std::span<const double> samples(joined.data() + span.begin, span.end - span.begin);
    w.mel = mel_spectrogram(stft(samples, dsp, dsp.padding), dsp);
    result.windows.push_back(std::move(w));
  }
  return result;
}

}  // namespace

void PoolConfig::validate() const {
  if (!(window_s > 0.0)) throw ConfigError("pool window_s must be positive");
  if (!(overlap >= 0.0 && overlap < 1.0)) throw ConfigError("pool overlap must be in [0, 1)");
}

std::vector<WindowSpan> plan_windows(std::size_t total, std::size_t window, std::size_t hop) {
  if (window == 0 || hop == 0) throw ContractError("plan_windows: window and hop must be positive");
  std::vector<WindowSpan> spans;
  std::size_t start = 0;
  for (; start + window <= total; start += hop) spans.push_back({start, start + window, false});
  const std::size_t covered_to = spans.empty() ? 0 : spans.back().end;
  if (covered_to < total && 2 * (total - start) >= window) spans.push_back({start, total, true});
  return spans;
}

Spectrogram SampleWindow::load() const {
  if (!mel.values.empty() || mel_path.empty()) return mel;
  return load_spectrogram(mel_path);
}

std::size_t SamplePool::size() const {
  std::size_t n = 0;
  for (const auto& [speaker, list] : windows) n += list.size();
  return n;
}

SamplePool build_sample_pool(const CorpusManifest& manifest, const AudioSource& audio, const DspConfig& dsp,
                             const PoolConfig& config) {
  config.validate();
  std::map<std::string, std::vector<const Utterance*>> by_speaker;
  for (const auto& u : manifest.utterances) by_speaker[u.speaker_id].push_back(&u);

  std::vector<std::pair<std::string, std::future<SpeakerResult>>> jobs;
  for (const auto& [speaker, utts] : by_speaker) {
    jobs.emplace_back(speaker, std::async(std::launch::async, pool_speaker, speaker, std::cref(utts),
                                          std::cref(audio), std::cref(dsp), std::cref(config)));
  }
  SamplePool pool;
  for (auto& [speaker, job] : jobs) {
    SpeakerResult r = job.get();
    if (r.excluded) {
      pool.excluded.push_back(speaker);
    } else {
      pool.windows.emplace(speaker, std::move(r.windows));
    }
  }
  return pool;
}

const SampleWindow& pick_reference(const SamplePool& pool, const std::string& speaker,
                                   const std::string& exclude_utterance, std::mt19937_64& rng) {
  const auto it = pool.windows.find(speaker);
  if (it == pool.windows.end()) throw SamplingError("speaker '" + speaker + "' has no reference windows");
  std::vector<const SampleWindow*> eligible;
  for (const auto& w : it->second) {
    if (std::find(w.covered.begin(), w.covered.end(), exclude_utterance) == w.covered.end()) eligible.push_back(&w);
  }
  if (eligible.empty()) {
    throw SamplingError("every reference window of '" + speaker + "' overlaps '" + exclude_utterance + "'");
  }
  std::uniform_int_distribution<std::size_t> pick(0, eligible.size() - 1);
  return *eligible[pick(rng)];
}

Spectrogram draw_reference(const SamplePool& pool, const std::string& speaker, const std::string& exclude_utterance,
                           std::mt19937_64& rng) {
  return pick_reference(pool, speaker, exclude_utterance, rng).load();
}

void save_sample_pool(const std::filesystem::path& dir, const SamplePool& pool) {
  std::filesystem::create_directories(dir);
  std::ofstream index(dir / "index.tsv");
  if (!index) throw InputError("cannot write '" + (dir / "index.tsv").string() + "'");
  index.precision(17);
  std::size_t n = 0;
  for (const auto& [speaker, list] : pool.windows) {
    for (const auto& w : list) {
      const std::string file = "w" + std::to_string(n++) + ".mspg";
      save_spectrogram(dir / file, w.load());
      index << speaker << '\t' << file << '\t' << w.offset_s << '\t' << w.duration_s << '\t' << (w.remainder ? 1 : 0);
      for (const auto& id : w.covered) index << '\t' << id;
      index << '\n';
    }
  }
  for (const auto& speaker : pool.excluded) index << "#excluded\t" << speaker << '\n';
}

SamplePool load_sample_pool(const std::filesystem::path& dir) {
  std::ifstream index(dir / "index.tsv");
  if (!index) throw InputError("cannot read '" + (dir / "index.tsv").string() + "'");
  SamplePool pool;
  std::string line;
  while (std::getline(index, line)) {
    std::istringstream fields(line);
    std::string speaker;
    std::getline(fields, speaker, '\t');
    if (speaker == "#excluded") {
      std::string who;
      std::getline(fields, who);
      pool.excluded.push_back(who);
      continue;
    }
    SampleWindow w;
    w.speaker_id = speaker;
    std::string file, offset, duration, remainder, id;
    if (!std::getline(fields, file, '\t') || !std::getline(fields, offset, '\t') ||
        !std::getline(fields, duration, '\t') || !std::getline(fields, remainder, '\t')) {
      throw IntegrityError("malformed pool index line: " + line);
    }
    w.mel_path = dir / file;
    w.offset_s = std::stod(offset);
    w.duration_s = std::stod(duration);
    w.remainder = remainder == "1";
    while (std::getline(fields, id, '\t')) w.covered.push_back(id);
    pool.windows[speaker].push_back(std::move(w));
  }
  return pool;
}

}  // namespace mimic
