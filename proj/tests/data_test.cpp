#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "mimic/batch.hpp"
#include "mimic/corpus.hpp"
#include "mimic/error.hpp"
#include "mimic/rng.hpp"
#include "mimic/sample_pool.hpp"
#include "mimic/text.hpp"
#include "support/signals.hpp"

using namespace mimic;
namespace fs = std::filesystem;

namespace {

Utterance utt(const std::string& speaker, const std::string& name, const std::string& text, double seconds) {
  Utterance u;
  u.id = speaker + "/" + name;
  u.speaker_id = speaker;
  u.audio_path = name + ".wav";
  u.transcript = text;
  u.duration_s = seconds;
  return u;
}

CorpusManifest manifest_of(std::vector<Utterance> utts) {
  CorpusManifest m;
  for (auto& u : utts) {
    m.split.emplace(u.speaker_id, Split::kTrain);
    m.utterances.push_back(std::move(u));
  }
  return m;
}

// Noise of the utterance's recorded duration; stands in for trimmed audio.
Waveform noise_audio(const Utterance& u) {
  Waveform w;
  w.sample_rate = 16000;
  w.samples = mimic::testing::uniform_noise(static_cast<std::size_t>(std::lround(u.duration_s * 16000)), 0.3,
                                            std::hash<std::string>{}(u.id));
  return w;
}

// Independent count of full sliding windows: offsets k*hop with k*hop + window <= total.
std::size_t full_window_oracle(double total_s, double window_s, double overlap) {
  const double hop = window_s * (1.0 - overlap);
  std::size_t k = 0;
  while (k * hop + window_s <= total_s + 1e-9) ++k;
  return k;
}

}  // namespace

// ---- normalize_text ----------------------------------------------------------

TEST(NormalizeText, Examples) {
  EXPECT_EQ(normalize_text("Hello, World!"), "Hello, World!");
  EXPECT_EQ(normalize_text("caf\xC3\xA9  \xE2\x98\x83 test"), "caf test");
  EXPECT_THROW(normalize_text("\xC2\xA1\xC2\xBF"), DataError);
  EXPECT_EQ(normalize_text("  Tabs\tand\nnew  lines  "), "Tabs and new lines");
  EXPECT_EQ(normalize_text("KEEP Caps \"quoted\" - a:b; c?"), "KEEP Caps \"quoted\" - a:b; c?");
  EXPECT_EQ(normalize_text("50% off (today) #1"), "50 off today 1");
}

TEST(NormalizeText, IsIdempotent) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> byte(0, 255);
  std::uniform_int_distribution<int> len(1, 60);
  for (int trial = 0; trial < 2000; ++trial) {
    std::string raw;
    const int n = len(rng);
    for (int i = 0; i < n; ++i) raw.push_back(static_cast<char>(byte(rng)));
    raw += "x";  // never empty after filtering
    const std::string once = normalize_text(raw);
    EXPECT_EQ(normalize_text(once), once);
  }
}

// ---- vocabulary ----------------------------------------------------------------

TEST(Vocabulary, EncodesWithEosAndNamesUnknownCharacters) {
  const Vocabulary v = Vocabulary::build({"ab", "ba c"});
  EXPECT_EQ(v.symbols(), " abc");
  EXPECT_EQ(v.size(), 6u);
  EXPECT_EQ(v.encode("cab"), (std::vector<std::int64_t>{5, 3, 4, Vocabulary::kEos}));
  EXPECT_EQ(v.decode(v.encode("a b")), "a b");
  try {
    (void)v.encode("abz");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("'z'"), std::string::npos);
  }
}

// ---- manifest and split --------------------------------------------------------

TEST(Manifest, ReadsRecordsAndRejectsEmptyTranscripts) {
  const fs::path dir = fs::temp_directory_path() / "mimic_data_test";
  fs::create_directories(dir);
  const fs::path p = dir / "manifest.tsv";
  std::ofstream(p) << "wav/a.wav\tp225\tHello  there!\n"
                   << "# comment\n"
                   << "wav/b.wav\tp226\t\xC2\xA1\xC2\xBF\n"
                   << "/abs/c.wav\tp226\tYes.\r\n";
  std::vector<ManifestRejection> rejected;
  const CorpusManifest m = read_manifest(p, &rejected);
  ASSERT_EQ(m.utterances.size(), 2u);
  EXPECT_EQ(m.utterances[0].transcript, "Hello there!");
  EXPECT_EQ(m.utterances[0].audio_path, dir / "wav/a.wav");
  EXPECT_EQ(m.utterances[0].id, "p225/a");
  EXPECT_EQ(m.utterances[1].audio_path, fs::path("/abs/c.wav"));
  ASSERT_EQ(rejected.size(), 1u);
  EXPECT_EQ(rejected[0].line, 3u);

  std::ofstream(p) << "only\ttwo\n";
  EXPECT_THROW(read_manifest(p), DataError);
}

TEST(SplitSpeakers, DefaultHeldOutSetGivesTenTestSpeakers) {
  std::vector<Utterance> utts;
  for (int id = 225; id <= 376; ++id) utts.push_back(utt("p" + std::to_string(id), "001", "hi", 1.0));
  const CorpusManifest m = split_speakers(manifest_of(utts), default_held_out_speakers());
  EXPECT_EQ(m.speakers(Split::kTest).size(), 10u);
  EXPECT_EQ(m.speakers(Split::kTest).front(), "p225");
  EXPECT_EQ(m.speakers(Split::kTrain).size(), utts.size() - 10);
}

TEST(SplitSpeakers, EmptyAndUnknownIds) {
  const CorpusManifest base = manifest_of({utt("s01", "a", "x", 1), utt("s02", "a", "x", 1)});
  const CorpusManifest all = split_speakers(base, {});
  EXPECT_EQ(all.speakers(Split::kTrain).size(), 2u);
  EXPECT_THROW(split_speakers(base, {"s99"}), ConfigError);
  EXPECT_EQ(split_speakers(base, {"s02"}).speakers(Split::kTest), (std::vector<std::string>{"s02"}));
}

// ---- sample pool ---------------------------------------------------------------

TEST(PlanWindows, MatchesSlidingWindowArithmetic) {
  const std::size_t sr = 16000;
  EXPECT_EQ(plan_windows(12 * sr, 6 * sr, 3 * sr).size(), 3u);
  EXPECT_EQ(plan_windows(6 * sr, 6 * sr, 3 * sr).size(), 1u);
  EXPECT_TRUE(plan_windows(2 * sr, 6 * sr, 3 * sr).empty());
  for (double total = 0.5; total < 40.0; total += 0.25) {
    const auto spans = plan_windows(static_cast<std::size_t>(total * sr), 6 * sr, 3 * sr);
    std::size_t full = 0;
    for (const auto& s : spans) {
      if (!s.remainder) {
        ++full;
        EXPECT_EQ(s.end - s.begin, 6 * sr);
      } else {
        EXPECT_GE(2 * (s.end - s.begin), 6 * sr);
        EXPECT_EQ(s.end, static_cast<std::size_t>(total * sr));
      }
    }
    EXPECT_EQ(full, full_window_oracle(total, 6.0, 0.5)) << total;
    EXPECT_LE(spans.size() - full, 1u);
  }
}

TEST(SamplePool, WindowsFramesAndCoverage) {
  // Speaker a: 4 + 4 + 4 s = 12 s; b: 6 s; c: 2 s.
  const CorpusManifest m = manifest_of({utt("a", "1", "x", 4), utt("a", "2", "x", 4), utt("a", "3", "x", 4),
                                        utt("b", "1", "x", 6), utt("c", "1", "x", 2)});
  const SamplePool pool = build_sample_pool(m, noise_audio, DspConfig{}, PoolConfig{});
  EXPECT_EQ(pool.excluded, (std::vector<std::string>{"c"}));
  ASSERT_EQ(pool.windows.at("a").size(), 3u);
  ASSERT_EQ(pool.windows.at("b").size(), 1u);
  const auto& a = pool.windows.at("a");
  EXPECT_DOUBLE_EQ(a[0].offset_s, 0.0);
  EXPECT_DOUBLE_EQ(a[1].offset_s, 3.0);
  EXPECT_DOUBLE_EQ(a[2].offset_s, 6.0);
  EXPECT_EQ(a[0].covered, (std::vector<std::string>{"a/1", "a/2"}));
  EXPECT_EQ(a[1].covered, (std::vector<std::string>{"a/1", "a/2", "a/3"}));
  EXPECT_EQ(a[2].covered, (std::vector<std::string>{"a/2", "a/3"}));
  for (const auto& [speaker, list] : pool.windows) {
    for (const auto& w : list) {
      EXPECT_FALSE(w.remainder);
      EXPECT_LE(std::abs(static_cast<double>(w.mel.n_frames) - 480.0), 1.0);
      EXPECT_EQ(w.mel.n_bins, 80u);
    }
  }
}

TEST(SamplePool, SaveAndLoadKeepsWindows) {
  const CorpusManifest m = manifest_of({utt("a", "1", "x", 3), utt("a", "2", "x", 4.5)});
  PoolConfig cfg;
  cfg.window_s = 2.0;
  const SamplePool pool = build_sample_pool(m, noise_audio, DspConfig{}, cfg);
  const fs::path dir = fs::temp_directory_path() / "mimic_pool_test";
  fs::remove_all(dir);
  save_sample_pool(dir, pool);
  const SamplePool back = load_sample_pool(dir);
  ASSERT_EQ(back.size(), pool.size());
  const auto& w0 = pool.windows.at("a");
  const auto& w1 = back.windows.at("a");
  for (std::size_t i = 0; i < w0.size(); ++i) {
    EXPECT_EQ(w1[i].covered, w0[i].covered);
    EXPECT_EQ(w1[i].remainder, w0[i].remainder);
    EXPECT_EQ(w1[i].load().values, w0[i].mel.values);
  }
  EXPECT_TRUE(w0.back().remainder);  // 7.5 s with 2 s windows leaves 1.5 s
}

TEST(DrawReference, SkipsWindowsCoveringTheTarget) {
  SamplePool pool;
  for (int i = 0; i < 3; ++i) {
    SampleWindow w;
    w.speaker_id = "s";
    w.covered = {"u" + std::to_string(i)};
    w.mel.n_frames = 1;
    w.mel.n_bins = 1;
    w.mel.values = {static_cast<float>(i)};
    pool.windows["s"].push_back(w);
  }
  pool.windows["s"][1].covered.push_back("target");
  std::mt19937_64 rng(11);
  std::map<float, int> counts;
  for (int k = 0; k < 10000; ++k) counts[draw_reference(pool, "s", "target", rng).values[0]]++;
  EXPECT_EQ(counts.count(1.0f), 0u);
  EXPECT_NEAR(counts[0.0f] / 10000.0, 0.5, 0.03);
  EXPECT_NEAR(counts[2.0f] / 10000.0, 0.5, 0.03);

  std::mt19937_64 r1(3), r2(3);
  for (int k = 0; k < 50; ++k) {
    EXPECT_EQ(draw_reference(pool, "s", "u0", r1).values, draw_reference(pool, "s", "u0", r2).values);
  }
  SamplePool single;
  single.windows["s"].push_back(pool.windows["s"][1]);
  EXPECT_THROW(draw_reference(single, "s", "target", rng), SamplingError);
  EXPECT_THROW(draw_reference(single, "nobody", "target", rng), SamplingError);
}

TEST(DrawReference, NeverReturnsAnOverlappingWindow) {
  std::vector<Utterance> utts;
  for (int i = 0; i < 12; ++i) utts.push_back(utt("a", std::to_string(i), "x", 0.6 + 0.1 * (i % 4)));
  const CorpusManifest m = manifest_of(utts);
  PoolConfig cfg;
  cfg.window_s = 1.0;
  const SamplePool pool = build_sample_pool(m, noise_audio, DspConfig{}, cfg);
  // Identify windows by offset encoded in their first value.
  std::map<std::vector<float>, const SampleWindow*> by_values;
  for (const auto& w : pool.windows.at("a")) by_values[w.mel.values] = &w;
  std::mt19937_64 rng(2024);
  for (int k = 0; k < 10000; ++k) {
    const std::string& target = utts[static_cast<std::size_t>(k) % utts.size()].id;
    const Spectrogram ref = draw_reference(pool, "a", target, rng);
    const SampleWindow* w = by_values.at(ref.values);
    ASSERT_EQ(std::count(w->covered.begin(), w->covered.end(), target), 0);
  }
}

// ---- batching ------------------------------------------------------------------

namespace {

struct BatchFixture {
  CorpusManifest manifest;
  SamplePool pool;
  Vocabulary vocab;
  std::map<std::string, std::size_t> frames;

  BatchFixture() {
    manifest = manifest_of({utt("a", "1", "abcdefghi", 1.0), utt("a", "2", "abcdefghijklm", 1.0),
                            utt("a", "3", "ab", 1.0), utt("b", "1", "cab", 1.0), utt("t", "1", "abc", 1.0)});
    manifest = split_speakers(manifest, {"t"});
    frames = {{"a/1", 23}, {"a/2", 17}, {"a/3", 5}, {"b/1", 8}, {"t/1", 5}};
    PoolConfig cfg;
    cfg.window_s = 1.0;
    pool = build_sample_pool(manifest, noise_audio, DspConfig{}, cfg);
    std::vector<std::string> texts;
    for (auto i : manifest.indices(Split::kTrain)) texts.push_back(manifest.utterances[i].transcript);
    vocab = Vocabulary::build(texts);
  }

  FeatureSource features() const {
    return [this](const Utterance& u) {
      UtteranceFeatures f;
      const std::size_t n = frames.at(u.id);
      f.mel.n_frames = f.linear.n_frames = n;
      f.mel.n_bins = 80;
      f.linear.n_bins = 513;
      f.mel.values.assign(n * 80, 0.5f);
      f.linear.values.assign(n * 513, -1.0f);
      return f;
    };
  }
};

}  // namespace

TEST(MakeBatch, PadsTextAndTargets) {
  BatchFixture fx;
  NormStats stats;
  stats.linear_min = -2.0;
  stats.linear_max = 0.0;
  std::mt19937_64 rng(1);
  const Batch b = make_batch({0, 1}, fx.manifest, fx.vocab, fx.features(), &fx.pool, stats, 5, rng);
  ASSERT_EQ(b.size(), 2u);
  // 9 and 13 characters plus end-of-sequence.
  EXPECT_EQ(b.text_length, 14u);
  EXPECT_EQ(b.text_lengths, (std::vector<std::size_t>{10, 14}));
  const auto mask = b.text_mask.to_vector();
  EXPECT_DOUBLE_EQ(std::accumulate(mask.begin(), mask.begin() + 14, 0.0), 10.0);
  EXPECT_DOUBLE_EQ(std::accumulate(mask.begin() + 14, mask.end(), 0.0), 14.0);
  EXPECT_EQ(b.text_ids[9], Vocabulary::kEos);
  EXPECT_EQ(b.text_ids[10], Vocabulary::kPad);
  // 23 frames, r = 5 -> 25.
  EXPECT_EQ(b.frames, 25u);
  EXPECT_EQ(b.mel.shape(), (Shape{2, 25, 80}));
  EXPECT_EQ(b.linear.shape(), (Shape{2, 25, 513}));
  EXPECT_DOUBLE_EQ(b.mel.at({0, 22, 3}), 0.5);
  EXPECT_DOUBLE_EQ(b.mel.at({0, 23, 3}), 0.0);
  EXPECT_DOUBLE_EQ(b.linear.at({1, 16, 0}), 0.5);
  EXPECT_DOUBLE_EQ(b.frame_mask.at({1, 16}), 1.0);
  EXPECT_DOUBLE_EQ(b.frame_mask.at({1, 17}), 0.0);
  EXPECT_EQ(b.reference.dim(0), 2u);
  EXPECT_EQ(b.reference.dim(2), 80u);
}

TEST(MakeBatch, RejectsTestSpeakersAndUnknownCharacters) {
  BatchFixture fx;
  std::mt19937_64 rng(1);
  EXPECT_THROW(make_batch({4}, fx.manifest, fx.vocab, fx.features(), &fx.pool, NormStats{}, 5, rng), ContractError);
  const Vocabulary small = Vocabulary::build({"ab"});
  try {
    (void)make_batch({0}, fx.manifest, small, fx.features(), &fx.pool, NormStats{}, 5, rng);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("'c'"), std::string::npos);
  }
}

TEST(MakeBatch, SkipsItemsWithoutEligibleReference) {
  BatchFixture fx;
  // Speaker b has a single window and it covers b/1.
  std::mt19937_64 rng(1);
  const Batch b = make_batch({3, 2}, fx.manifest, fx.vocab, fx.features(), &fx.pool, NormStats{}, 5, rng);
  EXPECT_EQ(b.skipped, (std::vector<std::string>{"b/1"}));
  EXPECT_EQ(b.utterance_ids, (std::vector<std::string>{"a/3"}));
}

TEST(MakeBatch, WithoutPoolKeepsEveryItemAndNoReference) {
  BatchFixture fx;
  std::mt19937_64 rng(1);
  const Batch b = make_batch({3, 2}, fx.manifest, fx.vocab, fx.features(), nullptr, NormStats{}, 5, rng);
  EXPECT_TRUE(b.skipped.empty());
  EXPECT_EQ(b.size(), 2u);
  EXPECT_FALSE(b.reference.defined());
}

TEST(PlanEpoch, NoTestSpeakerAndDeterministic) {
  std::vector<Utterance> utts;
  for (int s = 0; s < 5; ++s) {
    for (int i = 0; i < 13; ++i) utts.push_back(utt("s" + std::to_string(s), std::to_string(i), "x", 1));
  }
  const CorpusManifest m = split_speakers(manifest_of(utts), {"s4"});
  const auto e0 = plan_epoch(m, 4, 7, 0);
  EXPECT_EQ(e0, plan_epoch(m, 4, 7, 0));
  EXPECT_NE(e0, plan_epoch(m, 4, 7, 1));
  std::multiset<std::size_t> seen;
  for (const auto& batch : e0) {
    EXPECT_GE(batch.size(), 2u);
    for (auto i : batch) {
      EXPECT_NE(m.utterances[i].speaker_id, "s4");
      seen.insert(i);
    }
  }
  EXPECT_EQ(seen.size(), 52u);
  EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), 52u);
  // 52 = 4 * 13 batches; 53 items would leave a singleton that gets merged.
  utts.push_back(utt("s0", "extra", "x", 1));
  const auto e1 = plan_epoch(split_speakers(manifest_of(utts), {"s4"}), 4, 7, 0);
  EXPECT_EQ(e1.size(), 13u);
  EXPECT_EQ(e1.back().size(), 5u);
}
