// Writes the tiny synthetic corpus under fixtures/tiny: harmonic "voices"
// with distinct pitch whose spectral envelope follows the characters of the
// transcript, one formant pair per letter.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "mimic/audio.hpp"
#include "mimic/corpus.hpp"

namespace fs = std::filesystem;
using namespace mimic;

namespace {

constexpr int kRate = 16000;
constexpr double kCharSeconds = 0.09;
constexpr double kSpaceSeconds = 0.06;
constexpr double kEdgeSilence = 0.2;
constexpr double kRamp = 0.008;

struct Voice {
  std::string id;
  double f0;
  double formant_scale;
};

const std::map<char, std::pair<double, double>> kFormants = {
    {'a', {750, 1250}}, {'b', {300, 900}},  {'d', {350, 1700}}, {'e', {500, 1900}}, {'f', {400, 2400}},
    {'g', {320, 1100}}, {'h', {600, 1500}}, {'i', {280, 2250}}, {'k', {450, 1300}}, {'o', {480, 850}}};

double envelope(double f, double f1, double f2) {
  const double a = (f - f1) / 140.0, b = (f - f2) / 220.0;
  return std::exp(-a * a) + 0.7 * std::exp(-b * b) + 0.03;
}

Waveform render(const std::string& text, const Voice& voice) {
  std::vector<double> samples(static_cast<std::size_t>(kEdgeSilence * kRate), 0.0);
  const std::size_t harmonics = static_cast<std::size_t>(4000.0 / voice.f0);
  const std::size_t ramp = static_cast<std::size_t>(kRamp * kRate);
  for (char c : text) {
    const bool space = c == ' ';
    const std::size_t n = static_cast<std::size_t>((space ? kSpaceSeconds : kCharSeconds) * kRate);
    if (space) {
      samples.insert(samples.end(), n, 0.0);
      continue;
    }
    const auto [f1, f2] = kFormants.at(c);
    std::vector<double> gains(harmonics + 1);
    double total = 0.0;
    for (std::size_t h = 1; h <= harmonics; ++h) {
      gains[h] = envelope(h * voice.f0, f1 * voice.formant_scale, f2 * voice.formant_scale);
      total += gains[h];
    }
    for (std::size_t i = 0; i < n; ++i) {
      // Phase runs on the global clock so letters join without clicks.
      const double t = static_cast<double>(samples.size()) / kRate;
      double v = 0.0;
      for (std::size_t h = 1; h <= harmonics; ++h) v += gains[h] * std::sin(2.0 * std::numbers::pi * h * voice.f0 * t);
      const double fade = std::min({1.0, static_cast<double>(i) / ramp, static_cast<double>(n - 1 - i) / ramp});
      samples.push_back(0.6 * fade * v / total);
    }
  }
  samples.insert(samples.end(), static_cast<std::size_t>(kEdgeSilence * kRate), 0.0);
  return {std::move(samples), kRate};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path out = argc > 1 ? fs::path(argv[1]) : fs::path("fixtures/tiny");
  fs::create_directories(out / "wav");

  const std::vector<Voice> train = {{"lo", 110.0, 1.0}, {"hi", 210.0, 1.12}};
  const Voice unseen = {"p225", 160.0, 1.06};
  const std::vector<std::string> texts = {"a big dog", "he fed a kid", "go hide", "bake a fig", "dead hog bike"};
  const std::vector<std::string> unseen_texts = {"a bike ahead of a big dog", "hide a fig"};

  CorpusManifest manifest;
  auto add = [&](const Voice& v, const std::string& text, int index) {
    const std::string stem = v.id + "_" + std::to_string(index);
    const fs::path rel = fs::path("wav") / (stem + ".wav");
    save_wav(out / rel, render(text, v));
    Utterance u;
    u.audio_path = rel;
    u.speaker_id = v.id;
    u.transcript = text;
    u.id = v.id + "/" + stem;
    manifest.utterances.push_back(u);
  };
  for (const auto& v : train) {
    for (std::size_t i = 0; i < texts.size(); ++i) add(v, texts[i], static_cast<int>(i));
  }
  for (std::size_t i = 0; i < unseen_texts.size(); ++i) add(unseen, unseen_texts[i], static_cast<int>(i));
  write_manifest(out / "manifest.tsv", manifest);
  std::printf("wrote %zu utterances to %s\n", manifest.utterances.size(), out.string().c_str());
  return 0;
}
