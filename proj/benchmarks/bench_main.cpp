#include <benchmark/benchmark.h>

#include <cmath>
#include <numbers>
#include <random>

#include "mimic/model.hpp"
#include "mimic/spectrogram.hpp"
#include "mimic/stft.hpp"
#include "mimic/tensor.hpp"

using namespace mimic;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

std::vector<double> tone(double seconds, int rate) {
  std::vector<double> s(static_cast<std::size_t>(seconds * rate));
  for (std::size_t i = 0; i < s.size(); ++i) {
    double v = 0.0;
    for (int h = 1; h <= 8; ++h) v += std::sin(2.0 * std::numbers::pi * 140.0 * h * static_cast<double>(i) / rate) / h;
    s[i] = 0.2 * v;
  }
  return s;
}

ModelConfig bench_config() {
  ModelConfig c;
  c.vocab_size = 40;
  c.char_embed_dim = 64;
  c.prenet_dims = {64, 32};
  c.encoder_dim = 64;
  c.decoder_dim = 128;
  c.attention_dim = 64;
  c.embedding_dim = 32;
  c.n_mels = 40;
  c.n_linear_bins = 257;
  c.postnet_channels = 64;
  c.embedder_channels = 32;
  c.embedder_hidden = 32;
  return c;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_tensor({n, n}, 1), b = random_tensor({n, n}, 2);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256);

void BM_Stft(benchmark::State& state) {
  const DspConfig c;
  const auto samples = tone(static_cast<double>(state.range(0)), c.sample_rate);
  for (auto _ : state) benchmark::DoNotOptimize(stft(samples, c, c.padding));
}
BENCHMARK(BM_Stft)->Arg(1)->Arg(6)->Unit(benchmark::kMillisecond);

void BM_GriffinLim(benchmark::State& state) {
  const DspConfig c;
  const auto samples = tone(1.0, c.sample_rate);
  const Spectrogram mag = magnitude_spectrogram(stft(samples, c, c.padding), c);
  for (auto _ : state) benchmark::DoNotOptimize(griffin_lim(mag, static_cast<std::size_t>(state.range(0)), c));
}
BENCHMARK(BM_GriffinLim)->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond);

void BM_Embed(benchmark::State& state) {
  const ModelConfig c = bench_config();
  const VoiceModel model(c, 1);
  const auto frames = static_cast<std::size_t>(state.range(0));
  const Tensor ref = random_tensor({1, frames, c.n_mels}, 3);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(model.embed(ref, {frames}, nn::Mode::infer()));
}
BENCHMARK(BM_Embed)->Arg(120)->Arg(480)->Unit(benchmark::kMillisecond);

void BM_Inference(benchmark::State& state) {
  ModelConfig c = bench_config();
  c.max_decoder_steps = static_cast<std::size_t>(state.range(0));
  c.stop_patience = c.max_decoder_steps + 1;
  const VoiceModel model(c, 1);
  const std::vector<std::int64_t> ids = {5, 9, 12, 3, 7, 22, 14, 8, 19, 1};
  const Tensor speaker = random_tensor({1, c.embedding_dim}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(model.infer(ids, speaker));
}
BENCHMARK(BM_Inference)->Arg(20)->Arg(60)->Unit(benchmark::kMillisecond);

void BM_TrainingForwardBackward(benchmark::State& state) {
  const ModelConfig c = bench_config();
  const VoiceModel model(c, 1);
  const std::size_t B = 4, L = 12, steps = static_cast<std::size_t>(state.range(0)), frames = steps * c.r;
  std::vector<std::int64_t> ids(B * L);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = 2 + static_cast<std::int64_t>(i % 30);
  const std::vector<std::size_t> lengths(B, L), ref_frames(B, 120);
  const Tensor mel = random_tensor({B, frames, c.n_mels}, 5) * 0.5 + 0.5;
  const Tensor linear = random_tensor({B, frames, c.n_linear_bins}, 6) * 0.5 + 0.5;
  const Tensor ref = random_tensor({B, 120, c.n_mels}, 7) * 0.5 + 0.5;
  const Tensor mask = Tensor::full({B, frames}, 1.0);
  for (auto _ : state) {
    std::mt19937_64 rng(8);
    const nn::Mode mode = nn::Mode::train(rng);
    const Tensor s = model.embed(ref, ref_frames, mode);
    const Memory memory = model.encode(ids, B, L, lengths, mode);
    const DecoderOutput out = model.decode(memory, s, model.teacher_inputs(mel, 0, steps), model.initial_state(B), mode);
    const LossTerms loss = spectrogram_loss(out.mel, mel, model.postprocess(out.mel, mode), linear, mask);
    benchmark::DoNotOptimize(backward(loss.total, model.store().parameters()));
  }
}
BENCHMARK(BM_TrainingForwardBackward)->Arg(16)->Arg(40)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
