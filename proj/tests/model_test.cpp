#include <gtest/gtest.h>

#include <cmath>

#include "mimic/error.hpp"
#include "mimic/model.hpp"
#include "support/gradcheck.hpp"

using namespace mimic;
using mimic::testing::random_tensor;

namespace {

ModelConfig tiny_config(Conditioning mode = Conditioning::kEmbedder) {
  ModelConfig c;
  c.vocab_size = 12;
  c.char_embed_dim = 6;
  c.prenet_dims = {8, 5};
  c.encoder_dim = 6;
  c.decoder_dim = 7;
  c.attention_dim = 5;
  c.embedding_dim = 4;
  c.r = 5;
  c.n_mels = 6;
  c.n_linear_bins = 9;
  c.postnet_channels = 5;
  c.embedder_channels = 6;
  c.embedder_hidden = 5;
  c.max_decoder_steps = 12;
  c.conditioning = mode;
  c.n_speakers = 3;
  return c;
}

std::vector<std::int64_t> random_ids(std::size_t n, std::mt19937_64& rng, std::size_t vocab) {
  std::uniform_int_distribution<std::int64_t> d(2, static_cast<std::int64_t>(vocab) - 1);
  std::vector<std::int64_t> ids(n);
  for (auto& id : ids) id = d(rng);
  return ids;
}

}  // namespace

// ---- configuration -------------------------------------------------------------

TEST(ModelConfig, Validation) {
  EXPECT_NO_THROW(tiny_config().validate());
  auto bad = tiny_config();
  bad.r = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = tiny_config();
  bad.encoder_dim = 5;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = tiny_config(Conditioning::kLookup);
  bad.n_speakers = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_EQ(ModelConfig{}.min_reference_frames(), 8u);
  EXPECT_EQ(conditioning_from_string("lookup-table"), Conditioning::kLookup);
  EXPECT_THROW(conditioning_from_string("table"), ConfigError);
}

// ---- speaker embedder ----------------------------------------------------------

TEST(Embedder, DefaultSizesAndStrideArithmetic) {
  ModelConfig c;  // full-size embedder
  c.vocab_size = 30;
  const VoiceModel model(c, 1);
  std::size_t t = 480;
  for (std::size_t s : c.embedder_strides) t = nn::conv_output_length(t, s);
  EXPECT_EQ(t, 60u);
  const Tensor s = model.embed(Tensor::zeros({1, 480, 80}), {480}, nn::Mode::infer());
  EXPECT_EQ(s.shape(), (Shape{1, 128}));
}

TEST(Embedder, DimensionIndependentOfReferenceLength) {
  const VoiceModel model(tiny_config(), 2);
  std::mt19937_64 rng(2);
  // 1 s, 2 s, 6 s and 10 s at 80 frames per second.
  for (std::size_t frames : {80u, 160u, 480u, 800u, 100u}) {
    const Tensor s = model.embed(random_tensor({2, frames, 6}, rng, 0, 1), {frames, frames - 3}, nn::Mode::infer());
    EXPECT_EQ(s.shape(), (Shape{2, 4})) << frames;
  }
}

TEST(Embedder, InferenceIsDeterministicAndCounted) {
  const VoiceModel model(tiny_config(), 3);
  std::mt19937_64 rng(3);
  const Tensor ref = random_tensor({1, 40, 6}, rng, 0, 1);
  const std::size_t before = model.embedder_calls();
  const auto a = model.embed(ref, {40}, nn::Mode::infer()).to_vector();
  const auto b = model.embed(ref, {40}, nn::Mode::infer()).to_vector();
  EXPECT_EQ(a, b);
  EXPECT_EQ(model.embedder_calls(), before + 2);
}

TEST(Embedder, PaddingBeyondLengthIsIgnored) {
  const VoiceModel model(tiny_config(), 4);
  std::mt19937_64 rng(4);
  const Tensor ref = random_tensor({1, 24, 6}, rng, 0, 1);
  std::vector<double> padded = ref.to_vector();
  padded.resize(40 * 6, 0.9);
  const auto a = model.embed(ref, {24}, nn::Mode::infer()).to_vector();
  const auto b = model.embed(Tensor::from({1, 40, 6}, padded), {24}, nn::Mode::infer()).to_vector();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Embedder, ShortReferenceAndWrongModeAreRejected) {
  const VoiceModel model(tiny_config(), 5);
  EXPECT_THROW(model.embed(Tensor::zeros({1, 7, 6}), {7}, nn::Mode::infer()), InputError);
  EXPECT_THROW(model.lookup({0}), ConfigError);
  const VoiceModel lookup(tiny_config(Conditioning::kLookup), 5);
  EXPECT_THROW(lookup.embed(Tensor::zeros({1, 8, 6}), {8}, nn::Mode::infer()), ConfigError);
}

// ---- lookup table --------------------------------------------------------------

TEST(Lookup, ReturnsTableRows) {
  auto c = tiny_config(Conditioning::kLookup);
  c.n_speakers = 109;
  const VoiceModel model(c, 6);
  const Tensor table = model.store().parameters().at("speaker/table");
  EXPECT_EQ(table.shape(), (Shape{109, 4}));
  const auto row = model.lookup({0}).to_vector();
  for (std::size_t d = 0; d < 4; ++d) EXPECT_EQ(row[d], table.at({0, d}));
  EXPECT_THROW(model.lookup({109}), ContractError);
}

// ---- encoder -------------------------------------------------------------------

TEST(Encoder, OneVectorPerCharacter) {
  const VoiceModel model(tiny_config(), 7);
  std::mt19937_64 rng(7);
  const Memory m17 = model.encode(random_ids(17, rng, 12), 1, 17, {17}, nn::Mode::infer());
  EXPECT_EQ(m17.values.shape(), (Shape{1, 17, 6}));
  const Memory m1 = model.encode({3}, 1, 1, {1}, nn::Mode::infer());
  EXPECT_EQ(m1.values.shape(), (Shape{1, 1, 6}));
  EXPECT_THROW(model.encode({12}, 1, 1, {1}, nn::Mode::infer()), InputError);
  EXPECT_THROW(model.encode({}, 1, 0, {0}, nn::Mode::infer()), InputError);
}

TEST(Encoder, PaddingDoesNotChangeValidPositions) {
  auto c = tiny_config();
  c.encoder_conv_layers = 0;
  const VoiceModel model(c, 8);
  std::mt19937_64 rng(8);
  auto ids = random_ids(5, rng, 12);
  const auto alone = model.encode(ids, 1, 5, {5}, nn::Mode::infer()).values.to_vector();
  ids.insert(ids.end(), {0, 0, 0});
  const Tensor padded = model.encode(ids, 1, 8, {5}, nn::Mode::infer()).values;
  for (std::size_t t = 0; t < 5; ++t) {
    for (std::size_t d = 0; d < 6; ++d) EXPECT_NEAR(padded.at({0, t, d}), alone[t * 6 + d], 1e-12);
  }
}

// ---- decoder -------------------------------------------------------------------

TEST(Decoder, StepsEmitRFramesAndAlignmentsNormalize) {
  const VoiceModel model(tiny_config(), 9);
  std::mt19937_64 rng(9);
  const Memory memory = model.encode(random_ids(2 * 6, rng, 12), 2, 6, {6, 4}, nn::Mode::infer());
  const Tensor targets = random_tensor({2, 25, 6}, rng, 0, 1);
  const Tensor s = random_tensor({2, 4}, rng);
  const DecoderOutput out =
      model.decode(memory, s, model.teacher_inputs(targets, 0, 5), model.initial_state(2), nn::Mode::infer());
  EXPECT_EQ(out.mel.shape(), (Shape{2, 25, 6}));
  EXPECT_EQ(out.alignments.shape(), (Shape{2, 5, 6}));
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t k = 0; k < 5; ++k) {
      double total = 0.0;
      for (std::size_t n = 0; n < 6; ++n) total += out.alignments.at({b, k, n});
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
  // Second item has 4 characters; padding gets no attention.
  EXPECT_EQ(out.alignments.at({1, 2, 5}), 0.0);
}

TEST(Decoder, TeacherInputsUseLastFrameOfPreviousGroup) {
  const VoiceModel model(tiny_config(), 10);
  std::vector<double> v(1 * 15 * 6);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i / 6);  // frame index
  const Tensor targets = Tensor::from({1, 15, 6}, v);
  const Tensor in = model.teacher_inputs(targets, 0, 3);
  EXPECT_EQ(in.at({0, 0, 0}), 0.0);
  EXPECT_EQ(in.at({0, 1, 3}), 4.0);
  EXPECT_EQ(in.at({0, 2, 5}), 9.0);
  EXPECT_EQ(model.teacher_inputs(targets, 2, 1).at({0, 0, 0}), 9.0);
  EXPECT_THROW(model.teacher_inputs(targets, 2, 2), ContractError);
}

TEST(Decoder, SplitDecodingMatchesSinglePass) {
  const VoiceModel model(tiny_config(), 11);
  std::mt19937_64 rng(11);
  const Memory memory = model.encode(random_ids(4, rng, 12), 1, 4, {4}, nn::Mode::infer());
  const Tensor targets = random_tensor({1, 30, 6}, rng, 0, 1);
  const Tensor s = random_tensor({1, 4}, rng);
  const auto whole = model.decode(memory, s, model.teacher_inputs(targets, 0, 6), model.initial_state(1),
                                  nn::Mode::infer());
  const auto first = model.decode(memory, s, model.teacher_inputs(targets, 0, 2), model.initial_state(1),
                                  nn::Mode::infer());
  const auto second = model.decode(memory, s, model.teacher_inputs(targets, 2, 4), first.state.detached(),
                                   nn::Mode::infer());
  const auto joined = concat({first.mel, second.mel}, 1).to_vector();
  const auto expected = whole.mel.to_vector();
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(joined[i], expected[i], 1e-12);
}

TEST(Decoder, DifferentSpeakersGiveDifferentOutputs) {
  const VoiceModel model(tiny_config(), 12);
  std::mt19937_64 rng(12);
  const auto ids = random_ids(5, rng, 12);
  const auto a = model.infer(ids, Tensor::from({1, 4}, {1, 0, -1, 0.5}));
  const auto b = model.infer(ids, Tensor::from({1, 4}, {-1, 0.5, 1, 0}));
  // The speaker enters from the first step, so even the first group differs.
  const std::size_t group = 5 * 6;
  ASSERT_GE(std::min(a.mel.size(), b.mel.size()), group);
  EXPECT_NE(std::vector<double>(a.mel.begin(), a.mel.begin() + group),
            std::vector<double>(b.mel.begin(), b.mel.begin() + group));
}

// ---- inference -----------------------------------------------------------------

TEST(Inference, StopRuleAndTruncation) {
  auto c = tiny_config();
  c.stop_threshold = 1e9;  // every step counts as silent
  const VoiceModel quiet(c, 13);
  const auto stopped = quiet.infer({3, 4, 1}, Tensor::zeros({1, 4}));
  EXPECT_FALSE(stopped.truncated);
  EXPECT_EQ(stopped.steps, 3u);
  EXPECT_EQ(stopped.frames, 15u);
  EXPECT_EQ(stopped.linear.size(), 15u * 9u);
  EXPECT_EQ(stopped.alignment.size(), 3u * 3u);

  c.stop_threshold = -1e9;  // never silent
  const VoiceModel loud(c, 13);
  const auto truncated = loud.infer({3, 4, 1}, Tensor::zeros({1, 4}));
  EXPECT_TRUE(truncated.truncated);
  EXPECT_EQ(truncated.steps, c.max_decoder_steps);
  EXPECT_EQ(truncated.frames % c.r, 0u);
}

TEST(Inference, IsDeterministicAndLeavesParametersAlone) {
  const VoiceModel model(tiny_config(), 14);
  std::vector<std::vector<double>> before;
  for (const auto& [name, t] : model.store().parameters()) before.push_back(t.to_vector());
  const auto a = model.infer({5, 6, 7, 1}, Tensor::from({1, 4}, {0.1, 0.2, 0.3, 0.4}));
  const auto b = model.infer({5, 6, 7, 1}, Tensor::from({1, 4}, {0.1, 0.2, 0.3, 0.4}));
  EXPECT_EQ(a.mel, b.mel);
  EXPECT_EQ(a.linear, b.linear);
  std::size_t i = 0;
  for (const auto& [name, t] : model.store().parameters()) EXPECT_EQ(t.to_vector(), before[i++]) << name;
}

// ---- post-processor ------------------------------------------------------------

TEST(Postprocess, KeepsFrameCount) {
  ModelConfig c;
  c.vocab_size = 30;
  c.postnet_channels = 16;
  const VoiceModel model(c, 15);
  EXPECT_EQ(model.postprocess(Tensor::zeros({1, 25, 80}), nn::Mode::infer()).shape(), (Shape{1, 25, 513}));
  EXPECT_EQ(model.postprocess(Tensor::zeros({1, 1, 80}), nn::Mode::infer()).shape(), (Shape{1, 1, 513}));
}

// ---- loss ----------------------------------------------------------------------

TEST(Loss, Examples) {
  std::mt19937_64 rng(16);
  const Tensor mel = random_tensor({2, 5, 3}, rng), lin = random_tensor({2, 5, 4}, rng);
  const Tensor mask = Tensor::full({2, 5}, 1.0);
  EXPECT_EQ(spectrogram_loss(mel, mel, lin, lin, mask).total.item(), 0.0);
  const LossTerms offset = spectrogram_loss(mel, mel, lin + 0.5, lin, mask);
  EXPECT_NEAR(offset.total.item(), 0.5, 1e-12);
  EXPECT_NEAR(offset.linear.item(), 0.5, 1e-12);
  EXPECT_EQ(offset.mel.item(), 0.0);
  EXPECT_THROW(spectrogram_loss(mel, mel, lin, lin, Tensor::zeros({2, 5})), ContractError);
}

TEST(Loss, MaskedMeanMatchesHandComputation) {
  std::mt19937_64 rng(17);
  const Tensor mp = random_tensor({2, 4, 3}, rng), mt = random_tensor({2, 4, 3}, rng);
  const Tensor lp = random_tensor({2, 4, 2}, rng), lt = random_tensor({2, 4, 2}, rng);
  const Tensor mask = Tensor::from({2, 4}, {1, 1, 1, 0, 1, 0, 0, 0});
  double mel = 0.0, lin = 0.0;
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t t = 0; t < 4; ++t) {
      if (mask.at({b, t}) == 0.0) continue;
      for (std::size_t d = 0; d < 3; ++d) mel += std::abs(mp.at({b, t, d}) - mt.at({b, t, d}));
      for (std::size_t d = 0; d < 2; ++d) lin += std::abs(lp.at({b, t, d}) - lt.at({b, t, d}));
    }
  }
  const LossTerms terms = spectrogram_loss(mp, mt, lp, lt, mask);
  EXPECT_NEAR(terms.mel.item(), mel / (4 * 3), 1e-12);
  EXPECT_NEAR(terms.linear.item(), lin / (4 * 2), 1e-12);
}

TEST(Loss, ScalingTheErrorScalesEachTerm) {
  std::mt19937_64 rng(18);
  const Tensor mt = random_tensor({1, 6, 3}, rng), lt = random_tensor({1, 6, 5}, rng);
  const Tensor dm = random_tensor({1, 6, 3}, rng), dl = random_tensor({1, 6, 5}, rng);
  const Tensor mask = Tensor::full({1, 6}, 1.0);
  const LossTerms base = spectrogram_loss(mt + dm, mt, lt + dl, lt, mask);
  for (double alpha : {1.5, 2.0, 7.25}) {
    const LossTerms scaled = spectrogram_loss(mt + dm * alpha, mt, lt + dl * alpha, lt, mask);
    EXPECT_NEAR(scaled.mel.item(), alpha * base.mel.item(), 1e-12);
    EXPECT_NEAR(scaled.linear.item(), alpha * base.linear.item(), 1e-12);
  }
}

// ---- end-to-end gradients ------------------------------------------------------

namespace {

struct TinyBatch {
  std::vector<std::int64_t> ids;
  std::vector<std::size_t> lengths;
  Tensor mel, linear, mask, reference;
  std::vector<std::size_t> reference_frames;
};

TinyBatch tiny_batch(std::mt19937_64& rng) {
  TinyBatch b;
  b.ids = random_ids(2 * 5, rng, 12);
  b.ids[8] = b.ids[9] = 0;
  b.lengths = {5, 3};
  b.mel = random_tensor({2, 10, 6}, rng, 0, 1);
  b.linear = random_tensor({2, 10, 9}, rng, 0, 1);
  b.mask = Tensor::from({2, 10}, {1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0});
  b.reference = random_tensor({2, 16, 6}, rng, 0, 1);
  b.reference_frames = {16, 12};
  return b;
}

Tensor tiny_loss(const VoiceModel& model, const TinyBatch& b, LossTerms* terms = nullptr) {
  std::mt19937_64 rng(99);  // same dropout masks on every evaluation
  const nn::Mode mode = nn::Mode::train(rng);
  const Tensor s = model.embed(b.reference, b.reference_frames, mode);
  const Memory memory = model.encode(b.ids, 2, 5, b.lengths, mode);
  const DecoderOutput out = model.decode(memory, s, model.teacher_inputs(b.mel, 0, 2), model.initial_state(2), mode);
  const Tensor linear = model.postprocess(out.mel, mode);
  LossTerms t = spectrogram_loss(out.mel, b.mel, linear, b.linear, b.mask);
  if (terms) *terms = t;
  return t.total;
}

}  // namespace

TEST(ModelGradient, ReachesEmbedderAndMatchesFiniteDifferences) {
  const VoiceModel model(tiny_config(), 19);
  std::mt19937_64 rng(19);
  const TinyBatch b = tiny_batch(rng);
  const auto& params = model.store().parameters();

  LossTerms terms;
  const Tensor loss = tiny_loss(model, b, &terms);
  const TensorMap grads = backward(loss, params);
  double conv_norm = 0.0;
  for (double g : grads.at("embedder/conv0/weight").data()) conv_norm += g * g;
  EXPECT_GT(conv_norm, 0.0);

  // Post-processor parameters only see the linear term.
  const TensorMap mel_grads = backward(terms.mel, params);
  for (double g : mel_grads.at("postnet/projection/weight").data()) EXPECT_EQ(g, 0.0);
  double post_norm = 0.0;
  for (double g : backward(terms.linear, params).at("postnet/projection/weight").data()) post_norm += g * g;
  EXPECT_GT(post_norm, 0.0);

  const std::vector<std::string> checked = {"embedder/conv0/weight", "embedder/projection/bias",
                                            "encoder/gru_backward/bias", "decoder/attention/v",
                                            "decoder/attention_rnn/bias", "postnet/conv1/bias"};
  std::vector<Tensor> inputs;
  for (const auto& name : checked) inputs.push_back(params.at(name));
  const double err = mimic::testing::gradient_relative_error(
      [&](const std::vector<Tensor>&) { return tiny_loss(model, b); }, inputs);
  EXPECT_LT(err, 1e-4);
}
