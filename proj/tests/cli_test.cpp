#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "cli/app.hpp"
#include "cli/commands.hpp"
#include "cli/run_config.hpp"
#include "mimic/audio.hpp"
#include "mimic/error.hpp"

using namespace mimic;
using namespace mimic::cli;
namespace fs = std::filesystem;

namespace {

const fs::path kFixture = MIMIC_FIXTURE_DIR;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("mimic_cli_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

// Settings small enough for a few training steps in a unit test.
std::vector<std::string> small_settings() {
  return {"--config", (kFixture / "config.ini").string(), "--set", "model.char_embed_dim=8",
          "--set",    "model.prenet_dims=8,4",               "--set", "model.encoder_dim=8",
          "--set",    "model.decoder_dim=8",                 "--set", "model.attention_dim=8",
          "--set",    "model.postnet_channels=8",            "--set", "model.embedder_channels=8",
          "--set",    "model.embedder_hidden=8",             "--set", "model.embedding_dim=4",
          "--set",    "train.checkpoint_interval=2"};
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// Preprocessed fixture shared by the tests below.
const fs::path& features() {
  static const fs::path dir = [] {
    const fs::path d = scratch("features");
    const Outcome o = run_cli(concat({"preprocess", "--manifest", (kFixture / "manifest.tsv").string(), "--out",
                                      d.string()},
                                     {"--config", (kFixture / "config.ini").string()}));
    if (o.code != 0) throw std::runtime_error("fixture preprocess failed: " + o.err);
    return d;
  }();
  return dir;
}

const fs::path& trained(const std::string& mode) {
  static std::map<std::string, fs::path> runs;
  auto it = runs.find(mode);
  if (it == runs.end()) {
    const fs::path d = scratch("run_" + mode);
    const Outcome o = run_cli(concat({"train", "--features", features().string(), "--out", d.string(), "--mode", mode,
                                      "--steps", "3"},
                                     small_settings()));
    if (o.code != 0) throw std::runtime_error("fixture training failed: " + o.err);
    it = runs.emplace(mode, d).first;
  }
  return it->second;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

// ---- configuration ---------------------------------------------------------------

TEST(RunConfig, ResolvedSettingsRoundTrip) {
  RunConfig c;
  c.set("model.r=3");
  c.set("data.held_out=x,y");
  c.set("train", "mode", "lookup");
  const fs::path dir = scratch("roundtrip");
  c.write(dir / "c.ini");
  RunConfig back;
  back.load_file(dir / "c.ini");
  EXPECT_EQ(back.to_ini(), c.to_ini());
  EXPECT_EQ(back.model.r, 3u);
  EXPECT_EQ(back.data.held_out, (std::vector<std::string>{"x", "y"}));
  EXPECT_EQ(back.train.conditioning, Conditioning::kLookup);
}

TEST(RunConfig, DefaultsCarryTheTrainingHyperparameters) {
  const RunConfig c;
  EXPECT_EQ(c.train.batch_size, 32u);
  EXPECT_DOUBLE_EQ(c.train.lr, 0.001);
  EXPECT_DOUBLE_EQ(c.train.clip_threshold, 1.0);
  EXPECT_EQ(c.model.r, 5u);
  EXPECT_DOUBLE_EQ(c.data.pool.window_s, 6.0);
  EXPECT_EQ(c.data.held_out.size(), 10u);
  EXPECT_NO_THROW(c.validate());
}

TEST(RunConfig, UnknownOrMalformedSettingsAreRejected) {
  RunConfig c;
  EXPECT_THROW(c.set("model.colour=blue"), ConfigError);
  EXPECT_THROW(c.set("nosuch.key=1"), ConfigError);
  EXPECT_THROW(c.set("model.r"), ConfigError);
  EXPECT_THROW(c.set("model.r=five"), ConfigError);
  EXPECT_THROW(c.set("train.mode=both"), ConfigError);
  EXPECT_THROW(c.set("eval.distance=manhattan"), ConfigError);
  const fs::path dir = scratch("bad_ini");
  std::ofstream(dir / "bad.ini") << "[model]\nr = 5\nwidth = 3\n";
  EXPECT_THROW(c.load_file(dir / "bad.ini"), ConfigError);
}

TEST(RunConfig, OverridesApplyAfterTheFile) {
  const Outcome o = run_cli(concat({"preprocess", "--manifest", (kFixture / "manifest.tsv").string(), "--out",
                                    scratch("precedence").string(), "--set", "data.window_s=2.5"},
                                   {"--config", (kFixture / "config.ini").string()}));
  ASSERT_EQ(o.code, 0) << o.err;
  RunConfig echoed;
  echoed.load_file(fs::temp_directory_path() / "mimic_cli_test_precedence" / "config.ini");
  EXPECT_DOUBLE_EQ(echoed.data.pool.window_s, 2.5);
  EXPECT_EQ(echoed.dsp.n_mels, 40u);  // from the file
}

// ---- preprocess -----------------------------------------------------------------

TEST(Preprocess, RerunRecomputesNothing) {
  RunConfig c;
  c.load_file(kFixture / "config.ini");
  const fs::path out = scratch("idempotent");
  const PreprocessReport first = cmd_preprocess(c, {kFixture / "manifest.tsv", out, 1});
  EXPECT_EQ(first.computed, 12u);
  EXPECT_TRUE(first.pool_rebuilt);
  const auto stamp = fs::last_write_time(out / "features" / "lo" / "lo_0.mel");
  const std::string fresh_stats = slurp(out / "stats.json");
  const PreprocessReport second = cmd_preprocess(c, {kFixture / "manifest.tsv", out, 1});
  EXPECT_EQ(slurp(out / "stats.json"), fresh_stats);  // cached ranges round-trip exactly
  EXPECT_EQ(second.computed, 0u);
  EXPECT_EQ(second.reused, 12u);
  EXPECT_FALSE(second.pool_rebuilt);
  EXPECT_EQ(fs::last_write_time(out / "features" / "lo" / "lo_0.mel"), stamp);

  c.set("dsp.n_mels=20");
  EXPECT_EQ(cmd_preprocess(c, {kFixture / "manifest.tsv", out, 1}).computed, 12u);
}

TEST(Preprocess, StatsHoldMinAndMaxPerFeatureKind) {
  const auto stats = nlohmann::json::parse(slurp(features() / "stats.json"));
  const FeatureStore store = FeatureStore::open(features());
  double mel_min = 1e9, mel_max = -1e9, lin_min = 1e9, lin_max = -1e9;
  for (const auto& u : store.manifest.utterances) {
    const UtteranceFeatures f = store.features()(u);
    for (float v : f.mel.values) mel_min = std::min<double>(mel_min, v), mel_max = std::max<double>(mel_max, v);
    for (float v : f.linear.values) lin_min = std::min<double>(lin_min, v), lin_max = std::max<double>(lin_max, v);
  }
  EXPECT_NEAR(stats.at("mel_min").get<double>(), mel_min, 1e-6);
  EXPECT_NEAR(stats.at("mel_max").get<double>(), mel_max, 1e-6);
  EXPECT_NEAR(stats.at("linear_min").get<double>(), lin_min, 1e-6);
  EXPECT_NEAR(stats.at("linear_max").get<double>(), lin_max, 1e-6);
  EXPECT_LT(mel_min, mel_max);
  EXPECT_EQ(stats.at("utterances").get<int>(), 12);
}

TEST(Preprocess, SilentUtteranceIsSkippedAndReported) {
  const fs::path dir = scratch("silent");
  std::string manifest = slurp(kFixture / "manifest.tsv");
  std::string rebased;
  std::istringstream lines(manifest);
  for (std::string line; std::getline(lines, line);) rebased += (kFixture / line).string() + "\n";
  Waveform silence;
  silence.sample_rate = 16000;
  silence.samples.assign(16000, 0.0);
  save_wav(dir / "quiet.wav", silence);
  rebased += (dir / "quiet.wav").string() + "\tlo\tbig dog\n";
  std::ofstream(dir / "manifest.tsv") << rebased;

  const Outcome o = run_cli(concat({"preprocess", "--manifest", (dir / "manifest.tsv").string(), "--out",
                                    (dir / "out").string()},
                                   {"--config", (kFixture / "config.ini").string()}));
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_NE(o.out.find("1 skipped"), std::string::npos);
  const std::string skipped = slurp(dir / "out" / "skipped.tsv");
  EXPECT_NE(skipped.find("lo/quiet"), std::string::npos);
  EXPECT_EQ(FeatureStore::open(dir / "out").manifest.utterances.size(), 12u);
}

TEST(Preprocess, TooManyFailuresIsADataError) {
  const fs::path dir = scratch("failing");
  Waveform silence;
  silence.sample_rate = 16000;
  silence.samples.assign(8000, 0.0);
  std::string manifest;
  for (int i = 0; i < 3; ++i) {
    save_wav(dir / ("q" + std::to_string(i) + ".wav"), silence);
    manifest += "q" + std::to_string(i) + ".wav\tlo\thello\n";
  }
  std::ofstream(dir / "manifest.tsv") << manifest;
  const Outcome o = run_cli({"preprocess", "--manifest", (dir / "manifest.tsv").string(), "--out",
                             (dir / "out").string()});
  EXPECT_EQ(o.code, kExitData);
}

// ---- train, synthesize, embed, eval ----------------------------------------

TEST(Train, WritesLogCheckpointsAndEchoedConfig) {
  const fs::path run = trained("embedder");
  EXPECT_TRUE(fs::exists(run / "final.ckpt"));
  EXPECT_TRUE(fs::exists(run / "checkpoints" / "step_00000002.ckpt"));
  EXPECT_TRUE(fs::exists(run / "config.ini"));
  std::ifstream log(run / "train_log.tsv");
  std::string line;
  std::size_t rows = 0;
  std::getline(log, line);
  EXPECT_EQ(line, training_log_header());
  while (std::getline(log, line)) ++rows;
  EXPECT_EQ(rows, 3u);
  RunConfig echoed;
  echoed.load_file(run / "config.ini");
  EXPECT_EQ(echoed.model.decoder_dim, 8u);
}

TEST(Train, ResumeWithTheOtherModeIsAUsageError) {
  const Outcome o = run_cli(concat({"train", "--features", features().string(), "--out", scratch("bad_resume").string(),
                                    "--mode", "lookup", "--resume", (trained("embedder") / "final.ckpt").string()},
                                   small_settings()));
  EXPECT_EQ(o.code, kExitUsage);
  EXPECT_NE(o.err.find("embedder"), std::string::npos);
}

TEST(Train, SameSeedGivesIdenticalLogs) {
  const fs::path run = scratch("repeat");
  const Outcome o = run_cli(concat({"train", "--features", features().string(), "--out", run.string(), "--mode",
                                    "embedder", "--steps", "3"},
                                   small_settings()));
  ASSERT_EQ(o.code, 0) << o.err;
  auto losses = [](const fs::path& log) {
    std::string text, out;
    std::istringstream in(slurp(log));
    while (std::getline(in, text)) {
      // Drop the wall-clock column.
      const auto a = text.find('\t'), b = text.find('\t', a + 1);
      out += text.substr(0, a) + text.substr(b) + "\n";
    }
    return out;
  };
  EXPECT_EQ(losses(run / "train_log.tsv"), losses(trained("embedder") / "train_log.tsv"));
}

TEST(Synthesize, FlagsMustMatchTheCheckpointMode) {
  const std::string embedder = (trained("embedder") / "final.ckpt").string();
  const std::string lookup = (trained("lookup") / "final.ckpt").string();
  const std::string ref = (kFixture / "wav" / "p225_0.wav").string();
  const std::string out = scratch("synth_flags").string();
  EXPECT_EQ(run_cli({"synthesize", "--checkpoint", embedder, "--text", "a dog", "--out", out}).code, kExitUsage);
  EXPECT_EQ(run_cli({"synthesize", "--checkpoint", embedder, "--text", "a dog", "--speaker", "lo", "--out", out}).code,
            kExitUsage);
  EXPECT_EQ(run_cli({"synthesize", "--checkpoint", lookup, "--text", "a dog", "--ref", ref, "--out", out}).code,
            kExitUsage);
  EXPECT_EQ(run_cli({"synthesize", "--checkpoint", embedder, "--text", "a dog", "--ref", ref, "--speaker", "lo",
                     "--out", out})
                .code,
            kExitUsage);
}

TEST(Synthesize, UnseenReferenceWithFixedSeedIsReproducible) {
  const std::string ck = (trained("embedder") / "final.ckpt").string();
  const std::string ref = (kFixture / "wav" / "p225_0.wav").string();
  const fs::path a = scratch("synth_a"), b = scratch("synth_b");
  ASSERT_EQ(run_cli({"synthesize", "--checkpoint", ck, "--text", "a big dog", "--ref", ref, "--out", a.string(),
                     "--seed", "5"})
                .code,
            0);
  ASSERT_EQ(run_cli({"synthesize", "--checkpoint", ck, "--text", "a big dog", "--ref", ref, "--out", b.string(),
                     "--seed", "5"})
                .code,
            0);
  EXPECT_EQ(slurp(a / "audio.wav"), slurp(b / "audio.wav"));
  EXPECT_FALSE(fs::exists(a / "gt_mel.csv"));
  EXPECT_TRUE(fs::exists(a / "config.ini"));
}

TEST(Synthesize, LookupModeBySpeakerId) {
  const fs::path out = scratch("synth_lookup");
  const Outcome o = run_cli({"synthesize", "--checkpoint", (trained("lookup") / "final.ckpt").string(), "--text",
                             "go hide", "--speaker", "hi", "--out", out.string()});
  EXPECT_EQ(o.code, 0) << o.err;
  EXPECT_TRUE(fs::exists(out / "audio.wav"));
  EXPECT_EQ(run_cli({"synthesize", "--checkpoint", (trained("lookup") / "final.ckpt").string(), "--text", "go hide",
                     "--speaker", "nobody", "--out", out.string()})
                .code,
            kExitUsage);
}

TEST(Eval, PcaDiscriminabilityAndCompareOutputs) {
  const std::string ck = (trained("embedder") / "final.ckpt").string();
  const fs::path dir = scratch("eval");
  std::ofstream(dir / "genders.tsv") << "lo\tM\nhi\tF\np225\tF\n";

  Outcome o = run_cli({"eval", "--checkpoint", ck, "--features", features().string(), "--out", (dir / "pca").string(),
                       "--pca", "--speaker-info", (dir / "genders.tsv").string()});
  ASSERT_EQ(o.code, 0) << o.err;
  std::ifstream csv(dir / "pca" / "projections.csv");
  std::string header, row;
  std::getline(csv, header);
  std::getline(csv, row);
  EXPECT_EQ(header, "speaker_id,gender,pc1,pc2");
  EXPECT_EQ(row.substr(0, 5), "hi,F,");

  o = run_cli({"eval", "--checkpoint", ck, "--features", features().string(), "--out", (dir / "disc").string(),
               "--discriminability", "--trials", "10000"});
  ASSERT_EQ(o.code, 0) << o.err;
  const auto disc = nlohmann::json::parse(slurp(dir / "disc" / "discriminability.json"));
  EXPECT_EQ(disc.at("trials").get<int>(), 10000);
  EXPECT_GE(disc.at("accuracy").get<double>(), 0.0);
  EXPECT_LE(disc.at("accuracy").get<double>(), 1.0);
  EXPECT_EQ(disc.at("distance"), "cosine");

  o = run_cli({"eval", "--checkpoint", ck, "--features", features().string(), "--out", (dir / "cmp").string(),
               "--compare", "lo/lo_1"});
  ASSERT_EQ(o.code, 0) << o.err;
  for (const char* f : {"gen_mel.csv", "gt_mel.csv", "gt_linear.csv", "alignment.csv", "audio.wav",
                        "teacher_forced_alignment.csv", "alignment.json", "config.ini"}) {
    EXPECT_TRUE(fs::exists(dir / "cmp" / f)) << f;
  }

  EXPECT_EQ(run_cli({"eval", "--checkpoint", ck, "--features", features().string(), "--out", (dir / "none").string()})
                .code,
            kExitUsage);
  EXPECT_EQ(run_cli({"eval", "--checkpoint", ck, "--features", features().string(), "--out", (dir / "x").string(),
                     "--compare", "lo/missing"})
                .code,
            kExitUsage);
}

TEST(Embed, OneRowPerPoolWindow) {
  const fs::path out = scratch("embed");
  const Outcome o = run_cli({"embed", "--checkpoint", (trained("embedder") / "final.ckpt").string(), "--features",
                             features().string(), "--out", out.string()});
  ASSERT_EQ(o.code, 0) << o.err;
  std::ifstream csv(out / "embeddings.csv");
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "speaker_id,e1,e2,e3,e4");
  std::size_t rows = 0;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, FeatureStore::open(features()).pool().size());
}

// ---- exit codes -----------------------------------------------------------------

TEST(ExitCodes, UsageDataAndSuccessAreDistinct) {
  EXPECT_EQ(run_cli({}).code, kExitUsage);
  EXPECT_EQ(run_cli({"--help"}).code, kExitOk);
  EXPECT_EQ(run_cli({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(run_cli({"train", "--features", features().string()}).code, kExitUsage);
  EXPECT_EQ(run_cli({"train", "--features", scratch("empty").string(), "--out", scratch("o").string()}).code,
            kExitData);
  const fs::path dir = scratch("corrupt");
  std::ofstream(dir / "bad.ckpt") << "not a checkpoint";
  EXPECT_EQ(run_cli({"embed", "--checkpoint", (dir / "bad.ckpt").string(), "--features", features().string(),
                     "--out", dir.string()})
                .code,
            kExitData);
  EXPECT_NE(kExitNumeric, kExitData);
  EXPECT_NE(kExitNumeric, kExitUsage);
}
