#pragma once

// The operator commands. Each returns what it wrote so tests can drive them
// in-process; errors surface as mimic::Error subclasses.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mimic/batch.hpp"
#include "mimic/corpus.hpp"
#include "mimic/eval.hpp"
#include "mimic/sample_pool.hpp"
#include "mimic/spectrogram.hpp"
#include "mimic/text.hpp"
#include "mimic/train.hpp"
#include "run_config.hpp"

namespace mimic::cli {

namespace fs = std::filesystem;

// ---- preprocess -----------------------------------------------------------------

struct PreprocessOptions {
  fs::path manifest;
  fs::path out;
  std::size_t threads = 0;  // 0 = hardware concurrency
};

struct PreprocessReport {
  std::size_t total = 0;
  std::size_t computed = 0;
  std::size_t reused = 0;
  std::vector<std::pair<std::string, std::string>> skipped;  // id, reason
  bool pool_rebuilt = false;
  NormStats stats;
};

/// Trims, extracts features, writes normalization stats and the reference
/// pool. Items whose audio and settings are unchanged since the last run are
/// reused. Throws DataError when more than `data.max_failure_fraction` of
/// the utterances fail.
PreprocessReport cmd_preprocess(const RunConfig& config, const PreprocessOptions& options);

/// A preprocessed feature directory.
struct FeatureStore {
  fs::path dir;
  CorpusManifest manifest;  // every processed utterance, all speakers train
  NormStats stats;
  DspConfig dsp;
  PoolConfig pool_config;

  static FeatureStore open(const fs::path& dir);
  /// Raw log features of one processed utterance (read from disk, cached).
  FeatureSource features() const;
  SamplePool pool() const;
  /// Symbols of every processed transcript.
  Vocabulary vocabulary() const;
  const Utterance& utterance(const std::string& id) const;
};

// ---- train ------------------------------------------------------------------------

struct TrainOptions {
  fs::path features;
  fs::path out;
  std::optional<fs::path> resume;
  std::optional<std::uint64_t> until_step;  // default: train.max_steps
  std::function<void(const StepRecord&)> on_step;
};

struct TrainReport {
  fs::path final_checkpoint;
  fs::path log;
  std::vector<fs::path> checkpoints;
  std::uint64_t steps = 0;
};

/// Runs fit and writes `train_log.tsv`, periodic checkpoints under
/// `checkpoints/` and `final.ckpt`. With `resume`, the checkpoint must use the
/// configured conditioning mode (ConfigError otherwise) and the log is
/// continued from its step.
TrainReport cmd_train(const RunConfig& config, const TrainOptions& options);

/// Settings stored in a checkpoint, as a RunConfig (for echoing).
RunConfig config_of(const Checkpoint& checkpoint);

// ---- synthesize -----------------------------------------------------------------

struct SynthesizeOptions {
  fs::path checkpoint;
  std::string text;
  std::optional<fs::path> reference;
  std::optional<std::string> speaker;
  fs::path out;
  std::uint64_t seed = 0;
};

/// Writes the comparison bundle (without ground truth) to `out`. Throws
/// ConfigError when neither or both of reference/speaker are given or when
/// they do not fit the checkpoint's conditioning mode.
ComparisonBundle cmd_synthesize(const SynthesizeOptions& options);

// ---- embed and eval ------------------------------------------------------------

struct EmbedOptions {
  fs::path checkpoint;
  fs::path features;
  fs::path out;
};

/// embeddings.csv: speaker_id,e1,...,eD, one row per pool window (or table row).
EmbeddingSet cmd_embed(const EmbedOptions& options);

enum class EvalAnalysis { kPca, kDiscriminability, kCompare };

struct EvalOptions {
  fs::path checkpoint;
  fs::path features;
  fs::path out;
  EvalAnalysis analysis = EvalAnalysis::kPca;
  std::optional<fs::path> speaker_info;  // speaker<TAB>gender lines
  std::string utterance;                 // for kCompare
  std::optional<std::string> text;       // for kCompare, default: its transcript
};

struct EvalReport {
  std::vector<fs::path> files;
  std::optional<PcaResult> pca;
  std::optional<DiscriminabilityResult> discriminability;
  std::optional<double> monotonic_fraction;  // teacher-forced, for kCompare
};

/// --pca: projections.csv and pca.json. --discriminability:
/// discriminability.json (trials, accuracy, seed, distance). --compare: the
/// bundle for one training utterance with its ground truth, plus the
/// teacher-forced alignment and its monotonic fraction (alignment.json).
EvalReport cmd_eval(const RunConfig& config, const EvalOptions& options);

}  // namespace mimic::cli
