#pragma once

// Joint training of the synthesis network and its speaker conditioning with
// truncated backpropagation through time, global-norm clipping and Adam.

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "mimic/batch.hpp"
#include "mimic/corpus.hpp"
#include "mimic/dsp_config.hpp"
#include "mimic/model.hpp"
#include "mimic/optim.hpp"
#include "mimic/sample_pool.hpp"
#include "mimic/spectrogram.hpp"
#include "mimic/text.hpp"

namespace mimic {

struct TrainConfig {
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_threshold = 1.0;
  std::size_t tbptt_segment_steps = 40;  // decoder steps per segment
  std::size_t max_steps = 100000;
  std::size_t checkpoint_interval = 1000;
  std::uint64_t seed = 1;
  Conditioning conditioning = Conditioning::kEmbedder;

  /// Throws ConfigError unless every size is positive, lr > 0 (or exactly 0
  /// for frozen runs) and the betas lie in [0, 1).
  void validate() const;
  AdamConfig adam() const { return {lr, beta1, beta2, epsilon}; }
};

/// Outcome of one optimizer step over a batch.
struct StepResult {
  double loss = 0.0;         // mel + linear, valid-frame weighted over segments
  double loss_mel = 0.0;
  double loss_linear = 0.0;
  double grad_norm = 0.0;     // largest pre-clip global norm over segments
  double clipped_norm = 0.0;  // largest post-clip global norm over segments
  std::size_t segments = 0;
};

/// One training step. The decoder unrolls in segments of
/// `tbptt_segment_steps`; recurrent state values carry across segment
/// boundaries while gradients stop there. Every segment runs forward, loss on
/// its frames, backward, clipping and an Adam update. Embedder mode reads
/// `batch.reference`; lookup mode reads `speaker_rows` (one table row per
/// batch item) and nothing else about speakers. Throws NumericError on a
/// non-finite loss or gradient, naming the segment and the norms so far.
StepResult train_step(VoiceModel& model, const Batch& batch, const std::vector<std::size_t>& speaker_rows,
                      AdamState& adam, const TrainConfig& config, std::mt19937_64& rng);

/// Where the epoch loop stands; with the seed this fixes every random draw.
struct TrainingProgress {
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  std::uint64_t batch_in_epoch = 0;
};

/// Everything needed to resume training or to synthesize.
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  ModelConfig model;
  TrainConfig train;
  DspConfig dsp;
  PoolConfig pool;
  std::string vocabulary;  // symbol inventory, see Vocabulary
  NormStats norm;
  std::vector<std::string> speakers;  // lookup-table row order
  TensorMap parameters;
  TensorMap buffers;
  AdamState adam;
  TrainingProgress progress;
};

/// "MIMICKPT", u32 version, u64 length + UTF-8 JSON configuration, u32
/// tensor count, per tensor (u32 name length, name, u32 rank, u64 dims,
/// float64 values), u32 CRC-32 of all preceding bytes.
std::vector<char> serialize_checkpoint(const Checkpoint& checkpoint);
/// Throws VersionError for a newer format and IntegrityError for truncated
/// or corrupted data.
Checkpoint deserialize_checkpoint(const std::vector<char>& bytes);
void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Rebuilds the network stored in a checkpoint.
std::unique_ptr<VoiceModel> restore_model(const Checkpoint& checkpoint);

/// Inputs of the epoch loop. `pool` is required in embedder mode and unused
/// in lookup mode, where `speakers` lists the table rows.
struct TrainingData {
  const CorpusManifest* manifest = nullptr;
  Vocabulary vocab;
  FeatureSource features;
  const SamplePool* pool = nullptr;
  NormStats norm;
  std::vector<std::string> speakers;
};

/// One line of the training log.
struct StepRecord {
  std::uint64_t step = 0;  // 1-based count of completed updates
  double wall_s = 0.0;
  StepResult result;
  std::vector<std::string> utterance_ids;
};

/// Tab-separated log columns and one formatted row.
std::string training_log_header();
std::string format_training_log_line(const StepRecord& record);

class Trainer {
 public:
  /// Fresh parameters initialized from `train.seed`.
  Trainer(const ModelConfig& model, const TrainConfig& train);
  /// Continues from a checkpoint: parameters, optimizer state and progress.
  explicit Trainer(const Checkpoint& checkpoint);

  VoiceModel& model() { return *model_; }
  const VoiceModel& model() const { return *model_; }
  const TrainConfig& config() const { return config_; }
  const AdamState& adam() const { return adam_; }
  const TrainingProgress& progress() const { return progress_; }

  using StepCallback = std::function<void(const StepRecord&)>;
  using CheckpointCallback = std::function<void(const Trainer&)>;

  /// Runs the seeded epoch schedule until `progress().step == until_step`.
  /// Batches left with fewer than two items after reference skipping are
  /// passed over in embedder mode (batch statistics need two). Calls
  /// `on_checkpoint` whenever the step count reaches a multiple of
  /// `checkpoint_interval`. Throws ConfigError on an empty train split.
  void fit(const TrainingData& data, std::uint64_t until_step, const StepCallback& on_step = {},
           const CheckpointCallback& on_checkpoint = {});

  /// Copies parameters, buffers, optimizer state, progress and both configs
  /// into `into`, leaving its data fields (dsp, vocabulary, stats) alone.
  void export_state(Checkpoint& into) const;

 private:
  TrainConfig config_;
  std::unique_ptr<VoiceModel> model_;
  AdamState adam_;
  TrainingProgress progress_;
};

}  // namespace mimic
