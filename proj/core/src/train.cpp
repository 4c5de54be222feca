#include "mimic/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <string_view>

#include "mimic/error.hpp"
#include "mimic/rng.hpp"

namespace mimic {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be a finite value >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("train.beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train.beta2 must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("train.epsilon must be positive");
  if (!(clip_threshold > 0.0)) throw ConfigError("train.clip_threshold must be positive");
  if (tbptt_segment_steps == 0) throw ConfigError("train.tbptt_segment_steps must be positive");
  if (max_steps == 0) throw ConfigError("train.max_steps must be positive");
  if (checkpoint_interval == 0) throw ConfigError("train.checkpoint_interval must be positive");
}

namespace {

double mask_count(const Tensor& mask) {
  double n = 0.0;
  for (double v : mask.data()) n += v;
  return n;
}

std::string format_norms(const std::vector<double>& norms) {
  std::ostringstream out;
  out << "[";
  for (std::size_t i = 0; i < norms.size(); ++i) out << (i ? ", " : "") << norms[i];
  out << "]";
  return out.str();
}

}  // namespace

StepResult train_step(VoiceModel& model, const Batch& batch, const std::vector<std::size_t>& speaker_rows,
                      AdamState& adam, const TrainConfig& config, std::mt19937_64& rng) {
  const ModelConfig& mc = model.config();
  if (batch.size() == 0) throw ContractError("train_step: empty batch");
  if (batch.frames == 0 || batch.frames % mc.r != 0) {
    throw ContractError("train_step: batch frames must be a positive multiple of r");
  }
  if (mc.conditioning == Conditioning::kLookup && speaker_rows.size() != batch.size()) {
    throw ContractError("train_step: lookup mode needs one speaker row per item");
  }
  if (mc.conditioning == Conditioning::kEmbedder && !batch.reference.defined()) {
    throw ContractError("train_step: embedder mode needs reference spectrograms");
  }

  const std::size_t B = batch.size();
  const std::size_t total_steps = batch.frames / mc.r;
  const std::size_t seg = config.tbptt_segment_steps;
  const AdamConfig adam_config = config.adam();
  const TensorMap& params = model.store().parameters();
  TensorMap leaves = params;

  StepResult result;
  double weight = 0.0;
  std::vector<double> norms;
  DecoderState state = model.initial_state(B);

  for (std::size_t first = 0; first < total_steps; first += seg) {
    const std::size_t count = std::min(seg, total_steps - first);
    const std::size_t f0 = first * mc.r, f1 = (first + count) * mc.r;
    const Tensor mask = slice(batch.frame_mask, 1, f0, f1);
    const double valid = mask_count(mask);
    if (valid == 0.0) continue;

    try {
      const nn::Mode mode = nn::Mode::train(rng);
      const Tensor speaker = mc.conditioning == Conditioning::kEmbedder
                                 ? model.embed(batch.reference, batch.reference_frames, mode)
                                 : model.lookup(speaker_rows);
      const Memory memory = model.encode(batch.text_ids, B, batch.text_length, batch.text_lengths, mode);
      const Tensor inputs = model.teacher_inputs(batch.mel, first, count);
      DecoderOutput out = model.decode(memory, speaker, inputs, state, mode);
      const Tensor linear = model.postprocess(out.mel, mode);
      const LossTerms loss = spectrogram_loss(out.mel, slice(batch.mel, 1, f0, f1), linear,
                                              slice(batch.linear, 1, f0, f1), mask);

      const double total = loss.total.item();
      if (!std::isfinite(total)) {
        throw NumericError("train_step: non-finite loss in segment " + std::to_string(result.segments) +
                           ", grad norms so far " + format_norms(norms));
      }
      const TensorMap grads = backward(loss.total, leaves);
      const double norm = global_norm(grads);
      norms.push_back(norm);
      if (!std::isfinite(norm)) {
        throw NumericError("train_step: non-finite gradient in segment " + std::to_string(result.segments) +
                           ", grad norms " + format_norms(norms));
      }
      const TensorMap clipped = clip_global_norm(grads, config.clip_threshold);
      result.grad_norm = std::max(result.grad_norm, norm);
      result.clipped_norm = std::max(result.clipped_norm, global_norm(clipped));
      adam_step(leaves, clipped, adam, adam_config);

      result.loss_mel += loss.mel.item() * valid;
      result.loss_linear += loss.linear.item() * valid;
      weight += valid;
      ++result.segments;
      state = out.state.detached();
    } catch (const NumericError& e) {
      if (std::string_view(e.what()).starts_with("train_step:")) throw;
      throw NumericError("train_step: " + std::string(e.what()) + " in segment " +
                         std::to_string(result.segments) + ", grad norms so far " + format_norms(norms));
    }
  }
  if (weight == 0.0) throw ContractError("train_step: batch has no valid frames");
  result.loss_mel /= weight;
  result.loss_linear /= weight;
  result.loss = result.loss_mel + result.loss_linear;
  return result;
}

std::string training_log_header() { return "step\twall_s\tloss_mel\tloss_linear\tgrad_norm"; }

std::string format_training_log_line(const StepRecord& record) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%llu\t%.3f\t%.17g\t%.17g\t%.17g", static_cast<unsigned long long>(record.step),
                record.wall_s, record.result.loss_mel, record.result.loss_linear, record.result.grad_norm);
  return buf;
}

std::unique_ptr<VoiceModel> restore_model(const Checkpoint& checkpoint) {
  auto model = std::make_unique<VoiceModel>(checkpoint.model, checkpoint.train.seed);
  model->store().assign(checkpoint.parameters, checkpoint.buffers);
  return model;
}

Trainer::Trainer(const ModelConfig& model, const TrainConfig& train) : config_(train) {
  config_.validate();
  if (model.conditioning != train.conditioning) {
    throw ConfigError("conditioning mode differs between model and train settings");
  }
  model_ = std::make_unique<VoiceModel>(model, config_.seed);
}

Trainer::Trainer(const Checkpoint& checkpoint)
    : config_(checkpoint.train), model_(restore_model(checkpoint)), adam_(checkpoint.adam),
      progress_(checkpoint.progress) {
  config_.validate();
  // The checkpoint's moments must not alias the live optimizer state.
  for (auto* moments : {&adam_.first_moment, &adam_.second_moment}) {
    for (auto& [name, t] : *moments) t = t.clone();
  }
}

void Trainer::export_state(Checkpoint& into) const {
  into.model = model_->config();
  into.train = config_;
  into.parameters.clear();
  into.buffers.clear();
  for (const auto& [name, t] : model_->store().parameters()) into.parameters[name] = t.clone();
  for (const auto& [name, t] : model_->store().buffers()) into.buffers[name] = t.clone();
  into.adam.step_count = adam_.step_count;
  into.adam.first_moment.clear();
  into.adam.second_moment.clear();
  for (const auto& [name, t] : adam_.first_moment) into.adam.first_moment[name] = t.clone();
  for (const auto& [name, t] : adam_.second_moment) into.adam.second_moment[name] = t.clone();
  into.progress = progress_;
}

void Trainer::fit(const TrainingData& data, std::uint64_t until_step, const StepCallback& on_step,
                  const CheckpointCallback& on_checkpoint) {
  if (!data.manifest) throw ContractError("fit: no manifest");
  const CorpusManifest& manifest = *data.manifest;
  if (manifest.indices(Split::kTrain).empty()) throw ConfigError("fit: the train split is empty");
  const bool embedder = config_.conditioning == Conditioning::kEmbedder;
  if (embedder && !data.pool) throw ConfigError("fit: embedder mode needs a sample pool");
  const SamplePool* pool = embedder ? data.pool : nullptr;

  std::map<std::string, std::size_t> rows;
  if (!embedder) {
    if (data.speakers.size() != model_->config().n_speakers) {
      throw ConfigError("fit: speaker list does not match the lookup table size");
    }
    for (std::size_t i = 0; i < data.speakers.size(); ++i) rows[data.speakers[i]] = i;
  }

  const auto start = std::chrono::steady_clock::now();
  std::size_t idle_epochs = 0;
  while (progress_.step < until_step) {
    const auto plan = plan_epoch(manifest, config_.batch_size, config_.seed, progress_.epoch);
    bool trained = false;
    while (progress_.batch_in_epoch < plan.size() && progress_.step < until_step) {
      const auto& items = plan[progress_.batch_in_epoch];
      auto rng = derive_rng(config_.seed, rng_stream::kStep, progress_.step);
      const Batch batch = make_batch(items, manifest, data.vocab, data.features, pool, data.norm,
                                     model_->config().r, rng);
      ++progress_.batch_in_epoch;
      if (batch.size() == 0 || (embedder && batch.size() < 2)) continue;

      std::vector<std::size_t> speaker_rows;
      if (!embedder) {
        for (const auto& id : batch.speaker_ids) {
          const auto it = rows.find(id);
          if (it == rows.end()) throw ConfigError("fit: speaker '" + id + "' has no lookup row");
          speaker_rows.push_back(it->second);
        }
      }
      StepRecord record;
      record.result = train_step(*model_, batch, speaker_rows, adam_, config_, rng);
      ++progress_.step;
      trained = true;
      record.step = progress_.step;
      record.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      record.utterance_ids = batch.utterance_ids;
      if (on_step) on_step(record);
      if (on_checkpoint && progress_.step % config_.checkpoint_interval == 0) on_checkpoint(*this);
    }
    if (progress_.batch_in_epoch >= plan.size()) {
      ++progress_.epoch;
      progress_.batch_in_epoch = 0;
    }
    idle_epochs = trained ? 0 : idle_epochs + 1;
    if (idle_epochs > 1) throw DataError("fit: no usable batch in a full epoch (references or batch size)");
  }
}

}  // namespace mimic
