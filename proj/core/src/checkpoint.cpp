#include <cstring>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "binary_io.hpp"
#include "mimic/error.hpp"
#include "mimic/train.hpp"

namespace mimic {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'M', 'I', 'M', 'I', 'C', 'K', 'P', 'T'};

json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size},
          {"char_embed_dim", c.char_embed_dim},
          {"prenet_dims", c.prenet_dims},
          {"encoder_dim", c.encoder_dim},
          {"encoder_conv_layers", c.encoder_conv_layers},
          {"decoder_dim", c.decoder_dim},
          {"attention_dim", c.attention_dim},
          {"embedding_dim", c.embedding_dim},
          {"r", c.r},
          {"n_mels", c.n_mels},
          {"n_linear_bins", c.n_linear_bins},
          {"postnet_channels", c.postnet_channels},
          {"max_decoder_steps", c.max_decoder_steps},
          {"stop_threshold", c.stop_threshold},
          {"stop_patience", c.stop_patience},
          {"prenet_dropout", c.prenet_dropout},
          {"conditioning", to_string(c.conditioning)},
          {"n_speakers", c.n_speakers},
          {"lookup_init_stddev", c.lookup_init_stddev},
          {"condition_attention_rnn", c.condition_attention_rnn},
          {"condition_decoder_rnn", c.condition_decoder_rnn},
          {"embedder_channels", c.embedder_channels},
          {"embedder_kernel", c.embedder_kernel},
          {"embedder_strides", c.embedder_strides},
          {"embedder_hidden", c.embedder_hidden},
          {"embedder_dense_layers", c.embedder_dense_layers},
          {"embedder_dropout", c.embedder_dropout}};
}

ModelConfig model_from_json(const json& j) {
  ModelConfig c;
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("char_embed_dim").get_to(c.char_embed_dim);
  j.at("prenet_dims").get_to(c.prenet_dims);
  j.at("encoder_dim").get_to(c.encoder_dim);
  j.at("encoder_conv_layers").get_to(c.encoder_conv_layers);
  j.at("decoder_dim").get_to(c.decoder_dim);
  j.at("attention_dim").get_to(c.attention_dim);
  j.at("embedding_dim").get_to(c.embedding_dim);
  j.at("r").get_to(c.r);
  j.at("n_mels").get_to(c.n_mels);
  j.at("n_linear_bins").get_to(c.n_linear_bins);
  j.at("postnet_channels").get_to(c.postnet_channels);
  j.at("max_decoder_steps").get_to(c.max_decoder_steps);
  j.at("stop_threshold").get_to(c.stop_threshold);
  j.at("stop_patience").get_to(c.stop_patience);
  j.at("prenet_dropout").get_to(c.prenet_dropout);
  c.conditioning = conditioning_from_string(j.at("conditioning").get<std::string>());
  j.at("n_speakers").get_to(c.n_speakers);
  j.at("lookup_init_stddev").get_to(c.lookup_init_stddev);
  j.at("condition_attention_rnn").get_to(c.condition_attention_rnn);
  j.at("condition_decoder_rnn").get_to(c.condition_decoder_rnn);
  j.at("embedder_channels").get_to(c.embedder_channels);
  j.at("embedder_kernel").get_to(c.embedder_kernel);
  j.at("embedder_strides").get_to(c.embedder_strides);
  j.at("embedder_hidden").get_to(c.embedder_hidden);
  j.at("embedder_dense_layers").get_to(c.embedder_dense_layers);
  j.at("embedder_dropout").get_to(c.embedder_dropout);
  return c;
}

json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"lr", c.lr},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon},
          {"clip_threshold", c.clip_threshold},
          {"tbptt_segment_steps", c.tbptt_segment_steps},
          {"max_steps", c.max_steps},
          {"checkpoint_interval", c.checkpoint_interval},
          {"seed", c.seed},
          {"conditioning", to_string(c.conditioning)}};
}

TrainConfig train_from_json(const json& j) {
  TrainConfig c;
  j.at("batch_size").get_to(c.batch_size);
  j.at("lr").get_to(c.lr);
  j.at("beta1").get_to(c.beta1);
  j.at("beta2").get_to(c.beta2);
  j.at("epsilon").get_to(c.epsilon);
  j.at("clip_threshold").get_to(c.clip_threshold);
  j.at("tbptt_segment_steps").get_to(c.tbptt_segment_steps);
  j.at("max_steps").get_to(c.max_steps);
  j.at("checkpoint_interval").get_to(c.checkpoint_interval);
  j.at("seed").get_to(c.seed);
  c.conditioning = conditioning_from_string(j.at("conditioning").get<std::string>());
  return c;
}

json to_json(const DspConfig& c) {
  return {{"sample_rate", c.sample_rate},
          {"frame_length_s", c.frame_length_s},
          {"frame_shift_s", c.frame_shift_s},
          {"n_fft", c.n_fft},
          {"n_mels", c.n_mels},
          {"log_floor", c.log_floor},
          {"padding", c.padding == FramePadding::kSame ? "same" : "none"},
          {"griffin_lim_iters", c.griffin_lim_iters},
          {"griffin_lim_power", c.griffin_lim_power},
          {"vad",
           {{"subframe_s", c.vad.subframe_s},
            {"absolute_floor", c.vad.absolute_floor},
            {"relative_threshold", c.vad.relative_threshold},
            {"hangover_s", c.vad.hangover_s}}}};
}

DspConfig dsp_from_json(const json& j) {
  DspConfig c;
  j.at("sample_rate").get_to(c.sample_rate);
  j.at("frame_length_s").get_to(c.frame_length_s);
  j.at("frame_shift_s").get_to(c.frame_shift_s);
  j.at("n_fft").get_to(c.n_fft);
  j.at("n_mels").get_to(c.n_mels);
  j.at("log_floor").get_to(c.log_floor);
  const std::string padding = j.at("padding").get<std::string>();
  if (padding != "same" && padding != "none") throw IntegrityError("checkpoint: unknown padding '" + padding + "'");
  c.padding = padding == "same" ? FramePadding::kSame : FramePadding::kNone;
  j.at("griffin_lim_iters").get_to(c.griffin_lim_iters);
  j.at("griffin_lim_power").get_to(c.griffin_lim_power);
  const json& v = j.at("vad");
  v.at("subframe_s").get_to(c.vad.subframe_s);
  v.at("absolute_floor").get_to(c.vad.absolute_floor);
  v.at("relative_threshold").get_to(c.vad.relative_threshold);
  v.at("hangover_s").get_to(c.vad.hangover_s);
  return c;
}

void put_tensor(io::Writer& w, const std::string& name, const Tensor& t) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
  w.put_bytes(name);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) w.put<std::uint64_t>(d);
  const auto values = t.data();
  w.put_array(values.data(), values.size());
}

std::uint32_t crc_of(const char* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks.
  constexpr std::size_t kChunk = 1u << 30;
  for (std::size_t pos = 0; pos < size; pos += kChunk) {
    const std::size_t n = std::min(kChunk, size - pos);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data + pos), static_cast<uInt>(n));
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<char> serialize_checkpoint(const Checkpoint& c) {
  json doc = {{"model", to_json(c.model)},
              {"train", to_json(c.train)},
              {"dsp", to_json(c.dsp)},
              {"pool", {{"window_s", c.pool.window_s}, {"overlap", c.pool.overlap}}},
              {"vocabulary", c.vocabulary},
              {"norm",
               {{"mel_min", c.norm.mel_min},
                {"mel_max", c.norm.mel_max},
                {"linear_min", c.norm.linear_min},
                {"linear_max", c.norm.linear_max}}},
              {"speakers", c.speakers},
              {"adam_step_count", c.adam.step_count},
              {"progress",
               {{"step", c.progress.step}, {"epoch", c.progress.epoch}, {"batch_in_epoch", c.progress.batch_in_epoch}}}};
  const std::string text = doc.dump();

  io::Writer w;
  w.put_bytes(std::string_view(kMagic, sizeof kMagic));
  w.put<std::uint32_t>(Checkpoint::kFormatVersion);
  w.put<std::uint64_t>(text.size());
  w.put_bytes(text);

  const std::pair<const char*, const TensorMap*> sections[] = {{"param:", &c.parameters},
                                                               {"buffer:", &c.buffers},
                                                               {"adam_m:", &c.adam.first_moment},
                                                               {"adam_v:", &c.adam.second_moment}};
  std::size_t count = 0;
  for (const auto& [prefix, map] : sections) count += map->size();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(count));
  for (const auto& [prefix, map] : sections) {
    for (const auto& [name, t] : *map) put_tensor(w, prefix + name, t);
  }
  w.put<std::uint32_t>(crc_of(w.bytes().data(), w.bytes().size()));
  return std::move(w.bytes());
}

Checkpoint deserialize_checkpoint(const std::vector<char>& bytes) {
  const std::string ctx = "checkpoint";
  if (bytes.size() < sizeof kMagic + 4 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw IntegrityError(ctx + ": not a checkpoint file");
  }
  std::uint32_t version = 0;
  std::memcpy(&version, bytes.data() + sizeof kMagic, sizeof version);
  if (version > Checkpoint::kFormatVersion) {
    throw VersionError(ctx + ": format version " + std::to_string(version) + " is newer than supported version " +
                       std::to_string(Checkpoint::kFormatVersion));
  }
  if (version == 0) throw IntegrityError(ctx + ": invalid format version 0");
  if (bytes.size() < sizeof kMagic + 8) throw IntegrityError(ctx + ": truncated");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored = 0;
  std::memcpy(&stored, bytes.data() + body, sizeof stored);
  if (crc_of(bytes.data(), body) != stored) throw IntegrityError(ctx + ": checksum mismatch (truncated or corrupted)");

  io::Reader r(bytes.data(), body, ctx);
  r.get_bytes(sizeof kMagic);
  r.get<std::uint32_t>();
  const auto text_size = r.get<std::uint64_t>();
  if (text_size > r.remaining()) throw IntegrityError(ctx + ": configuration length exceeds file");
  Checkpoint c;
  try {
    const json doc = json::parse(r.get_bytes(text_size));
    c.model = model_from_json(doc.at("model"));
    c.train = train_from_json(doc.at("train"));
    c.dsp = dsp_from_json(doc.at("dsp"));
    doc.at("pool").at("window_s").get_to(c.pool.window_s);
    doc.at("pool").at("overlap").get_to(c.pool.overlap);
    doc.at("vocabulary").get_to(c.vocabulary);
    const json& n = doc.at("norm");
    n.at("mel_min").get_to(c.norm.mel_min);
    n.at("mel_max").get_to(c.norm.mel_max);
    n.at("linear_min").get_to(c.norm.linear_min);
    n.at("linear_max").get_to(c.norm.linear_max);
    doc.at("speakers").get_to(c.speakers);
    doc.at("adam_step_count").get_to(c.adam.step_count);
    const json& p = doc.at("progress");
    p.at("step").get_to(c.progress.step);
    p.at("epoch").get_to(c.progress.epoch);
    p.at("batch_in_epoch").get_to(c.progress.batch_in_epoch);
  } catch (const json::exception& e) {
    throw IntegrityError(ctx + ": malformed configuration: " + e.what());
  } catch (const ConfigError& e) {
    throw IntegrityError(ctx + ": malformed configuration: " + e.what());
  }

  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string full = r.get_bytes(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    const std::size_t n = shape_numel(shape);
    if (n > r.remaining() / sizeof(double)) throw IntegrityError(ctx + ": tensor '" + full + "' exceeds file");
    std::vector<double> values(n);
    r.get_array(values.data(), n);
    const auto colon = full.find(':');
    if (colon == std::string::npos) throw IntegrityError(ctx + ": unprefixed tensor '" + full + "'");
    const std::string prefix = full.substr(0, colon + 1), name = full.substr(colon + 1);
    TensorMap* target = prefix == "param:"    ? &c.parameters
                        : prefix == "buffer:" ? &c.buffers
                        : prefix == "adam_m:" ? &c.adam.first_moment
                        : prefix == "adam_v:" ? &c.adam.second_moment
                                              : nullptr;
    if (!target) throw IntegrityError(ctx + ": unknown tensor section '" + prefix + "'");
    (*target)[name] = Tensor::from(std::move(shape), std::move(values));
  }
  if (r.remaining() != 0) throw IntegrityError(ctx + ": trailing bytes after tensors");
  return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
  io::write_file(path, serialize_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(io::read_file(path)); }

}  // namespace mimic
