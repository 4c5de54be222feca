#include "run_config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "mimic/error.hpp"
#include "mimic/eval.hpp"

namespace mimic::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(v)) out.push_back(parse_size(key, item));
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
std::string join(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_same_v<T, std::string>) {
      out += values[i];
    } else {
      out += std::to_string(values[i]);
    }
  }
  return out;
}

struct Key {
  const char* section;
  const char* name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string& qualified, const std::string&)> set;
};

#define MIMIC_SIZE(sec, name, field)                                                   \
  Key {                                                                                \
    sec, name, [](const RunConfig& c) { return std::to_string(c.field); },             \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_size(k, v); } \
  }
#define MIMIC_DOUBLE(sec, name, field)                                                 \
  Key {                                                                                \
    sec, name, [](const RunConfig& c) { return fmt(c.field); },                        \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_double(k, v); } \
  }
#define MIMIC_BOOL(sec, name, field)                                                   \
  Key {                                                                                \
    sec, name, [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); }, \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_bool(k, v); } \
  }
#define MIMIC_SIZES(sec, name, field)                                                  \
  Key {                                                                                \
    sec, name, [](const RunConfig& c) { return join(c.field); },                       \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_sizes(k, v); } \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      Key{"dsp", "sample_rate", [](const RunConfig& c) { return std::to_string(c.dsp.sample_rate); },
          [](RunConfig& c, const std::string& k, const std::string& v) {
            c.dsp.sample_rate = static_cast<int>(parse_size(k, v));
          }},
      MIMIC_DOUBLE("dsp", "frame_length_s", dsp.frame_length_s),
      MIMIC_DOUBLE("dsp", "frame_shift_s", dsp.frame_shift_s),
      MIMIC_SIZE("dsp", "n_fft", dsp.n_fft),
      MIMIC_SIZE("dsp", "n_mels", dsp.n_mels),
      MIMIC_DOUBLE("dsp", "log_floor", dsp.log_floor),
      Key{"dsp", "padding",
          [](const RunConfig& c) { return std::string(c.dsp.padding == FramePadding::kSame ? "same" : "none"); },
          [](RunConfig& c, const std::string& k, const std::string& v) {
            if (v != "same" && v != "none") throw ConfigError(k + ": expected same or none, got '" + v + "'");
            c.dsp.padding = v == "same" ? FramePadding::kSame : FramePadding::kNone;
          }},
      MIMIC_SIZE("dsp", "griffin_lim_iters", dsp.griffin_lim_iters),
      MIMIC_DOUBLE("dsp", "griffin_lim_power", dsp.griffin_lim_power),
      MIMIC_DOUBLE("dsp", "vad_subframe_s", dsp.vad.subframe_s),
      MIMIC_DOUBLE("dsp", "vad_absolute_floor", dsp.vad.absolute_floor),
      MIMIC_DOUBLE("dsp", "vad_relative_threshold", dsp.vad.relative_threshold),
      MIMIC_DOUBLE("dsp", "vad_hangover_s", dsp.vad.hangover_s),

      MIMIC_DOUBLE("data", "window_s", data.pool.window_s),
      MIMIC_DOUBLE("data", "overlap", data.pool.overlap),
      Key{"data", "held_out", [](const RunConfig& c) { return c.data.held_out.empty() ? "none" : join(c.data.held_out); },
          [](RunConfig& c, const std::string&, const std::string& v) {
            if (v == "default") {
              c.data.held_out = default_held_out_speakers();
            } else if (v == "none" || v.empty()) {
              c.data.held_out.clear();
            } else {
              c.data.held_out = split_list(v);
            }
          }},
      MIMIC_DOUBLE("data", "max_failure_fraction", data.max_failure_fraction),

      MIMIC_SIZE("model", "char_embed_dim", model.char_embed_dim),
      MIMIC_SIZES("model", "prenet_dims", model.prenet_dims),
      MIMIC_SIZE("model", "encoder_dim", model.encoder_dim),
      MIMIC_SIZE("model", "encoder_conv_layers", model.encoder_conv_layers),
      MIMIC_SIZE("model", "decoder_dim", model.decoder_dim),
      MIMIC_SIZE("model", "attention_dim", model.attention_dim),
      MIMIC_SIZE("model", "embedding_dim", model.embedding_dim),
      MIMIC_SIZE("model", "r", model.r),
      MIMIC_SIZE("model", "postnet_channels", model.postnet_channels),
      MIMIC_SIZE("model", "max_decoder_steps", model.max_decoder_steps),
      MIMIC_DOUBLE("model", "stop_threshold", model.stop_threshold),
      MIMIC_SIZE("model", "stop_patience", model.stop_patience),
      MIMIC_DOUBLE("model", "prenet_dropout", model.prenet_dropout),
      MIMIC_DOUBLE("model", "lookup_init_stddev", model.lookup_init_stddev),
      MIMIC_BOOL("model", "condition_attention_rnn", model.condition_attention_rnn),
      MIMIC_BOOL("model", "condition_decoder_rnn", model.condition_decoder_rnn),
      MIMIC_SIZE("model", "embedder_channels", model.embedder_channels),
      MIMIC_SIZE("model", "embedder_kernel", model.embedder_kernel),
      MIMIC_SIZES("model", "embedder_strides", model.embedder_strides),
      MIMIC_SIZE("model", "embedder_hidden", model.embedder_hidden),
      MIMIC_SIZE("model", "embedder_dense_layers", model.embedder_dense_layers),
      MIMIC_DOUBLE("model", "embedder_dropout", model.embedder_dropout),

      Key{"train", "mode", [](const RunConfig& c) { return std::string(to_string(c.train.conditioning)); },
          [](RunConfig& c, const std::string&, const std::string& v) {
            c.train.conditioning = conditioning_from_string(v);
          }},
      MIMIC_SIZE("train", "batch_size", train.batch_size),
      MIMIC_DOUBLE("train", "lr", train.lr),
      MIMIC_DOUBLE("train", "beta1", train.beta1),
      MIMIC_DOUBLE("train", "beta2", train.beta2),
      MIMIC_DOUBLE("train", "epsilon", train.epsilon),
      MIMIC_DOUBLE("train", "clip_threshold", train.clip_threshold),
      MIMIC_SIZE("train", "tbptt_segment_steps", train.tbptt_segment_steps),
      MIMIC_SIZE("train", "max_steps", train.max_steps),
      MIMIC_SIZE("train", "checkpoint_interval", train.checkpoint_interval),
      Key{"train", "seed", [](const RunConfig& c) { return std::to_string(c.train.seed); },
          [](RunConfig& c, const std::string& k, const std::string& v) { c.train.seed = parse_u64(k, v); }},

      MIMIC_SIZE("eval", "trials", eval.trials),
      Key{"eval", "distance", [](const RunConfig& c) { return c.eval.distance; },
          [](RunConfig& c, const std::string&, const std::string& v) {
            (void)distance_from_string(v);
            c.eval.distance = v;
          }},
      MIMIC_SIZE("eval", "pca_components", eval.pca_components),
      Key{"eval", "seed", [](const RunConfig& c) { return std::to_string(c.eval.seed); },
          [](RunConfig& c, const std::string& k, const std::string& v) { c.eval.seed = parse_u64(k, v); }},
  };
  return table;
}

#undef MIMIC_SIZE
#undef MIMIC_DOUBLE
#undef MIMIC_BOOL
#undef MIMIC_SIZES

}  // namespace

void RunConfig::set(const std::string& section, const std::string& key, const std::string& value) {
  const std::string qualified = section + "." + key;
  for (const auto& k : keys()) {
    if (section == k.section && key == k.name) {
      k.set(*this, qualified, trim(value));
      return;
    }
  }
  throw ConfigError("unknown setting '" + qualified + "'");
}

void RunConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ConfigError("expected section.key=value, got '" + assignment + "'");
  }
  set(trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)), assignment.substr(eq + 1));
}

void RunConfig::load_file(const std::filesystem::path& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config file: " + std::string(e.what()));
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError(path.string() + ": setting '" + section + "' outside a section");
    for (const auto& [key, value] : body) set(section, key, value.data());
  }
}

std::string RunConfig::to_ini() const {
  std::ostringstream out;
  std::string section;
  for (const auto& k : keys()) {
    if (section != k.section) {
      if (!section.empty()) out << '\n';
      section = k.section;
      out << '[' << section << "]\n";
    }
    out << k.name << " = " << k.get(*this) << '\n';
  }
  return out.str();
}

void RunConfig::write(const std::filesystem::path& path) const {
  std::ofstream out(path);
  out << to_ini();
  if (!out) throw InputError("cannot write " + path.string());
}

void RunConfig::validate() const {
  dsp.validate();
  data.pool.validate();
  if (!(data.max_failure_fraction >= 0.0 && data.max_failure_fraction <= 1.0)) {
    throw ConfigError("data.max_failure_fraction must lie in [0, 1]");
  }
  train.validate();
  if (eval.trials == 0) throw ConfigError("eval.trials must be positive");
  if (eval.pca_components == 0) throw ConfigError("eval.pca_components must be positive");
}

ModelConfig resolve_model(const RunConfig& config, std::size_t vocab_size, std::size_t n_speakers) {
  ModelConfig m = config.model;
  m.vocab_size = vocab_size;
  m.n_mels = config.dsp.n_mels;
  m.n_linear_bins = config.dsp.n_bins();
  m.conditioning = config.train.conditioning;
  m.n_speakers = m.conditioning == Conditioning::kLookup ? n_speakers : 0;
  m.validate();
  return m;
}

}  // namespace mimic::cli
