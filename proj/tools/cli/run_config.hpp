#pragma once

// Effective settings of a command: built-in defaults, then the config file,
// then `--set section.key=value` overrides, then dedicated flags.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mimic/corpus.hpp"
#include "mimic/dsp_config.hpp"
#include "mimic/model.hpp"
#include "mimic/sample_pool.hpp"
#include "mimic/train.hpp"

namespace mimic::cli {

struct DataSettings {
  PoolConfig pool;
  std::vector<std::string> held_out = default_held_out_speakers();
  double max_failure_fraction = 0.1;
};

struct EvalSettings {
  std::size_t trials = 1000;
  std::string distance = "cosine";
  std::size_t pca_components = 2;
  std::uint64_t seed = 1;
};

struct RunConfig {
  DspConfig dsp;
  DataSettings data;
  ModelConfig model;
  TrainConfig train;
  EvalSettings eval;

  /// Reads an INI document ([dsp], [data], [model], [train], [eval]).
  /// Unknown sections or keys and malformed values raise ConfigError.
  void load_file(const std::filesystem::path& path);
  /// Applies one "section.key=value" assignment.
  void set(const std::string& assignment);
  void set(const std::string& section, const std::string& key, const std::string& value);
  /// Fully resolved settings in the same INI format.
  std::string to_ini() const;
  void write(const std::filesystem::path& path) const;
  /// Checks every section; throws ConfigError.
  void validate() const;
};

/// Model settings completed from the data: vocabulary size, feature sizes,
/// conditioning mode and lookup rows.
ModelConfig resolve_model(const RunConfig& config, std::size_t vocab_size, std::size_t n_speakers);

}  // namespace mimic::cli
