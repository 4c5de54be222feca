#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace mimic {

struct Utterance {
  std::string id;  // "<speaker>/<file stem>", unique within a manifest
  std::filesystem::path audio_path;
  std::string transcript;  // normalized
  std::string speaker_id;
  double duration_s = 0.0;  // after silence trimming; 0 until known
};

enum class Split { kTrain, kTest };

struct CorpusManifest {
  std::vector<Utterance> utterances;
  std::map<std::string, Split> split;

  /// Speakers in order of first appearance.
  std::vector<std::string> speakers() const;
  std::vector<std::string> speakers(Split which) const;
  /// Indices of utterances whose speaker is in `which`.
  std::vector<std::size_t> indices(Split which) const;
  const Utterance& find(const std::string& utterance_id) const;
};

struct ManifestRejection {
  std::size_t line = 0;
  std::string reason;
};

/// Tab-separated records: audio_path, speaker_id, raw transcript. Relative
/// audio paths resolve against the manifest's directory. Records whose
/// transcript normalizes to nothing are dropped and reported; malformed lines
/// raise DataError. Every speaker starts in the train split.
CorpusManifest read_manifest(const std::filesystem::path& path, std::vector<ManifestRejection>* rejected = nullptr);

void write_manifest(const std::filesystem::path& path, const CorpusManifest& manifest);

/// The ten held-out speakers of the reference corpus.
const std::vector<std::string>& default_held_out_speakers();

/// Marks `held_out` speakers as test, everything else as train. Ids match
/// with or without a leading 'p' ("225" selects "p225"); unknown ids raise
/// ConfigError.
CorpusManifest split_speakers(CorpusManifest manifest, const std::vector<std::string>& held_out);

}  // namespace mimic
