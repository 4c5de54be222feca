#include "mimic/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "mimic/error.hpp"
#include "mimic/text.hpp"

namespace mimic {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

std::string strip_p(const std::string& id) {
  return id.size() > 1 && (id[0] == 'p' || id[0] == 'P') ? id.substr(1) : id;
}

}  // namespace

std::vector<std::string> CorpusManifest::speakers() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& u : utterances) {
    if (seen.insert(u.speaker_id).second) out.push_back(u.speaker_id);
  }
  return out;
}

std::vector<std::string> CorpusManifest::speakers(Split which) const {
  std::vector<std::string> out;
  for (const auto& s : speakers()) {
    const auto it = split.find(s);
    if (it != split.end() && it->second == which) out.push_back(s);
  }
  return out;
}

std::vector<std::size_t> CorpusManifest::indices(Split which) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    const auto it = split.find(utterances[i].speaker_id);
    if (it != split.end() && it->second == which) out.push_back(i);
  }
  return out;
}

const Utterance& CorpusManifest::find(const std::string& utterance_id) const {
  for (const auto& u : utterances) {
    if (u.id == utterance_id) return u;
  }
  throw DataError("no utterance '" + utterance_id + "' in manifest");
}

CorpusManifest read_manifest(const std::filesystem::path& path, std::vector<ManifestRejection>* rejected) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read manifest '" + path.string() + "'");
  const std::filesystem::path base = path.parent_path();
  CorpusManifest manifest;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty()) {
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": expected 3 tab-separated fields (audio_path, speaker_id, transcript)");
    }
    Utterance u;
    try {
      u.transcript = normalize_text(fields[2]);
    } catch (const DataError& e) {
      if (rejected) rejected->push_back({line_no, e.what()});
      continue;
    }
    u.audio_path = std::filesystem::path(fields[0]);
    if (u.audio_path.is_relative()) u.audio_path = base / u.audio_path;
    u.speaker_id = fields[1];
    u.id = u.speaker_id + "/" + u.audio_path.stem().string();
    for (int n = 2; !ids.insert(u.id).second; ++n) {
      u.id = u.speaker_id + "/" + u.audio_path.stem().string() + "#" + std::to_string(n);
    }
    manifest.split.emplace(u.speaker_id, Split::kTrain);
    manifest.utterances.push_back(std::move(u));
  }
  return manifest;
}

void write_manifest(const std::filesystem::path& path, const CorpusManifest& manifest) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write manifest '" + path.string() + "'");
  for (const auto& u : manifest.utterances) {
    out << u.audio_path.string() << '\t' << u.speaker_id << '\t' << u.transcript << '\n';
  }
}

const std::vector<std::string>& default_held_out_speakers() {
  static const std::vector<std::string> ids = {"225", "226", "243", "244", "262",
                                               "263", "302", "303", "360", "361"};
  return ids;
}

CorpusManifest split_speakers(CorpusManifest manifest, const std::vector<std::string>& held_out) {
  for (auto& [speaker, split] : manifest.split) split = Split::kTrain;
  for (const auto& id : held_out) {
    bool found = false;
    for (auto& [speaker, split] : manifest.split) {
      if (speaker == id || strip_p(speaker) == strip_p(id)) {
        split = Split::kTest;
        found = true;
      }
    }
    if (!found) throw ConfigError("held-out speaker '" + id + "' does not occur in the corpus");
  }
  return manifest;
}

}  // namespace mimic
