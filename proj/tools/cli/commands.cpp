#include "commands.hpp"

#include <algorithm>
#include <atomic>
#include <boost/crc.hpp>
#include <cstdio>
#include <fstream>
#include <future>
#include <iostream>
#include <limits>
#include <map>
#include <mutex>
#include <nlohmann/json.hpp>
#include <sstream>
#include <thread>

#include "mimic/audio.hpp"
#include "mimic/error.hpp"
#include "mimic/rng.hpp"
#include "mimic/synthesis.hpp"
#include "mimic/vad.hpp"

namespace mimic::cli {

namespace {

using nlohmann::json;

std::string hex(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

std::uint32_t crc_of(const std::string& data) {
  boost::crc_32_type crc;
  crc.process_bytes(data.data(), data.size());
  return crc.checksum();
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read '" + path.string() + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw InputError("cannot write '" + path.string() + "'");
}

std::string dsp_section(const RunConfig& config) {
  RunConfig only;
  only.dsp = config.dsp;
  const std::string ini = only.to_ini();
  return ini.substr(0, ini.find("[data]"));
}

fs::path feature_base(const fs::path& dir, const std::string& id) { return dir / "features" / id; }

struct CacheEntry {
  std::string hash;
  NormStats range;
  std::size_t frames = 0;
};

std::map<std::string, CacheEntry> read_cache(const fs::path& path) {
  std::map<std::string, CacheEntry> cache;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream f(line);
    std::string id;
    CacheEntry e;
    if (std::getline(f, id, '\t') && f >> e.hash >> e.range.mel_min >> e.range.mel_max >> e.range.linear_min >>
                                         e.range.linear_max >> e.frames) {
      cache[id] = e;
    }
  }
  return cache;
}

NormStats range_of(const UtteranceFeatures& f) {
  const auto [mlo, mhi] = std::minmax_element(f.mel.values.begin(), f.mel.values.end());
  const auto [llo, lhi] = std::minmax_element(f.linear.values.begin(), f.linear.values.end());
  return {*mlo, *mhi, *llo, *lhi};
}

Waveform trimmed_audio(const Utterance& u, const DspConfig& dsp) {
  return trim_silence(load_audio(u.audio_path, dsp.sample_rate), dsp.vad);
}

struct ItemResult {
  std::optional<CacheEntry> entry;
  bool computed = false;
  std::string error;
};

}  // namespace

// ---- preprocess -----------------------------------------------------------------

PreprocessReport cmd_preprocess(const RunConfig& config, const PreprocessOptions& options) {
  config.validate();
  const DspConfig& dsp = config.dsp;
  std::vector<ManifestRejection> rejected;
  CorpusManifest manifest = read_manifest(options.manifest, &rejected);
  fs::create_directories(options.out / "features");
  config.write(options.out / "config.ini");

  PreprocessReport report;
  report.total = manifest.utterances.size() + rejected.size();
  for (const auto& r : rejected) report.skipped.emplace_back("line " + std::to_string(r.line), r.reason);

  const fs::path cache_path = options.out / "features" / "index.tsv";
  const auto cache = read_cache(cache_path);
  const std::string settings = dsp_section(config);

  std::vector<ItemResult> results(manifest.utterances.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < manifest.utterances.size(); i = next++) {
      const Utterance& u = manifest.utterances[i];
      ItemResult& out = results[i];
      try {
        const std::string hash = hex(crc_of(read_text(u.audio_path) + settings));
        const fs::path base = feature_base(options.out, u.id);
        const auto hit = cache.find(u.id);
        if (hit != cache.end() && hit->second.hash == hash && fs::exists(base.string() + ".mel") &&
            fs::exists(base.string() + ".lin")) {
          out.entry = hit->second;
          continue;
        }
        const UtteranceFeatures f = extract_features(trimmed_audio(u, dsp), dsp);
        fs::create_directories(base.parent_path());
        save_spectrogram(base.string() + ".mel", f.mel);
        save_spectrogram(base.string() + ".lin", f.linear);
        out.entry = CacheEntry{hash, range_of(f), f.mel.n_frames};
        out.computed = true;
      } catch (const Error& e) {
        out.error = e.what();
      }
    }
  };
  const std::size_t n_threads =
      std::max<std::size_t>(1, options.threads ? options.threads : std::thread::hardware_concurrency());
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < std::min(n_threads, manifest.utterances.size()); ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();

  CorpusManifest processed;
  std::ostringstream index;
  // Round-trip precision: a reused cache must reproduce the stats of a fresh run.
  index.precision(std::numeric_limits<double>::max_digits10);
  bool first = true;
  std::ostringstream pool_settings;
  pool_settings.precision(std::numeric_limits<double>::max_digits10);
  pool_settings << "window_s=" << config.data.pool.window_s << " overlap=" << config.data.pool.overlap << "\n";
  std::string pool_key = settings + pool_settings.str();
  for (std::size_t i = 0; i < manifest.utterances.size(); ++i) {
    const Utterance& u = manifest.utterances[i];
    const ItemResult& r = results[i];
    if (!r.entry) {
      report.skipped.emplace_back(u.id, r.error);
      continue;
    }
    r.computed ? ++report.computed : ++report.reused;
    const NormStats& g = r.entry->range;
    if (first) {
      report.stats = g;
      first = false;
    } else {
      report.stats.mel_min = std::min(report.stats.mel_min, g.mel_min);
      report.stats.mel_max = std::max(report.stats.mel_max, g.mel_max);
      report.stats.linear_min = std::min(report.stats.linear_min, g.linear_min);
      report.stats.linear_max = std::max(report.stats.linear_max, g.linear_max);
    }
    index << u.id << '\t' << r.entry->hash << '\t' << g.mel_min << '\t' << g.mel_max << '\t' << g.linear_min << '\t'
          << g.linear_max << '\t' << r.entry->frames << '\n';
    pool_key += u.id + "=" + r.entry->hash + "\n";
    Utterance kept = u;
    kept.audio_path = fs::absolute(u.audio_path).lexically_normal();
    processed.utterances.push_back(kept);
    processed.split.emplace(u.speaker_id, Split::kTrain);
  }
  write_text(cache_path, index.str());
  write_manifest(options.out / "manifest.tsv", processed);
  {
    std::ofstream skipped(options.out / "skipped.tsv");
    for (const auto& [id, reason] : report.skipped) skipped << id << '\t' << reason << '\n';
  }

  const double failed = static_cast<double>(report.skipped.size());
  if (report.total == 0 || processed.utterances.empty() ||
      failed > config.data.max_failure_fraction * static_cast<double>(report.total)) {
    throw DataError("preprocess: " + std::to_string(report.skipped.size()) + " of " + std::to_string(report.total) +
                    " utterances failed (see skipped.tsv)");
  }

  json stats = {{"mel_min", report.stats.mel_min},
                {"mel_max", report.stats.mel_max},
                {"linear_min", report.stats.linear_min},
                {"linear_max", report.stats.linear_max},
                {"utterances", processed.utterances.size()}};
  write_text(options.out / "stats.json", stats.dump(2) + "\n");

  const fs::path pool_dir = options.out / "pool";
  const std::string key = hex(crc_of(pool_key));
  const fs::path key_path = pool_dir / "key.txt";
  if (!fs::exists(key_path) || read_text(key_path) != key) {
    fs::remove_all(pool_dir);
    const SamplePool pool = build_sample_pool(
        processed, [&](const Utterance& u) { return trimmed_audio(u, dsp); }, dsp, config.data.pool);
    save_sample_pool(pool_dir, pool);
    write_text(key_path, key);
    report.pool_rebuilt = true;
  }

  json summary = {{"total", report.total},
                  {"computed", report.computed},
                  {"reused", report.reused},
                  {"skipped", report.skipped.size()},
                  {"pool_rebuilt", report.pool_rebuilt}};
  write_text(options.out / "preprocess_report.json", summary.dump(2) + "\n");
  return report;
}

// ---- feature store ----------------------------------------------------------------

FeatureStore FeatureStore::open(const fs::path& dir) {
  FeatureStore s;
  s.dir = dir;
  if (!fs::exists(dir / "manifest.tsv") || !fs::exists(dir / "stats.json")) {
    throw InputError("'" + dir.string() + "' is not a preprocessed feature directory");
  }
  s.manifest = read_manifest(dir / "manifest.tsv");
  try {
    const json stats = json::parse(read_text(dir / "stats.json"));
    s.stats = {stats.at("mel_min").get<double>(), stats.at("mel_max").get<double>(),
               stats.at("linear_min").get<double>(), stats.at("linear_max").get<double>()};
  } catch (const json::exception& e) {
    throw DataError("stats.json: " + std::string(e.what()));
  }
  RunConfig used;
  used.load_file(dir / "config.ini");
  s.dsp = used.dsp;
  s.pool_config = used.data.pool;
  return s;
}

FeatureSource FeatureStore::features() const {
  struct Cache {
    std::mutex mutex;
    std::map<std::string, UtteranceFeatures> items;
  };
  auto cache = std::make_shared<Cache>();
  const fs::path root = dir;
  return [cache, root](const Utterance& u) {
    std::lock_guard lock(cache->mutex);
    auto it = cache->items.find(u.id);
    if (it == cache->items.end()) {
      const fs::path base = feature_base(root, u.id);
      it = cache->items
               .emplace(u.id, UtteranceFeatures{load_spectrogram(base.string() + ".mel"),
                                                load_spectrogram(base.string() + ".lin")})
               .first;
    }
    return it->second;
  };
}

SamplePool FeatureStore::pool() const { return load_sample_pool(dir / "pool"); }

Vocabulary FeatureStore::vocabulary() const {
  std::vector<std::string> texts;
  for (const auto& u : manifest.utterances) texts.push_back(u.transcript);
  return Vocabulary::build(texts);
}

const Utterance& FeatureStore::utterance(const std::string& id) const {
  for (const auto& u : manifest.utterances) {
    if (u.id == id) return u;
  }
  throw ConfigError("utterance '" + id + "' is not in the feature directory");
}

// ---- train ------------------------------------------------------------------------

RunConfig config_of(const Checkpoint& checkpoint) {
  RunConfig c;
  c.dsp = checkpoint.dsp;
  c.data.pool = checkpoint.pool;
  c.model = checkpoint.model;
  c.train = checkpoint.train;
  return c;
}

namespace {

std::string step_name(std::uint64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%08llu.ckpt", static_cast<unsigned long long>(step));
  return buf;
}

// Keeps the header and the rows up to `step`.
void truncate_log(const fs::path& path, std::uint64_t step) {
  std::ifstream in(path);
  std::string line, kept;
  std::getline(in, line);
  kept = training_log_header() + "\n";
  while (std::getline(in, line)) {
    if (std::stoull(line.substr(0, line.find('\t'))) > step) break;
    kept += line + "\n";
  }
  in.close();
  write_text(path, kept);
}

}  // namespace

TrainReport cmd_train(const RunConfig& config, const TrainOptions& options) {
  config.validate();
  const FeatureStore store = FeatureStore::open(options.features);
  if (store.dsp.n_mels != config.dsp.n_mels || store.dsp.n_bins() != config.dsp.n_bins() ||
      store.dsp.frame_shift_s != config.dsp.frame_shift_s || store.dsp.sample_rate != config.dsp.sample_rate) {
    throw ConfigError("dsp settings differ from those the features were computed with");
  }
  const bool embedder = config.train.conditioning == Conditioning::kEmbedder;
  // The lookup baseline trains on every speaker.
  const CorpusManifest manifest =
      split_speakers(store.manifest, embedder ? config.data.held_out : std::vector<std::string>{});
  const Vocabulary vocab = store.vocabulary();
  const std::vector<std::string> speakers = manifest.speakers(Split::kTrain);

  Checkpoint base;
  base.dsp = store.dsp;
  base.pool = store.pool_config;
  base.vocabulary = vocab.symbols();
  base.norm = store.stats;
  base.speakers = embedder ? std::vector<std::string>{} : speakers;

  std::unique_ptr<Trainer> trainer;
  if (options.resume) {
    Checkpoint ck = load_checkpoint(options.resume->string());
    if (ck.train.conditioning != config.train.conditioning) {
      throw ConfigError(std::string("cannot resume a ") + to_string(ck.train.conditioning) + " checkpoint in " +
                        to_string(config.train.conditioning) + " mode");
    }
    if (ck.vocabulary != base.vocabulary || ck.speakers != base.speakers) {
      throw ConfigError("checkpoint vocabulary or speaker list differs from the feature directory");
    }
    ck.train.max_steps = config.train.max_steps;
    ck.train.checkpoint_interval = config.train.checkpoint_interval;
    trainer = std::make_unique<Trainer>(ck);
  } else {
    trainer = std::make_unique<Trainer>(resolve_model(config, vocab.size(), speakers.size()), config.train);
  }

  fs::create_directories(options.out / "checkpoints");
  config_of([&] {
    Checkpoint c = base;
    trainer->export_state(c);
    return c;
  }()).write(options.out / "config.ini");

  TrainReport report;
  report.log = options.out / "train_log.tsv";
  if (options.resume && fs::exists(report.log)) {
    truncate_log(report.log, trainer->progress().step);
  } else {
    write_text(report.log, training_log_header() + "\n");
  }
  std::ofstream log(report.log, std::ios::app);

  TrainingData data;
  data.manifest = &manifest;
  data.vocab = vocab;
  data.features = store.features();
  const SamplePool pool = embedder ? store.pool() : SamplePool{};
  data.pool = embedder ? &pool : nullptr;
  data.norm = store.stats;
  data.speakers = base.speakers;

  auto save = [&](const Trainer& t, const fs::path& path) {
    Checkpoint c = base;
    t.export_state(c);
    save_checkpoint(c, path.string());
  };
  const std::uint64_t until = options.until_step.value_or(trainer->config().max_steps);
  trainer->fit(
      data, until,
      [&](const StepRecord& r) {
        log << format_training_log_line(r) << '\n' << std::flush;
        if (options.on_step) options.on_step(r);
      },
      [&](const Trainer& t) {
        const fs::path path = options.out / "checkpoints" / step_name(t.progress().step);
        save(t, path);
        report.checkpoints.push_back(path);
      });
  report.final_checkpoint = options.out / "final.ckpt";
  save(*trainer, report.final_checkpoint);
  report.steps = trainer->progress().step;
  return report;
}

// ---- synthesize -----------------------------------------------------------------

ComparisonBundle cmd_synthesize(const SynthesizeOptions& options) {
  if (options.reference.has_value() == options.speaker.has_value()) {
    throw ConfigError("give exactly one of --ref or --speaker");
  }
  const Synthesizer synth(load_checkpoint(options.checkpoint.string()));
  const bool embedder = synth.checkpoint().model.conditioning == Conditioning::kEmbedder;
  if (options.speaker && embedder) throw ConfigError("--speaker needs a lookup-mode checkpoint; use --ref");
  if (options.reference && !embedder) throw ConfigError("--ref needs an embedder-mode checkpoint; use --speaker");

  const Tensor embedding = options.reference
                               ? synth.embed_reference(load_audio(*options.reference, synth.checkpoint().dsp.sample_rate))
                               : synth.speaker_embedding(*options.speaker);
  ComparisonBundle bundle = export_comparison(synth, options.text, embedding, nullptr, options.out, options.seed);
  config_of(synth.checkpoint()).write(options.out / "config.ini");
  return bundle;
}

// ---- embed and eval ------------------------------------------------------------

EmbeddingSet cmd_embed(const EmbedOptions& options) {
  const Synthesizer synth(load_checkpoint(options.checkpoint.string()));
  const FeatureStore store = FeatureStore::open(options.features);
  const EmbeddingSet set = embed_corpus(synth, store.pool());
  fs::create_directories(options.out);
  std::ofstream out(options.out / "embeddings.csv");
  out << "speaker_id";
  for (std::size_t j = 0; j < set.dim; ++j) out << ",e" << j + 1;
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i < set.size(); ++i) {
    out << set.labels[i];
    for (double v : set.row(i)) {
      std::snprintf(buf, sizeof buf, "%.9g", v);
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw InputError("cannot write embeddings.csv");
  config_of(synth.checkpoint()).write(options.out / "config.ini");
  return set;
}

namespace {

std::map<std::string, std::string> read_speaker_info(const fs::path& path) {
  std::map<std::string, std::string> genders;
  std::ifstream in(path);
  if (!in) throw InputError("cannot read speaker info '" + path.string() + "'");
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError("speaker info: expected speaker<TAB>gender, got '" + line + "'");
    genders[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return genders;
}

}  // namespace

EvalReport cmd_eval(const RunConfig& config, const EvalOptions& options) {
  config.validate();
  const Synthesizer synth(load_checkpoint(options.checkpoint.string()));
  const FeatureStore store = FeatureStore::open(options.features);
  fs::create_directories(options.out);
  RunConfig echo = config_of(synth.checkpoint());
  echo.eval = config.eval;
  echo.write(options.out / "config.ini");

  EvalReport report;
  if (options.analysis == EvalAnalysis::kCompare) {
    const Utterance& u = store.utterance(options.utterance);
    Tensor embedding;
    if (synth.checkpoint().model.conditioning == Conditioning::kEmbedder) {
      auto rng = derive_rng(config.eval.seed, rng_stream::kTrials, 0);
      const Spectrogram ref = draw_reference(store.pool(), u.speaker_id, u.id, rng);
      embedding = synth.embed_features(normalize(ref, synth.checkpoint().norm.mel_min, synth.checkpoint().norm.mel_max));
    } else {
      embedding = synth.speaker_embedding(u.speaker_id);
    }
    const UtteranceFeatures truth = store.features()(u);
    const ComparisonBundle bundle =
        export_comparison(synth, options.text.value_or(u.transcript), embedding, &truth, options.out, config.eval.seed);
    for (const auto& [role, path] : bundle.files) report.files.push_back(path);
    const AlignmentGrid forced = teacher_forced_alignment(synth, u.transcript, truth, embedding);
    const fs::path forced_csv = options.out / "teacher_forced_alignment.csv";
    write_csv_grid(forced_csv, forced.values, forced.steps, forced.length);
    report.files.push_back(forced_csv);
    report.monotonic_fraction = monotonic_alignment_fraction(forced);
    json summary = {{"utterance", u.id}, {"monotonic_fraction", *report.monotonic_fraction}};
    write_text(options.out / "alignment.json", summary.dump(2) + "\n");
    report.files.push_back(options.out / "alignment.json");
    return report;
  }

  EmbeddingSet set = embed_corpus(synth, store.pool());
  if (options.speaker_info) set.gender = read_speaker_info(*options.speaker_info);

  if (options.analysis == EvalAnalysis::kPca) {
    const PcaResult result = pca(set, std::min(config.eval.pca_components, std::min(set.size(), set.dim)));
    const fs::path csv = options.out / "projections.csv";
    write_projections_csv(csv, set, result);
    json summary = {{"rows", set.size()}, {"dim", set.dim}, {"explained_variance", result.explained_variance}};
    write_text(options.out / "pca.json", summary.dump(2) + "\n");
    report.files = {csv, options.out / "pca.json"};
    report.pca = result;
  } else {
    auto rng = derive_rng(config.eval.seed, rng_stream::kTrials, 0);
    const DiscriminabilityResult r =
        discriminability(set, config.eval.trials, rng, distance_from_string(config.eval.distance));
    json summary = {{"trials", r.trials},
                    {"accuracy", r.accuracy},
                    {"correct", r.correct},
                    {"seed", config.eval.seed},
                    {"distance", config.eval.distance},
                    {"rows", set.size()}};
    write_text(options.out / "discriminability.json", summary.dump(2) + "\n");
    report.files = {options.out / "discriminability.json"};
    report.discriminability = r;
  }
  return report;
}

}  // namespace mimic::cli
