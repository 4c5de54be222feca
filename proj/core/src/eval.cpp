#include "mimic/eval.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>

#include "mimic/error.hpp"

namespace mimic {

namespace fs = std::filesystem;

void EmbeddingSet::add(const std::string& label, std::span<const double> values) {
  if (labels.empty() && rows.empty()) dim = values.size();
  if (values.size() != dim) {
    throw DimensionError("EmbeddingSet: row of size " + std::to_string(values.size()) + ", expected " +
                         std::to_string(dim));
  }
  rows.insert(rows.end(), values.begin(), values.end());
  labels.push_back(label);
}

void EmbeddingSet::validate() const {
  if (rows.size() != labels.size() * dim) throw DimensionError("EmbeddingSet: labels do not match rows");
  for (double v : rows) {
    if (!std::isfinite(v)) throw NumericError("EmbeddingSet: non-finite value");
  }
}

PcaResult pca(const EmbeddingSet& set, std::size_t k) {
  set.validate();
  const std::size_t n = set.size(), d = set.dim;
  if (n < 2) throw ConfigError("pca: needs at least two rows");
  if (k == 0 || k > std::min(n, d)) {
    throw ConfigError("pca: k = " + std::to_string(k) + " must lie in [1, min(n, dim)] = [1, " +
                      std::to_string(std::min(n, d)) + "]");
  }
  using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const Matrix> x(set.rows.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Matrix centered = x.rowwise() - mean;
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  if (!(cov.trace() > 1e-300)) throw InputError("pca: data has zero variance");

  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("pca: eigendecomposition failed");

  PcaResult r;
  r.k = k;
  r.dim = d;
  r.mean.assign(mean.data(), mean.data() + d);
  r.components.resize(k * d);
  r.explained_variance.resize(k);
  // Eigenvalues come in ascending order.
  for (std::size_t c = 0; c < k; ++c) {
    const Eigen::Index col = static_cast<Eigen::Index>(d - 1 - c);
    Eigen::VectorXd v = solver.eigenvectors().col(col);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    std::copy(v.data(), v.data() + d, r.components.begin() + static_cast<std::ptrdiff_t>(c * d));
    r.explained_variance[c] = std::max(0.0, solver.eigenvalues()(col));
  }
  const Eigen::Map<const Matrix> comps(r.components.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d));
  const Matrix proj = centered * comps.transpose();
  r.projections.assign(proj.data(), proj.data() + n * k);
  return r;
}

EmbeddingSet embed_corpus(const Synthesizer& synthesizer, const SamplePool& pool) {
  const Checkpoint& ck = synthesizer.checkpoint();
  EmbeddingSet set;
  set.dim = ck.model.embedding_dim;
  if (ck.model.conditioning == Conditioning::kLookup) {
    for (const auto& speaker : ck.speakers) set.add(speaker, synthesizer.speaker_embedding(speaker).data());
    return set;
  }
  for (const auto& [speaker, windows] : pool.windows) {
    for (const auto& w : windows) {
      set.add(speaker, synthesizer.embed_features(normalize(w.load(), ck.norm.mel_min, ck.norm.mel_max)).data());
    }
  }
  return set;
}

AlignmentGrid teacher_forced_alignment(const Synthesizer& synthesizer, const std::string& transcript,
                                       const UtteranceFeatures& features, const Tensor& embedding) {
  CorpusManifest one;
  Utterance u;
  u.id = "item";
  u.speaker_id = "speaker";
  u.transcript = normalize_text(transcript);
  one.utterances.push_back(u);
  one.split[u.speaker_id] = Split::kTrain;
  const FeatureSource source = [&](const Utterance&) { return features; };
  std::mt19937_64 unused;
  const VoiceModel& model = synthesizer.model();
  const Batch batch = make_batch({0}, one, synthesizer.vocabulary(), source, nullptr, synthesizer.checkpoint().norm,
                                 model.config().r, unused);

  NoGradGuard no_grad;
  const nn::Mode mode = nn::Mode::infer();
  const Memory memory = model.encode(batch.text_ids, 1, batch.text_length, batch.text_lengths, mode);
  const std::size_t steps = batch.frames / model.config().r;
  const DecoderOutput out =
      model.decode(memory, embedding, model.teacher_inputs(batch.mel, 0, steps), model.initial_state(1), mode);
  return {out.alignments.to_vector(), steps, batch.text_length};
}

double monotonic_alignment_fraction(const AlignmentGrid& a) {
  if (a.steps == 0 || a.length == 0 || a.values.size() != a.steps * a.length) {
    throw DimensionError("monotonic_alignment_fraction: grid does not match its shape");
  }
  double total = 0.0;
  for (double v : a.values) total += v;
  if (!(total > 0.0)) throw InputError("monotonic_alignment_fraction: alignment has no mass");
  // best[j]: heaviest path so far that ends at or before position j.
  std::vector<double> best(a.length, 0.0);
  for (std::size_t t = 0; t < a.steps; ++t) {
    for (std::size_t j = 0; j < a.length; ++j) best[j] += a.values[t * a.length + j];
    for (std::size_t j = 1; j < a.length; ++j) best[j] = std::max(best[j], best[j - 1]);
  }
  return best.back() / total;
}

Distance distance_from_string(const std::string& name) {
  if (name == "cosine") return Distance::kCosine;
  if (name == "euclidean") return Distance::kEuclidean;
  throw ConfigError("unknown distance '" + name + "' (expected cosine or euclidean)");
}

const char* to_string(Distance distance) { return distance == Distance::kCosine ? "cosine" : "euclidean"; }

namespace {

double distance_between(std::span<const double> a, std::span<const double> b, Distance distance) {
  if (distance == Distance::kEuclidean) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(na * nb);
  return denom > 0.0 ? 1.0 - dot / denom : 1.0;
}

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace

DiscriminabilityResult discriminability(const EmbeddingSet& set, std::size_t trials, std::mt19937_64& rng,
                                        Distance distance) {
  set.validate();
  if (trials == 0) throw ConfigError("discriminability: trials must be positive");
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::size_t>> rows_of;
  for (std::size_t i = 0; i < set.size(); ++i) {
    auto& rows = rows_of[set.labels[i]];
    if (rows.empty()) order.push_back(set.labels[i]);
    rows.push_back(i);
  }
  if (order.size() < 2) throw ConfigError("discriminability: needs at least two speakers");
  for (const auto& s : order) {
    if (rows_of[s].size() < 2) throw ConfigError("discriminability: speaker '" + s + "' has fewer than two windows");
  }

  DiscriminabilityResult r;
  r.trials = trials;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t a = uniform_index(rng, order.size());
    std::size_t b = uniform_index(rng, order.size() - 1);
    if (b >= a) ++b;
    const auto& same = rows_of[order[a]];
    const auto& other = rows_of[order[b]];
    const std::size_t anchor = uniform_index(rng, same.size());
    std::size_t positive = uniform_index(rng, same.size() - 1);
    if (positive >= anchor) ++positive;
    const std::size_t negative = uniform_index(rng, other.size());
    const double dp = distance_between(set.row(same[anchor]), set.row(same[positive]), distance);
    const double dn = distance_between(set.row(same[anchor]), set.row(other[negative]), distance);
    r.correct += dp < dn ? 1.0 : dp == dn ? 0.5 : 0.0;
  }
  r.accuracy = r.correct / static_cast<double>(trials);
  return r;
}

void write_csv_grid(const fs::path& path, std::span<const double> values, std::size_t rows, std::size_t cols) {
  if (values.size() != rows * cols) throw DimensionError("write_csv_grid: values do not fill the grid");
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  char buf[32];
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      std::snprintf(buf, sizeof buf, "%.9g", values[i * cols + j]);
      if (j) out << ',';
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw InputError("failed writing " + path.string());
}

void write_projections_csv(const fs::path& path, const EmbeddingSet& set, const PcaResult& result) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "speaker_id,gender";
  for (std::size_t c = 0; c < result.k; ++c) out << ",pc" << c + 1;
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto g = set.gender.find(set.labels[i]);
    out << set.labels[i] << ',' << (g == set.gender.end() ? "" : g->second);
    for (std::size_t c = 0; c < result.k; ++c) {
      std::snprintf(buf, sizeof buf, "%.9g", result.projections[i * result.k + c]);
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw InputError("failed writing " + path.string());
}

ComparisonBundle export_comparison(const Synthesizer& synthesizer, const std::string& text, const Tensor& embedding,
                                   const UtteranceFeatures* ground_truth, const fs::path& directory,
                                   std::uint64_t seed) {
  ComparisonBundle bundle;
  bundle.synthesis = synthesizer.synthesize(text, embedding, seed);
  const SynthesisResult& s = bundle.synthesis;
  fs::create_directories(directory);
  bundle.directory = directory;

  nlohmann::json manifest = {{"text", text},
                             {"steps", s.steps},
                             {"text_length", s.text_length},
                             {"truncated", s.truncated},
                             {"seed", seed},
                             {"sample_rate", s.wave.sample_rate}};
  auto grid = [&](const std::string& role, const Spectrogram& spec) {
    const std::vector<double> values(spec.values.begin(), spec.values.end());
    const fs::path path = directory / (role + ".csv");
    write_csv_grid(path, values, spec.n_frames, spec.n_bins);
    bundle.files[role] = path;
    manifest["files"][role] = {{"path", path.filename().string()}, {"rows", spec.n_frames}, {"cols", spec.n_bins},
                               {"kind", to_string(spec.kind)}};
  };
  grid("gen_mel", s.mel);
  grid("gen_linear", s.linear);
  if (ground_truth) {
    grid("gt_mel", ground_truth->mel);
    grid("gt_linear", ground_truth->linear);
  }
  const fs::path align = directory / "alignment.csv";
  write_csv_grid(align, s.alignment, s.steps, s.text_length);
  bundle.files["alignment"] = align;
  manifest["files"]["alignment"] = {{"path", "alignment.csv"}, {"rows", s.steps}, {"cols", s.text_length}};

  const fs::path audio = directory / "audio.wav";
  save_wav(audio, s.wave);
  bundle.files["audio"] = audio;
  manifest["files"]["audio"] = {{"path", "audio.wav"}, {"samples", s.wave.samples.size()}};

  const fs::path manifest_path = directory / "manifest.json";
  bundle.files["manifest"] = manifest_path;
  std::ofstream out(manifest_path);
  out << manifest.dump(2) << '\n';
  if (!out) throw InputError("failed writing " + manifest_path.string());
  return bundle;
}

}  // namespace mimic
