#pragma once

// Analyses of trained speaker representations: principal components,
// per-window embeddings, a forced-choice speaker discrimination proxy and
// side-by-side exports of generated and ground-truth spectrograms.

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mimic/batch.hpp"
#include "mimic/sample_pool.hpp"
#include "mimic/synthesis.hpp"

namespace mimic {

/// n x dim embedding matrix, one speaker label per row.
struct EmbeddingSet {
  std::size_t dim = 0;
  std::vector<double> rows;  // row-major [size() x dim]
  std::vector<std::string> labels;
  std::map<std::string, std::string> gender;  // optional, per speaker

  std::size_t size() const { return labels.size(); }
  std::span<const double> row(std::size_t i) const { return {rows.data() + i * dim, dim}; }
  void add(const std::string& label, std::span<const double> values);
  /// Throws DimensionError on inconsistent sizes, NumericError on non-finite values.
  void validate() const;
};

struct PcaResult {
  std::size_t k = 0;
  std::size_t dim = 0;
  std::vector<double> mean;                // [dim]
  std::vector<double> components;          // [k x dim], orthonormal rows
  std::vector<double> projections;         // [n x k] of the centered rows
  std::vector<double> explained_variance;  // [k], non-increasing
};

/// Principal components from the eigendecomposition of the sample
/// covariance (n - 1 denominator). Each component's largest-magnitude entry
/// is made positive. Throws ConfigError unless n >= 2 and 1 <= k <= min(n, dim),
/// and InputError when the data has no variance.
PcaResult pca(const EmbeddingSet& set, std::size_t k);

/// Embeds every pool window in inference mode (one row per window, speakers
/// in pool order). A lookup-mode checkpoint yields its table rows instead, one per
/// trained speaker.
EmbeddingSet embed_corpus(const Synthesizer& synthesizer, const SamplePool& pool);

/// Attention weights of one utterance, [steps x length] row-major.
struct AlignmentGrid {
  std::vector<double> values;
  std::size_t steps = 0;
  std::size_t length = 0;
};

/// Teacher-forced decoding of one utterance against its own (raw log)
/// features in inference mode.
AlignmentGrid teacher_forced_alignment(const Synthesizer& synthesizer, const std::string& transcript,
                                       const UtteranceFeatures& features, const Tensor& embedding);

/// Largest share of the total attention mass collected by a path that picks
/// one text position per decoder step and never moves backwards.
double monotonic_alignment_fraction(const AlignmentGrid& alignment);

enum class Distance { kCosine, kEuclidean };
Distance distance_from_string(const std::string& name);
const char* to_string(Distance distance);

struct DiscriminabilityResult {
  std::size_t trials = 0;
  double correct = 0.0;  // ties count half
  double accuracy = 0.0;
};

/// Forced-choice trials: an anchor row, another row of the same speaker and
/// a row of a different speaker; the trial is correct when the same-speaker
/// row is closer to the anchor. Speakers are enumerated in order of first
/// appearance, so relabelling leaves the draws unchanged. Throws ConfigError
/// with fewer than two speakers or a speaker with fewer than two rows.
DiscriminabilityResult discriminability(const EmbeddingSet& set, std::size_t trials, std::mt19937_64& rng,
                                        Distance distance = Distance::kCosine);

/// Files of a comparison bundle, by role.
struct ComparisonBundle {
  std::filesystem::path directory;
  std::map<std::string, std::filesystem::path> files;  // gen_mel, gen_linear, gt_mel, gt_linear, alignment, audio, manifest
  SynthesisResult synthesis;
};

/// Synthesizes `text` with `embedding` and writes CSV grids (one row per
/// frame or decoder step) for the generated spectrograms, the ground truth
/// when given, the alignment, the waveform and a JSON manifest.
ComparisonBundle export_comparison(const Synthesizer& synthesizer, const std::string& text, const Tensor& embedding,
                                   const UtteranceFeatures* ground_truth, const std::filesystem::path& directory,
                                   std::uint64_t seed = 0);

/// Row-major CSV grid, one line per row, no header.
void write_csv_grid(const std::filesystem::path& path, std::span<const double> values, std::size_t rows,
                    std::size_t cols);
/// speaker_id,gender,pc1,...,pck
void write_projections_csv(const std::filesystem::path& path, const EmbeddingSet& set, const PcaResult& result);

}  // namespace mimic
