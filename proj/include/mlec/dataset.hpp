#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mlec {

struct DatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Ordered label identifiers; position j is label j of every label vector.
class LabelVocab {
 public:
  explicit LabelVocab(std::vector<std::string> names);

  /// The eleven summarized error labels, in their canonical order.
  static LabelVocab canonical();

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(std::size_t j) const { return names_.at(j); }
  std::optional<std::size_t> index_of(const std::string& name) const;

  bool operator==(const LabelVocab&) const = default;

 private:
  std::vector<std::string> names_;
};

using LabelVector = std::vector<std::uint8_t>;

struct LabeledSample {
  std::string code;
  LabelVector labels;
};

struct Dataset {
  std::vector<LabeledSample> samples;
  LabelVocab vocab = LabelVocab::canonical();

  std::size_t size() const { return samples.size(); }
  /// Positive count per label.
  std::vector<std::size_t> label_counts() const;
};

struct SplitConfig {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Reads line-delimited records {"code": str, "labels": [str, ...]}. A record
/// without a label list (absent or null) gets the all-zero vector.
Dataset load_dataset(const std::filesystem::path& path, const LabelVocab& vocab);
/// Writes records in the format load_dataset reads.
void save_dataset(const std::filesystem::path& path, const Dataset& dataset);
std::string to_record_line(const LabeledSample& sample, const LabelVocab& vocab);

/// Strips comments, trailing whitespace, surrounding blank lines and imports
/// whose bound name is never used; indentation and case are preserved.
std::string clean_code(const std::string& source);

/// Cleans every sample's code.
Dataset clean_dataset(Dataset dataset);

/// Drops samples with empty code and, unless allowed, samples with no label.
/// Throws DatasetError if nothing remains.
Dataset drop_invalid(Dataset dataset, bool allow_zero_labels);

/// Iterative multi-label stratification (rarest label first). The train side
/// receives exactly round(train_fraction * N) samples.
SplitIndices stratified_split_indices(const Dataset& dataset, const SplitConfig& cfg);
std::pair<Dataset, Dataset> stratified_split(const Dataset& dataset, const SplitConfig& cfg);
Dataset subset(const Dataset& dataset, const std::vector<std::size_t>& indices);

struct SyntheticConfig {
  /// Mean labels per sample when label_prevalence is empty (count drawn as
  /// 1 + Binomial(L - 1, (avg - 1) / (L - 1))).
  double avg_labels = 3.0;
  /// Optional independent per-label presence probabilities.
  std::vector<double> label_prevalence;
  std::size_t min_filler_lines = 2;
  std::size_t max_filler_lines = 5;
  /// Chance of a comment line or an unused import appearing, so cleaning has work to do.
  double noise_probability = 0.3;
};

/// Marker identifier planted in the code of every sample carrying label j.
std::string marker_token(const LabelVocab& vocab, std::size_t j);

Dataset generate_synthetic(std::size_t n, const LabelVocab& vocab, std::uint64_t seed,
                           const SyntheticConfig& cfg = {});

/// Index batches in order, or in seeded shuffled order; the last may be short.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                   std::optional<std::uint64_t> shuffle_seed = std::nullopt);
inline std::vector<std::vector<std::size_t>> make_batches(const Dataset& dataset, std::size_t batch_size,
                                                          std::optional<std::uint64_t> shuffle_seed = std::nullopt) {
  return make_batches(dataset.size(), batch_size, shuffle_seed);
}

}  // namespace mlec
