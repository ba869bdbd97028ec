#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "ltgcd/core.hpp"

namespace ltgcd {

inline constexpr int kUnlabelled = -1;

/// n x d feature matrix whose rows are unit L2 norm.
///
/// Construction normalizes every row and rejects zero or non-finite rows, so
/// downstream code can treat inner products as cosine similarities.
class EmbeddingSet {
 public:
  EmbeddingSet() = default;
  explicit EmbeddingSet(Matrix data);

  std::size_t size() const { return data_.rows; }
  std::size_t dim() const { return data_.cols; }
  std::span<const double> row(std::size_t i) const { return data_.row(i); }
  const Matrix& matrix() const { return data_; }

  /// Rows `ids` in order, as a new set.
  EmbeddingSet subset(std::span<const SampleId> ids) const;

 private:
  Matrix data_;
};

struct LabelInfo {
  /// Per-sample class id, or kUnlabelled.
  std::vector<int> labels;
  /// Sorted class ids that appear in the labelled split.
  std::vector<int> old_classes;
  /// Ground truth for evaluation only.
  std::optional<std::vector<int>> true_labels;

  std::size_t k_labelled() const { return old_classes.size(); }
  bool is_labelled(SampleId i) const { return labels[i] != kUnlabelled; }
  bool is_old_class(int c) const;
  IdList labelled_ids() const;
  IdList unlabelled_ids() const;

  /// Throws when the invariants tying labels, old_classes and true_labels fail.
  void validate(std::size_t n) const;
};

struct Dataset {
  EmbeddingSet embeddings;
  LabelInfo labels;
  /// Number of ground-truth classes when known (0 otherwise).
  std::size_t num_classes = 0;
};

/// Per-class sample counts, sorted descending.
struct ClassCounts {
  std::vector<std::size_t> counts;

  std::size_t total() const;
};

/// Counts the occurrences of each label id in `labels` (ids must be >= 0)
/// and returns the non-zero ones sorted descending.
ClassCounts count_classes(std::span<const int> labels);

/// N_1 / N_K of a descending count profile.
double imbalance_factor(const ClassCounts& counts);

struct SyntheticSpec {
  std::size_t classes = 10;
  std::size_t dim = 32;
  double imbalance = 1.0;
  std::size_t head_count = 100;
  std::uint64_t seed = 0;
  double spread = 0.08;
  /// Rejection bound on pairwise cosine between class means.
  double max_mean_cosine = 0.95;
};

/// Per-class sample counts of the geometric long-tail profile.
std::vector<std::size_t> long_tail_counts(std::size_t classes, double imbalance,
                                          std::size_t head_count);

/// Gaussian clusters on the unit sphere with a geometric long-tail class profile.
/// Class ids follow descending class size; every sample is unlabelled and the
/// ground truth is stored in `labels.true_labels`.
Dataset generate_synthetic(const SyntheticSpec& spec);

/// Marks the largest ceil(frac_old_classes * K) classes as old and labels a
/// frac_labelled share of each one (chosen by a seeded shuffle).
LabelInfo split_labelled(std::span<const int> true_labels, double frac_old_classes,
                         double frac_labelled, std::uint64_t seed);

/// Manifest-based on-disk format: JSON manifest, little-endian f32 matrix and
/// newline-delimited integer label files.
Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes `<stem>.json`, `<stem>.f32`, `<stem>.labels` and, when present,
/// `<stem>.truth` into `dir`. Returns the manifest path.
std::filesystem::path save_dataset(const Dataset& dataset, const std::filesystem::path& dir,
                                   const std::string& stem);

std::vector<int> read_label_file(const std::filesystem::path& path);
void write_label_file(const std::filesystem::path& path, std::span<const int> labels);

}  // namespace ltgcd
