#pragma once

#include <optional>
#include <vector>

#include "ltgcd/density.hpp"

namespace ltgcd {

struct SelectionConfig {
  double eps_conf = 0.8;
  std::size_t k = 10;
  std::size_t k_s = 30;
  double lambda_nmds = 0.6;
  bool use_confidence = true;
  bool use_density = true;
  /// false skips NMDS: every unlabelled density peak is kept.
  bool use_nmds = true;
  NmdsRule nmds_rule = NmdsRule::kKeepMaximum;
  DensityMode density_mode = DensityMode::kConnectivityAffinity;
  /// Softmax over pseudo-label frequencies (true) or raw counts (false).
  bool normalize_prior_counts = true;
  /// Per-class confidence thresholds scaled by pseudo-label frequency.
  std::optional<double> crest_power;

  void validate() const;
};

struct SelectionResult {
  std::size_t epoch = 0;
  IdList conf_ids;
  IdList dens_ids;
  IdList union_ids;
  std::vector<double> prior;
  /// The union was empty and the full unlabelled set was substituted.
  bool fallback = false;
};

/// Ids whose largest class probability reaches `eps_conf`. `ids` indexes rows of `probs`.
IdList select_confident(const ProbMatrix& probs, std::span<const SampleId> ids, double eps_conf);

/// Same, with a per-class threshold applied to each sample's arg-max class.
IdList select_confident(const ProbMatrix& probs, std::span<const SampleId> ids,
                        std::span<const double> class_thresholds);

/// base_eps * (count_k / max_count)^power for every class.
std::vector<double> crest_thresholds(double base_eps, std::span<const std::size_t> pseudo_counts,
                                     double power);

/// Precomputed neighborhoods over a frozen embedding set.
struct SelectionContext {
  KnnGraph density_graph;
  NeighborSets iou_sets;

  SelectionContext(const EmbeddingSet& embeddings, std::size_t k, std::size_t k_s);
  /// `full` must hold at least max(k, k_s) neighbors per row.
  SelectionContext(const KnnGraph& full, std::size_t k, std::size_t k_s);
};

/// Unlabelled density peaks after NMDS, ordered by density (descending).
/// `probs` may be null in affinity-only mode.
IdList select_density(const SelectionContext& context, const ProbMatrix* probs,
                      std::span<const SampleId> unlabelled, const SelectionConfig& config);

/// Convenience form that builds the neighborhoods first.
IdList select_density(const EmbeddingSet& embeddings, const ProbMatrix* probs,
                      std::span<const SampleId> unlabelled, const SelectionConfig& config);

/// Sorted, deduplicated union.
IdList combine(std::span<const SampleId> conf_ids, std::span<const SampleId> dens_ids);

/// Arg-max class of a probability row (ties: lower class).
std::size_t pseudo_label(std::span<const double> p);

/// softmax of per-class pseudo-label counts (or frequencies) over `selected`.
std::vector<double> prior_distribution(const ProbMatrix& probs, std::span<const SampleId> selected,
                                       std::size_t classes, bool normalize_counts = true);

/// One end-of-epoch selection round over the unlabelled samples.
SelectionResult resample_epoch(const SelectionContext& context, const ProbMatrix& probs,
                               std::span<const SampleId> unlabelled, const SelectionConfig& config,
                               std::size_t epoch);

}  // namespace ltgcd
