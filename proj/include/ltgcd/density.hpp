#pragma once

#include <vector>

#include "ltgcd/knn.hpp"

namespace ltgcd {

enum class DensityMode { kConnectivityAffinity, kAffinityOnly };

struct DensityMap {
  std::vector<double> densities;
  DensityMode mode = DensityMode::kConnectivityAffinity;
  std::size_t k = 0;
};

/// Which member of an overlapping pair NMDS discards.
enum class NmdsRule {
  /// Discard the lower-density member (keeps local maxima).
  kKeepMaximum,
  /// Discard the higher-density member. Kept for A/B comparison only.
  kLiteral,
};

struct PeakCandidate {
  SampleId id;
  double density;
};

struct PeakSet {
  /// Retained ids, density descending (ties: lower id first).
  IdList peak_ids;
  std::vector<double> densities;
  std::size_t k_s = 0;
  double lambda_nmds = 0.0;
};

/// 2 <p_i, p_j> - 1.
double connectivity(std::span<const double> p_i, std::span<const double> p_j);

/// Mean over the k neighbors of e_ij * a_ij (or a_ij alone in affinity-only
/// mode). `probs` may be null in affinity-only mode.
DensityMap compute_density(const KnnGraph& graph, const ProbMatrix* probs, DensityMode mode);
DensityMap compute_density_serial(const KnnGraph& graph, const ProbMatrix* probs,
                                  DensityMode mode);

/// Samples whose density is >= (or > when `strict`) that of all k neighbors,
/// in ascending id order.
IdList find_peaks(const DensityMap& density, const KnnGraph& graph, bool strict = false);

/// Sorted k_s-nearest-neighbor sets used by IoUK.
class NeighborSets {
 public:
  NeighborSets(const KnnGraph& graph, std::size_t k_s);

  std::size_t size() const { return n_; }
  std::size_t k_s() const { return k_s_; }
  std::span<const std::uint32_t> of(SampleId i) const { return {ids_.data() + i * k_s_, k_s_}; }

 private:
  std::size_t n_;
  std::size_t k_s_;
  std::vector<std::uint32_t> ids_;
};

/// |N_i ∩ N_j| / |N_i ∪ N_j| over the k_s-NN sets.
double iouk(SampleId i, SampleId j, const NeighborSets& sets);
/// Convenience form that builds the k_s-NN graph first.
double iouk(SampleId i, SampleId j, const EmbeddingSet& embeddings, std::size_t k_s);

/// Non-maximum density suppression. A candidate is dropped iff another
/// candidate whose k_s-neighborhood overlaps it by more than `lambda_nmds`
/// dominates it (higher density, or equal density and lower id).
PeakSet nmds(std::span<const PeakCandidate> candidates, const NeighborSets& sets,
             double lambda_nmds, NmdsRule rule = NmdsRule::kKeepMaximum);
PeakSet nmds_serial(std::span<const PeakCandidate> candidates, const NeighborSets& sets,
                    double lambda_nmds, NmdsRule rule = NmdsRule::kKeepMaximum);

/// Pairs every id with its density.
std::vector<PeakCandidate> as_candidates(std::span<const SampleId> ids, const DensityMap& density);

}  // namespace ltgcd
