#pragma once

#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "ltgcd/density.hpp"

namespace ltgcd {

/// How a candidate class count K turns the retained peaks into K clusters.
enum class PeakClustering {
  /// Single-linkage merging of all retained peaks down to K groups; samples
  /// join the group of their nearest peak.
  kMergedPeaks,
  /// The K densest retained peaks act as prototypes.
  kTopDensity,
};

struct EstimationConfig {
  std::size_t k = 10;
  std::size_t k_s = 30;
  double lambda_nmds = 0.6;
  bool strict_peaks = false;
  NmdsRule nmds_rule = NmdsRule::kKeepMaximum;
  PeakClustering clustering = PeakClustering::kMergedPeaks;
  /// Brent stops once the bracket is narrower than this many integers.
  double brent_tolerance = 1.0;
  /// Ranges narrower than this are scanned exhaustively instead.
  std::size_t exhaustive_cutoff = 50;

  void validate() const;
};

struct ProbePoint {
  std::size_t k = 0;
  double acc = 0.0;
  /// Similarity gap separating this K from its neighbors in the merge
  /// sequence (zero for top-density clustering). Breaks accuracy ties.
  double gap = 0.0;
};

/// Single-linkage merge order of a peak set (maximum-similarity spanning tree).
class PeakHierarchy {
 public:
  PeakHierarchy(const EmbeddingSet& embeddings, std::span<const SampleId> peaks);

  std::size_t size() const { return size_; }
  /// Group id in [0, k) for every peak after merging down to k groups.
  /// Groups are numbered by their densest member.
  std::vector<int> groups(std::size_t k) const;
  /// Similarity of the last merge performed minus that of the next one.
  double gap(std::size_t k) const;
  /// Merge similarities, descending.
  std::span<const double> merge_similarities() const { return merge_sims_; }

 private:
  struct Edge {
    double sim;
    std::size_t a;
    std::size_t b;
  };
  std::size_t size_;
  std::vector<Edge> edges_;
  std::vector<double> merge_sims_;
};

struct EstimationTimings {
  double graph_seconds = 0.0;
  /// Density, peaks and NMDS.
  double peaks_seconds = 0.0;
  /// Peak assignment and objective evaluation over all probes.
  double probe_seconds = 0.0;
};

struct EstimationReport {
  std::size_t k_hat = 0;
  std::size_t lower = 0;
  std::size_t upper = 0;
  bool exhaustive = false;
  std::vector<ProbePoint> probes;
  std::vector<int> assignments;
  PeakSet peaks;
  EstimationTimings timings;
};

/// (max(k_labelled, 1), max(|peaks|, k_labelled)).
std::pair<std::size_t, std::size_t> class_bounds(const PeakSet& peaks, std::size_t k_labelled);

/// Nearest-prototype assignment to the first `k` peaks (ties: lower prototype).
std::vector<int> assign_to_peaks(const EmbeddingSet& embeddings,
                                 std::span<const SampleId> peaks_by_density, std::size_t k);

/// Every sample joins the group (at `k` groups) of its most similar peak.
std::vector<int> assign_to_merged_peaks(const EmbeddingSet& embeddings,
                                        std::span<const SampleId> peaks_by_density,
                                        const PeakHierarchy& hierarchy, std::size_t k);

/// Hungarian-matched accuracy of `assignments` on the labelled samples.
double labelled_objective(std::span<const int> assignments, const LabelInfo& labels);

using ProbeFn = std::function<ProbePoint(std::size_t)>;

/// Maximizes the probe accuracy over integers in [lower, upper] with Brent's
/// bounded minimizer on the rounded lattice. Each integer is evaluated at most
/// once; the probe history is returned in evaluation order.
std::vector<ProbePoint> brent_integer_search(std::size_t lower, std::size_t upper,
                                             const ProbeFn& probe, double tolerance);

/// Arg-max accuracy of the probe history; ties go to the larger gap, then to
/// the smaller k.
std::size_t best_probe(std::span<const ProbePoint> probes);

/// Density-peak estimate of the total number of classes in the mixed set.
/// `probs` supplies connectivity; without it the affinity-only density is used.
EstimationReport estimate_k(const EmbeddingSet& embeddings, const LabelInfo& labels,
                            const ProbMatrix* probs, const EstimationConfig& config);

}  // namespace ltgcd
