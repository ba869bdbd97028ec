#include "ltgcd/estimation.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <numeric>

#include "ltgcd/evaluation.hpp"

namespace ltgcd {

void EstimationConfig::validate() const {
  if (k < 1) throw Error("k must be at least 1");
  if (k_s < 1) throw Error("k_s must be at least 1");
  if (!(lambda_nmds > 0.0 && lambda_nmds < 1.0)) throw Error("lambda_nmds must lie in (0, 1)");
  if (!(brent_tolerance > 0.0)) throw Error("brent tolerance must be positive");
  if (exhaustive_cutoff < 1) throw Error("exhaustive cutoff must be at least 1");
}

std::pair<std::size_t, std::size_t> class_bounds(const PeakSet& peaks, std::size_t k_labelled) {
  const std::size_t lower = std::max<std::size_t>(k_labelled, 1);
  return {lower, std::max(peaks.peak_ids.size(), lower)};
}

std::vector<int> assign_to_peaks(const EmbeddingSet& embeddings,
                                 std::span<const SampleId> peaks_by_density, std::size_t k) {
  if (k == 0) throw Error("assign_to_peaks: k must be positive");
  if (k > peaks_by_density.size())
    throw Error("assign_to_peaks: k exceeds the number of peaks");
  const auto n = static_cast<std::ptrdiff_t>(embeddings.size());
  std::vector<int> out(embeddings.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto row = embeddings.row(static_cast<SampleId>(i));
    int best = 0;
    double best_sim = dot(row, embeddings.row(peaks_by_density[0]));
    for (std::size_t p = 1; p < k; ++p) {
      const double s = dot(row, embeddings.row(peaks_by_density[p]));
      if (s > best_sim) {
        best_sim = s;
        best = static_cast<int>(p);
      }
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

PeakHierarchy::PeakHierarchy(const EmbeddingSet& embeddings, std::span<const SampleId> peaks)
    : size_(peaks.size()) {
  if (peaks.empty()) return;
  // Prim's algorithm on the dense similarity graph (maximum spanning tree).
  constexpr double kNone = -std::numeric_limits<double>::infinity();
  std::vector<double> best(size_, kNone);
  std::vector<std::size_t> from(size_, 0);
  std::vector<char> in_tree(size_, 0);
  std::size_t current = 0;
  in_tree[0] = 1;
  for (std::size_t added = 1; added < size_; ++added) {
    const auto row = embeddings.row(peaks[current]);
    std::size_t next = size_;
    for (std::size_t p = 0; p < size_; ++p) {
      if (in_tree[p]) continue;
      const double s = dot(row, embeddings.row(peaks[p]));
      if (s > best[p]) {
        best[p] = s;
        from[p] = current;
      }
      if (next == size_ || best[p] > best[next]) next = p;
    }
    in_tree[next] = 1;
    edges_.push_back({best[next], from[next], next});
    current = next;
  }
  std::stable_sort(edges_.begin(), edges_.end(),
                   [](const Edge& x, const Edge& y) { return x.sim > y.sim; });
  for (const auto& e : edges_) merge_sims_.push_back(e.sim);
}

std::vector<int> PeakHierarchy::groups(std::size_t k) const {
  if (k < 1 || k > size_) throw Error("peak hierarchy: group count out of range");
  std::vector<std::size_t> parent(size_);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t m = 0; m < size_ - k; ++m) {
    const std::size_t ra = find(edges_[m].a), rb = find(edges_[m].b);
    parent[std::max(ra, rb)] = std::min(ra, rb);  // root stays the densest member
  }
  std::vector<int> label(size_, -1), out(size_);
  int next = 0;
  for (std::size_t p = 0; p < size_; ++p) {
    const std::size_t r = find(p);
    if (label[r] < 0) label[r] = next++;
    out[p] = label[r];
  }
  return out;
}

double PeakHierarchy::gap(std::size_t k) const {
  if (k < 1 || k > size_) throw Error("peak hierarchy: group count out of range");
  const std::size_t done = size_ - k;
  const double last = done > 0 ? merge_sims_[done - 1] : 1.0;
  const double next = done < merge_sims_.size() ? merge_sims_[done] : -1.0;
  return last - next;
}

std::vector<int> assign_to_merged_peaks(const EmbeddingSet& embeddings,
                                        std::span<const SampleId> peaks_by_density,
                                        const PeakHierarchy& hierarchy, std::size_t k) {
  if (hierarchy.size() != peaks_by_density.size())
    throw Error("peak hierarchy does not match the peak list");
  auto nearest = assign_to_peaks(embeddings, peaks_by_density, peaks_by_density.size());
  const auto group = hierarchy.groups(k);
  for (int& c : nearest) c = group[static_cast<std::size_t>(c)];
  return nearest;
}

double labelled_objective(std::span<const int> assignments, const LabelInfo& labels) {
  if (assignments.size() != labels.labels.size())
    throw Error("assignments do not cover every sample");
  std::vector<int> pred, truth;
  for (SampleId i = 0; i < assignments.size(); ++i) {
    if (!labels.is_labelled(i)) continue;
    pred.push_back(assignments[i]);
    truth.push_back(labels.labels[i]);
  }
  if (truth.empty()) throw Error("labelled objective needs labelled samples");
  return clustering_acc(pred, truth).acc;
}

std::vector<ProbePoint> brent_integer_search(std::size_t lower, std::size_t upper,
                                             const ProbeFn& probe, double tolerance) {
  if (lower > upper) throw Error("brent search: empty interval");
  std::map<std::size_t, double> memo;
  std::vector<ProbePoint> history;
  auto f = [&](double x) {
    const auto k = static_cast<std::size_t>(
        std::clamp(std::llround(x), static_cast<long long>(lower), static_cast<long long>(upper)));
    if (auto it = memo.find(k); it != memo.end()) return -it->second;
    ProbePoint point = probe(k);
    point.k = k;
    memo.emplace(k, point.acc);
    history.push_back(point);
    return -point.acc;
  };
  if (lower == upper) {
    f(static_cast<double>(lower));
    return history;
  }

  // Bounded Brent minimization (golden section with parabolic steps).
  const double golden = 0.5 * (3.0 - std::sqrt(5.0));
  double a = static_cast<double>(lower);
  double b = static_cast<double>(upper);
  double x = a + golden * (b - a);
  double w = x, v = x;
  double fx = f(x);
  double fw = fx, fv = fx;
  double d = 0.0, e = 0.0;
  const double tol = tolerance / 2.0;
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = 0.5 * (a + b);
    if (std::abs(x - mid) <= 2.0 * tol - 0.5 * (b - a)) break;
    bool golden_step = true;
    if (std::abs(e) > tol) {
      double r = (x - w) * (fx - fv);
      double q = (x - v) * (fx - fw);
      double p = (x - v) * q - (x - w) * r;
      q = 2.0 * (q - r);
      if (q > 0.0) p = -p;
      q = std::abs(q);
      const double e_prev = e;
      e = d;
      if (std::abs(p) < std::abs(0.5 * q * e_prev) && p > q * (a - x) && p < q * (b - x)) {
        d = p / q;
        const double u = x + d;
        if (u - a < 2.0 * tol || b - u < 2.0 * tol) d = x < mid ? tol : -tol;
        golden_step = false;
      }
    }
    if (golden_step) {
      e = (x < mid) ? b - x : a - x;
      d = golden * e;
    }
    const double u = std::abs(d) >= tol ? x + d : x + (d > 0.0 ? tol : -tol);
    const double fu = f(u);
    if (fu <= fx) {
      (u < x ? b : a) = x;
      v = w;
      fv = fw;
      w = x;
      fw = fx;
      x = u;
      fx = fu;
    } else {
      (u < x ? a : b) = u;
      if (fu <= fw || w == x) {
        v = w;
        fv = fw;
        w = u;
        fw = fu;
      } else if (fu <= fv || v == x || v == w) {
        v = u;
        fv = fu;
      }
    }
  }

  // Rounding can stop Brent one lattice step short; climb to the integer optimum.
  auto k = best_probe(history);
  for (;;) {
    const double here = memo.at(k);
    std::size_t next = k;
    if (k > lower && -f(static_cast<double>(k - 1)) > here) next = k - 1;
    if (k < upper && -f(static_cast<double>(k + 1)) > memo.at(next)) next = k + 1;
    if (next == k) break;
    k = next;
  }
  return history;
}

std::size_t best_probe(std::span<const ProbePoint> probes) {
  if (probes.empty()) throw Error("no probes recorded");
  const ProbePoint* best = &probes[0];
  for (const auto& p : probes)
    if (p.acc > best->acc ||
        (p.acc == best->acc && (p.gap > best->gap || (p.gap == best->gap && p.k < best->k))))
      best = &p;
  return best->k;
}

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

EstimationReport estimate_k(const EmbeddingSet& embeddings, const LabelInfo& labels,
                            const ProbMatrix* probs, const EstimationConfig& config) {
  config.validate();
  labels.validate(embeddings.size());
  if (labels.labelled_ids().empty()) throw Error("class-number estimation needs labelled samples");

  EstimationReport report;
  auto clock = std::chrono::steady_clock::now();
  const std::size_t k_graph = std::max(config.k, config.k_s);
  const KnnGraph graph = build_knn(embeddings, k_graph);
  report.timings.graph_seconds = seconds_since(clock);

  // Labels are dropped here: every sample is a peak candidate.
  clock = std::chrono::steady_clock::now();
  const KnnGraph density_graph = graph.truncated(config.k);
  const DensityMode mode =
      probs != nullptr ? DensityMode::kConnectivityAffinity : DensityMode::kAffinityOnly;
  const DensityMap density = compute_density(density_graph, probs, mode);
  const IdList raw_peaks = find_peaks(density, density_graph, config.strict_peaks);
  const NeighborSets sets(graph, config.k_s);
  report.peaks = nmds(as_candidates(raw_peaks, density), sets, config.lambda_nmds,
                      config.nmds_rule);
  report.timings.peaks_seconds = seconds_since(clock);

  clock = std::chrono::steady_clock::now();
  std::tie(report.lower, report.upper) = class_bounds(report.peaks, labels.k_labelled());
  const auto& peak_ids = report.peaks.peak_ids;
  const std::size_t available = peak_ids.size();
  const bool merged = config.clustering == PeakClustering::kMergedPeaks;
  std::optional<PeakHierarchy> hierarchy;
  std::vector<int> nearest_peak;
  if (merged && available > 0) {
    hierarchy.emplace(embeddings, peak_ids);
    nearest_peak = assign_to_peaks(embeddings, peak_ids, available);
  }
  auto clusters_at = [&](std::size_t k) {
    if (!merged) return assign_to_peaks(embeddings, peak_ids, k);
    const auto group = hierarchy->groups(k);
    std::vector<int> out(nearest_peak.size());
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = group[static_cast<std::size_t>(nearest_peak[i])];
    return out;
  };
  auto probe = [&](std::size_t k) {
    if (k > available) return ProbePoint{k, 0.0, 0.0};  // not enough peaks for k clusters
    return ProbePoint{k, labelled_objective(clusters_at(k), labels),
                      merged ? hierarchy->gap(k) : 0.0};
  };

  if (report.upper - report.lower < config.exhaustive_cutoff) {
    report.exhaustive = true;
    for (std::size_t k = report.lower; k <= report.upper; ++k) report.probes.push_back(probe(k));
  } else {
    report.probes = brent_integer_search(report.lower, report.upper, probe, config.brent_tolerance);
  }
  report.k_hat = best_probe(report.probes);
  if (report.k_hat <= available) report.assignments = clusters_at(report.k_hat);
  report.timings.probe_seconds = seconds_since(clock);
  return report;
}

}  // namespace ltgcd
