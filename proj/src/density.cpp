#include "ltgcd/density.hpp"

#include <algorithm>

namespace ltgcd {

double connectivity(std::span<const double> p_i, std::span<const double> p_j) {
  if (p_i.size() != p_j.size()) throw Error("connectivity: dimension mismatch");
  return 2.0 * dot(p_i, p_j) - 1.0;
}

namespace {

void check_density_inputs(const KnnGraph& graph, const ProbMatrix* probs, DensityMode mode) {
  if (mode == DensityMode::kAffinityOnly) return;
  if (probs == nullptr) throw Error("connectivity density requires class probabilities");
  if (probs->size() != graph.size())
    throw Error("probability rows (" + std::to_string(probs->size()) +
                ") do not cover all graph samples (" + std::to_string(graph.size()) + ")");
}

double density_of(SampleId i, const KnnGraph& graph, const ProbMatrix* probs, DensityMode mode) {
  const auto ids = graph.neighbors(i);
  const auto aff = graph.affinities(i);
  double sum = 0.0;
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const double e = mode == DensityMode::kAffinityOnly
                         ? 1.0
                         : connectivity(probs->row(i), probs->row(ids[r]));
    sum += e * aff[r];
  }
  return sum / static_cast<double>(ids.size());
}

}  // namespace

DensityMap compute_density(const KnnGraph& graph, const ProbMatrix* probs, DensityMode mode) {
  check_density_inputs(graph, probs, mode);
  DensityMap out{std::vector<double>(graph.size()), mode, graph.k()};
  const auto n = static_cast<std::ptrdiff_t>(graph.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i)
    out.densities[static_cast<std::size_t>(i)] =
        density_of(static_cast<SampleId>(i), graph, probs, mode);
  return out;
}

DensityMap compute_density_serial(const KnnGraph& graph, const ProbMatrix* probs,
                                  DensityMode mode) {
  check_density_inputs(graph, probs, mode);
  DensityMap out{std::vector<double>(graph.size()), mode, graph.k()};
  for (SampleId i = 0; i < graph.size(); ++i) out.densities[i] = density_of(i, graph, probs, mode);
  return out;
}

IdList find_peaks(const DensityMap& density, const KnnGraph& graph, bool strict) {
  if (density.densities.size() != graph.size())
    throw Error("density map and graph are not aligned");
  IdList peaks;
  for (SampleId i = 0; i < graph.size(); ++i) {
    const double di = density.densities[i];
    const bool dominates = std::all_of(
        graph.neighbors(i).begin(), graph.neighbors(i).end(), [&](std::uint32_t j) {
          return strict ? di > density.densities[j] : di >= density.densities[j];
        });
    if (dominates) peaks.push_back(i);
  }
  return peaks;
}

NeighborSets::NeighborSets(const KnnGraph& graph, std::size_t k_s)
    : n_(graph.size()), k_s_(k_s), ids_(graph.size() * k_s) {
  if (k_s < 1 || k_s > graph.k())
    throw Error("k_s = " + std::to_string(k_s) + " must lie in [1, " +
                std::to_string(graph.k()) + "]");
  for (SampleId i = 0; i < n_; ++i) {
    auto dst = std::span<std::uint32_t>(ids_.data() + i * k_s_, k_s_);
    std::copy_n(graph.neighbors(i).begin(), k_s_, dst.begin());
    std::sort(dst.begin(), dst.end());
  }
}

double iouk(SampleId i, SampleId j, const NeighborSets& sets) {
  if (i >= sets.size() || j >= sets.size()) throw Error("iouk: id out of range");
  const auto a = sets.of(i);
  const auto b = sets.of(j);
  std::size_t common = 0;
  for (std::size_t x = 0, y = 0; x < a.size() && y < b.size();) {
    if (a[x] < b[y]) {
      ++x;
    } else if (b[y] < a[x]) {
      ++y;
    } else {
      ++common;
      ++x;
      ++y;
    }
  }
  return static_cast<double>(common) / static_cast<double>(a.size() + b.size() - common);
}

double iouk(SampleId i, SampleId j, const EmbeddingSet& embeddings, std::size_t k_s) {
  if (i >= embeddings.size() || j >= embeddings.size()) throw Error("iouk: id out of range");
  return iouk(i, j, NeighborSets(build_knn(embeddings, k_s), k_s));
}

namespace {

bool dominates(const PeakCandidate& j, const PeakCandidate& i, NmdsRule rule) {
  if (rule == NmdsRule::kLiteral) return i.density > j.density;
  return j.density > i.density || (j.density == i.density && j.id < i.id);
}

bool suppressed(std::size_t a, std::span<const PeakCandidate> candidates, const NeighborSets& sets,
                double lambda_nmds, NmdsRule rule) {
  for (std::size_t b = 0; b < candidates.size(); ++b) {
    if (b == a) continue;
    if (!dominates(candidates[b], candidates[a], rule)) continue;
    if (iouk(candidates[a].id, candidates[b].id, sets) > lambda_nmds) return true;
  }
  return false;
}

void check_nmds_inputs(std::span<const PeakCandidate> candidates, double lambda_nmds) {
  if (!(lambda_nmds > 0.0 && lambda_nmds < 1.0)) throw Error("lambda_nmds must lie in (0, 1)");
  IdList ids;
  for (const auto& c : candidates) ids.push_back(c.id);
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw Error("nmds: duplicate candidate ids");
}

PeakSet finish(std::vector<PeakCandidate> kept, const NeighborSets& sets, double lambda_nmds) {
  std::sort(kept.begin(), kept.end(), [](const PeakCandidate& a, const PeakCandidate& b) {
    return a.density > b.density || (a.density == b.density && a.id < b.id);
  });
  PeakSet out;
  out.k_s = sets.k_s();
  out.lambda_nmds = lambda_nmds;
  for (const auto& c : kept) {
    out.peak_ids.push_back(c.id);
    out.densities.push_back(c.density);
  }
  return out;
}

}  // namespace

PeakSet nmds(std::span<const PeakCandidate> candidates, const NeighborSets& sets,
             double lambda_nmds, NmdsRule rule) {
  check_nmds_inputs(candidates, lambda_nmds);
  const auto m = static_cast<std::ptrdiff_t>(candidates.size());
  std::vector<char> drop(candidates.size(), 0);
  // Each decision reads only the immutable candidate list, so rows are independent.
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t a = 0; a < m; ++a)
    drop[static_cast<std::size_t>(a)] =
        suppressed(static_cast<std::size_t>(a), candidates, sets, lambda_nmds, rule) ? 1 : 0;
  std::vector<PeakCandidate> kept;
  for (std::size_t a = 0; a < candidates.size(); ++a)
    if (!drop[a]) kept.push_back(candidates[a]);
  return finish(std::move(kept), sets, lambda_nmds);
}

PeakSet nmds_serial(std::span<const PeakCandidate> candidates, const NeighborSets& sets,
                    double lambda_nmds, NmdsRule rule) {
  check_nmds_inputs(candidates, lambda_nmds);
  std::vector<PeakCandidate> kept;
  for (std::size_t a = 0; a < candidates.size(); ++a)
    if (!suppressed(a, candidates, sets, lambda_nmds, rule)) kept.push_back(candidates[a]);
  return finish(std::move(kept), sets, lambda_nmds);
}

std::vector<PeakCandidate> as_candidates(std::span<const SampleId> ids, const DensityMap& density) {
  std::vector<PeakCandidate> out;
  out.reserve(ids.size());
  for (SampleId id : ids) {
    if (id >= density.densities.size()) throw Error("candidate id out of range");
    out.push_back({id, density.densities[id]});
  }
  return out;
}

}  // namespace ltgcd
