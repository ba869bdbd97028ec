#include "ltgcd/knn.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>

#include <omp.h>

namespace ltgcd {

KnnGraph::KnnGraph(std::size_t n, std::size_t k)
    : n_(n), k_(k), neighbors_(n * k, 0), affinities_(n * k, 0.0) {}

KnnGraph KnnGraph::truncated(std::size_t k) const {
  if (k > k_) throw Error("cannot truncate a k-NN graph to a larger k");
  KnnGraph out(n_, k);
  for (SampleId i = 0; i < n_; ++i) {
    std::copy_n(neighbors(i).begin(), k, out.neighbors(i).begin());
    std::copy_n(affinities(i).begin(), k, out.affinities(i).begin());
  }
  return out;
}

namespace {

struct Candidate {
  double sim;
  std::uint32_t id;
};

// Strict weak order: more similar first, then lower id.
inline bool ranks_before(const Candidate& a, const Candidate& b) {
  return a.sim > b.sim || (a.sim == b.sim && a.id < b.id);
}

void check_k(const EmbeddingSet& embeddings, std::size_t k) {
  if (k < 1) throw Error("k must be at least 1");
  if (k >= embeddings.size())
    throw Error("k = " + std::to_string(k) + " must be smaller than n = " +
                std::to_string(embeddings.size()));
  if (embeddings.size() > UINT32_MAX) throw Error("too many samples for 32-bit ids");
}

// Keeps the best `k` of `pool` (already sized n-1) in ranked order.
void write_top_k(std::vector<Candidate>& pool, std::size_t k, std::span<std::uint32_t> ids,
                 std::span<double> sims) {
  std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k), pool.end(),
                    ranks_before);
  for (std::size_t r = 0; r < k; ++r) {
    ids[r] = pool[r].id;
    sims[r] = pool[r].sim;
  }
}

}  // namespace

KnnGraph build_knn_serial(const EmbeddingSet& embeddings, std::size_t k) {
  check_k(embeddings, k);
  const std::size_t n = embeddings.size();
  KnnGraph graph(n, k);
  std::vector<Candidate> pool;
  pool.reserve(n);
  for (SampleId i = 0; i < n; ++i) {
    pool.clear();
    for (SampleId j = 0; j < n; ++j)
      if (j != i)
        pool.push_back({dot(embeddings.row(i), embeddings.row(j)), static_cast<std::uint32_t>(j)});
    write_top_k(pool, k, graph.neighbors(i), graph.affinities(i));
  }
  return graph;
}

KnnGraph build_knn(const EmbeddingSet& embeddings, std::size_t k) {
  check_k(embeddings, k);
  const std::size_t n = embeddings.size();
  constexpr std::size_t kTile = 16;
  const std::size_t num_tiles = (n + kTile - 1) / kTile;
  KnnGraph graph(n, k);

#pragma omp parallel
  {
    std::vector<double> sims(kTile * n);
    std::vector<Candidate> pool;
    pool.reserve(n);
#pragma omp for schedule(dynamic, 4)
    for (std::size_t t = 0; t < num_tiles; ++t) {
      const std::size_t first = t * kTile;
      const std::size_t last = std::min(n, first + kTile);
      // Stream every data row once per tile of queries.
      for (SampleId j = 0; j < n; ++j) {
        const auto rj = embeddings.row(j);
        for (SampleId q = first; q < last; ++q) sims[(q - first) * n + j] = dot(embeddings.row(q), rj);
      }
      for (SampleId q = first; q < last; ++q) {
        pool.clear();
        const double* row_sims = sims.data() + (q - first) * n;
        for (SampleId j = 0; j < n; ++j)
          if (j != q) pool.push_back({row_sims[j], static_cast<std::uint32_t>(j)});
        write_top_k(pool, k, graph.neighbors(q), graph.affinities(q));
      }
    }
  }
  return graph;
}

double affinity(SampleId i, SampleId j, const EmbeddingSet& embeddings) {
  if (i >= embeddings.size() || j >= embeddings.size()) throw Error("affinity: id out of range");
  return dot(embeddings.row(i), embeddings.row(j));
}

namespace {

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts unsupported");
  out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

template <typename T>
T get_le(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof value);
  if (!in) throw Error("truncated graph cache");
  return value;
}

}  // namespace

void write_graph_cache(const KnnGraph& graph, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  put_le<std::uint64_t>(out, graph.size());
  put_le<std::uint64_t>(out, graph.k());
  for (SampleId i = 0; i < graph.size(); ++i)
    for (std::size_t r = 0; r < graph.k(); ++r) {
      put_le<std::uint32_t>(out, graph.neighbors(i)[r]);
      put_le<float>(out, static_cast<float>(graph.affinities(i)[r]));
    }
  if (!out) throw Error("failed writing " + path.string());
}

KnnGraph read_graph_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  const auto n = get_le<std::uint64_t>(in);
  const auto k = get_le<std::uint64_t>(in);
  if (std::filesystem::file_size(path) != 16 + n * k * 8) throw Error("graph cache size mismatch");
  KnnGraph graph(n, k);
  for (SampleId i = 0; i < n; ++i)
    for (std::size_t r = 0; r < k; ++r) {
      graph.neighbors(i)[r] = get_le<std::uint32_t>(in);
      graph.affinities(i)[r] = get_le<float>(in);
    }
  return graph;
}

}  // namespace ltgcd
