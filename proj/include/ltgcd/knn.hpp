#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ltgcd/embedding.hpp"

namespace ltgcd {

/// Exact k-nearest-neighbor graph under inner-product similarity.
///
/// Row i lists the k most similar other samples, most similar first; equal
/// similarities are ordered by lower sample id. The owner is never listed.
class KnnGraph {
 public:
  KnnGraph() = default;
  KnnGraph(std::size_t n, std::size_t k);

  std::size_t size() const { return n_; }
  std::size_t k() const { return k_; }

  std::span<const std::uint32_t> neighbors(SampleId i) const {
    return {neighbors_.data() + i * k_, k_};
  }
  std::span<const double> affinities(SampleId i) const {
    return {affinities_.data() + i * k_, k_};
  }
  std::span<std::uint32_t> neighbors(SampleId i) { return {neighbors_.data() + i * k_, k_}; }
  std::span<double> affinities(SampleId i) { return {affinities_.data() + i * k_, k_}; }

  /// Graph restricted to the first `k` neighbors of every row.
  KnnGraph truncated(std::size_t k) const;

  friend bool operator==(const KnnGraph&, const KnnGraph&) = default;

 private:
  std::size_t n_ = 0;
  std::size_t k_ = 0;
  std::vector<std::uint32_t> neighbors_;
  std::vector<double> affinities_;
};

/// OpenMP-parallel tiled construction.
KnnGraph build_knn(const EmbeddingSet& embeddings, std::size_t k);

/// Single-threaded reference construction; same output as build_knn.
KnnGraph build_knn_serial(const EmbeddingSet& embeddings, std::size_t k);

/// <h_i, h_j>.
double affinity(SampleId i, SampleId j, const EmbeddingSet& embeddings);

/// Binary cache: u64 n, u64 k (little-endian) followed by n*k (u32 id, f32 affinity) pairs.
void write_graph_cache(const KnnGraph& graph, const std::filesystem::path& path);
KnnGraph read_graph_cache(const std::filesystem::path& path);

}  // namespace ltgcd
