#pragma once

#include <random>
#include <vector>

#include "ltgcd/embedding.hpp"

namespace ltgcd::testing {

inline EmbeddingSet from_rows(const std::vector<std::vector<double>>& rows) {
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  return EmbeddingSet(std::move(m));
}

inline EmbeddingSet random_embeddings(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  Matrix m(n, d);
  for (double& v : m.values) v = gauss(rng);
  return EmbeddingSet(std::move(m));
}

/// Random probability rows (softmax of Gaussian logits scaled by `sharpness`).
inline ProbMatrix random_probs(std::size_t n, std::size_t k, std::uint64_t seed,
                               double sharpness = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  ProbMatrix p{Matrix(n, k), 1.0};
  std::vector<double> l(k);
  for (std::size_t i = 0; i < n; ++i) {
    for (double& v : l) v = sharpness * gauss(rng);
    softmax(l, p.rows.row(i));
  }
  return p;
}

inline ProbMatrix one_hot_probs(const std::vector<int>& classes, std::size_t k) {
  ProbMatrix p{Matrix(classes.size(), k), 1.0};
  for (std::size_t i = 0; i < classes.size(); ++i) p.rows(i, static_cast<std::size_t>(classes[i])) = 1.0;
  return p;
}

}  // namespace ltgcd::testing
