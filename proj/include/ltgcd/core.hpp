#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ltgcd {

/// Raised for every contract violation or I/O failure in the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using SampleId = std::size_t;
using IdList = std::vector<SampleId>;

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), values(r * c, fill) {}

  std::span<double> row(std::size_t i) { return {values.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const {
    return {values.data() + i * cols, cols};
  }
  double& operator()(std::size_t i, std::size_t j) { return values[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
};

/// Per-sample class probability rows (each row sums to one) and the
/// temperature that produced them.
struct ProbMatrix {
  Matrix rows;
  double temperature = 1.0;

  std::size_t size() const { return rows.rows; }
  std::size_t classes() const { return rows.cols; }
  std::span<const double> row(std::size_t i) const { return rows.row(i); }
};

/// Inner product with a fixed summation order (four interleaved partial sums),
/// so every caller sees bit-identical results for the same pair of rows.
inline double dot(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

inline double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// Scales `a` to unit length. Returns false (leaving `a` untouched) for a zero vector.
inline bool normalize_in_place(std::span<double> a) {
  const double norm = l2_norm(a);
  if (!(norm > 0.0) || !std::isfinite(norm)) return false;
  for (double& v : a) v /= norm;
  return true;
}

/// Numerically stable softmax written into `out`.
void softmax(std::span<const double> logits, std::span<double> out);

/// Shannon entropy in nats; zero entries contribute nothing.
double entropy(std::span<const double> p);

}  // namespace ltgcd
