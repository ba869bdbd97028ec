#pragma once

#include <map>
#include <optional>
#include <vector>

#include "ltgcd/embedding.hpp"

namespace ltgcd {

struct Assignment {
  /// Column assigned to each row.
  std::vector<std::size_t> row_to_col;
  double total_cost = 0.0;
};

/// Minimum-cost perfect matching (Kuhn-Munkres with potentials, O(m^3)).
/// Rectangular inputs are padded with zero-cost rows or columns; the returned
/// row_to_col then indexes into the padded square.
Assignment hungarian(const Matrix& cost);

struct ClusterMatch {
  double acc = 0.0;
  /// Predicted cluster id -> matched class id.
  std::map<int, int> matching;
};

/// Best one-to-one relabelling of predicted clusters onto classes.
ClusterMatch clustering_acc(std::span<const int> pred, std::span<const int> truth);

struct EvalReport {
  double acc_all = 0.0;
  std::optional<double> acc_old;
  std::optional<double> acc_new;
  double balanced_acc = 0.0;
  std::optional<double> balanced_old;
  std::optional<double> balanced_new;
  /// Class id -> accuracy, for classes present in the truth.
  std::map<int, double> per_class_acc;
  std::map<int, int> matching;
  std::optional<double> lambda_selected;
};

/// Old/new/balanced accuracies under a single global matching.
/// `selected`, when given, indexes into pred/truth.
EvalReport gcd_report(std::span<const int> pred, std::span<const int> truth,
                      std::span<const int> old_classes,
                      std::optional<std::span<const SampleId>> selected = std::nullopt);

/// Imbalance factor of the true classes found among `ids`.
double subset_imbalance(std::span<const int> truth, std::span<const SampleId> ids);

}  // namespace ltgcd
