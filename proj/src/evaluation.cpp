#include "ltgcd/evaluation.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace ltgcd {

Assignment hungarian(const Matrix& cost) {
  for (double v : cost.values)
    if (!std::isfinite(v)) throw Error("hungarian: non-finite cost entry");
  const std::size_t m = std::max(cost.rows, cost.cols);
  Assignment out;
  if (m == 0) return out;
  auto at = [&](std::size_t r, std::size_t c) {
    return (r < cost.rows && c < cost.cols) ? cost(r, c) : 0.0;
  };

  // 1-based potentials formulation; column 0 is a virtual start.
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(m + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> owner(m + 1, 0), way(m + 1, 0);
  for (std::size_t r = 1; r <= m; ++r) {
    owner[0] = r;
    std::size_t col = 0;
    std::vector<double> slack(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[col] = 1;
      const std::size_t row = owner[col];
      double delta = kInf;
      std::size_t next = 0;
      for (std::size_t c = 1; c <= m; ++c) {
        if (used[c]) continue;
        const double reduced = at(row - 1, c - 1) - u[row] - v[c];
        if (reduced < slack[c]) {
          slack[c] = reduced;
          way[c] = col;
        }
        if (slack[c] < delta) {
          delta = slack[c];
          next = c;
        }
      }
      for (std::size_t c = 0; c <= m; ++c) {
        if (used[c]) {
          u[owner[c]] += delta;
          v[c] -= delta;
        } else {
          slack[c] -= delta;
        }
      }
      col = next;
    } while (owner[col] != 0);
    do {
      const std::size_t prev = way[col];
      owner[col] = owner[prev];
      col = prev;
    } while (col != 0);
  }

  out.row_to_col.assign(m, 0);
  for (std::size_t c = 1; c <= m; ++c) out.row_to_col[owner[c] - 1] = c - 1;
  for (std::size_t r = 0; r < m; ++r) out.total_cost += at(r, out.row_to_col[r]);
  return out;
}

namespace {

std::vector<int> distinct(std::span<const int> values) {
  std::vector<int> out(values.begin(), values.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::size_t index_of(const std::vector<int>& sorted, int value) {
  return static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), value) -
                                  sorted.begin());
}

}  // namespace

ClusterMatch clustering_acc(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size())
    throw Error("clustering_acc: " + std::to_string(pred.size()) + " predictions for " +
                std::to_string(truth.size()) + " labels");
  if (pred.empty()) throw Error("clustering_acc: empty input");
  const auto clusters = distinct(pred);
  const auto classes = distinct(truth);

  Matrix neg_counts(clusters.size(), classes.size());
  for (std::size_t i = 0; i < pred.size(); ++i)
    neg_counts(index_of(clusters, pred[i]), index_of(classes, truth[i])) -= 1.0;
  const auto assignment = hungarian(neg_counts);

  ClusterMatch out;
  double matched = 0.0;
  for (std::size_t r = 0; r < clusters.size(); ++r) {
    const std::size_t c = assignment.row_to_col[r];
    if (c >= classes.size()) continue;
    out.matching[clusters[r]] = classes[c];
    matched -= neg_counts(r, c);
  }
  out.acc = matched / static_cast<double>(pred.size());
  return out;
}

double subset_imbalance(std::span<const int> truth, std::span<const SampleId> ids) {
  std::vector<int> picked;
  picked.reserve(ids.size());
  for (SampleId id : ids) {
    if (id >= truth.size()) throw Error("subset id out of range");
    picked.push_back(truth[id]);
  }
  return imbalance_factor(count_classes(picked));
}

EvalReport gcd_report(std::span<const int> pred, std::span<const int> truth,
                      std::span<const int> old_classes,
                      std::optional<std::span<const SampleId>> selected) {
  const auto match = clustering_acc(pred, truth);
  std::vector<int> old(old_classes.begin(), old_classes.end());
  std::sort(old.begin(), old.end());
  auto is_old = [&](int c) { return std::binary_search(old.begin(), old.end(), c); };

  std::map<int, std::pair<std::size_t, std::size_t>> per_class;  // hits, total
  std::size_t hits_old = 0, total_old = 0, hits_new = 0, total_new = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto it = match.matching.find(pred[i]);
    const bool hit = it != match.matching.end() && it->second == truth[i];
    auto& [h, t] = per_class[truth[i]];
    h += hit;
    ++t;
    if (is_old(truth[i])) {
      hits_old += hit;
      ++total_old;
    } else {
      hits_new += hit;
      ++total_new;
    }
  }

  EvalReport report;
  report.acc_all = match.acc;
  report.matching = match.matching;
  if (total_old > 0) report.acc_old = static_cast<double>(hits_old) / static_cast<double>(total_old);
  if (total_new > 0) report.acc_new = static_cast<double>(hits_new) / static_cast<double>(total_new);

  double sum_all = 0.0, sum_old = 0.0, sum_new = 0.0;
  std::size_t n_old = 0, n_new = 0;
  for (const auto& [cls, ht] : per_class) {
    const double acc = static_cast<double>(ht.first) / static_cast<double>(ht.second);
    report.per_class_acc[cls] = acc;
    sum_all += acc;
    if (is_old(cls)) {
      sum_old += acc;
      ++n_old;
    } else {
      sum_new += acc;
      ++n_new;
    }
  }
  report.balanced_acc = sum_all / static_cast<double>(per_class.size());
  if (n_old > 0) report.balanced_old = sum_old / static_cast<double>(n_old);
  if (n_new > 0) report.balanced_new = sum_new / static_cast<double>(n_new);
  if (selected && !selected->empty()) report.lambda_selected = subset_imbalance(truth, *selected);
  return report;
}

}  // namespace ltgcd
