#include "ltgcd/selection.hpp"

#include <algorithm>

namespace ltgcd {

void SelectionConfig::validate() const {
  if (!(eps_conf > 0.0 && eps_conf <= 1.0)) throw Error("eps_conf must lie in (0, 1]");
  if (k < 1) throw Error("k must be at least 1");
  if (k_s < 1) throw Error("k_s must be at least 1");
  if (!(lambda_nmds > 0.0 && lambda_nmds < 1.0)) throw Error("lambda_nmds must lie in (0, 1)");
  if (crest_power && !(*crest_power >= 0.0)) throw Error("CReST power must be non-negative");
}

std::size_t pseudo_label(std::span<const double> p) {
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

IdList select_confident(const ProbMatrix& probs, std::span<const SampleId> ids, double eps_conf) {
  if (!(eps_conf > 0.0 && eps_conf <= 1.0)) throw Error("eps_conf must lie in (0, 1]");
  IdList out;
  for (SampleId i : ids) {
    const auto row = probs.row(i);
    if (*std::max_element(row.begin(), row.end()) >= eps_conf) out.push_back(i);
  }
  return out;
}

IdList select_confident(const ProbMatrix& probs, std::span<const SampleId> ids,
                        std::span<const double> class_thresholds) {
  if (class_thresholds.size() != probs.classes())
    throw Error("one threshold per class is required");
  IdList out;
  for (SampleId i : ids) {
    const auto row = probs.row(i);
    const std::size_t c = pseudo_label(row);
    if (row[c] >= class_thresholds[c]) out.push_back(i);
  }
  return out;
}

std::vector<double> crest_thresholds(double base_eps, std::span<const std::size_t> pseudo_counts,
                                     double power) {
  if (!(power >= 0.0)) throw Error("CReST power must be non-negative");
  const std::size_t top =
      pseudo_counts.empty() ? 0 : *std::max_element(pseudo_counts.begin(), pseudo_counts.end());
  if (top == 0) throw Error("CReST thresholds need at least one non-zero class count");
  std::vector<double> out;
  out.reserve(pseudo_counts.size());
  for (std::size_t c : pseudo_counts)
    out.push_back(base_eps *
                  std::pow(static_cast<double>(c) / static_cast<double>(top), power));
  return out;
}

SelectionContext::SelectionContext(const KnnGraph& full, std::size_t k, std::size_t k_s)
    : density_graph(full.truncated(k)), iou_sets(full, k_s) {}

SelectionContext::SelectionContext(const EmbeddingSet& embeddings, std::size_t k, std::size_t k_s)
    : SelectionContext(build_knn(embeddings, std::max(k, k_s)), k, k_s) {}

IdList select_density(const SelectionContext& context, const ProbMatrix* probs,
                      std::span<const SampleId> unlabelled, const SelectionConfig& config) {
  if (unlabelled.empty()) return {};
  const DensityMap density = compute_density(context.density_graph, probs, config.density_mode);
  const IdList peaks = find_peaks(density, context.density_graph, /*strict=*/false);

  std::vector<char> is_unlabelled(context.density_graph.size(), 0);
  for (SampleId i : unlabelled) is_unlabelled.at(i) = 1;
  IdList candidates;
  for (SampleId p : peaks)
    if (is_unlabelled[p]) candidates.push_back(p);

  const auto scored = as_candidates(candidates, density);
  PeakSet kept;
  if (config.use_nmds) {
    kept = nmds(scored, context.iou_sets, config.lambda_nmds, config.nmds_rule);
  } else {
    auto sorted = scored;
    std::sort(sorted.begin(), sorted.end(), [](const PeakCandidate& a, const PeakCandidate& b) {
      return a.density > b.density || (a.density == b.density && a.id < b.id);
    });
    for (const auto& c : sorted) kept.peak_ids.push_back(c.id);
  }
  return kept.peak_ids;
}

IdList select_density(const EmbeddingSet& embeddings, const ProbMatrix* probs,
                      std::span<const SampleId> unlabelled, const SelectionConfig& config) {
  config.validate();
  if (unlabelled.empty()) return {};
  const SelectionContext context(embeddings, config.k, config.k_s);
  return select_density(context, probs, unlabelled, config);
}

IdList combine(std::span<const SampleId> conf_ids, std::span<const SampleId> dens_ids) {
  IdList out(conf_ids.begin(), conf_ids.end());
  out.insert(out.end(), dens_ids.begin(), dens_ids.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<double> prior_distribution(const ProbMatrix& probs, std::span<const SampleId> selected,
                                       std::size_t classes, bool normalize_counts) {
  if (selected.empty()) throw Error("prior distribution needs a non-empty selection");
  if (probs.classes() != classes) throw Error("probability width does not match class count");
  std::vector<double> counts(classes, 0.0);
  for (SampleId i : selected) counts[pseudo_label(probs.row(i))] += 1.0;
  if (normalize_counts)
    for (double& c : counts) c /= static_cast<double>(selected.size());
  std::vector<double> prior(classes);
  softmax(counts, prior);
  return prior;
}

SelectionResult resample_epoch(const SelectionContext& context, const ProbMatrix& probs,
                               std::span<const SampleId> unlabelled, const SelectionConfig& config,
                               std::size_t epoch) {
  config.validate();
  SelectionResult out;
  out.epoch = epoch;
  if (config.use_confidence) {
    if (config.crest_power) {
      std::vector<std::size_t> pseudo_counts(probs.classes(), 0);
      for (SampleId i : unlabelled) ++pseudo_counts[pseudo_label(probs.row(i))];
      out.conf_ids = unlabelled.empty()
                         ? IdList{}
                         : select_confident(probs, unlabelled,
                                            crest_thresholds(config.eps_conf, pseudo_counts,
                                                             *config.crest_power));
    } else {
      out.conf_ids = select_confident(probs, unlabelled, config.eps_conf);
    }
  }
  if (config.use_density) out.dens_ids = select_density(context, &probs, unlabelled, config);
  out.union_ids = combine(out.conf_ids, out.dens_ids);
  if (out.union_ids.empty()) {
    out.fallback = true;
    out.union_ids.assign(unlabelled.begin(), unlabelled.end());
  }
  if (!out.union_ids.empty())
    out.prior = prior_distribution(probs, out.union_ids, probs.classes(),
                                   config.normalize_prior_counts);
  return out;
}

}  // namespace ltgcd
