#include "ltgcd/classifier.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>

#include "json.hpp"

namespace ltgcd {

void PrototypeSet::validate() const {
  if (classes() < 2) throw Error("a prototype classifier needs at least 2 classes");
  if (!(tau_s > 0.0) || !(tau_t > 0.0)) throw Error("temperatures must be positive");
  for (std::size_t k = 0; k < classes(); ++k) {
    for (double v : prototypes.row(k))
      if (!std::isfinite(v)) throw Error("non-finite prototype entry");
    if (!(l2_norm(prototypes.row(k)) > 0.0))
      throw Error("zero-norm prototype row " + std::to_string(k));
  }
}

namespace {

// Unit prototype rows and their original norms.
struct UnitPrototypes {
  Matrix unit;
  std::vector<double> norms;

  explicit UnitPrototypes(const PrototypeSet& p) : unit(p.prototypes), norms(p.classes()) {
    for (std::size_t k = 0; k < p.classes(); ++k) {
      norms[k] = l2_norm(unit.row(k));
      if (!(norms[k] > 0.0)) throw Error("zero-norm prototype row " + std::to_string(k));
      for (double& v : unit.row(k)) v /= norms[k];
    }
  }
};

void logits_into(std::span<const double> h, const Matrix& unit, double tau, std::span<double> out) {
  for (std::size_t k = 0; k < unit.rows; ++k) out[k] = dot(h, unit.row(k)) / tau;
}

// Softmax predictions of every row of `views`.
Matrix predict_rows(const Matrix& views, const Matrix& unit, double tau) {
  Matrix out(views.rows, unit.rows);
  std::vector<double> l(unit.rows);
  for (std::size_t i = 0; i < views.rows; ++i) {
    logits_into(views.row(i), unit, tau, l);
    softmax(l, out.row(i));
  }
  return out;
}

double safe_log(double p, std::size_t& clamps) {
  if (p < kLogFloor) {
    ++clamps;
    return std::log(kLogFloor);
  }
  return std::log(p);
}

void check_batch(const Batch& batch, const PrototypeSet& prototypes) {
  if (batch.size() == 0) throw Error("empty batch");
  if (batch.teacher.rows != batch.size() || batch.labels.size() != batch.size())
    throw Error("batch views and labels are misaligned");
  if (batch.student.cols != prototypes.dim() || batch.teacher.cols != prototypes.dim())
    throw Error("batch feature dimension does not match the prototypes");
  for (int y : batch.labels)
    if (y != kUnlabelled && (y < 0 || y >= static_cast<int>(prototypes.classes())))
      throw Error("label " + std::to_string(y) + " outside 0..K-1");
}

std::size_t labelled_count(const Batch& batch) {
  return static_cast<std::size_t>(
      std::count_if(batch.labels.begin(), batch.labels.end(), [](int y) { return y != kUnlabelled; }));
}

}  // namespace

std::vector<double> logits(std::span<const double> h, const PrototypeSet& prototypes, double tau) {
  if (!(tau > 0.0)) throw Error("temperature must be positive");
  if (h.size() != prototypes.dim()) throw Error("feature dimension mismatch");
  const UnitPrototypes unit(prototypes);
  std::vector<double> out(prototypes.classes());
  logits_into(h, unit.unit, tau, out);
  return out;
}

std::vector<double> predict(std::span<const double> h, const PrototypeSet& prototypes, double tau) {
  auto l = logits(h, prototypes, tau);
  std::vector<double> p(l.size());
  softmax(l, p);
  return p;
}

ProbMatrix predict_all(const EmbeddingSet& embeddings, const PrototypeSet& prototypes, double tau) {
  if (!(tau > 0.0)) throw Error("temperature must be positive");
  if (embeddings.dim() != prototypes.dim()) throw Error("feature dimension mismatch");
  const UnitPrototypes unit(prototypes);
  ProbMatrix out{Matrix(embeddings.size(), prototypes.classes()), tau};
  const auto n = static_cast<std::ptrdiff_t>(embeddings.size());
#pragma omp parallel
  {
    std::vector<double> l(prototypes.classes());
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const auto row = static_cast<std::size_t>(i);
      logits_into(embeddings.row(row), unit.unit, tau, l);
      softmax(l, out.rows.row(row));
    }
  }
  return out;
}

std::vector<int> predict_labels(const EmbeddingSet& embeddings, const PrototypeSet& prototypes) {
  const auto probs = predict_all(embeddings, prototypes, prototypes.tau_s);
  std::vector<int> out(embeddings.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<int>(pseudo_label(probs.row(i)));
  return out;
}

double loss_supervised(const Batch& batch, const PrototypeSet& prototypes) {
  check_batch(batch, prototypes);
  const std::size_t n_lab = labelled_count(batch);
  if (n_lab == 0) throw Error("supervised loss needs labelled samples");
  const UnitPrototypes unit(prototypes);
  const Matrix phat = predict_rows(batch.student, unit.unit, prototypes.tau_s);
  std::size_t clamps = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i)
    if (batch.labels[i] != kUnlabelled)
      sum -= safe_log(phat(i, static_cast<std::size_t>(batch.labels[i])), clamps);
  return sum / static_cast<double>(n_lab);
}

Matrix teacher_targets(const Batch& batch, const PrototypeSet& prototypes) {
  check_batch(batch, prototypes);
  const UnitPrototypes unit(prototypes);
  return predict_rows(batch.teacher, unit.unit, prototypes.tau_t);
}

std::vector<double> mean_prediction(const Batch& batch, const PrototypeSet& prototypes,
                                    const Matrix& targets) {
  check_batch(batch, prototypes);
  const UnitPrototypes unit(prototypes);
  const Matrix phat = predict_rows(batch.student, unit.unit, prototypes.tau_s);
  std::vector<double> p_bar(prototypes.classes(), 0.0);
  const double scale = 1.0 / (2.0 * static_cast<double>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i)
    for (std::size_t k = 0; k < p_bar.size(); ++k) p_bar[k] += scale * (phat(i, k) + targets(i, k));
  return p_bar;
}

double loss_unsupervised(const Batch& batch, const PrototypeSet& prototypes, double eps_entropy) {
  check_batch(batch, prototypes);
  if (batch.size() < 2) throw Error("unsupervised loss needs at least 2 view pairs");
  LossWeights w{0.0, eps_entropy, false};
  return total_loss(batch, prototypes, teacher_targets(batch, prototypes), w, {}).unsupervised;
}

PriorLoss loss_prior(std::span<const double> p_bar, std::span<const double> p_prior) {
  if (p_bar.size() != p_prior.size()) throw Error("prior and prediction sizes differ");
  PriorLoss out;
  for (std::size_t k = 0; k < p_bar.size(); ++k)
    out.value -= p_prior[k] * safe_log(p_bar[k], out.clamp_events);
  return out;
}

namespace {

// Mean over anchors of -(1/|P|) sum_p s_ap + logsumexp_{o != a} s_ao, where
// positives are views sharing `group`. Anchors without positives are skipped.
double contrastive(const std::vector<std::span<const double>>& views, const std::vector<long>& group,
                   double temperature) {
  const std::size_t m = views.size();
  double total = 0.0;
  std::size_t anchors = 0;
  std::vector<double> sims(m);
  for (std::size_t a = 0; a < m; ++a) {
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t o = 0; o < m; ++o) {
      if (o == a) continue;
      sims[o] = dot(views[a], views[o]) / temperature;
      top = std::max(top, sims[o]);
    }
    double denom = 0.0, pos_sum = 0.0;
    std::size_t pos = 0;
    for (std::size_t o = 0; o < m; ++o) {
      if (o == a) continue;
      denom += std::exp(sims[o] - top);
      if (group[o] == group[a]) {
        pos_sum += sims[o];
        ++pos;
      }
    }
    if (pos == 0) continue;
    total += top + std::log(denom) - pos_sum / static_cast<double>(pos);
    ++anchors;
  }
  return anchors == 0 ? 0.0 : total / static_cast<double>(anchors);
}

}  // namespace

double loss_representation(const Batch& batch, double lambda_rep, double temperature) {
  if (batch.size() < 2) throw Error("representation loss needs at least 2 samples");
  if (!(lambda_rep >= 0.0 && lambda_rep <= 1.0)) throw Error("lambda_rep must lie in [0, 1]");
  if (!(temperature > 0.0)) throw Error("contrastive temperature must be positive");
  const std::size_t b = batch.size();

  std::vector<std::span<const double>> views;
  std::vector<long> group;
  for (std::size_t i = 0; i < b; ++i) {
    views.push_back(batch.student.row(i));
    group.push_back(static_cast<long>(i));
  }
  for (std::size_t i = 0; i < b; ++i) {
    views.push_back(batch.teacher.row(i));
    group.push_back(static_cast<long>(i));
  }
  const double self_con = contrastive(views, group, temperature);
  if (lambda_rep == 0.0) return self_con;

  views.clear();
  group.clear();
  for (int pass = 0; pass < 2; ++pass)
    for (std::size_t i = 0; i < b; ++i) {
      if (batch.labels[i] == kUnlabelled) continue;
      views.push_back(pass == 0 ? batch.student.row(i) : batch.teacher.row(i));
      group.push_back(batch.labels[i]);
    }
  if (views.empty()) throw Error("supervised contrastive term needs labelled samples");
  const double sup_con = contrastive(views, group, temperature);
  return (1.0 - lambda_rep) * self_con + lambda_rep * sup_con;
}

namespace {

struct ForwardPass {
  Matrix phat;
  std::vector<double> p_bar;
  std::size_t labelled = 0;
};

ForwardPass forward(const Batch& batch, const PrototypeSet& prototypes, const Matrix& unit,
                    const Matrix& targets) {
  if (targets.rows != batch.size() || targets.cols != prototypes.classes())
    throw Error("teacher targets do not match the batch");
  ForwardPass f{predict_rows(batch.student, unit, prototypes.tau_s),
                std::vector<double>(prototypes.classes(), 0.0), labelled_count(batch)};
  const double scale = 1.0 / (2.0 * static_cast<double>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i)
    for (std::size_t k = 0; k < f.p_bar.size(); ++k)
      f.p_bar[k] += scale * (f.phat(i, k) + targets(i, k));
  return f;
}

bool prior_active(const LossWeights& weights, std::span<const double> prior, std::size_t classes) {
  if (!weights.use_prior || prior.empty()) return false;
  if (prior.size() != classes) throw Error("prior length does not match class count");
  return true;
}

}  // namespace

LossBreakdown total_loss(const Batch& batch, const PrototypeSet& prototypes, const Matrix& targets,
                         const LossWeights& weights, std::span<const double> prior) {
  check_batch(batch, prototypes);
  const UnitPrototypes unit(prototypes);
  const ForwardPass f = forward(batch, prototypes, unit.unit, targets);
  const std::size_t b = batch.size();
  const std::size_t classes = prototypes.classes();

  LossBreakdown out;
  double ce = 0.0, sup = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t k = 0; k < classes; ++k)
      ce -= targets(i, k) * safe_log(f.phat(i, k), out.clamp_events);
    if (batch.labels[i] != kUnlabelled)
      sup -= safe_log(f.phat(i, static_cast<std::size_t>(batch.labels[i])), out.clamp_events);
  }
  double h_bar = 0.0;
  for (double p : f.p_bar) h_bar -= p * safe_log(p, out.clamp_events);
  out.unsupervised = ce / static_cast<double>(b) - weights.eps_entropy * h_bar;
  out.supervised = f.labelled > 0 ? sup / static_cast<double>(f.labelled) : 0.0;
  if (prior_active(weights, prior, classes)) {
    const auto p = loss_prior(f.p_bar, prior);
    out.prior = p.value;
    out.clamp_events += p.clamp_events;
  }
  out.total = (1.0 - weights.lambda_cls) * out.unsupervised +
              weights.lambda_cls * out.supervised + out.prior;
  return out;
}

Matrix grad_prototypes(const Batch& batch, const PrototypeSet& prototypes, const Matrix& targets,
                       const LossWeights& weights, std::span<const double> prior) {
  check_batch(batch, prototypes);
  const UnitPrototypes unit(prototypes);
  const ForwardPass f = forward(batch, prototypes, unit.unit, targets);
  const std::size_t b = batch.size();
  const std::size_t classes = prototypes.classes();
  const double w_unsup = (1.0 - weights.lambda_cls) / static_cast<double>(b);
  const double w_sup =
      f.labelled > 0 ? weights.lambda_cls / static_cast<double>(f.labelled) : 0.0;
  const bool with_prior = prior_active(weights, prior, classes);

  // d(loss)/d(p-bar): entropy regularizer and prior cross-entropy.
  std::vector<double> g_bar(classes, 0.0);
  for (std::size_t k = 0; k < classes; ++k) {
    const double p = f.p_bar[k];
    const bool live = p >= kLogFloor;
    g_bar[k] = (1.0 - weights.lambda_cls) * weights.eps_entropy *
               (std::log(std::max(p, kLogFloor)) + (live ? 1.0 : 0.0));
    if (with_prior && live) g_bar[k] -= prior[k] / p;
  }
  const double bar_scale = 1.0 / (2.0 * static_cast<double>(b));

  Matrix g_unit(classes, prototypes.dim());
  std::vector<double> g_p(classes), g_logit(classes);
  for (std::size_t i = 0; i < b; ++i) {
    const auto p = f.phat.row(i);
    for (std::size_t k = 0; k < classes; ++k) {
      g_p[k] = bar_scale * g_bar[k];
      if (p[k] >= kLogFloor) g_p[k] -= w_unsup * targets(i, k) / p[k];
    }
    if (batch.labels[i] != kUnlabelled) {
      const auto y = static_cast<std::size_t>(batch.labels[i]);
      if (p[y] >= kLogFloor) g_p[y] -= w_sup / p[y];
    }
    // Softmax Jacobian.
    const double inner = dot(g_p, p);
    for (std::size_t k = 0; k < classes; ++k) g_logit[k] = p[k] * (g_p[k] - inner);
    const auto h = batch.student.row(i);
    for (std::size_t k = 0; k < classes; ++k) {
      const double s = g_logit[k] / prototypes.tau_s;
      auto g = g_unit.row(k);
      for (std::size_t j = 0; j < h.size(); ++j) g[j] += s * h[j];
    }
  }

  // Through c / |c|: (I - u u^T) g / |c|.
  Matrix grad(classes, prototypes.dim());
  for (std::size_t k = 0; k < classes; ++k) {
    const auto u = unit.unit.row(k);
    const auto g = g_unit.row(k);
    const double radial = dot(u, g);
    auto out = grad.row(k);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = (g[j] - u[j] * radial) / unit.norms[k];
  }
  return grad;
}

void TrainConfig::validate() const {
  if (classes < 2) throw Error("training needs at least 2 classes");
  if (!(tau_s > 0.0) || !(tau_t > 0.0)) throw Error("temperatures must be positive");
  if (!(weights.lambda_cls >= 0.0 && weights.lambda_cls <= 1.0))
    throw Error("lambda_cls must lie in [0, 1]");
  if (!(lambda_rep >= 0.0 && lambda_rep <= 1.0)) throw Error("lambda_rep must lie in [0, 1]");
  if (!(weights.eps_entropy >= 0.0)) throw Error("entropy weight must be non-negative");
  if (!(learning_rate > 0.0)) throw Error("learning rate must be positive");
  if (batch_size < 2) throw Error("batch size must be at least 2");
  if (!(view_noise >= 0.0)) throw Error("view noise must be non-negative");
  if (!(rep_temperature > 0.0)) throw Error("contrastive temperature must be positive");
  selection.validate();
}

PrototypeSet initial_prototypes(const EmbeddingSet& embeddings, const LabelInfo& labels,
                                const SelectionContext& context, const TrainConfig& config) {
  const std::size_t classes = config.classes;
  const std::size_t d = embeddings.dim();
  PrototypeSet out{Matrix(classes, d), config.tau_s, config.tau_t};
  std::vector<char> filled(classes, 0);
  std::vector<std::span<const double>> chosen;

  for (int c : labels.old_classes) {
    if (c < 0 || static_cast<std::size_t>(c) >= classes)
      throw Error("labelled class " + std::to_string(c) + " outside 0..K-1");
    auto row = out.prototypes.row(static_cast<std::size_t>(c));
    for (SampleId i = 0; i < embeddings.size(); ++i)
      if (labels.labels[i] == c)
        for (std::size_t j = 0; j < d; ++j) row[j] += embeddings.row(i)[j];
    if (!normalize_in_place(row)) throw Error("labelled class mean has zero norm");
    filled[static_cast<std::size_t>(c)] = 1;
    chosen.push_back(row);
  }

  auto closest = [&](SampleId i) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& c : chosen) best = std::max(best, dot(embeddings.row(i), c));
    return best;
  };
  auto next_free = [&]() -> std::optional<std::size_t> {
    for (std::size_t k = 0; k < classes; ++k)
      if (!filled[k]) return k;
    return std::nullopt;
  };
  auto place = [&](std::size_t slot, SampleId i) {
    std::copy_n(embeddings.row(i).begin(), d, out.prototypes.row(slot).begin());
    filled[slot] = 1;
    chosen.push_back(out.prototypes.row(slot));
  };

  const IdList unlabelled = labels.unlabelled_ids();
  SelectionConfig peak_config = config.selection;
  peak_config.density_mode = DensityMode::kAffinityOnly;
  for (SampleId peak : select_density(context, nullptr, unlabelled, peak_config)) {
    const auto slot = next_free();
    if (!slot) break;
    if (chosen.empty() || closest(peak) < config.claim_cosine) place(*slot, peak);
  }
  // Not enough unclaimed peaks: farthest-point fill from the unlabelled pool.
  while (const auto slot = next_free()) {
    const IdList& pool = unlabelled.empty() ? labels.labelled_ids() : unlabelled;
    SampleId best = pool.front();
    double best_sim = std::numeric_limits<double>::infinity();
    for (SampleId i : pool) {
      const double s = chosen.empty() ? 0.0 : closest(i);
      if (s < best_sim) {
        best_sim = s;
        best = i;
      }
    }
    place(*slot, best);
  }
  return out;
}

namespace {

void noisy_view(std::span<const double> h, double sigma, std::mt19937_64& rng, std::span<double> out) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  do {
    for (std::size_t j = 0; j < h.size(); ++j) out[j] = h[j] + sigma * gauss(rng);
  } while (!normalize_in_place(out));
}

Batch make_batch(const EmbeddingSet& embeddings, const LabelInfo& labels,
                 std::span<const SampleId> ids, double sigma, std::mt19937_64& rng) {
  Batch batch{Matrix(ids.size(), embeddings.dim()), Matrix(ids.size(), embeddings.dim()),
              std::vector<int>(ids.size())};
  for (std::size_t r = 0; r < ids.size(); ++r) {
    noisy_view(embeddings.row(ids[r]), sigma, rng, batch.student.row(r));
    noisy_view(embeddings.row(ids[r]), sigma, rng, batch.teacher.row(r));
    batch.labels[r] = labels.labels[ids[r]];
  }
  return batch;
}

}  // namespace

TrainResult train(const EmbeddingSet& embeddings, const LabelInfo& labels, const TrainConfig& config,
                  std::uint64_t seed) {
  config.validate();
  labels.validate(embeddings.size());
  const IdList labelled = labels.labelled_ids();
  const IdList unlabelled = labels.unlabelled_ids();
  if (labelled.empty()) throw Error("training needs a non-empty labelled split");

  const SelectionContext context(embeddings, config.selection.k, config.selection.k_s);
  TrainResult result;
  result.prototypes = initial_prototypes(embeddings, labels, context, config);

  std::mt19937_64 rng(seed);
  IdList pool = unlabelled;
  std::vector<double> prior;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    EpochStats stats;
    stats.epoch = epoch;
    stats.learning_rate = 0.5 * config.learning_rate *
                          (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) /
                                          static_cast<double>(config.epochs)));

    IdList order = labelled;
    order.insert(order.end(), pool.begin(), pool.end());
    std::shuffle(order.begin(), order.end(), rng);

    std::size_t steps = 0;
    for (std::size_t start = 0; start + 2 <= order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const auto ids = std::span<const SampleId>(order).subspan(start, stop - start);
      const Batch batch = make_batch(embeddings, labels, ids, config.view_noise, rng);
      const Matrix targets = teacher_targets(batch, result.prototypes);

      const auto loss = total_loss(batch, result.prototypes, targets, config.weights, prior);
      if (!std::isfinite(loss.total))
        throw Error("training diverged at epoch " + std::to_string(epoch) + ", step " +
                    std::to_string(steps) + " (loss " + std::to_string(loss.total) + ")");
      const Matrix grad = grad_prototypes(batch, result.prototypes, targets, config.weights, prior);
      for (std::size_t v = 0; v < grad.values.size(); ++v)
        result.prototypes.prototypes.values[v] -= stats.learning_rate * grad.values[v];

      const bool any_labelled = labelled_count(batch) > 0;
      stats.loss_rep += loss_representation(batch, any_labelled ? config.lambda_rep : 0.0,
                                            config.rep_temperature);
      stats.loss_sup += loss.supervised;
      stats.loss_unsup += loss.unsupervised;
      stats.loss_prior += loss.prior;
      stats.clamp_events += loss.clamp_events;
      ++steps;
    }
    if (steps > 0) {
      const auto s = static_cast<double>(steps);
      stats.loss_sup /= s;
      stats.loss_unsup /= s;
      stats.loss_prior /= s;
      stats.loss_rep /= s;
    }

    const ProbMatrix probs = predict_all(embeddings, result.prototypes, config.tau_t);
    result.selection = resample_epoch(context, probs, unlabelled, config.selection, epoch);
    if (config.use_selection) pool = result.selection.union_ids;
    prior = result.selection.prior;
    stats.conf_size = result.selection.conf_ids.size();
    stats.dens_size = result.selection.dens_ids.size();
    stats.union_size = result.selection.union_ids.size();
    stats.fallback = result.selection.fallback;
    result.stats.push_back(stats);
  }
  return result;
}

void save_checkpoint(const PrototypeSet& prototypes, std::size_t epoch,
                     const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts unsupported");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  const nlohmann::json header = {{"K", prototypes.classes()}, {"d", prototypes.dim()},
                                 {"tau_s", prototypes.tau_s}, {"tau_t", prototypes.tau_t},
                                 {"epoch", epoch}};
  out << header.dump() << '\n';
  for (double v : prototypes.prototypes.values) {
    const auto f = static_cast<float>(v);
    out.write(reinterpret_cast<const char*>(&f), sizeof f);
  }
  if (!out) throw Error("failed writing " + path.string());
}

PrototypeSet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::string line;
  std::getline(in, line);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed checkpoint header: " + std::string(e.what()));
  }
  PrototypeSet out{Matrix(header.at("K").get<std::size_t>(), header.at("d").get<std::size_t>()),
                   header.at("tau_s").get<double>(), header.at("tau_t").get<double>()};
  for (double& v : out.prototypes.values) {
    float f = 0.0f;
    in.read(reinterpret_cast<char*>(&f), sizeof f);
    if (!in) throw Error("truncated checkpoint " + path.string());
    v = f;
  }
  out.validate();
  return out;
}

}  // namespace ltgcd
