#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "ltgcd/selection.hpp"

namespace ltgcd {

/// K cosine prototypes with student and teacher temperatures.
/// Rows may drift in norm during training; they are normalized at use.
struct PrototypeSet {
  Matrix prototypes;
  double tau_s = 0.1;
  double tau_t = 0.05;

  std::size_t classes() const { return prototypes.rows; }
  std::size_t dim() const { return prototypes.cols; }
  void validate() const;
};

/// <h, c_k / |c_k|> / tau for every prototype.
std::vector<double> logits(std::span<const double> h, const PrototypeSet& prototypes, double tau);

/// Softmax of logits().
std::vector<double> predict(std::span<const double> h, const PrototypeSet& prototypes, double tau);

/// Predictions for every sample at temperature `tau`.
ProbMatrix predict_all(const EmbeddingSet& embeddings, const PrototypeSet& prototypes, double tau);

/// Arg-max class per sample.
std::vector<int> predict_labels(const EmbeddingSet& embeddings, const PrototypeSet& prototypes);

/// Two views per sample plus an optional label (kUnlabelled otherwise).
struct Batch {
  Matrix student;  ///< rows feed the student prediction p-hat
  Matrix teacher;  ///< rows feed the sharpened target p-tilde
  std::vector<int> labels;

  std::size_t size() const { return student.rows; }
};

/// Floor applied inside every logarithm.
inline constexpr double kLogFloor = 1e-12;

struct LossWeights {
  double lambda_cls = 0.35;
  double eps_entropy = 1.0;
  bool use_prior = true;
};

struct LossBreakdown {
  double supervised = 0.0;
  double unsupervised = 0.0;
  double prior = 0.0;
  double total = 0.0;
  std::size_t clamp_events = 0;
};

/// Mean cross-entropy of the labelled samples' student predictions.
double loss_supervised(const Batch& batch, const PrototypeSet& prototypes);

/// Teacher targets (temperature tau_t, teacher views), one row per sample.
Matrix teacher_targets(const Batch& batch, const PrototypeSet& prototypes);

/// Mean CE(p-tilde, p-hat) minus eps * H(p-bar).
double loss_unsupervised(const Batch& batch, const PrototypeSet& prototypes, double eps_entropy);

struct PriorLoss {
  double value = 0.0;
  std::size_t clamp_events = 0;
};

/// Cross-entropy of p_prior against the batch-mean prediction p-bar.
PriorLoss loss_prior(std::span<const double> p_bar, std::span<const double> p_prior);

/// (1 - lambda_rep) * SelfCon + lambda_rep * SupCon over the two views.
/// Evaluated for monitoring only; embeddings are frozen.
double loss_representation(const Batch& batch, double lambda_rep, double temperature);

/// Batch mean of (p-hat + p-tilde) / 2.
std::vector<double> mean_prediction(const Batch& batch, const PrototypeSet& prototypes,
                                    const Matrix& targets);

/// Full classifier objective with the teacher targets held fixed.
/// `prior` is ignored unless weights.use_prior.
LossBreakdown total_loss(const Batch& batch, const PrototypeSet& prototypes, const Matrix& targets,
                         const LossWeights& weights, std::span<const double> prior);

/// Exact gradient of total_loss with respect to the raw prototype rows.
Matrix grad_prototypes(const Batch& batch, const PrototypeSet& prototypes, const Matrix& targets,
                       const LossWeights& weights, std::span<const double> prior);

struct TrainConfig {
  std::size_t classes = 0;
  double tau_s = 0.1;
  double tau_t = 0.05;
  LossWeights weights;
  double lambda_rep = 0.35;
  double rep_temperature = 0.07;
  double learning_rate = 0.1;
  std::size_t batch_size = 128;
  std::size_t epochs = 50;
  /// Std-dev of the Gaussian noise that simulates augmented views.
  double view_noise = 0.05;
  /// Density peaks this similar to an existing prototype are treated as claimed.
  double claim_cosine = 0.7;
  /// false draws unlabelled batches from the whole unlabelled set every epoch.
  bool use_selection = true;
  SelectionConfig selection;

  void validate() const;
};

struct EpochStats {
  std::size_t epoch = 0;
  double learning_rate = 0.0;
  double loss_sup = 0.0;
  double loss_unsup = 0.0;
  double loss_prior = 0.0;
  double loss_rep = 0.0;
  std::size_t conf_size = 0;
  std::size_t dens_size = 0;
  std::size_t union_size = 0;
  std::size_t clamp_events = 0;
  bool fallback = false;
};

struct TrainResult {
  PrototypeSet prototypes;
  std::vector<EpochStats> stats;
  /// Selection produced after the final epoch.
  SelectionResult selection;
};

/// Labelled class means for old classes, unclaimed unlabelled density peaks
/// for the rest.
PrototypeSet initial_prototypes(const EmbeddingSet& embeddings, const LabelInfo& labels,
                                const SelectionContext& context, const TrainConfig& config);

/// Epoch-driven SGD on the prototypes with end-of-epoch reliable-sample
/// selection. Deterministic for a fixed seed.
TrainResult train(const EmbeddingSet& embeddings, const LabelInfo& labels, const TrainConfig& config,
                  std::uint64_t seed);

/// JSON header line followed by the raw little-endian f32 prototype matrix.
void save_checkpoint(const PrototypeSet& prototypes, std::size_t epoch,
                     const std::filesystem::path& path);
PrototypeSet load_checkpoint(const std::filesystem::path& path);

}  // namespace ltgcd
