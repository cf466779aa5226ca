#pragma once

#include "demoe/losses.hpp"
#include "demoe/model.hpp"

#include <json.hpp>

#include <array>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace demoe {

struct LossWeights {
  double annotator_kl = 1e-3;          // lambda_ann
  double demographic_kl = 1e-4;        // lambda_id
  double demo_specialization = 0.0;    // lambda_demo
  /// +1 adds the symmetric-KL term as printed (minimizing it pulls subgroup
  /// usage together); -1 rewards divergence between subgroups.
  double specialization_sign = 1.0;

  void validate() const;
};

enum class Phase { A = 0, B = 1, C = 2 };
std::string_view to_string(Phase phase);

struct PhaseWeights {
  double load = 0.0;
  double orthogonality = 0.0;
  double variance = 0.0;
};

struct PhaseSchedule {
  std::array<PhaseWeights, 3> phases{};
  double threshold_ab = 0.3;
  double threshold_bc = 0.15;
  double ema_decay = 0.9;

  const PhaseWeights& weights(Phase p) const { return phases[static_cast<std::size_t>(p)]; }
  void validate() const;
};

struct PhaseStep {
  Phase phase = Phase::A;
  PhaseWeights weights;
};

/// Advances at most one phase: A -> B once `running_load_std` < threshold_ab,
/// B -> C once it is < threshold_bc. C is terminal.
PhaseStep phase_step(const PhaseSchedule& schedule, Phase current, double running_load_std);

/// Exponential moving average of batch load_std driving phase_step.
class PhaseTracker {
public:
  explicit PhaseTracker(PhaseSchedule schedule) : schedule_(schedule) {}

  Phase phase() const { return phase_; }
  const PhaseWeights& weights() const { return schedule_.weights(phase_); }
  std::optional<double> running() const { return running_; }

  /// Folds one batch value into the average and returns the (possibly advanced) phase.
  PhaseStep observe(double batch_load_std);

private:
  PhaseSchedule schedule_;
  Phase phase_ = Phase::A;
  std::optional<double> running_;
};

/// The weight applied to each auxiliary component in one step.
struct AppliedWeights {
  double annotator_kl = 0.0;
  double demographic_kl = 0.0;
  double load = 0.0;
  double orthogonality = 0.0;
  double variance = 0.0;
  double demo_specialization = 0.0;  // includes specialization_sign
};

struct LossBreakdown {
  double mse = 0.0;
  double kl_annotator = 0.0;
  double kl_demographic = 0.0;
  double load_std = 0.0;
  double orthogonality = 0.0;
  double variance = 0.0;
  double demo_specialization = 0.0;
  double total = 0.0;
  Phase active_phase = Phase::A;
  AppliedWeights weights;

  nlohmann::json to_json() const;
};

struct OptimizerConfig {
  double lr_gate = 1e-3;
  double lr_main = 1e-3;
  double momentum = 0.9;
  std::size_t max_epochs = 50;
  std::size_t patience = 5;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const;
};

/// One supervised sample. `profile` must outlive training.
struct TrainingExample {
  std::string instance_id;
  std::string annotator_id;
  const AnnotatorProfile* profile = nullptr;
  double rating = 0.0;
  double weight = 1.0;
  bool is_synthetic = false;
};

/// Examples for `records`, resolving profiles through `profiles` (all weights 1).
std::vector<TrainingExample> make_examples(const std::vector<AnnotationRecord>& records, const ProfileIndex& profiles);

/// Gradient with the shape of ModelParameters. Embedding tables hold only
/// entries touched by the batch; the default annotator is never included.
using Gradient = ModelParameters;

Gradient zero_gradient(const ModelParameters& params);

struct LossEvaluation {
  LossBreakdown breakdown;
  Gradient gradient;
};

/// Loss (and optionally its gradient) on one batch. `noise` supplies one
/// vector of size model.noise_dim() per example, or null for posterior means.
/// MSE is sum_i w_i (z_hat_i - z_i)^2 / B on normalized targets.
LossEvaluation total_loss(const DemMoE& model, const TextEmbeddingStore& store, std::span<const TrainingExample> batch,
                          const std::vector<Eigen::VectorXd>* noise, const LossWeights& weights,
                          const PhaseWeights& phase_weights, Phase phase, bool with_gradient = true);

/// SGD with momentum: v <- mu v + g; theta <- theta - lr v. Embedding
/// velocities are created on first touch; untouched rows do not move.
class SgdMomentum {
public:
  SgdMomentum(double lr_gate, double lr_main, double momentum);
  void step(ModelParameters& params, const Gradient& grad);

private:
  double lr_gate_;
  double lr_main_;
  double momentum_;
  std::optional<Gradient> velocity_;
};

/// Patience-based early stopping on a metric where lower is better.
class EarlyStopping {
public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Records `metric` for `epoch`; returns true when training should stop.
  bool update(std::size_t epoch, double metric);

  bool improved() const { return improved_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_metric() const { return best_; }

private:
  std::size_t patience_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t bad_epochs_ = 0;
  bool improved_ = false;
};

struct EpochLog {
  std::size_t epoch = 0;
  LossBreakdown mean_loss;
  Phase phase = Phase::A;
  double running_load_std = 0.0;
  std::optional<double> dev_mae;
  std::size_t steps = 0;
  double wall_time_seconds = 0.0;
};

struct TrainingLog {
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  bool early_stopped = false;
  PhaseSchedule schedule;

  /// Wall times are omitted when `include_timing` is false so logs of
  /// identical runs compare equal.
  nlohmann::json to_json(bool include_timing = true) const;
};

struct TrainingOptions {
  OptimizerConfig optimizer;
  LossWeights loss;
  PhaseSchedule schedule;
};

struct TrainingResult {
  DemMoE model;  // parameters of the best dev epoch
  TrainingLog log;
};

class DivergenceError : public std::runtime_error {
public:
  DivergenceError(std::size_t epoch, std::size_t step, TrainingLog log);
  std::size_t epoch() const { return epoch_; }
  std::size_t step() const { return step_; }
  const TrainingLog& log() const { return log_; }

private:
  std::size_t epoch_;
  std::size_t step_;
  TrainingLog log_;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Mini-batch training with early stopping on dev MAE. Examples with weight 0
/// are dropped before batching. With an empty dev set every epoch counts as
/// an improvement and the final epoch is returned.
TrainingResult train(DemMoE model, const TextEmbeddingStore& store, std::vector<TrainingExample> train_examples,
                     const std::vector<TrainingExample>& dev_examples, const TrainingOptions& options,
                     const EpochCallback& on_epoch = {});

/// Mean absolute error of evaluation-mode predictions clipped to the rating scale.
double mean_absolute_error(const DemMoE& model, const TextEmbeddingStore& store,
                           const std::vector<TrainingExample>& examples);

}  // namespace demoe
