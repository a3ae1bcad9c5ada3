#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dtkd/data.hpp"
#include "dtkd/layers.hpp"
#include "dtkd/losses.hpp"

namespace dtkd {

struct TrainingConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 200;
  std::size_t lr_patience = 3;
  double lr_factor = 0.9;
  std::size_t early_stop_patience = 10;
  std::uint64_t seed = 0;
  double flip_prob = 0.0;  // random horizontal flip of training images
  std::size_t threads = 1;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_acc = 0.0;
  double lr = 0.0;  // rate in effect during the epoch
  double wall_seconds = 0.0;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  bool stopped_early = false;

  std::vector<double> val_accuracies() const;
};

/// Header epoch,train_loss,val_acc,lr with round-trip precision.
std::string history_csv(const TrainingHistory& history);
void write_history_csv(const std::string& path, const TrainingHistory& history);

struct OptimizerState {
  std::vector<std::vector<double>> velocity;  // one buffer per parameter, visit order
  double lr = 0.0;
  double sched_best = 0.0;
  std::size_t sched_counter = 0;
  double stop_best = 0.0;
  std::size_t stop_counter = 0;
  bool seen_any = false;
  bool stop_seen_any = false;

  static OptimizerState fresh(const TrainingConfig& cfg);
};

/// v <- momentum * v + (g + weight_decay * p); p <- p - lr * v.
void sgd_update(std::span<double> param, std::span<const double> grad, std::span<double> velocity, double lr,
                double momentum, double weight_decay);

/// Applies sgd_update to every unfrozen parameter using its stored gradient.
/// Frozen parameters are skipped entirely.
void sgd_step(Model& model, OptimizerState& state, const TrainingConfig& cfg);

/// Returns true when the learning rate was reduced.
bool reduce_lr_on_plateau(OptimizerState& state, double val_acc, const TrainingConfig& cfg);

enum class StopDecision { continue_training, stop };
/// Returns stop after early_stop_patience epochs without strict improvement.
StopDecision early_stopping_check(OptimizerState& state, double val_acc, const TrainingConfig& cfg);

/// Marks every parameter of the model frozen.
Model freeze_all(Model model);
bool fully_frozen(const Model& model);

/// Eval-mode teacher probabilities at temperature T. The teacher must be fully frozen.
SoftLabelBatch teacher_soft_labels(const Model& teacher, const Tensor& images, double temperature);

/// Eval-mode logits for the whole dataset, computed in chunks of batch_size.
Tensor predict_logits(const Model& model, const ImageDataset& ds, std::size_t batch_size = 256,
                      std::size_t threads = 1);
std::vector<std::size_t> predict(const Model& model, const ImageDataset& ds, std::size_t batch_size = 256,
                                 std::size_t threads = 1);
double accuracy(const Model& model, const ImageDataset& ds, std::size_t batch_size = 256, std::size_t threads = 1);

struct TrainResult {
  Model model;  // parameters from the best validation epoch
  TrainingHistory history;
};

/// Cross-entropy fine-tuning with per-epoch validation, plateau scheduling and early stopping.
TrainResult train_tl(Model student, const ImageDataset& train, const ImageDataset& val, const TrainingConfig& cfg);

/// As train_tl with the distillation loss against a frozen teacher.
TrainResult train_tl_kd(Model student, const Model& teacher, const ImageDataset& train, const ImageDataset& val,
                        const TrainingConfig& cfg, const DistillationConfig& dcfg);

/// First 1-based epoch whose validation accuracy reaches threshold.
std::optional<std::size_t> epochs_to_threshold(const TrainingHistory& history, double threshold);

}  // namespace dtkd
