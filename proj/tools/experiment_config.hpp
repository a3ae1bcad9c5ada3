#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dtkd/attribution.hpp"
#include "dtkd/data.hpp"
#include "dtkd/losses.hpp"
#include "dtkd/training.hpp"

namespace dtkd::cli {

enum class DatasetKind { shapes, cifar10, idx };
enum class Normalization { none, cifar, train };

/// Flat key = value experiment description. One assignment per line, `#`
/// starts a comment.
struct ExperimentConfig {
  // data
  DatasetKind dataset = DatasetKind::shapes;
  std::string train_data;  // CIFAR binary batch or IDX image file
  std::string train_labels;  // IDX label file
  std::string val_data;
  std::string val_labels;
  std::vector<std::size_t> source_classes = {0, 1, 2, 3, 4};
  std::vector<std::size_t> target_classes = {5, 6, 7, 8, 9};
  std::size_t image_size = 32;
  Normalization normalization = Normalization::train;
  std::size_t shapes_train_per_class = 200;
  std::size_t shapes_val_per_class = 100;
  double shapes_noise = 0.08;
  std::uint64_t data_seed = 1234;

  // target-task perturbations
  double train_fraction = 1.0;
  double label_noise_fraction = 0.0;
  double image_noise_train_fraction = 0.0;
  CorruptionKind corruption = CorruptionKind::center_black;
  std::size_t center_min = 0;  // 0 picks 200/224 of the image side
  std::size_t center_max = 0;  // 0 picks the full side

  // models and optimisation
  TrainingConfig training;
  std::size_t pretrain_max_epochs = 30;
  DistillationConfig distillation;
  bool freeze_backbone = true;

  // attribution
  std::size_t grid_rows = 4;
  std::size_t grid_cols = 4;
  std::size_t background_size = 100;
  GameOutput game_output = GameOutput::logits;

  // runs
  std::vector<std::uint64_t> seeds = {0, 7, 42};
  std::string out = "runs";
  std::string run_name = "run";

  /// Sets one key from its textual value. Unknown keys and malformed values throw InvalidConfig.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;

  /// Range checks and path existence.
  void validate() const;

  CorruptionSpec corruption_spec(std::uint64_t seed) const;
};

/// Every key in serialization order.
const std::vector<std::string>& config_keys();

/// With `validate` false only syntax, key names and value types are checked,
/// so overrides can be applied before calling ExperimentConfig::validate.
ExperimentConfig parse_config(std::string_view text, bool validate = true);
ExperimentConfig load_config(const std::string& path, bool validate = true);
std::string serialize_config(const ExperimentConfig& cfg);

/// Shortest text that reads back to the same double.
std::string format_double(double v);

std::string_view to_string(DatasetKind kind);
std::string_view to_string(Normalization n);
std::string_view to_string(CorruptionKind kind);

}  // namespace dtkd::cli
