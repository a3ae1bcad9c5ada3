#pragma once

#include <optional>
#include <string>
#include <vector>

#include "experiment_config.hpp"

namespace dtkd::cli {

enum class Group { source, target };

/// Pixel-space images in [0,1] for one label group, labels remapped to 0..k-1.
struct RawTask {
  ImageDataset train;
  ImageDataset val;
  std::vector<Polygon> val_outlines;  // synthetic shapes only
};

RawTask load_raw_task(const ExperimentConfig& cfg, Group group);

struct PreparedTask {
  ImageDataset train;
  ImageDataset val;
  ChannelStats mean{0, 0, 0};
  ChannelStats stddev{1, 1, 1};
};

/// Normalizes both splits. When `perturb_seed` is set the training split is
/// first reduced to train_fraction, then image-corrupted, then label-noised.
/// Normalization statistics always come from the unperturbed training split.
PreparedTask prepare_task(const RawTask& raw, const ExperimentConfig& cfg, std::optional<std::uint64_t> perturb_seed);

/// Trains an architecture ("student" or "teacher") from scratch on the task.
TrainResult pretrain(const std::string& arch, const PreparedTask& task, const ExperimentConfig& cfg,
                     std::uint64_t seed);

/// Fresh head for the task, optional backbone freezing, then TL or TL+KD.
TrainResult finetune(const Model& backbone, const Model* teacher, const PreparedTask& task,
                     const ExperimentConfig& cfg, std::uint64_t seed);

/// history.csv, best.dtkd, metrics.json and confusion.csv under `dir`.
void write_run_outputs(const std::string& dir, const TrainResult& result, const ImageDataset& val,
                       std::size_t threads);

/// Replaces every "{seed}" in a path template.
std::string expand_seed(std::string path, std::uint64_t seed);

}  // namespace dtkd::cli
