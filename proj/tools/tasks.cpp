#include "tasks.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "dtkd/metrics.hpp"

namespace dtkd::cli {

namespace {

// Stream offsets keep every synthetic split on its own generator indices.
constexpr std::uint64_t kSplitStride = 1'000'000;

std::uint64_t shapes_offset(Group group, Split split) {
  return kSplitStride * (2 * (group == Group::target ? 1u : 0u) + (split == Split::val ? 1u : 0u));
}

ImageDataset select_classes(const ImageDataset& ds, const std::vector<std::size_t>& classes) {
  ImageDataset out;
  out.split = ds.split;
  for (std::size_t c : classes) {
    require(c < ds.num_classes(), ErrorKind::LabelOutOfRange,
            "class " + std::to_string(c) + " not present in a " + std::to_string(ds.num_classes()) + "-class dataset");
    out.class_names.push_back(ds.class_names[c]);
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto it = std::find(classes.begin(), classes.end(), ds.labels[i]);
    if (it == classes.end()) continue;
    out.images.push_back(ds.images[i]);
    out.labels.push_back(static_cast<std::size_t>(it - classes.begin()));
  }
  require(out.size() > 0, ErrorKind::EmptyDataset, "no samples of the selected classes");
  return out;
}

void resize_all(ImageDataset& ds, std::size_t size) {
  for (auto& img : ds.images)
    if (img.dim(1) != size || img.dim(2) != size) img = resize_bilinear(img, size, size);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(f), ErrorKind::IoError, "cannot write " + path);
  f << text;
}

}  // namespace

RawTask load_raw_task(const ExperimentConfig& cfg, Group group) {
  const auto& classes = group == Group::source ? cfg.source_classes : cfg.target_classes;
  RawTask task;
  if (cfg.dataset == DatasetKind::shapes) {
    auto make = [&](Split split, std::size_t per_class) {
      return generate_shapes({classes, per_class, cfg.image_size, cfg.shapes_noise, cfg.data_seed,
                              shapes_offset(group, split), split});
    };
    task.train = make(Split::train, cfg.shapes_train_per_class).data;
    ShapesDataset val = make(Split::val, cfg.shapes_val_per_class);
    task.val = std::move(val.data);
    task.val_outlines = std::move(val.outlines);
    return task;
  }
  auto load = [&](const std::string& data, const std::string& labels, Split split) {
    return cfg.dataset == DatasetKind::cifar10 ? load_cifar10_binary(data, split) : load_idx(data, labels, 10, split);
  };
  task.train = select_classes(load(cfg.train_data, cfg.train_labels, Split::train), classes);
  task.val = select_classes(load(cfg.val_data, cfg.val_labels, Split::val), classes);
  resize_all(task.train, cfg.image_size);
  resize_all(task.val, cfg.image_size);
  return task;
}

PreparedTask prepare_task(const RawTask& raw, const ExperimentConfig& cfg, std::optional<std::uint64_t> perturb_seed) {
  PreparedTask task;
  switch (cfg.normalization) {
    case Normalization::none: break;
    case Normalization::cifar:
      task.mean = kCifarMean;
      task.stddev = kCifarStd;
      break;
    case Normalization::train: {
      const ChannelMoments m = channel_moments(raw.train);
      task.mean = m.mean;
      task.stddev = m.stddev;
      break;
    }
  }
  ImageDataset train = raw.train;
  if (perturb_seed) {
    const std::uint64_t seed = *perturb_seed;
    if (cfg.train_fraction < 1.0) train = subset_training_fraction(train, cfg.train_fraction, seed);
    if (cfg.image_noise_train_fraction > 0.0) train = apply_corruption(std::move(train), cfg.corruption_spec(seed));
    if (cfg.label_noise_fraction > 0.0) train = apply_label_noise(std::move(train), cfg.label_noise_fraction, seed);
  }
  task.train = normalize(std::move(train), task.mean, task.stddev);
  task.val = normalize(raw.val, task.mean, task.stddev);
  return task;
}

TrainResult pretrain(const std::string& arch, const PreparedTask& task, const ExperimentConfig& cfg,
                     std::uint64_t seed) {
  const std::size_t k = task.train.num_classes();
  Model model;
  if (arch == "student") {
    model = build_student(k, cfg.image_size, seed);
  } else if (arch == "teacher") {
    model = build_teacher(k, cfg.image_size, seed);
  } else {
    fail(ErrorKind::InvalidConfig, "unknown architecture '" + arch + "' (student|teacher)");
  }
  TrainingConfig tc = cfg.training;
  tc.seed = seed;
  tc.max_epochs = cfg.pretrain_max_epochs;
  return train_tl(std::move(model), task.train, task.val, tc);
}

TrainResult finetune(const Model& backbone, const Model* teacher, const PreparedTask& task,
                     const ExperimentConfig& cfg, std::uint64_t seed) {
  Model student = freeze_backbone(replace_head(backbone, task.train.num_classes(), seed), cfg.freeze_backbone);
  TrainingConfig tc = cfg.training;
  tc.seed = seed;
  if (teacher) return train_tl_kd(std::move(student), *teacher, task.train, task.val, tc, cfg.distillation);
  return train_tl(std::move(student), task.train, task.val, tc);
}

void write_run_outputs(const std::string& dir, const TrainResult& result, const ImageDataset& val,
                       std::size_t threads) {
  std::filesystem::create_directories(dir);
  write_history_csv(dir + "/history.csv", result.history);
  save_checkpoint(dir + "/best.dtkd", result.model);
  const auto preds = predict(result.model, val, 256, threads);
  const ConfusionMatrix cm = confusion_matrix(preds, val.labels, val.num_classes());
  auto j = nlohmann::ordered_json::parse(metrics_json(metrics_from_cm(cm), val.class_names));
  j["best_epoch"] = result.history.best_epoch;
  j["epochs_run"] = result.history.epochs.size();
  j["stopped_early"] = result.history.stopped_early;
  write_text(dir + "/metrics.json", j.dump(2) + "\n");
  write_text(dir + "/confusion.csv", confusion_csv(cm, val.class_names));
}

std::string expand_seed(std::string path, std::uint64_t seed) {
  const std::string token = "{seed}";
  for (auto pos = path.find(token); pos != std::string::npos; pos = path.find(token, pos))
    path.replace(pos, token.size(), std::to_string(seed));
  return path;
}

}  // namespace dtkd::cli
