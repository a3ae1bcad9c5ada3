#include "dtkd/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>

#include "dtkd/parallel.hpp"

namespace dtkd {

void TrainingConfig::validate() const {
  require(learning_rate >= 0.0 && std::isfinite(learning_rate), ErrorKind::InvalidConfig,
          "learning_rate must be non-negative");
  require(momentum >= 0.0 && momentum < 1.0, ErrorKind::InvalidConfig, "momentum must lie in [0, 1)");
  require(weight_decay >= 0.0, ErrorKind::InvalidConfig, "weight_decay must be non-negative");
  require(batch_size > 0, ErrorKind::InvalidConfig, "batch_size must be positive");
  require(max_epochs > 0, ErrorKind::InvalidConfig, "max_epochs must be positive");
  require(lr_patience > 0, ErrorKind::InvalidConfig, "lr_patience must be positive");
  require(lr_factor > 0.0 && lr_factor < 1.0, ErrorKind::InvalidConfig, "lr_factor must lie in (0, 1)");
  require(early_stop_patience > 0, ErrorKind::InvalidConfig, "early_stop_patience must be positive");
  require(flip_prob >= 0.0 && flip_prob <= 1.0, ErrorKind::InvalidProbability, "flip_prob must lie in [0, 1]");
}

std::vector<double> TrainingHistory::val_accuracies() const {
  std::vector<double> out;
  for (const auto& e : epochs) out.push_back(e.val_acc);
  return out;
}

std::string history_csv(const TrainingHistory& history) {
  std::string out = "epoch,train_loss,val_acc,lr\n";
  char line[128];
  for (const auto& e : history.epochs) {
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g\n", e.epoch, e.train_loss, e.val_acc, e.lr);
    out += line;
  }
  return out;
}

void write_history_csv(const std::string& path, const TrainingHistory& history) {
  std::ofstream f(path, std::ios::trunc);
  require(static_cast<bool>(f), ErrorKind::IoError, "cannot write " + path);
  f << history_csv(history);
}

OptimizerState OptimizerState::fresh(const TrainingConfig& cfg) {
  OptimizerState s;
  s.lr = cfg.learning_rate;
  return s;
}

void sgd_update(std::span<double> param, std::span<const double> grad, std::span<double> velocity, double lr,
                double momentum, double weight_decay) {
  require(param.size() == grad.size() && param.size() == velocity.size(), ErrorKind::ShapeMismatch,
          "parameter, gradient and velocity sizes differ");
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = momentum * velocity[i] + (grad[i] + weight_decay * param[i]);
    param[i] -= lr * velocity[i];
  }
}

void sgd_step(Model& model, OptimizerState& state, const TrainingConfig& cfg) {
  std::size_t k = 0;
  model.for_each_parameter([&](const std::string& name, Parameter& p, bool) {
    if (state.velocity.size() <= k) state.velocity.emplace_back(p.value.numel(), 0.0);
    auto& v = state.velocity[k++];
    require(v.size() == p.value.numel(), ErrorKind::ShapeMismatch, "velocity buffer does not match " + name);
    if (p.frozen) return;
    require(p.value.has_grad(), ErrorKind::InvalidConfig, "no gradient stored for trainable parameter " + name);
    sgd_update(p.value.data(), p.value.grad(), v, state.lr, cfg.momentum, cfg.weight_decay);
  });
}

bool reduce_lr_on_plateau(OptimizerState& state, double val_acc, const TrainingConfig& cfg) {
  if (!state.seen_any || val_acc > state.sched_best) {
    state.seen_any = true;
    state.sched_best = val_acc;
    state.sched_counter = 0;
    return false;
  }
  if (++state.sched_counter >= cfg.lr_patience) {
    state.lr *= cfg.lr_factor;
    state.sched_counter = 0;
    return true;
  }
  return false;
}

StopDecision early_stopping_check(OptimizerState& state, double val_acc, const TrainingConfig& cfg) {
  if (!state.stop_seen_any || val_acc > state.stop_best) {
    state.stop_seen_any = true;
    state.stop_best = val_acc;
    state.stop_counter = 0;
    return StopDecision::continue_training;
  }
  return ++state.stop_counter >= cfg.early_stop_patience ? StopDecision::stop : StopDecision::continue_training;
}

Model freeze_all(Model model) {
  model.for_each_parameter([](const std::string&, Parameter& p, bool) { p.frozen = true; });
  return model;
}

bool fully_frozen(const Model& model) {
  bool all = true;
  model.for_each_parameter([&all](const std::string&, const Parameter& p, bool) { all = all && p.frozen; });
  return all;
}

SoftLabelBatch teacher_soft_labels(const Model& teacher, const Tensor& images, double temperature) {
  require(fully_frozen(teacher), ErrorKind::InvalidConfig, "teacher parameters must all be frozen");
  return {softmax_temperature(forward(teacher, images), temperature), temperature, teacher.name};
}

Tensor predict_logits(const Model& model, const ImageDataset& ds, std::size_t batch_size, std::size_t threads) {
  require(ds.size() > 0, ErrorKind::EmptyDataset, "cannot predict on an empty dataset");
  require(batch_size > 0, ErrorKind::InvalidConfig, "batch_size must be positive");
  const std::size_t k = model.num_classes();
  Tensor logits(Shape{ds.size(), k});
  const std::size_t chunks = (ds.size() + batch_size - 1) / batch_size;
  parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t lo = c * batch_size, hi = std::min(ds.size(), lo + batch_size);
    std::vector<std::size_t> idx(hi - lo);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = lo + i;
    const Tensor out = forward(model, make_batch(ds, idx).images);
    std::copy(out.raw(), out.raw() + out.numel(), logits.raw() + lo * k);
  });
  return logits;
}

std::vector<std::size_t> predict(const Model& model, const ImageDataset& ds, std::size_t batch_size,
                                 std::size_t threads) {
  const Tensor logits = predict_logits(model, ds, batch_size, threads);
  const std::size_t k = logits.dim(1);
  std::vector<std::size_t> preds(ds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) preds[i] = argmax(logits.data().subspan(i * k, k));
  return preds;
}

double accuracy(const Model& model, const ImageDataset& ds, std::size_t batch_size, std::size_t threads) {
  const auto preds = predict(model, ds, batch_size, threads);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == ds.labels[i];
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

namespace {

/// Loss for one mini-batch: receives the taped student logits, the batch and
/// the dataset indices it was drawn from.
using BatchLoss = std::function<Var(const Var& logits, const Batch& batch, std::span<const std::size_t> indices)>;

TrainResult run_training(Model model, const ImageDataset& train, const ImageDataset& val, const TrainingConfig& cfg,
                         const BatchLoss& loss_fn) {
  cfg.validate();
  require(train.size() > 0, ErrorKind::EmptyDataset, "training set is empty");
  require(val.size() > 0, ErrorKind::EmptyDataset, "validation set is empty");
  require(model.num_classes() == train.num_classes(), ErrorKind::HeadMismatch,
          "model predicts " + std::to_string(model.num_classes()) + " classes but the data has " +
              std::to_string(train.num_classes()));

  OptimizerState state = OptimizerState::fresh(cfg);
  TrainResult result{model, {}};
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    SplitMix64 shuffle_rng = make_stream(cfg.seed, epoch, StreamOp::shuffle);
    const auto order = permutation(train.size(), shuffle_rng);
    const double epoch_lr = state.lr;
    double loss_sum = 0.0;
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size, ++step) {
      const std::span<const std::size_t> idx(order.data() + lo, std::min(cfg.batch_size, order.size() - lo));
      Batch batch = make_batch(train, idx);
      if (cfg.flip_prob > 0.0) {
        const std::size_t per = batch.images.numel() / idx.size();
        for (std::size_t i = 0; i < idx.size(); ++i) {
          SplitMix64 flip_rng = make_stream(cfg.seed, epoch * train.size() + idx[i], StreamOp::flip);
          const Tensor img = horizontal_flip(train.images[idx[i]], cfg.flip_prob, flip_rng);
          std::copy(img.raw(), img.raw() + per, batch.images.raw() + i * per);
        }
      }
      Tape tape;
      SplitMix64 dropout_rng = make_stream(cfg.seed, step, StreamOp::dropout);
      std::vector<ParamBinding> bindings;
      const Var logits = forward(model, tape.constant(batch.images), Mode::train, dropout_rng, &bindings);
      const Var loss = loss_fn(logits, batch, idx);
      const Gradients grads = backward(tape, loss);
      store_gradients(bindings, grads);
      sgd_step(model, state, cfg);
      model.for_each_parameter([](const std::string&, Parameter& p, bool) { p.value.clear_grad(); });
      loss_sum += loss.value().item() * static_cast<double>(idx.size());
    }
    const double val_acc = accuracy(model, val, 256, cfg.threads);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.epochs.push_back({epoch, loss_sum / static_cast<double>(train.size()), val_acc, epoch_lr, seconds});

    const bool improved = !state.stop_seen_any || val_acc > state.stop_best;
    const StopDecision decision = early_stopping_check(state, val_acc, cfg);
    if (improved) {
      result.model = model;
      result.history.best_epoch = epoch;
    }
    reduce_lr_on_plateau(state, val_acc, cfg);
    if (decision == StopDecision::stop) {
      result.history.stopped_early = epoch < cfg.max_epochs;
      break;
    }
  }
  return result;
}

}  // namespace

TrainResult train_tl(Model student, const ImageDataset& train, const ImageDataset& val, const TrainingConfig& cfg) {
  return run_training(std::move(student), train, val, cfg,
                      [](const Var& logits, const Batch& batch, std::span<const std::size_t>) {
                        return cross_entropy(logits, batch.labels);
                      });
}

TrainResult train_tl_kd(Model student, const Model& teacher, const ImageDataset& train, const ImageDataset& val,
                        const TrainingConfig& cfg, const DistillationConfig& dcfg) {
  dcfg.validate();
  require(teacher.num_classes() == student.num_classes(), ErrorKind::HeadMismatch,
          "teacher predicts " + std::to_string(teacher.num_classes()) + " classes, student " +
              std::to_string(student.num_classes()));
  const Model frozen_teacher = freeze_all(teacher);
  const std::uint64_t before = checksum(frozen_teacher);

  // Without augmentation every sample's teacher logits are fixed, so compute them once.
  std::optional<Tensor> cached;
  if (cfg.flip_prob == 0.0 && train.size() > 0) cached = predict_logits(frozen_teacher, train, 256, cfg.threads);

  const double tol = 1e-10;
  auto loss_fn = [&](const Var& logits, const Batch& batch, std::span<const std::size_t> idx) {
    Tensor z_t;
    if (cached) {
      const std::size_t k = cached->dim(1);
      z_t = Tensor(Shape{idx.size(), k});
      for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy_n(cached->raw() + idx[i] * k, k, z_t.raw() + i * k);
    } else {
      z_t = forward(frozen_teacher, batch.images);
    }
    const KdLossVar l = kd_combined_loss(logits, z_t, batch.labels, dcfg);
    const double mix = (1.0 - dcfg.alpha) * l.ce + dcfg.alpha * dcfg.temperature * dcfg.temperature * l.kl;
    const double total = l.total.value().item();
    require(std::abs(total - mix) <= tol * std::max(1.0, std::abs(total)), ErrorKind::DomainError,
            "distillation loss is not the affine mix of its parts");
    return l.total;
  };
  TrainResult r = run_training(std::move(student), train, val, cfg, loss_fn);
  require(checksum(frozen_teacher) == before, ErrorKind::DomainError, "teacher parameters changed during training");
  return r;
}

std::optional<std::size_t> epochs_to_threshold(const TrainingHistory& history, double threshold) {
  for (const auto& e : history.epochs)
    if (e.val_acc >= threshold) return e.epoch;
  return std::nullopt;
}

}  // namespace dtkd
