#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "dtkd/autodiff.hpp"
#include "dtkd/tensor.hpp"

namespace dtkd {

struct DistillationConfig {
  double temperature = 10.0;
  double alpha = 0.1;

  void validate() const;
};

/// Teacher probabilities at a given temperature.
struct SoftLabelBatch {
  Tensor probabilities;  // [N,K], rows stochastic
  double temperature = 1.0;
  std::string source;
};

/// Row-wise softmax of z [N,K] with max subtraction. Same as softmax_temperature(z, 1).
Tensor softmax(const Tensor& z);
Tensor softmax_temperature(const Tensor& z, double temperature);

/// Mean over rows of -log softmax(z)[y].
double cross_entropy(const Tensor& z, std::span<const std::size_t> labels);

/// Mean over rows of sum_k p_teacher * (log p_teacher - log p_student).
double kl_divergence(const Tensor& p_student, const Tensor& p_teacher);

struct KdLossValue {
  double total = 0.0;
  double kl = 0.0;  // unscaled KL at temperature T
  double ce = 0.0;
};

/// alpha * T^2 * KL(softmax(z_t/T) || softmax(z_s/T)) + (1 - alpha) * CE(z_s, y).
KdLossValue kd_combined_loss(const Tensor& z_s, const Tensor& z_t, std::span<const std::size_t> labels,
                             const DistillationConfig& cfg);

// --- taped versions ---------------------------------------------------------

Var cross_entropy(const Var& z, std::span<const std::size_t> labels);

/// KL against fixed teacher logits at temperature T. Only the student carries a gradient.
Var kl_divergence_logits(const Var& z_s, const Tensor& z_t, double temperature);

struct KdLossVar {
  Var total;
  double kl = 0.0;
  double ce = 0.0;
};

/// The teacher argument is detached: its value is read, no gradient reaches it.
KdLossVar kd_combined_loss(const Var& z_s, const Var& z_t, std::span<const std::size_t> labels,
                           const DistillationConfig& cfg);
KdLossVar kd_combined_loss(const Var& z_s, const Tensor& z_t, std::span<const std::size_t> labels,
                           const DistillationConfig& cfg);

}  // namespace dtkd
