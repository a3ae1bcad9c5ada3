#include "dtkd/losses.hpp"

#include <algorithm>
#include <cmath>

namespace dtkd {

void DistillationConfig::validate() const {
  require(temperature > 0.0 && std::isfinite(temperature), ErrorKind::InvalidTemperature,
          "temperature must be positive");
  require(alpha >= 0.0 && alpha <= 1.0, ErrorKind::InvalidConfig, "alpha must lie in [0, 1]");
}

namespace {

void require_logits(const Tensor& z) {
  require(z.rank() == 2, ErrorKind::ShapeMismatch, "expected logits [N,K], got " + shape_string(z.shape()));
  for (double v : z.data()) require(std::isfinite(v), ErrorKind::NonFinite, "logits contain a non-finite value");
}

void require_labels(std::span<const std::size_t> labels, const Shape& shape) {
  require(labels.size() == shape[0], ErrorKind::ShapeMismatch, "label count differs from batch size");
  for (std::size_t y : labels)
    require(y < shape[1], ErrorKind::IndexOutOfRange,
            "label " + std::to_string(y) + " outside [0, " + std::to_string(shape[1]) + ")");
}

void require_stochastic(const Tensor& p, const char* what) {
  require(p.rank() == 2, ErrorKind::ShapeMismatch, std::string(what) + " must be [N,K]");
  const std::size_t cols = p.dim(1);
  for (std::size_t r = 0; r < p.dim(0); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = p[r * cols + c];
      require(v >= 0.0 && std::isfinite(v), ErrorKind::NotStochastic, std::string(what) + " has a negative entry");
      s += v;
    }
    require(std::abs(s - 1.0) <= 1e-6, ErrorKind::NotStochastic,
            std::string(what) + " row " + std::to_string(r) + " sums to " + std::to_string(s));
  }
}

Tensor one_hot_weights(const Shape& shape, std::span<const std::size_t> labels, double value) {
  Tensor w(shape);
  for (std::size_t r = 0; r < labels.size(); ++r) w[r * shape[1] + labels[r]] = value;
  return w;
}

Tensor log_softmax_values(const Tensor& z, double temperature) {
  Tape tape;
  return log_softmax(tape.constant(z), temperature).value();
}

}  // namespace

Tensor softmax_temperature(const Tensor& z, double temperature) {
  require(temperature > 0.0, ErrorKind::InvalidTemperature, "temperature must be positive");
  require_logits(z);
  const std::size_t cols = z.dim(1);
  Tensor out(z.shape());
  for (std::size_t r = 0; r < z.dim(0); ++r) {
    const double* row = z.raw() + r * cols;
    double* dst = out.raw() + r * cols;
    double mx = row[0] / temperature;
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, row[c] / temperature);
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += (dst[c] = std::exp(row[c] / temperature - mx));
    for (std::size_t c = 0; c < cols; ++c) dst[c] /= s;
  }
  return out;
}

Tensor softmax(const Tensor& z) { return softmax_temperature(z, 1.0); }

double cross_entropy(const Tensor& z, std::span<const std::size_t> labels) {
  Tape tape;
  return cross_entropy(tape.constant(z), labels).value().item();
}

double kl_divergence(const Tensor& p_student, const Tensor& p_teacher) {
  require(p_student.shape() == p_teacher.shape(), ErrorKind::ShapeMismatch, "KL operands differ in shape");
  require_stochastic(p_student, "student distribution");
  require_stochastic(p_teacher, "teacher distribution");
  const std::size_t cols = p_teacher.dim(1);
  double total = 0.0;
  for (std::size_t r = 0; r < p_teacher.dim(0); ++r) {
    double row = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double pt = p_teacher[r * cols + c];
      if (pt > 0.0) row += pt * (std::log(pt) - std::log(p_student[r * cols + c]));
    }
    total += row;
  }
  return total / static_cast<double>(p_teacher.dim(0));
}

KdLossValue kd_combined_loss(const Tensor& z_s, const Tensor& z_t, std::span<const std::size_t> labels,
                             const DistillationConfig& cfg) {
  Tape tape;
  const KdLossVar v = kd_combined_loss(tape.constant(z_s), z_t, labels, cfg);
  return {v.total.value().item(), v.kl, v.ce};
}

Var cross_entropy(const Var& z, std::span<const std::size_t> labels) {
  require_logits(z.value());
  require_labels(labels, z.shape());
  return weighted_row_mean(log_softmax(z, 1.0), one_hot_weights(z.shape(), labels, -1.0));
}

Var kl_divergence_logits(const Var& z_s, const Tensor& z_t, double temperature) {
  require(z_s.shape() == z_t.shape(), ErrorKind::ShapeMismatch,
          "student and teacher logits differ: " + shape_string(z_s.shape()) + " vs " + shape_string(z_t.shape()));
  require_logits(z_s.value());
  require_logits(z_t);
  Tensor log_pt = log_softmax_values(z_t, temperature);
  Tensor pt = log_pt;
  for (double& v : pt.data()) v = std::exp(v);
  Tape& tape = z_s.tape();
  // sum_k pt * (log pt - log ps), so identical logits give exactly zero.
  return weighted_row_mean(sub(tape.constant(std::move(log_pt)), log_softmax(z_s, temperature)), pt);
}

KdLossVar kd_combined_loss(const Var& z_s, const Tensor& z_t, std::span<const std::size_t> labels,
                           const DistillationConfig& cfg) {
  cfg.validate();
  const double t2 = cfg.temperature * cfg.temperature;
  Var kl = kl_divergence_logits(z_s, z_t, cfg.temperature);
  Var ce = cross_entropy(z_s, labels);
  Var total = add(mul(mul(kl, t2), cfg.alpha), mul(ce, 1.0 - cfg.alpha));
  return {total, kl.value().item(), ce.value().item()};
}

KdLossVar kd_combined_loss(const Var& z_s, const Var& z_t, std::span<const std::size_t> labels,
                           const DistillationConfig& cfg) {
  return kd_combined_loss(z_s, z_t.value(), labels, cfg);
}

}  // namespace dtkd
