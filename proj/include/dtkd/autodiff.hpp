#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "dtkd/rng.hpp"
#include "dtkd/tensor.hpp"

namespace dtkd {

enum class OpKind {
  leaf,
  add,
  sub,
  mul,
  add_scalar,
  mul_scalar,
  max_scalar,
  exp,
  log,
  neg,
  matmul,
  sum,
  mean,
  reshape,
  add_bias,
  conv2d,
  maxpool2d,
  dropout,
  log_softmax,
  weighted_row_mean,
};

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const noexcept { return id_; }
  Tape& tape() const noexcept { return *tape_; }
  bool requires_grad() const;
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Receives the output gradient and accumulates (+=) into each input's
/// gradient buffer. Buffers are null for inputs that do not need a gradient.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> input_grads)>;

struct TapeNode {
  OpKind op = OpKind::leaf;
  Tensor value;
  std::vector<std::size_t> inputs;
  BackwardFn backward;
  bool requires_grad = false;
};

/// Ordered record of primitive applications. Ids are assigned in creation
/// order, so every input id precedes its consumer.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf whose gradient is tracked iff value.requires_grad().
  Var leaf(Tensor value);
  Var constant(Tensor value);

  /// Records an op. The backward function is dropped when no input needs a gradient.
  Var record(OpKind op, Tensor value, std::span<const Var> inputs, BackwardFn backward);

  std::size_t size() const noexcept { return nodes_.size(); }
  const TapeNode& node(std::size_t id) const { return nodes_.at(id); }

 private:
  std::vector<TapeNode> nodes_;
};

struct Gradients {
  /// Indexed by node id; populated only for leaves that require a gradient.
  std::vector<std::optional<Tensor>> leaf_grads;
  /// Leaves that require a gradient but are unreachable from the loss. Their
  /// gradient is zero; callers may surface this as a warning.
  std::vector<std::size_t> disconnected;

  const Tensor& of(const Var& v) const;
};

/// Reverse sweep from a scalar loss. The tape is not modified, so replaying
/// the same tape gives bitwise-identical gradients.
Gradients backward(const Tape& tape, const Var& loss);

enum class Elementwise { add, sub, mul, max_scalar, exp, log, neg };

/// b must match a's shape or hold a single value (scalar broadcast).
Var elementwise(Elementwise op, const Var& a, const Var& b);
Var elementwise(Elementwise op, const Var& a, double b);

Var add(const Var& a, const Var& b);
Var add(const Var& a, double b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var mul(const Var& a, double b);
Var max_scalar(const Var& a, double b);
Var exp(const Var& a);
Var log(const Var& a);
Var neg(const Var& a);
inline Var relu(const Var& a) { return max_scalar(a, 0.0); }

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(const Var& a, double b) { return mul(a, b); }
inline Var operator*(double a, const Var& b) { return mul(b, a); }
inline Var operator-(const Var& a) { return neg(a); }

Var matmul(const Var& a, const Var& b);
Var sum(const Var& a);
Var mean(const Var& a);
Var reshape(const Var& a, Shape shape);

/// x [N,K] plus bias [K] broadcast over rows.
Var add_bias(const Var& x, const Var& bias);

Var conv2d(const Var& input, const Var& weight, const Var& bias, std::size_t stride, std::size_t padding);
Var maxpool2d(const Var& input, std::size_t window);

/// Inverted dropout: in training each unit is zeroed with probability p and
/// survivors are scaled by 1/(1-p). Identity when !training or p == 0.
Var dropout(const Var& input, double p, bool training, SplitMix64& rng);

/// Row-wise log softmax of z/T for z [N,K], stabilised by max subtraction.
Var log_softmax(const Var& z, double temperature = 1.0);

/// mean over rows of sum_k weights[i,k] * x[i,k]; weights are constants.
Var weighted_row_mean(const Var& x, const Tensor& weights);

/// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) per coordinate.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps = 1e-5);

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor).
double max_relative_error(const Tensor& a, const Tensor& b, double floor = 1e-6);

}  // namespace dtkd
