#include "dtkd/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "dtkd/kernels.hpp"

namespace dtkd {

const Tensor& Var::value() const {
  require(tape_ != nullptr, ErrorKind::DomainError, "use of an unbound Var");
  return tape_->node(id_).value;
}

bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }

Var Tape::leaf(Tensor value) {
  TapeNode n;
  n.op = OpKind::leaf;
  n.requires_grad = value.requires_grad();
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  value.set_requires_grad(false);
  return leaf(std::move(value));
}

Var Tape::record(OpKind op, Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  TapeNode n;
  n.op = op;
  n.value = std::move(value);
  n.value.set_requires_grad(false);
  for (const Var& in : inputs) {
    require(&in.tape() == this, ErrorKind::DomainError, "inputs recorded on a different tape");
    n.inputs.push_back(in.id());
    n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Gradients::of(const Var& v) const {
  require(v.id() < leaf_grads.size() && leaf_grads[v.id()].has_value(), ErrorKind::DomainError,
          "no gradient recorded for this variable");
  return *leaf_grads[v.id()];
}

Gradients backward(const Tape& tape, const Var& loss) {
  require(&loss.tape() == &tape, ErrorKind::DomainError, "loss belongs to a different tape");
  require(loss.value().numel() == 1, ErrorKind::NotScalar,
          "backward needs a scalar loss, got shape " + shape_string(loss.shape()));
  std::vector<std::optional<Tensor>> grads(tape.size());
  grads[loss.id()] = Tensor(loss.shape(), 1.0);

  std::vector<Tensor*> slots;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    const TapeNode& node = tape.node(i);
    if (!grads[i] || node.op == OpKind::leaf || !node.backward) continue;
    slots.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const std::size_t j = node.inputs[k];
      if (!tape.node(j).requires_grad) continue;
      if (!grads[j]) grads[j] = Tensor(tape.node(j).value.shape(), 0.0);
      slots[k] = &*grads[j];
    }
    node.backward(*grads[i], slots);
    grads[i].reset();
  }

  Gradients out;
  out.leaf_grads.resize(tape.size());
  for (std::size_t i = 0; i < tape.size(); ++i) {
    const TapeNode& node = tape.node(i);
    if (node.op != OpKind::leaf || !node.requires_grad) continue;
    if (grads[i]) {
      out.leaf_grads[i] = std::move(grads[i]);
    } else {
      out.leaf_grads[i] = Tensor(node.value.shape(), 0.0);
      out.disconnected.push_back(i);
    }
  }
  return out;
}

namespace {

void accumulate(Tensor* dst, const Tensor& src) {
  if (!dst) return;
  for (std::size_t i = 0; i < src.numel(); ++i) (*dst)[i] += src[i];
}

template <typename F>
Tensor map_values(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i]);
  return out;
}

}  // namespace

Var elementwise(Elementwise op, const Var& a, const Var& b) {
  const bool same = a.shape() == b.shape();
  const bool broadcast = !same && b.value().numel() == 1;
  require(same || broadcast, ErrorKind::ShapeMismatch,
          "elementwise shapes differ: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  auto bval = [&bv, broadcast](std::size_t i) { return broadcast ? bv[0] : bv[i]; };
  Tensor out(av.shape());
  Var inputs[] = {a, b};
  switch (op) {
    case Elementwise::add:
    case Elementwise::sub: {
      const double sign = op == Elementwise::add ? 1.0 : -1.0;
      for (std::size_t i = 0; i < av.numel(); ++i) out[i] = op == Elementwise::add ? av[i] + bval(i) : av[i] - bval(i);
      return a.tape().record(op == Elementwise::add ? OpKind::add : OpKind::sub, std::move(out), inputs,
                             [sign, broadcast](const Tensor& g, std::span<Tensor* const> gi) {
                               accumulate(gi[0], g);
                               if (!gi[1]) return;
                               if (broadcast) {
                                 (*gi[1])[0] += sign * sum(g);
                               } else {
                                 for (std::size_t i = 0; i < g.numel(); ++i) (*gi[1])[i] += sign * g[i];
                               }
                             });
    }
    case Elementwise::mul: {
      for (std::size_t i = 0; i < av.numel(); ++i) out[i] = av[i] * bval(i);
      return a.tape().record(OpKind::mul, std::move(out), inputs,
                             [av, bv, broadcast](const Tensor& g, std::span<Tensor* const> gi) {
                               const std::size_t n = g.numel();
                               if (gi[0])
                                 for (std::size_t i = 0; i < n; ++i) (*gi[0])[i] += g[i] * (broadcast ? bv[0] : bv[i]);
                               if (gi[1]) {
                                 if (broadcast) {
                                   double s = 0.0;
                                   for (std::size_t i = 0; i < n; ++i) s += g[i] * av[i];
                                   (*gi[1])[0] += s;
                                 } else {
                                   for (std::size_t i = 0; i < n; ++i) (*gi[1])[i] += g[i] * av[i];
                                 }
                               }
                             });
    }
    case Elementwise::max_scalar:
      require(b.value().numel() == 1, ErrorKind::ShapeMismatch, "max_scalar expects a scalar operand");
      return max_scalar(a, b.value()[0]);
    case Elementwise::exp: return exp(a);
    case Elementwise::log: return log(a);
    case Elementwise::neg: return neg(a);
  }
  fail(ErrorKind::DomainError, "unknown elementwise op");
}

Var elementwise(Elementwise op, const Var& a, double b) {
  switch (op) {
    case Elementwise::add: return add(a, b);
    case Elementwise::sub: return add(a, -b);
    case Elementwise::mul: return mul(a, b);
    case Elementwise::max_scalar: return max_scalar(a, b);
    case Elementwise::exp: return exp(a);
    case Elementwise::log: return log(a);
    case Elementwise::neg: return neg(a);
  }
  fail(ErrorKind::DomainError, "unknown elementwise op");
}

Var add(const Var& a, const Var& b) { return elementwise(Elementwise::add, a, b); }
Var sub(const Var& a, const Var& b) { return elementwise(Elementwise::sub, a, b); }
Var mul(const Var& a, const Var& b) { return elementwise(Elementwise::mul, a, b); }

Var add(const Var& a, double b) {
  Tensor out = map_values(a.value(), [b](double x) { return x + b; });
  Var in[] = {a};
  return a.tape().record(OpKind::add_scalar, std::move(out), in,
                         [](const Tensor& g, std::span<Tensor* const> gi) { accumulate(gi[0], g); });
}

Var mul(const Var& a, double b) {
  Tensor out = map_values(a.value(), [b](double x) { return x * b; });
  Var in[] = {a};
  return a.tape().record(OpKind::mul_scalar, std::move(out), in, [b](const Tensor& g, std::span<Tensor* const> gi) {
    for (std::size_t i = 0; i < g.numel(); ++i) (*gi[0])[i] += g[i] * b;
  });
}

Var max_scalar(const Var& a, double b) {
  Tensor out = map_values(a.value(), [b](double x) { return x > b ? x : b; });
  Var in[] = {a};
  Tensor av = a.requires_grad() ? a.value() : Tensor();
  // Subgradient at x == b is 0.
  return a.tape().record(OpKind::max_scalar, std::move(out), in,
                         [av = std::move(av), b](const Tensor& g, std::span<Tensor* const> gi) {
    for (std::size_t i = 0; i < g.numel(); ++i)
      if (av[i] > b) (*gi[0])[i] += g[i];
  });
}

Var exp(const Var& a) {
  Tensor out = map_values(a.value(), [](double x) { return std::exp(x); });
  Tensor saved = out;
  Var in[] = {a};
  return a.tape().record(OpKind::exp, std::move(out), in,
                         [saved = std::move(saved)](const Tensor& g, std::span<Tensor* const> gi) {
                           for (std::size_t i = 0; i < g.numel(); ++i) (*gi[0])[i] += g[i] * saved[i];
                         });
}

Var log(const Var& a) {
  const Tensor& av = a.value();
  for (double x : av.data()) require(x > 0.0, ErrorKind::DomainError, "log of non-positive value");
  Tensor out = map_values(av, [](double x) { return std::log(x); });
  Var in[] = {a};
  return a.tape().record(OpKind::log, std::move(out), in, [av](const Tensor& g, std::span<Tensor* const> gi) {
    for (std::size_t i = 0; i < g.numel(); ++i) (*gi[0])[i] += g[i] / av[i];
  });
}

Var neg(const Var& a) {
  Tensor out = map_values(a.value(), [](double x) { return -x; });
  Var in[] = {a};
  return a.tape().record(OpKind::neg, std::move(out), in, [](const Tensor& g, std::span<Tensor* const> gi) {
    for (std::size_t i = 0; i < g.numel(); ++i) (*gi[0])[i] -= g[i];
  });
}

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out = kernels::matmul(av, bv);
  Var in[] = {a, b};
  return a.tape().record(OpKind::matmul, std::move(out), in, [av, bv](const Tensor& g, std::span<Tensor* const> gi) {
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    // grad_a = g·bᵀ, grad_b = aᵀ·g
    if (gi[0]) kernels::gemm(false, true, m, k, n, g.raw(), bv.raw(), gi[0]->raw(), true);
    if (gi[1]) kernels::gemm(true, false, k, n, m, av.raw(), g.raw(), gi[1]->raw(), true);
  });
}

Var sum(const Var& a) {
  Var in[] = {a};
  return a.tape().record(OpKind::sum, Tensor::scalar(sum(a.value())), in,
                         [](const Tensor& g, std::span<Tensor* const> gi) {
                           for (double& x : gi[0]->data()) x += g[0];
                         });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().numel());
  Var in[] = {a};
  return a.tape().record(OpKind::mean, Tensor::scalar(sum(a.value()) / n), in,
                         [n](const Tensor& g, std::span<Tensor* const> gi) {
                           for (double& x : gi[0]->data()) x += g[0] / n;
                         });
}

Var reshape(const Var& a, Shape shape) {
  Var in[] = {a};
  return a.tape().record(OpKind::reshape, a.value().reshape(std::move(shape)), in,
                         [](const Tensor& g, std::span<Tensor* const> gi) {
                           for (std::size_t i = 0; i < g.numel(); ++i) (*gi[0])[i] += g[i];
                         });
}

Var add_bias(const Var& x, const Var& bias) {
  const Tensor& xv = x.value();
  require(xv.rank() == 2 && bias.value().numel() == xv.dim(1), ErrorKind::ShapeMismatch,
          "add_bias expects x [N,K] and bias [K]");
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  Tensor out = xv;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bias.value()[c];
  Var in[] = {x, bias};
  return x.tape().record(OpKind::add_bias, std::move(out), in,
                         [rows, cols](const Tensor& g, std::span<Tensor* const> gi) {
                           accumulate(gi[0], g);
                           if (gi[1])
                             for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t c = 0; c < cols; ++c) (*gi[1])[c] += g[r * cols + c];
                         });
}

Var conv2d(const Var& input, const Var& weight, const Var& bias, std::size_t stride, std::size_t padding) {
  const Tensor& xv = input.value();
  const Tensor& wv = weight.value();
  Tensor out = kernels::conv2d_forward(xv, wv, &bias.value(), stride, padding);
  const kernels::ConvGeometry geom = kernels::conv_geometry(xv.shape(), wv.shape(), stride, padding);
  Var in[] = {input, weight, bias};
  // Saved inputs are copied only when the op will actually run backward.
  const bool need = input.requires_grad() || weight.requires_grad() || bias.requires_grad();
  Tensor saved_x = need && weight.requires_grad() ? xv : Tensor();
  Tensor saved_w = need && input.requires_grad() ? wv : Tensor();
  return input.tape().record(
      OpKind::conv2d, std::move(out), in,
      [geom, saved_x = std::move(saved_x), saved_w = std::move(saved_w)](const Tensor& g,
                                                                          std::span<Tensor* const> gi) {
        kernels::conv2d_backward(saved_x, saved_w, geom, g, gi[0], gi[1], gi[2]);
      });
}

Var maxpool2d(const Var& input, std::size_t window) {
  kernels::PoolResult r = kernels::maxpool2d_forward(input.value(), window);
  Var in[] = {input};
  return input.tape().record(OpKind::maxpool2d, std::move(r.output), in,
                             [arg = std::move(r.argmax)](const Tensor& g, std::span<Tensor* const> gi) {
                               for (std::size_t k = 0; k < g.numel(); ++k) (*gi[0])[arg[k]] += g[k];
                             });
}

Var dropout(const Var& input, double p, bool training, SplitMix64& rng) {
  require(p >= 0.0 && p < 1.0, ErrorKind::InvalidProbability, "dropout probability must lie in [0, 1)");
  const Tensor& xv = input.value();
  Var in[] = {input};
  if (!training || p == 0.0)
    return input.tape().record(OpKind::dropout, xv, in,
                               [](const Tensor& g, std::span<Tensor* const> gi) { accumulate(gi[0], g); });
  const double scale = 1.0 / (1.0 - p);
  Tensor mask(xv.shape());
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) {
    mask[i] = rng.uniform() < p ? 0.0 : scale;
    out[i] = xv[i] * mask[i];
  }
  return input.tape().record(OpKind::dropout, std::move(out), in,
                             [mask = std::move(mask)](const Tensor& g, std::span<Tensor* const> gi) {
                               for (std::size_t i = 0; i < g.numel(); ++i) (*gi[0])[i] += g[i] * mask[i];
                             });
}

Var log_softmax(const Var& z, double temperature) {
  require(temperature > 0.0, ErrorKind::InvalidTemperature, "temperature must be positive");
  const Tensor& zv = z.value();
  require(zv.rank() == 2, ErrorKind::ShapeMismatch, "log_softmax expects [N,K]");
  const std::size_t rows = zv.dim(0), cols = zv.dim(1);
  Tensor out(zv.shape());
  Tensor probs(zv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = zv.raw() + r * cols;
    double mx = row[0] / temperature;
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, row[c] / temperature);
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(row[c] / temperature - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = row[c] / temperature - lse;
      probs[r * cols + c] = std::exp(out[r * cols + c]);
    }
  }
  Var in[] = {z};
  return z.tape().record(OpKind::log_softmax, std::move(out), in,
                         [probs = std::move(probs), rows, cols, temperature](const Tensor& g,
                                                                             std::span<Tensor* const> gi) {
                           for (std::size_t r = 0; r < rows; ++r) {
                             double gs = 0.0;
                             for (std::size_t c = 0; c < cols; ++c) gs += g[r * cols + c];
                             for (std::size_t c = 0; c < cols; ++c) {
                               const std::size_t k = r * cols + c;
                               (*gi[0])[k] += (g[k] - probs[k] * gs) / temperature;
                             }
                           }
                         });
}

Var weighted_row_mean(const Var& x, const Tensor& weights) {
  const Tensor& xv = x.value();
  require(xv.rank() == 2 && weights.shape() == xv.shape(), ErrorKind::ShapeMismatch,
          "weighted_row_mean expects matching [N,K] operands");
  const double rows = static_cast<double>(xv.dim(0));
  double total = 0.0;
  for (std::size_t i = 0; i < xv.numel(); ++i)
    if (weights[i] != 0.0) total += weights[i] * xv[i];
  Var in[] = {x};
  return x.tape().record(OpKind::weighted_row_mean, Tensor::scalar(total / rows), in,
                         [weights, rows](const Tensor& g, std::span<Tensor* const> gi) {
                           for (std::size_t i = 0; i < weights.numel(); ++i) (*gi[0])[i] += g[0] * weights[i] / rows;
                         });
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps) {
  require(eps > 0.0, ErrorKind::InvalidConfig, "finite difference step must be positive");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = f(probe);
    probe[i] = orig - eps;
    const double down = f(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

double max_relative_error(const Tensor& a, const Tensor& b, double floor) {
  require(a.numel() == b.numel(), ErrorKind::ShapeMismatch, "relative error operands differ in size");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace dtkd
