#include "dtkd/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "dtkd/layers.hpp"
#include "dtkd/losses.hpp"

namespace dtkd {

double gradient_check_error(const std::vector<Tensor>& inputs, const LossBuilder& build, double eps) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) {
    Tensor v = t;
    v.set_requires_grad(true);
    vars.push_back(tape.leaf(std::move(v)));
  }
  const Gradients grads = backward(tape, build(vars));
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto f = [&](const Tensor& probe) {
      Tape t2;
      std::vector<Var> vs;
      for (std::size_t j = 0; j < inputs.size(); ++j) vs.push_back(t2.constant(j == k ? probe : inputs[j]));
      return build(vs).value().item();
    };
    worst = std::max(worst, max_relative_error(grads.of(vars[k]), finite_diff_grad(f, inputs[k], eps)));
  }
  return worst;
}

double GradcheckReport::worst() const {
  double w = 0.0;
  for (const auto& c : cases) w = std::max(w, c.max_error);
  return w;
}

namespace {

Tensor random_tensor(Shape shape, SplitMix64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

std::size_t pick(SplitMix64& rng, std::size_t lo, std::size_t hi) {
  return static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
}

/// Taped forward of `run` on `input` reduced against a fixed random projection;
/// checks gradients for the input and for every parameter bound during the run.
double module_gradient_error(const std::function<Var(const Var&, std::vector<ParamBinding>*, SplitMix64&)>& run,
                             const Tensor& input, std::uint64_t rng_seed, SplitMix64& rng) {
  Tensor projection;
  auto loss_of = [&](Tape& tape, const Var& x, std::vector<ParamBinding>* bindings) {
    SplitMix64 local(rng_seed);
    const Var out = run(x, bindings, local);
    if (projection.numel() == 0) projection = random_tensor(out.value().shape(), rng);
    return sum(mul(out, tape.constant(projection)));
  };

  Tape tape;
  Tensor x0 = input;
  x0.set_requires_grad(true);
  const Var x = tape.leaf(x0);
  std::vector<ParamBinding> bindings;
  const Gradients grads = backward(tape, loss_of(tape, x, &bindings));

  auto value_at = [&](const Tensor& probe) {
    Tape t;
    return loss_of(t, t.constant(probe), nullptr).value().item();
  };
  double worst = max_relative_error(grads.of(x), finite_diff_grad(value_at, input));
  for (const auto& b : bindings) {
    Parameter* p = b.param;
    const Tensor saved = p->value;
    auto f = [&](const Tensor& probe) {
      p->value = probe;
      const double v = value_at(input);
      p->value = saved;
      return v;
    };
    worst = std::max(worst, max_relative_error(grads.of(b.var), finite_diff_grad(f, saved)));
  }
  return worst;
}

constexpr double kKinkMargin = 1e-4;

/// Inference forward through `layers` that lowers `margin` to the smallest
/// |ReLU input| and the smallest gap between the two largest max-pool inputs.
/// All-zero pooling windows (clipped by a preceding ReLU) are stable and skipped.
Tensor walk_kinks(const std::vector<Layer>& layers, Tensor h, double& margin) {
  for (const auto& l : layers) {
    if (l.kind == LayerKind::relu) {
      for (double v : h.data()) margin = std::min(margin, std::abs(v));
    } else if (l.kind == LayerKind::maxpool2d && l.hyper.window > 1) {
      const std::size_t planes = h.dim(0) * h.dim(1), height = h.dim(2), width = h.dim(3), w = l.hyper.window;
      for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y + w <= height; y += w)
          for (std::size_t x = 0; x + w <= width; x += w) {
            double top = -std::numeric_limits<double>::infinity(), second = top;
            for (std::size_t dy = 0; dy < w; ++dy)
              for (std::size_t dx = 0; dx < w; ++dx) {
                const double v = h[(p * height + y + dy) * width + x + dx];
                if (v > top) {
                  second = top;
                  top = v;
                } else {
                  second = std::max(second, v);
                }
              }
            if (top > 0.0) margin = std::min(margin, top - second);
          }
    } else if (l.kind == LayerKind::residual_block) {
      walk_kinks(l.inner, h, margin);
    }
    h = forward_layer(l, h);
  }
  return h;
}

double layer_case(Layer layer, const Tensor& input, Mode mode, SplitMix64& rng) {
  init_layer(layer, rng);
  const std::uint64_t dropout_seed = rng.next();
  return module_gradient_error(
      [&](const Var& x, std::vector<ParamBinding>* b, SplitMix64& r) { return forward_layer(layer, x, mode, r, b); },
      input, dropout_seed, rng);
}

}  // namespace

GradcheckReport run_gradcheck_suite(std::size_t configs, std::uint64_t seed) {
  GradcheckReport report;
  auto run_case = [&](const std::string& name, std::size_t n, const std::function<double(SplitMix64&)>& body) {
    SplitMix64 rng = make_stream(seed, report.cases.size(), StreamOp::param_init);
    GradcheckCase c{name, n, 0.0};
    for (std::size_t i = 0; i < n; ++i) c.max_error = std::max(c.max_error, body(rng));
    report.cases.push_back(c);
  };

  run_case("elementwise", configs, [](SplitMix64& rng) {
    const Shape s{pick(rng, 1, 4), pick(rng, 1, 5)};
    return gradient_check_error({random_tensor(s, rng, 0.2, 2.0), random_tensor(s, rng, 0.2, 2.0)},
                                [](std::vector<Var>& v) {
                                  const Var a = add(mul(v[0], v[1]), sub(exp(neg(v[0])), log(v[1])));
                                  return mean(mul(a, add(v[0], 1.5)));
                                });
  });
  run_case("matmul_bias", configs, [](SplitMix64& rng) {
    const std::size_t n = pick(rng, 1, 4), k = pick(rng, 1, 5), m = pick(rng, 1, 4);
    return gradient_check_error(
        {random_tensor(Shape{n, k}, rng), random_tensor(Shape{k, m}, rng), random_tensor(Shape{m}, rng)},
        [](std::vector<Var>& v) {
          const Var y = add_bias(matmul(v[0], v[1]), v[2]);
          return sum(mul(y, y));
        });
  });
  run_case("linear", configs, [](SplitMix64& rng) {
    const std::size_t in = pick(rng, 1, 6), out = pick(rng, 1, 5);
    return layer_case(Layer::linear(in, out), random_tensor(Shape{pick(rng, 1, 3), in}, rng), Mode::train, rng);
  });
  run_case("conv2d", configs, [](SplitMix64& rng) {
    const std::size_t in = pick(rng, 1, 3), out = pick(rng, 1, 3), k = pick(rng, 1, 3);
    const std::size_t stride = pick(rng, 1, 2), pad = pick(rng, 0, 1);
    const std::size_t h = pick(rng, k, 6), w = pick(rng, k, 6);
    return layer_case(Layer::conv2d(in, out, k, stride, pad), random_tensor(Shape{pick(rng, 1, 2), in, h, w}, rng),
                      Mode::train, rng);
  });
  run_case("relu", configs, [](SplitMix64& rng) {
    // Keep inputs away from the kink so central differences are exact.
    Tensor x = random_tensor(Shape{pick(rng, 1, 3), pick(rng, 1, 6)}, rng, 0.05, 1.0);
    for (double& v : x.data())
      if (rng.uniform() < 0.5) v = -v;
    return layer_case(Layer::relu(), x, Mode::train, rng);
  });
  run_case("maxpool2d", configs, [](SplitMix64& rng) {
    const std::size_t window = pick(rng, 1, 3);
    const std::size_t h = window * pick(rng, 1, 3), w = window * pick(rng, 1, 3);
    Tensor x(Shape{pick(rng, 1, 2), pick(rng, 1, 2), h, w});
    // Distinct values spaced well above the difference step.
    const auto order = permutation(x.numel(), rng);
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = 0.01 * static_cast<double>(order[i]);
    return layer_case(Layer::maxpool2d(window), x, Mode::train, rng);
  });
  run_case("dropout", configs, [](SplitMix64& rng) {
    return layer_case(Layer::dropout(rng.uniform(0.1, 0.6)), random_tensor(Shape{pick(rng, 1, 3), pick(rng, 2, 8)}, rng),
                      Mode::train, rng);
  });
  run_case("flatten", configs, [](SplitMix64& rng) {
    return layer_case(Layer::flatten(), random_tensor(Shape{pick(rng, 1, 3), pick(rng, 1, 3), 2, pick(rng, 1, 3)}, rng),
                      Mode::train, rng);
  });
  run_case("residual_block", configs, [](SplitMix64& rng) {
    const std::size_t c = pick(rng, 1, 3);
    std::vector<Layer> inner;
    inner.push_back(Layer::conv2d(c, c, 3, 1, 1));
    inner.push_back(Layer::relu());
    inner.push_back(Layer::conv2d(c, c, 3, 1, 1));
    return layer_case(Layer::residual_block(std::move(inner)),
                      random_tensor(Shape{1, c, pick(rng, 2, 5), pick(rng, 2, 5)}, rng), Mode::train, rng);
  });
  run_case("cross_entropy", configs, [](SplitMix64& rng) {
    const std::size_t n = pick(rng, 1, 4), k = pick(rng, 2, 6);
    std::vector<std::size_t> y(n);
    for (auto& v : y) v = pick(rng, 0, k - 1);
    return gradient_check_error({random_tensor(Shape{n, k}, rng, -4, 4)},
                                [y](std::vector<Var>& v) { return cross_entropy(v[0], y); });
  });
  run_case("kl_divergence", configs, [](SplitMix64& rng) {
    const std::size_t n = pick(rng, 1, 4), k = pick(rng, 2, 6);
    const Tensor zt = random_tensor(Shape{n, k}, rng, -4, 4);
    const double t = rng.uniform(0.5, 20.0);
    return gradient_check_error({random_tensor(Shape{n, k}, rng, -4, 4)},
                                [&](std::vector<Var>& v) { return kl_divergence_logits(v[0], zt, t); });
  });
  run_case("kd_combined_loss", configs, [](SplitMix64& rng) {
    const std::size_t n = pick(rng, 1, 4), k = pick(rng, 2, 6);
    std::vector<std::size_t> y(n);
    for (auto& v : y) v = pick(rng, 0, k - 1);
    const Tensor zt = random_tensor(Shape{n, k}, rng, -4, 4);
    const DistillationConfig cfg{rng.uniform(0.5, 20.0), rng.uniform()};
    return gradient_check_error({random_tensor(Shape{n, k}, rng, -4, 4)},
                                [&](std::vector<Var>& v) { return kd_combined_loss(v[0], zt, y, cfg).total; });
  });
  run_case("student_model", std::max<std::size_t>(1, configs / 20), [](SplitMix64& rng) {
    // Redraw until every interior ReLU input and max-pool gap clears the difference stencil.
    Model m;
    Tensor input;
    for (int attempt = 0; attempt < 100; ++attempt) {
      m = build_student(pick(rng, 2, 4), 8, rng.next());
      input = random_tensor(Shape{2, 3, 8, 8}, rng, 0, 1);
      double margin = std::numeric_limits<double>::infinity();
      walk_kinks(m.layers, input, margin);
      if (margin >= kKinkMargin) break;
    }
    const std::uint64_t dropout_seed = rng.next();
    return module_gradient_error(
        [&](const Var& x, std::vector<ParamBinding>* b, SplitMix64& r) { return forward(m, x, Mode::train, r, b); },
        input, dropout_seed, rng);
  });
  return report;
}

std::string gradcheck_json(const GradcheckReport& report) {
  nlohmann::ordered_json j;
  j["tolerance"] = report.tolerance;
  j["worst"] = report.worst();
  j["passed"] = report.passed();
  nlohmann::ordered_json cases = nlohmann::ordered_json::array();
  for (const auto& c : report.cases) cases.push_back({{"name", c.name}, {"configs", c.configs}, {"max_error", c.max_error}});
  j["cases"] = cases;
  return j.dump(2) + "\n";
}

}  // namespace dtkd
