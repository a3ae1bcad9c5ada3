#include <gtest/gtest.h>

#include <cmath>

#include "dtkd/losses.hpp"
#include "support.hpp"

using namespace dtkd;
using dtkd::testing::gradient_check_error;
using dtkd::testing::random_tensor;

namespace {

template <typename F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorKind::DomainError;
}

// Direct evaluation of exp(z_i) / sum_j exp(z_j) without stabilisation.
std::vector<double> naive_softmax(const std::vector<double>& z, double t = 1.0) {
  double s = 0.0;
  for (double v : z) s += std::exp(v / t);
  std::vector<double> out;
  for (double v : z) out.push_back(std::exp(v / t) / s);
  return out;
}

const std::vector<double> kFigureLogits = {0.1, 0.14, 0.85, 0.55, 0.02};

Tensor row(const std::vector<double>& v) { return Tensor(Shape{1, v.size()}, v); }

}  // namespace

TEST(Softmax, Examples) {
  EXPECT_EQ(softmax(row({0, 0})).values(), (std::vector<double>{0.5, 0.5}));
  const Tensor p = softmax(row(kFigureLogits));
  const auto oracle = naive_softmax(kFigureLogits);
  const std::vector<double> printed = {0.1504, 0.1565, 0.3184, 0.2359, 0.1388};
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_NEAR(p[i], oracle[i], 1e-15);
    EXPECT_NEAR(p[i], printed[i], 5e-5);
  }
}

TEST(Softmax, ArgmaxAndRowSumsOnRandomLogits) {
  SplitMix64 rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const Tensor z = random_tensor(Shape{1, 7}, rng, -5, 5);
    for (double t : {1.0, 0.3, 4.0, 25.0}) {
      const Tensor p = softmax_temperature(z, t);
      EXPECT_EQ(argmax(p.data()), argmax(z.data()));
      EXPECT_NEAR(sum(p), 1.0, 1e-9);
    }
  }
}

TEST(Softmax, NonFiniteRejected) {
  EXPECT_EQ(kind_of([] { (void)softmax(row({0, NAN})); }), ErrorKind::NonFinite);
  EXPECT_EQ(kind_of([] { (void)softmax(row({INFINITY, 0})); }), ErrorKind::NonFinite);
}

TEST(SoftmaxTemperature, UnitTemperatureIsBitwiseSoftmax) {
  SplitMix64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor z = random_tensor(Shape{3, 6}, rng, -20, 20);
    EXPECT_TRUE(bitwise_equal(softmax_temperature(z, 1.0), softmax(z)));
  }
}

TEST(SoftmaxTemperature, HighTemperatureIsNearlyUniform) {
  const Tensor p = softmax_temperature(row({1, 2, 3}), 1e9);
  for (double v : p.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-6);
}

TEST(SoftmaxTemperature, WinningProbabilityFallsWithTemperature) {
  const double p1 = softmax_temperature(row(kFigureLogits), 1)[2];
  const double p5 = softmax_temperature(row(kFigureLogits), 5)[2];
  const double p20 = softmax_temperature(row(kFigureLogits), 20)[2];
  EXPECT_GT(p1, p5);
  EXPECT_GT(p5, p20);
  EXPECT_NEAR(p5, naive_softmax(kFigureLogits, 5)[2], 1e-15);
}

TEST(SoftmaxTemperature, MaxProbabilityStrictlyDecreasingProperty) {
  SplitMix64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor z = random_tensor(Shape{1, 5}, rng, -3, 3);
    double prev = 2.0;
    for (double t = 0.25; t < 50; t *= 1.7) {
      const Tensor p = softmax_temperature(z, t);
      const double mx = p[argmax(p.data())];
      EXPECT_LT(mx, prev);
      prev = mx;
    }
  }
}

TEST(SoftmaxTemperature, InvalidTemperature) {
  EXPECT_EQ(kind_of([] { (void)softmax_temperature(row({1, 2}), 0.0); }), ErrorKind::InvalidTemperature);
  EXPECT_EQ(kind_of([] { (void)softmax_temperature(row({1, 2}), -1.0); }), ErrorKind::InvalidTemperature);
}

TEST(CrossEntropy, Examples) {
  const std::vector<std::size_t> y0 = {0};
  EXPECT_NEAR(cross_entropy(row({30, -30}), y0), 0.0, 1e-20);
  EXPECT_GE(cross_entropy(row({30, -30}), y0), 0.0);
  const std::vector<std::size_t> y3 = {3};
  EXPECT_NEAR(cross_entropy(Tensor(Shape{1, 10}, 0.4), y3), std::log(10.0), 1e-12);
  const std::vector<std::size_t> bad = {2};
  EXPECT_EQ(kind_of([&] { (void)cross_entropy(row({1, 2}), bad); }), ErrorKind::IndexOutOfRange);
}

TEST(CrossEntropy, MatchesNaiveMeanOfNegativeLogProbabilities) {
  SplitMix64 rng(4);
  const Tensor z = random_tensor(Shape{4, 6}, rng, -3, 3);
  const std::vector<std::size_t> y = {0, 5, 2, 2};
  double oracle = 0.0;
  for (std::size_t r = 0; r < 4; ++r) {
    const auto p = naive_softmax({z.data().begin() + r * 6, z.data().begin() + r * 6 + 6});
    oracle -= std::log(p[y[r]]);
  }
  EXPECT_NEAR(cross_entropy(z, y), oracle / 4.0, 1e-12);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  SplitMix64 rng(5);
  const std::vector<std::size_t> y = {1, 0, 3};
  for (int trial = 0; trial < 10; ++trial)
    EXPECT_LT(gradient_check_error({random_tensor(Shape{3, 4}, rng, -4, 4)},
                                   [&](std::vector<Var>& v) { return cross_entropy(v[0], y); }),
              1e-4);
}

TEST(KlDivergence, Examples) {
  const Tensor p = row({0.2, 0.3, 0.5});
  EXPECT_EQ(kl_divergence(p, p), 0.0);
  const double expected = 0.9 * std::log(0.9 / 0.5) + 0.1 * std::log(0.1 / 0.5);
  EXPECT_NEAR(kl_divergence(row({0.5, 0.5}), row({0.9, 0.1})), expected, 1e-15);
  EXPECT_NEAR(expected, 0.368064, 1e-6);
}

TEST(KlDivergence, NonNegativeOnRandomPairs) {
  SplitMix64 rng(6);
  for (int trial = 0; trial < 1000; ++trial) {
    const Tensor a = softmax(random_tensor(Shape{1, 4}, rng, -3, 3));
    const Tensor b = softmax(random_tensor(Shape{1, 4}, rng, -3, 3));
    EXPECT_GE(kl_divergence(a, b), 0.0);
  }
}

TEST(KlDivergence, RequiresStochasticRows) {
  EXPECT_EQ(kind_of([] { (void)kl_divergence(row({0.5, 0.6}), row({0.5, 0.5})); }), ErrorKind::NotStochastic);
  EXPECT_EQ(kind_of([] { (void)kl_divergence(row({0.5, 0.5}), row({1.2, -0.2})); }), ErrorKind::NotStochastic);
  // within the 1e-6 allowance
  EXPECT_NO_THROW((void)kl_divergence(row({0.5, 0.5 + 5e-7}), row({0.5, 0.5})));
}

TEST(KlDivergence, LogitFormMatchesProbabilityForm) {
  SplitMix64 rng(7);
  const Tensor zs = random_tensor(Shape{3, 5}, rng, -2, 2);
  const Tensor zt = random_tensor(Shape{3, 5}, rng, -2, 2);
  Tape tape;
  const double via_logits = kl_divergence_logits(tape.constant(zs), zt, 4.0).value().item();
  EXPECT_NEAR(via_logits, kl_divergence(softmax_temperature(zs, 4.0), softmax_temperature(zt, 4.0)), 1e-14);
}

TEST(KdLoss, DegenerateAlphas) {
  SplitMix64 rng(8);
  const std::vector<std::size_t> y = {2, 0, 1};
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor zs = random_tensor(Shape{3, 4}, rng, -3, 3);
    const Tensor zt = random_tensor(Shape{3, 4}, rng, -3, 3);
    const double t = rng.uniform(0.5, 20);
    const KdLossValue a0 = kd_combined_loss(zs, zt, y, {t, 0.0});
    EXPECT_EQ(a0.total, cross_entropy(zs, y));
    const KdLossValue a1 = kd_combined_loss(zs, zt, y, {t, 1.0});
    Tape tape;
    const double kl = kl_divergence_logits(tape.constant(zs), zt, t).value().item();
    EXPECT_EQ(a1.total, t * t * kl);
  }
}

TEST(KdLoss, IdenticalLogitsWithAlphaOneIsZero) {
  SplitMix64 rng(9);
  const Tensor z = random_tensor(Shape{4, 5}, rng, -3, 3);
  const std::vector<std::size_t> y = {0, 1, 2, 3};
  EXPECT_EQ(kd_combined_loss(z, z, y, {10.0, 1.0}).total, 0.0);
}

TEST(KdLoss, AffineInAlpha) {
  SplitMix64 rng(10);
  const std::vector<std::size_t> y = {1, 1};
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor zs = random_tensor(Shape{2, 3}, rng, -3, 3);
    const Tensor zt = random_tensor(Shape{2, 3}, rng, -3, 3);
    const double l0 = kd_combined_loss(zs, zt, y, {10, 0}).total;
    const double l1 = kd_combined_loss(zs, zt, y, {10, 1}).total;
    const double a = rng.uniform();
    EXPECT_NEAR(kd_combined_loss(zs, zt, y, {10, a}).total, (1 - a) * l0 + a * l1, 1e-10);
  }
}

TEST(KdLoss, GradientFlowsOnlyIntoStudent) {
  SplitMix64 rng(11);
  const std::vector<std::size_t> y = {0, 2};
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor zt = random_tensor(Shape{2, 3}, rng, -3, 3);
    const DistillationConfig cfg{rng.uniform(1, 10), rng.uniform()};
    EXPECT_LT(gradient_check_error({random_tensor(Shape{2, 3}, rng, -3, 3)},
                                   [&](std::vector<Var>& v) { return kd_combined_loss(v[0], zt, y, cfg).total; }),
              1e-4);
    Tape tape;
    Tensor s = random_tensor(Shape{2, 3}, rng), t = zt;
    s.set_requires_grad(true);
    t.set_requires_grad(true);
    const Var vs = tape.leaf(s), vt = tape.leaf(t);
    const Gradients g = backward(tape, kd_combined_loss(vs, vt, y, cfg).total);
    for (double v : g.of(vt).data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(KdLoss, ConfigValidation) {
  const Tensor z = row({1, 2});
  const std::vector<std::size_t> y = {0};
  EXPECT_EQ(kind_of([&] { (void)kd_combined_loss(z, z, y, {0.0, 0.5}); }), ErrorKind::InvalidTemperature);
  EXPECT_EQ(kind_of([&] { (void)kd_combined_loss(z, z, y, {1.0, 1.5}); }), ErrorKind::InvalidConfig);
  EXPECT_EQ(kind_of([&] { (void)kd_combined_loss(z, row({1, 2, 3}), y, {1.0, 0.5}); }), ErrorKind::ShapeMismatch);
}
