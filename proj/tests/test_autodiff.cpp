#include <gtest/gtest.h>

#include <cmath>

#include "dtkd/autodiff.hpp"
#include "dtkd/gradcheck.hpp"
#include "dtkd/kernels.hpp"
#include "support.hpp"

using namespace dtkd;
using dtkd::testing::gradient_check_error;
using dtkd::testing::random_tensor;

namespace {

Tensor grad_leaf(Tensor t) {
  t.set_requires_grad(true);
  return t;
}

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

}  // namespace

TEST(Tensor, RejectsZeroDimensionsAndLengthMismatch) {
  EXPECT_EQ(kind_of([] { Tensor(Shape{2, 0}); }), ErrorKind::ShapeMismatch);
  EXPECT_EQ(kind_of([] { Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}); }), ErrorKind::ShapeMismatch);
}

TEST(Tensor, ReshapeKeepsValuesAndChecksCount) {
  const Tensor a = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  const Tensor b = a.reshape(Shape{3, 2});
  EXPECT_EQ(b.values(), a.values());
  EXPECT_EQ(b.shape(), (Shape{3, 2}));
  EXPECT_EQ(a.shape(), (Shape{2, 3}));
  EXPECT_EQ(kind_of([&] { (void)a.reshape(Shape{4}); }), ErrorKind::ShapeMismatch);
}

TEST(Tensor, ItemRequiresScalar) {
  EXPECT_EQ(Tensor::scalar(2.5).item(), 2.5);
  EXPECT_EQ(kind_of([] { (void)Tensor::vector({1, 2}).item(); }), ErrorKind::NotScalar);
}

TEST(Elementwise, Examples) {
  Tape tape;
  const Var a = tape.constant(Tensor::vector({1, 2}));
  const Var b = tape.constant(Tensor::vector({3, 4}));
  EXPECT_EQ(add(a, b).value().values(), (std::vector<double>{4, 6}));
  EXPECT_EQ(max_scalar(tape.constant(Tensor::vector({-1, 2})), 0.0).value().values(), (std::vector<double>{0, 2}));
  EXPECT_EQ(exp(tape.constant(Tensor::vector({0}))).value().values(), (std::vector<double>{1}));
  EXPECT_EQ(mul(a, tape.constant(Tensor::scalar(2))).value().values(), (std::vector<double>{2, 4}));
}

TEST(Elementwise, Errors) {
  Tape tape;
  const Var a = tape.constant(Tensor::vector({1, 2}));
  const Var c = tape.constant(Tensor::vector({1, 2, 3}));
  EXPECT_EQ(kind_of([&] { (void)add(a, c); }), ErrorKind::ShapeMismatch);
  EXPECT_EQ(kind_of([&] { (void)log(tape.constant(Tensor::vector({1, 0}))); }), ErrorKind::DomainError);
  EXPECT_EQ(kind_of([&] { (void)log(tape.constant(Tensor::vector({-1}))); }), ErrorKind::DomainError);
}

TEST(Matmul, Examples) {
  const Tensor m = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(kernels::matmul(Tensor::matrix({{1, 0}, {0, 1}}), m).values(), m.values());
  EXPECT_EQ(kernels::matmul(Tensor::matrix({{1, 2}}), Tensor::matrix({{3}, {4}})).values(),
            (std::vector<double>{11}));
  EXPECT_EQ(kind_of([&] { (void)kernels::matmul(m, Tensor::matrix({{1, 2, 3}})); }), ErrorKind::ShapeMismatch);
}

TEST(Matmul, GradientOfSumIsColumnSumOfB) {
  SplitMix64 rng(3);
  const Tensor a = random_tensor(Shape{3, 4}, rng);
  const Tensor b = random_tensor(Shape{4, 2}, rng);
  Tape tape;
  const Var va = tape.leaf(grad_leaf(a));
  const Var loss = sum(matmul(va, tape.constant(b)));
  const Tensor ga = backward(tape, loss).of(va);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(ga[i * 4 + k], b[k * 2] + b[k * 2 + 1], 1e-15);
  auto f = [&](const Tensor& x) { return sum(kernels::matmul(x, b)); };
  EXPECT_LT(max_relative_error(ga, finite_diff_grad(f, a)), 1e-6);
}

TEST(Backward, LinearCase) {
  Tape tape;
  const Var w = tape.leaf(grad_leaf(Tensor::vector({2, 3})));
  const Var x = tape.constant(Tensor::vector({1, 1}));
  const Gradients g = backward(tape, sum(mul(w, x)));
  EXPECT_EQ(g.of(w).values(), (std::vector<double>{1, 1}));
}

TEST(Backward, DeadRelu) {
  Tape tape;
  const Var w = tape.leaf(grad_leaf(Tensor::scalar(1)));
  const Gradients g = backward(tape, relu(mul(w, -5.0)));
  EXPECT_EQ(g.of(w).item(), 0.0);
}

TEST(Backward, NonScalarLossRejected) {
  Tape tape;
  const Var w = tape.leaf(grad_leaf(Tensor::vector({1, 2})));
  EXPECT_EQ(kind_of([&] { (void)backward(tape, mul(w, 2.0)); }), ErrorKind::NotScalar);
}

TEST(Backward, DisconnectedLeafGetsZeroAndIsReported) {
  Tape tape;
  const Var w = tape.leaf(grad_leaf(Tensor::vector({1, 2})));
  const Var unused = tape.leaf(grad_leaf(Tensor::vector({5})));
  const Gradients g = backward(tape, sum(w));
  EXPECT_EQ(g.of(unused).values(), (std::vector<double>{0}));
  ASSERT_EQ(g.disconnected.size(), 1u);
  EXPECT_EQ(g.disconnected[0], unused.id());
}

TEST(Backward, TapeIsTopologicallyOrdered) {
  Tape tape;
  const Var a = tape.leaf(grad_leaf(Tensor::vector({1, 2})));
  const Var b = exp(mul(a, a));
  (void)sum(add(b, a));
  for (std::size_t i = 0; i < tape.size(); ++i)
    for (std::size_t in : tape.node(i).inputs) EXPECT_LT(in, i);
}

TEST(Backward, MlpMatchesFiniteDifferences) {
  // 3 -> 4 -> 1 network: 12 + 4 + 4 = 20 parameters.
  SplitMix64 rng(11);
  const Tensor x = random_tensor(Shape{5, 3}, rng);
  const std::vector<Tensor> params = {random_tensor(Shape{3, 4}, rng), random_tensor(Shape{4}, rng),
                                      random_tensor(Shape{4, 1}, rng)};
  auto build = [&](std::vector<Var>& p) {
    Tape& t = p[0].tape();
    const Var h = relu(add_bias(matmul(t.constant(x), p[0]), p[1]));
    const Var y = matmul(h, p[2]);
    return mean(mul(y, y));
  };
  EXPECT_LT(gradient_check_error(params, build), 1e-4);
}

TEST(Backward, IsLinearInTheLoss) {
  SplitMix64 rng(5);
  const Tensor x0 = random_tensor(Shape{6}, rng, 0.5, 1.5);
  auto grads_for = [&](double a, double b) {
    Tape tape;
    const Var x = tape.leaf(grad_leaf(x0));
    const Var l1 = sum(mul(x, x));
    const Var l2 = sum(log(x));
    return backward(tape, add(mul(l1, a), mul(l2, b))).of(x);
  };
  const Tensor g1 = grads_for(1, 0), g2 = grads_for(0, 1), mix = grads_for(2.5, -0.75);
  for (std::size_t i = 0; i < x0.numel(); ++i) EXPECT_NEAR(mix[i], 2.5 * g1[i] - 0.75 * g2[i], 1e-10);
}

TEST(Backward, ReplayIsBitwiseDeterministic) {
  SplitMix64 rng(9);
  Tape tape;
  const Var w = tape.leaf(grad_leaf(random_tensor(Shape{2, 1, 3, 3}, rng)));
  const Var b = tape.leaf(grad_leaf(random_tensor(Shape{2}, rng)));
  const Var x = tape.constant(random_tensor(Shape{2, 1, 6, 6}, rng));
  const Var loss = mean(relu(conv2d(x, w, b, 1, 1)));
  const Gradients g1 = backward(tape, loss);
  const Gradients g2 = backward(tape, loss);
  EXPECT_TRUE(bitwise_equal(g1.of(w), g2.of(w)));
  EXPECT_TRUE(bitwise_equal(g1.of(b), g2.of(b)));
}

TEST(FiniteDiff, Examples) {
  auto square = [](const Tensor& x) { return x[0] * x[0]; };
  EXPECT_NEAR(finite_diff_grad(square, Tensor::scalar(3.0))[0], 6.0, 1e-6);
  SplitMix64 rng(1);
  const Tensor g = finite_diff_grad([](const Tensor& x) { return sum(x); }, random_tensor(Shape{7}, rng));
  for (double v : g.data()) EXPECT_NEAR(v, 1.0, 1e-9);
  EXPECT_EQ(kind_of([] { (void)finite_diff_grad([](const Tensor&) { return 0.0; }, Tensor::scalar(1), 0.0); }),
            ErrorKind::InvalidConfig);
}

TEST(FiniteDiff, ElementwisePrimitives) {
  SplitMix64 rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor a = random_tensor(Shape{3, 4}, rng, 0.2, 2.0);
    const Tensor b = random_tensor(Shape{3, 4}, rng, 0.2, 2.0);
    const std::vector<Tensor> in = {a, b};
    EXPECT_LT(gradient_check_error(in, [](std::vector<Var>& v) { return sum(mul(add(v[0], v[1]), sub(v[0], v[1]))); }),
              1e-4);
    EXPECT_LT(gradient_check_error(in, [](std::vector<Var>& v) { return mean(mul(exp(neg(v[0])), log(v[1]))); }),
              1e-4);
    EXPECT_LT(gradient_check_error({random_tensor(Shape{2, 6}, rng)},
                                   [](std::vector<Var>& v) { return sum(mul(reshape(v[0], Shape{3, 4}), 1.5)); }),
              1e-4);
  }
}

TEST(GradcheckSuite, EveryCasePassesAndIsReproducible) {
  const GradcheckReport a = run_gradcheck_suite(10, 3);
  const GradcheckReport b = run_gradcheck_suite(10, 3);
  EXPECT_EQ(a.cases.size(), 13u);
  for (std::size_t i = 0; i < a.cases.size(); ++i) {
    EXPECT_LT(a.cases[i].max_error, 1e-4) << a.cases[i].name;
    EXPECT_EQ(a.cases[i].max_error, b.cases[i].max_error);
  }
  EXPECT_TRUE(a.passed());
  EXPECT_NE(gradcheck_json(a).find("\"residual_block\""), std::string::npos);
}
