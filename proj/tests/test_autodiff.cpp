#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "distill/autodiff.hpp"
#include "distill/gradcheck.hpp"
#include "distill/losses.hpp"

using namespace distill;

namespace {

Tensor uniform(Shape shape, double lo, double hi, std::uint64_t seed) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

}  // namespace

TEST(FiniteDifference, SquareAtThree) {
  auto g = finite_difference_gradient([](const Tensor& x) { return x[0] * x[0]; }, Tensor::vector({3.0}), 1e-5);
  EXPECT_NEAR(g[0], 6.0, 1e-9);
}

TEST(FiniteDifference, ConstantFunctionIsZero) {
  auto g = finite_difference_gradient([](const Tensor&) { return 7.5; }, Tensor::vector({1.0, -2.0, 3.0}), 1e-5);
  for (double v : g.data()) EXPECT_EQ(v, 0.0);
}

TEST(FiniteDifference, SumOfExpAtOrigin) {
  auto f = [](const Tensor& x) { return std::exp(x[0]) + std::exp(x[1]); };
  auto g = finite_difference_gradient(f, Tensor::vector({0.0, 0.0}), 1e-5);
  EXPECT_NEAR(g[0], 1.0, 1e-8);
  EXPECT_NEAR(g[1], 1.0, 1e-8);
}

TEST(FiniteDifference, RejectsNonPositiveStep) {
  EXPECT_THROW(finite_difference_gradient([](const Tensor&) { return 0.0; }, Tensor::vector({1.0}), 0.0),
               std::invalid_argument);
}

TEST(GradientCheck, LinearFunctionPassesTightTolerance) {
  auto f = [](Tape& tape, Var x) {
    Var w = tape.constant(Tensor::vector({1.5, -2.0, 0.25, 4.0}));
    return sum(x * w);
  };
  auto report = gradient_check(f, uniform({4}, -3, 3, 1), 1e-8);
  EXPECT_TRUE(report.passed) << report.max_rel_error();
}

TEST(GradientCheck, BkdOnRandomInputs) {
  auto f = [](Tape& tape, std::span<const Var> in) { return bkd_loss(in[0], in[1]); };
  auto report = gradient_check(f, {uniform({1, 8}, -1, 1, 2), uniform({1, 8}, -1, 1, 3)}, 1e-5);
  EXPECT_TRUE(report.passed) << report.max_rel_error();
}

TEST(GradientCheck, HkdAtTemperatureFour) {
  auto f = [](Tape& tape, std::span<const Var> in) { return hkd_loss(in[0], in[1], 4.0); };
  auto report = gradient_check(f, {uniform({2, 5}, -1, 1, 4), uniform({2, 5}, -1, 1, 5)}, 1e-5);
  EXPECT_TRUE(report.passed) << report.max_rel_error();
}

TEST(GradientCheck, DetectsWrongBackward) {
  auto f = [](Tape& tape, Var x) {
    Tensor y = x.value();
    for (auto& v : y.data()) v = v * v;
    Var sq = tape.record(y, {x}, [](const BackwardArgs& a) {
      for (std::size_t i = 0; i < a.grad.size(); ++i) (*a.input_grads[0])[i] += 3.0 * (*a.inputs[0])[i] * a.grad[i];
    });
    return sum(sq);
  };
  auto report = gradient_check(f, Tensor::vector({0.5, 1.5}), 1e-5);
  EXPECT_FALSE(report.passed);
  EXPECT_GT(report.max_rel_error(), 0.1);
}

TEST(GradientCheck, SkipsCoordinatesOnAKink) {
  auto f = [](Tape&, Var x) { return sum(relu(x)); };
  auto report = gradient_check(f, Tensor::vector({0.0, 1.0, -1.0}), 1e-8);
  EXPECT_TRUE(report.passed);
  EXPECT_EQ(report.skipped(), 1u);
}

TEST(RelativeError, UsesFloorForTinyValues) {
  EXPECT_DOUBLE_EQ(relative_error(1e-12, 0.0), 1e-12 / 1e-8);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
}

TEST(Backward, SquareProduct) {
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(3.0));
  auto g = tape.backward(x * x);
  EXPECT_DOUBLE_EQ(g.of(x).item(), 6.0);
}

TEST(Backward, SumGivesOnes) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1, 2, 3, 4}));
  Tensor g = tape.backward(sum(x)).of(x);
  for (double v : g.data()) EXPECT_EQ(v, 1.0);
}

TEST(Backward, ReluBlocksNegativeBranch) {
  Tape tape;
  Var w = tape.leaf(Tensor::scalar(2.0));
  Var x = tape.constant(Tensor::scalar(-1.0));
  auto g = tape.backward(relu(w * x));
  EXPECT_EQ(g.of(w).item(), 0.0);
}

TEST(Backward, NonScalarOutputThrows) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1, 2}));
  EXPECT_THROW(tape.backward(x * x), GraphError);
}

TEST(Backward, ConstantsReceiveNoGradient) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1, 2}));
  Var c = tape.constant(Tensor::vector({3, 4}));
  auto g = tape.backward(sum(x * c));
  EXPECT_FALSE(c.requires_grad());
  EXPECT_FALSE(g.has(c));
  Tensor gc = g.of(c);
  for (double v : gc.data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(g.of(x)[0], 3.0);
  EXPECT_EQ(g.of(x)[1], 4.0);
}

TEST(Backward, LinearInTheOutput) {
  Tensor x0 = uniform({3, 4}, -1, 1, 9);
  auto grad_of = [&](double a, double b) {
    Tape tape;
    Var x = tape.leaf(x0);
    Var f = sum(exp(x));
    Var g = sum(square(x));
    return tape.backward(add(scale(f, a), scale(g, b))).of(x);
  };
  Tensor ga = grad_of(1.0, 0.0), gb = grad_of(0.0, 1.0), gc = grad_of(2.0, -3.0);
  for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_NEAR(gc[i], 2.0 * ga[i] - 3.0 * gb[i], 1e-12);
}

TEST(Backward, MixingTapesThrows) {
  Tape a, b;
  Var x = a.leaf(Tensor::scalar(1.0));
  Var y = b.leaf(Tensor::scalar(2.0));
  EXPECT_THROW(add(x, y), GraphError);
}

TEST(Backward, RepeatedRunsAreBitIdentical) {
  Tensor x0 = uniform({4, 3}, -2, 2, 11);
  auto run = [&] {
    Tape tape;
    Var x = tape.leaf(x0);
    return tape.backward(sum(log_softmax_rows(matmul(x, tape.constant(uniform({3, 5}, -1, 1, 12)))))).of(x);
  };
  EXPECT_EQ(run(), run());
}

TEST(Ops, SqrtHasZeroSlopeAtZero) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({0.0, 4.0}));
  auto g = tape.backward(sum(sqrt(x)));
  EXPECT_EQ(g.of(x)[0], 0.0);
  EXPECT_DOUBLE_EQ(g.of(x)[1], 0.25);
}

TEST(Ops, GatherRowsAccumulatesRepeats) {
  Tape tape;
  Var x = tape.leaf(Tensor::matrix({{1, 2}, {3, 4}}));
  std::vector<std::size_t> idx{1, 1, 0};
  auto g = tape.backward(sum(gather_rows(x, idx)));
  EXPECT_EQ(g.of(x), Tensor::matrix({{1, 1}, {2, 2}}));
}

TEST(Ops, HuberPieces) {
  Tape tape;
  Var r = tape.leaf(Tensor::vector({0.5, -3.0}));
  Var h = huber(r);
  EXPECT_DOUBLE_EQ(h.value()[0], 0.125);
  EXPECT_DOUBLE_EQ(h.value()[1], 2.5);
  auto g = tape.backward(sum(h));
  EXPECT_DOUBLE_EQ(g.of(r)[0], 0.5);
  EXPECT_DOUBLE_EQ(g.of(r)[1], -1.0);
}

TEST(Ops, MatmulShapeMismatchThrows) {
  Tape tape;
  Var a = tape.leaf(Tensor({2, 3}));
  Var b = tape.leaf(Tensor({2, 3}));
  EXPECT_THROW(matmul(a, b), ShapeError);
}
