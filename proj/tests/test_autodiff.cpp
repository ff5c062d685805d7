#include <gtest/gtest.h>

#include "defu/autodiff.hpp"
#include "defu/gradcheck.hpp"
#include "defu/gradcheck_suite.hpp"
#include "defu/metrics.hpp"
#include "support.hpp"

namespace defu {
namespace {

using test::Rng;
using test::random_tensor;
using V = ad::Var<double>;

TEST(Tape, AddGivesUnitGradients) {
  ad::Tape<double> tape;
  const auto a = tape.leaf(Tensor64({1, 1, 2, 2}, 3.0), "a");
  const auto b = tape.leaf(Tensor64({1, 1, 2, 2}, -1.0), "b");
  const auto g = tape.backward(ad::sum(ad::add(a, b)));
  EXPECT_EQ(g.at("a"), Tensor64({1, 1, 2, 2}, 1.0));
  EXPECT_EQ(g.at("b"), Tensor64({1, 1, 2, 2}, 1.0));
}

TEST(Tape, ConstantGraphHasNoGradients) {
  ad::Tape<double> tape;
  const auto a = tape.constant(Tensor64({1, 1, 2, 2}, 3.0));
  EXPECT_TRUE(tape.backward(ad::sum(ad::scale(a, 2.0))).empty());
}

TEST(Tape, SumAndHalfSquare) {
  Rng rng(1);
  const auto x = random_tensor<double>({2, 2, 3, 3}, rng);
  {
    ad::Tape<double> tape;
    const auto v = tape.leaf(x, "x");
    EXPECT_EQ(tape.backward(ad::sum(v)).at("x"), Tensor64(x.shape(), 1.0));
  }
  {
    ad::Tape<double> tape;
    const auto v = tape.leaf(x, "x");
    const auto g = tape.backward(ad::scale(ad::sum(ad::mul(v, v)), 0.5)).at("x");
    EXPECT_LT(max_abs_diff(g, x), 1e-15);
  }
}

TEST(Tape, FanOutAccumulates) {
  ad::Tape<double> tape;
  const auto x = tape.leaf(Tensor64({1, 1, 1, 3}, 2.0), "x");
  const auto loss = ad::sum(ad::add(ad::add(x, x), ad::scale(x, 3.0)));
  EXPECT_EQ(tape.backward(loss).at("x"), Tensor64({1, 1, 1, 3}, 5.0));
}

TEST(Tape, SharedParameterLeavesSumByName) {
  ad::Tape<double> tape;
  const ad::Parameter<double> p{"w", Tensor64({1, 1, 1, 2}, 1.0)};
  const auto a = tape.parameter(p);
  const auto b = tape.parameter(p);
  const auto g = tape.backward(ad::sum(ad::add(ad::scale(a, 2.0), b)));
  EXPECT_EQ(g.at("w"), Tensor64({1, 1, 1, 2}, 3.0));
}

TEST(Tape, UnusedLeafGetsZeroGradient) {
  ad::Tape<double> tape;
  const auto x = tape.leaf(Tensor64({1, 1, 1, 2}, 1.0), "x");
  tape.leaf(Tensor64({1, 1, 2, 2}, 1.0), "unused");
  const auto g = tape.backward(ad::sum(x));
  EXPECT_EQ(g.at("unused"), Tensor64({1, 1, 2, 2}, 0.0));
}

TEST(Tape, NonScalarLossRejected) {
  ad::Tape<double> tape;
  const auto x = tape.leaf(Tensor64({1, 1, 1, 2}, 1.0), "x");
  EXPECT_THROW(tape.backward(x), ContractError);
}

TEST(Tape, ThresholdIsNotDifferentiable) {
  ad::Tape<double> tape;
  const auto x = tape.leaf(Tensor64({1, 1, 1, 2}, 1.0), "x");
  EXPECT_THROW(ad::threshold(x, 0.5), UnsupportedOpError);
  ad::Tape<double> no_grad(false);
  const auto y = ad::threshold(no_grad.constant(Tensor64({1, 1, 1, 2}, 0.7)), 0.5);
  EXPECT_EQ(y.value(), Tensor64({1, 1, 1, 2}, 1.0));
}

TEST(Tape, ConvWeightGradientIsCorrelationWithOnes) {
  Rng rng(2);
  const auto x = random_tensor<double>({1, 1, 5, 5}, rng);
  ConvSpec spec;
  spec.padding = Padding::Valid;
  ad::Tape<double> tape;
  const auto xv = tape.constant(x);
  const auto w = tape.leaf(random_tensor<double>(spec.weight_shape(), rng), "w");
  const auto b = tape.leaf(Tensor64({1, 1, 1, 1}), "b");
  const auto g = tape.backward(ad::sum(ad::conv2d(xv, w, b, spec)));
  for (std::size_t ky = 0; ky < 3; ++ky) {
    for (std::size_t kx = 0; kx < 3; ++kx) {
      double acc = 0;
      for (std::size_t y = 0; y < 3; ++y)
        for (std::size_t c = 0; c < 3; ++c) acc += x.at(0, 0, y + ky, c + kx);
      EXPECT_NEAR(g.at("w").at(0, 0, ky, kx), acc, 1e-12);
    }
  }
  EXPECT_NEAR(g.at("b")[0], 9.0, 1e-12);
}

TEST(Tape, LeakyReluSlopeMatchesAlpha) {
  const auto r = grad_check<double>(
      [](ad::Tape<double>&, const std::vector<V>& in) {
        return ad::sum(ad::leaky_relu(in[0], 0.01));
      },
      {Tensor64({1, 1, 1, 3}, std::vector<double>{-0.5, -1.5, -3.0})});
  EXPECT_LT(r.max_rel_error, 1e-9);
  ad::Tape<double> tape;
  const auto x = tape.leaf(Tensor64({1, 1, 1, 1}, -2.0), "x");
  EXPECT_DOUBLE_EQ(tape.backward(ad::sum(ad::leaky_relu(x, 0.01))).at("x")[0], 0.01);
}

TEST(Tape, SigmoidDerivative) {
  Rng rng(3);
  const auto x = random_tensor<double>({1, 1, 4, 4}, rng, -4, 4);
  ad::Tape<double> tape;
  const auto g = tape.backward(ad::sum(ad::sigmoid(tape.leaf(x, "x")))).at("x");
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-x[i]));
    const double fd = (1.0 / (1.0 + std::exp(-(x[i] + 1e-6))) -
                       1.0 / (1.0 + std::exp(-(x[i] - 1e-6)))) / 2e-6;
    EXPECT_NEAR(g[i], s * (1 - s), 1e-12);
    EXPECT_NEAR(g[i], fd, 1e-4);
  }
}

TEST(GradCheck, LinearFunctionIsExact) {
  Rng rng(4);
  const auto c = random_tensor<double>({1, 2, 3, 3}, rng);
  const auto r = grad_check<double>(
      [&](ad::Tape<double>& t, const std::vector<V>& in) {
        return ad::sum(ad::mul(in[0], t.constant(c)));
      },
      {random_tensor<double>(c.shape(), rng)});
  EXPECT_LT(r.max_rel_error, 1e-9);
  EXPECT_EQ(r.coords_checked, c.numel());
}

TEST(GradCheck, SigmoidOfConv) {
  Rng rng(5);
  ConvSpec spec;
  spec.in_channels = 2;
  spec.out_channels = 3;
  const auto r = grad_check<double>(
      [&](ad::Tape<double>&, const std::vector<V>& in) {
        return ad::sum(ad::sigmoid(ad::conv2d(in[0], in[1], in[2], spec)));
      },
      {random_tensor<double>({1, 2, 5, 5}, rng), random_tensor<double>(spec.weight_shape(), rng),
       random_tensor<double>({3, 1, 1, 1}, rng)});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(GradCheck, DetectsCorruptedRule) {
  Rng rng(6);
  GradCheckOptions opts;
  opts.faults = {{ad::OpKind::Sigmoid, 1.5}};
  const auto r = grad_check<double>(
      [](ad::Tape<double>&, const std::vector<V>& in) { return ad::sum(ad::sigmoid(in[0])); },
      {random_tensor<double>({1, 1, 3, 3}, rng)}, opts);
  EXPECT_GT(r.max_rel_error, 1e-2);
}

TEST(GradCheck, DeterministicGradients) {
  Rng rng(7);
  const auto x = random_tensor<double>({2, 2, 4, 4}, rng);
  auto run = [&] {
    ad::Tape<double> tape;
    const auto v = tape.leaf(x, "x");
    std::vector<double> gamma = {1.0, 2.0}, beta = {0.0, 0.5};
    RunningStats<double> stats(2);
    const auto g = tape.leaf(Tensor64({2, 1, 1, 1}, gamma), "g");
    const auto b = tape.leaf(Tensor64({2, 1, 1, 1}, beta), "b");
    return tape.backward(ad::sum(ad::sigmoid(ad::batchnorm(v, g, b, stats, Mode::Train))));
  };
  EXPECT_EQ(run(), run());
}

TEST(GradSuite, PrimitivesAndBlocksPassWithFullCoverage) {
  SuiteOptions opts;
  opts.include_model = false;
  const auto entries = run_gradcheck_suite(opts);
  for (const auto& e : entries) {
    EXPECT_TRUE(e.passed) << e.name << ": " << e.result.max_rel_error << " " << e.note;
  }
  EXPECT_EQ(registry_coverage(entries), ad::op_registry().size());
}

TEST(GradSuite, CorruptedConvBackwardFails) {
  SuiteOptions opts;
  opts.include_model = false;
  opts.filter = "conv2d 3x3";
  opts.faults = {{ad::OpKind::Conv2d, 1.5}};
  const auto entries = run_gradcheck_suite(opts);
  ASSERT_FALSE(entries.empty());
  for (const auto& e : entries) EXPECT_FALSE(e.passed) << e.name;
}

}  // namespace
}  // namespace defu
