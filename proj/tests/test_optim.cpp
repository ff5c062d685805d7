#include <gtest/gtest.h>

#include <cmath>

#include "defu/optim.hpp"

namespace defu {
namespace {

ad::Parameter<double> scalar_param(double v) { return {"w", Tensor64({1, 1, 1, 1}, v)}; }

ad::GradMap<double> grad_of(double g) { return {{"w", Tensor64({1, 1, 1, 1}, g)}}; }

TEST(Adam, FirstStepClosedForm) {
  auto w = scalar_param(0.0);
  std::vector<ad::Parameter<double>*> params = {&w};
  Adam<double> adam(1e-3);
  adam.step(params, grad_of(1.0));
  EXPECT_NEAR(w.value[0], -0.001 * (1.0 / (1.0 + 1e-8)), 1e-18);
  EXPECT_EQ(adam.state().step, 1u);
}

TEST(Adam, FirstStepSignOpposesGradient) {
  for (double g : {-3.0, -1e-4, 2e-6, 5.0}) {
    auto w = scalar_param(1.0);
    std::vector<ad::Parameter<double>*> params = {&w};
    Adam<double> adam(1e-2);
    adam.step(params, grad_of(g));
    EXPECT_EQ(std::signbit(w.value[0] - 1.0), !std::signbit(g)) << g;
  }
}

TEST(Adam, ZeroGradientLeavesParametersAndDecaysMoments) {
  auto w = scalar_param(0.5);
  std::vector<ad::Parameter<double>*> params = {&w};
  Adam<double> adam(1e-3);
  adam.step(params, grad_of(2.0));
  const double after_one = w.value[0];
  const double m1 = adam.state().m.at("w")[0], v1 = adam.state().v.at("w")[0];
  // With m != 0 the parameter keeps moving; start over from zero moments.
  Adam<double> fresh(1e-3);
  auto u = scalar_param(0.5);
  std::vector<ad::Parameter<double>*> up = {&u};
  fresh.step(up, grad_of(0.0));
  EXPECT_EQ(u.value[0], 0.5);
  adam.step(params, grad_of(0.0));
  EXPECT_NEAR(adam.state().m.at("w")[0], 0.9 * m1, 1e-15);
  EXPECT_NEAR(adam.state().v.at("w")[0], 0.999 * v1, 1e-15);
  EXPECT_NE(after_one, 0.5);
}

TEST(Adam, TenStepsMatchReferenceRecurrence) {
  auto w = scalar_param(0.25);
  std::vector<ad::Parameter<double>*> params = {&w};
  Adam<double> adam(1e-2);
  double ref = 0.25, m = 0, v = 0;
  for (int t = 1; t <= 10; ++t) {
    const double g = 0.7;
    adam.step(params, grad_of(g));
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    ref -= 1e-2 * mh / (std::sqrt(vh) + 1e-8);
    ASSERT_NEAR(w.value[0], ref, 1e-12) << "step " << t;
  }
}

TEST(Adam, ShapeMismatchLeavesStateUntouched) {
  auto w = scalar_param(1.0);
  std::vector<ad::Parameter<double>*> params = {&w};
  Adam<double> adam;
  ad::GradMap<double> bad = {{"w", Tensor64({1, 1, 1, 2})}};
  EXPECT_THROW(adam.step(params, bad), DimensionError);
  EXPECT_EQ(w.value[0], 1.0);
  EXPECT_EQ(adam.state().step, 0u);
}

TEST(Plateau, MonotoneImprovementKeepsLr) {
  PlateauScheduler s(1e-5);
  for (double l : {1.0, 0.9, 0.8}) EXPECT_EQ(s.update(l), 1e-5);
}

TEST(Plateau, SixStagnantEpochsReduceByFactor) {
  PlateauScheduler s(1e-5);
  s.update(1.0);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(s.update(1.0), 1e-5);
  EXPECT_NEAR(s.update(1.0), 2e-6, 1e-20);
}

TEST(Plateau, TwoCyclesCompound) {
  PlateauScheduler s(1e-5);
  s.update(1.0);
  std::vector<double> lrs;
  for (int i = 0; i < 12; ++i) lrs.push_back(s.update(1.0));
  EXPECT_NEAR(lrs[5], 2e-6, 1e-20);
  EXPECT_NEAR(lrs[11], 4e-7, 1e-21);
  for (std::size_t i = 1; i < lrs.size(); ++i) EXPECT_LE(lrs[i], lrs[i - 1]);
}

TEST(Plateau, MinLrFloor) {
  PlateauScheduler s(1e-5, 0.2, 0, 5e-6);
  s.update(1.0);
  s.update(1.0);
  s.update(1.0);
  EXPECT_EQ(s.lr(), 5e-6);
}

TEST(EarlyStop, ImprovingStreamNeverStops) {
  EarlyStopper e;
  for (int i = 0; i < 100; ++i) EXPECT_FALSE(e.update(100.0 - i));
}

TEST(EarlyStop, ConstantStreamStopsAfterPatiencePlusOneStagnant) {
  EarlyStopper e(5);
  EXPECT_FALSE(e.update(1.0));  // baseline
  for (int i = 1; i <= 5; ++i) EXPECT_FALSE(e.update(1.0)) << i;
  EXPECT_TRUE(e.update(1.0));  // sixth stagnant epoch
  EXPECT_TRUE(e.update(0.0));  // stays stopped
  EXPECT_TRUE(e.stopped());
}

TEST(EarlyStop, LateImprovementResetsCounter) {
  EarlyStopper e(5);
  e.update(1.0);
  for (int i = 0; i < 4; ++i) EXPECT_FALSE(e.update(1.0));
  EXPECT_FALSE(e.update(0.5));  // fifth wait improves
  EXPECT_EQ(e.wait(), 0u);
  for (int i = 0; i < 5; ++i) EXPECT_FALSE(e.update(0.5));
  EXPECT_TRUE(e.update(0.5));
}

TEST(EarlyStop, AgreesWithSchedulerOnImprovement) {
  PlateauScheduler s(1e-3);
  EarlyStopper e(100);
  const std::vector<double> stream = {3, 2, 2, 2.5, 1, 1, 0.9, 0.95, 0.9, 0.1};
  for (double v : stream) {
    s.update(v);
    e.update(v);
    EXPECT_EQ(s.last_improved(), e.last_improved());
  }
}

}  // namespace
}  // namespace defu
