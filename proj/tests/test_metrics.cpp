#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "defu/metrics.hpp"
#include "support.hpp"

namespace defu {
namespace {

using test::Rng;
using Vec = std::vector<double>;

double dice_of(const Vec& g, const Vec& p) { return dice_loss_value<double>(g, p); }

/// O(n^2) pairwise statistic: P(score_pos > score_neg) + 0.5 P(equal).
double pairwise_auc(const Vec& gt, const Vec& s) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] < 0.5) continue;
    for (std::size_t j = 0; j < gt.size(); ++j) {
      if (gt[j] >= 0.5) continue;
      pairs += 1;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return wins / pairs;
}

Vec random_vec(std::size_t n, Rng& rng, bool binary, int levels = 0) {
  std::uniform_real_distribution<double> u(0, 1);
  Vec v(n);
  for (auto& x : v) {
    x = u(rng);
    if (binary) x = x < 0.5 ? 0.0 : 1.0;
    else if (levels > 0) x = std::floor(x * levels) / levels;
  }
  return v;
}

TEST(DiceLoss, PerfectPredictionIsMinusOne) {
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const Vec g = random_vec(50, rng, true);
    EXPECT_EQ(dice_of(g, g), -1.0);
  }
  EXPECT_EQ(dice_of(Vec(9, 0.0), Vec(9, 0.0)), -1.0);
}

TEST(DiceLoss, HandEvaluation) {
  EXPECT_DOUBLE_EQ(dice_of({1, 0}, {0.5, 0.5}), -0.8);
}

TEST(DiceLoss, RangeAndBinaryIdentity) {
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const Vec g = random_vec(40, rng, true);
    const Vec p = random_vec(40, rng, false);
    const double l = dice_of(g, p);
    EXPECT_GE(l, -1.0);
    EXPECT_LT(l, 0.0);
    const Vec pb = random_vec(40, rng, true);
    EXPECT_NEAR(dice_of(g, pb), -dice_coef<double>(g, pb), 1e-15);
  }
}

TEST(DiceLoss, AutodiffAgreesWithValue) {
  Rng rng(3);
  const auto g = test::random_mask<double>({2, 1, 4, 4}, rng);
  const auto p = test::random_tensor<double>({2, 1, 4, 4}, rng, 0, 1);
  ad::Tape<double> tape;
  const auto loss = ad::dice_loss(tape.leaf(p, "p"), g);
  EXPECT_NEAR(loss.value().item(), dice_of({g.data().begin(), g.data().end()},
                                           {p.data().begin(), p.data().end()}),
              1e-15);
  EXPECT_THROW(ad::dice_loss(tape.leaf(p, "q"), Tensor64({1, 1, 4, 4})), DimensionError);
}

TEST(DiceCoef, Cases) {
  EXPECT_EQ(dice_coef<double>(Vec{1, 1, 0}, Vec{1, 1, 0}), 1.0);
  EXPECT_EQ(dice_coef<double>(Vec{0, 0}, Vec{0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(dice_coef<double>(Vec{1, 1, 0}, Vec{1, 0, 0}), 0.75);
  EXPECT_EQ(dice_coef_raw<double>(Vec{0, 0}, Vec{0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(dice_coef_raw<double>(Vec{1, 1, 0}, Vec{1, 0, 0}), 2.0 / 3.0);
}

TEST(Iou, Cases) {
  EXPECT_EQ(iou<double>(Vec{1, 0, 1}, Vec{1, 0, 1}), 1.0);
  EXPECT_DOUBLE_EQ(iou<double>(Vec{1, 0}, Vec{0, 1}), 1.0 / 3.0);
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const Vec g = random_vec(30, rng, true), p = random_vec(30, rng, true);
    EXPECT_LE(iou<double>(g, p), dice_coef<double>(g, p) + 1e-15);
  }
}

TEST(Confusion, HandCount) {
  const auto m = confusion_metrics(confusion_counts<double>(Vec{1, 1, 0, 0}, Vec{1, 0, 1, 0}));
  EXPECT_EQ(m.counts, (ConfusionCounts{1, 1, 1, 1}));
  EXPECT_EQ(m.accuracy, 0.5);
  EXPECT_EQ(m.precision, 0.5);
  EXPECT_EQ(m.recall, 0.5);
  EXPECT_EQ(m.f1, 0.5);
}

TEST(Confusion, PerfectPrediction) {
  const auto m = confusion_metrics(confusion_counts<double>(Vec{1, 0, 1}, Vec{0.9, 0.1, 0.6}));
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_EQ(m.precision, 1.0);
  EXPECT_EQ(m.recall, 1.0);
  EXPECT_EQ(m.f1, 1.0);
}

TEST(Confusion, ZeroDenominatorConventions) {
  // Nothing predicted, nothing present.
  auto m = confusion_metrics({0, 4, 0, 0});
  EXPECT_EQ(m.precision, 1.0);
  EXPECT_EQ(m.recall, 1.0);
  // Nothing predicted but positives exist.
  m = confusion_metrics({0, 2, 0, 2});
  EXPECT_EQ(m.precision, 0.0);
  EXPECT_EQ(m.recall, 0.0);
  EXPECT_EQ(m.f1, 0.0);
  // No positives but some predicted.
  m = confusion_metrics({0, 2, 2, 0});
  EXPECT_EQ(m.recall, 0.0);
  EXPECT_EQ(m.precision, 0.0);
}

TEST(Confusion, RandomizedTallyOracle) {
  Rng rng(5);
  std::uniform_real_distribution<double> thr(0.05, 0.95);
  for (int i = 0; i < 120; ++i) {
    const Vec g = random_vec(32 * 32, rng, true), p = random_vec(32 * 32, rng, false);
    const double t = thr(rng);
    ConfusionCounts ref;
    for (std::size_t k = 0; k < g.size(); ++k) {
      const bool pos = p[k] >= t, truth = g[k] >= 0.5;
      if (pos && truth) ++ref.tp;
      else if (pos) ++ref.fp;
      else if (truth) ++ref.fn;
      else ++ref.tn;
    }
    const auto c = confusion_counts<double>(g, p, t);
    ASSERT_EQ(c, ref);
    ASSERT_EQ(c.total(), g.size());
    const auto m = confusion_metrics(c);
    ASSERT_DOUBLE_EQ(m.accuracy, static_cast<double>(ref.tp + ref.tn) / g.size());
    ASSERT_DOUBLE_EQ(m.precision, static_cast<double>(ref.tp) / (ref.tp + ref.fp));
    ASSERT_DOUBLE_EQ(m.recall, static_cast<double>(ref.tp) / (ref.tp + ref.fn));
    ASSERT_NEAR(m.f1, 2 * m.precision * m.recall / (m.precision + m.recall), 1e-12);
  }
}

TEST(Auc, SeparatingAndConstantScores) {
  EXPECT_EQ(auc_roc<double>(Vec{0, 0, 1, 1}, Vec{0.1, 0.2, 0.8, 0.9}), 1.0);
  EXPECT_EQ(auc_roc<double>(Vec{0, 1, 0, 1}, Vec(4, 0.3)), 0.5);
  EXPECT_THROW(auc_roc<double>(Vec{1, 1}, Vec{0.2, 0.4}), DegenerateInputError);
}

TEST(Auc, RandomizedPairwiseOracle) {
  Rng rng(6);
  for (int i = 0; i < 120; ++i) {
    Vec g = random_vec(200, rng, true);
    g[0] = 0;
    g[1] = 1;
    // Coarse levels force many ties.
    const Vec s = random_vec(200, rng, false, i % 2 ? 10 : 0);
    ASSERT_NEAR(auc_roc<double>(g, s), pairwise_auc(g, s), 1e-12);
  }
}

TEST(Auc, InvariantUnderMonotoneTransform) {
  Rng rng(7);
  Vec g = random_vec(100, rng, true), s = random_vec(100, rng, false);
  g[0] = 0;
  g[1] = 1;
  Vec t(s.size());
  std::transform(s.begin(), s.end(), t.begin(), [](double v) { return std::exp(3 * v) - 7; });
  EXPECT_NEAR(auc_roc<double>(g, s), auc_roc<double>(g, t), 1e-15);
}

TEST(Metrics, PermutationInvariance) {
  Rng rng(8);
  Vec g = random_vec(64, rng, true), p = random_vec(64, rng, false);
  g[0] = 0;
  g[1] = 1;
  std::vector<std::size_t> perm(64);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Vec gp(64), pp(64);
  for (std::size_t i = 0; i < 64; ++i) {
    gp[i] = g[perm[i]];
    pp[i] = p[perm[i]];
  }
  const auto a = evaluate_pixels<double>(g, p), b = evaluate_pixels<double>(gp, pp);
  for (const auto& name : metric_names()) {
    EXPECT_NEAR(metric_value(a, name), metric_value(b, name), 1e-12) << name;
  }
  EXPECT_NEAR(a.dice_loss, b.dice_loss, 1e-12);
}

TEST(Metrics, ReportColumnsAndMean) {
  EXPECT_EQ(metric_names(),
            (std::vector<std::string>{"dice", "ac", "iou", "precision", "recall", "f1", "auc"}));
  MetricsReport a, b;
  a.dice = 0.5;
  b.dice = 1.0;
  a.auc = 0.6;
  b.auc = std::nan("");
  const std::vector<MetricsReport> both = {a, b};
  const auto m = mean_report(both);
  EXPECT_DOUBLE_EQ(m.dice, 0.75);
  EXPECT_DOUBLE_EQ(m.auc, 0.6);
}

TEST(Metrics, SingleClassImageHasNanAuc) {
  const auto r = evaluate_pixels<double>(Vec{0, 0, 0}, Vec{0.1, 0.7, 0.2});
  EXPECT_TRUE(std::isnan(r.auc));
}

}  // namespace
}  // namespace defu
