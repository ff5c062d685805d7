#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "defu/autodiff.hpp"
#include "defu/tensor.hpp"

namespace defu {

/// -(2 sum(g p) + 1) / (sum(g^2) + sum(p^2) + 1), accumulated in double.
template <typename T>
double dice_loss_value(std::span<const T> g, std::span<const T> p);

namespace ad {
/// Smoothed dice loss of probabilities `p` against a binary target over every
/// element of the batch. Differentiable in `p` only.
template <typename T>
Var<T> dice_loss(const Var<T>& p, const BasicTensor<T>& target);
}  // namespace ad

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

struct ConfusionMetrics {
  ConfusionCounts counts;
  double accuracy = 0;
  /// With no predicted positives: 1 if there were no positives to find,
  /// else 0. Recall mirrors this with FP.
  double precision = 0;
  double recall = 0;
  /// 0 when precision + recall == 0.
  double f1 = 0;
};

/// Masks are binary; a value counts as foreground when >= 0.5.
template <typename T>
double dice_coef(std::span<const T> gt, std::span<const T> pr);
/// Dice without the +1 smoothing; 1 when both masks are empty.
template <typename T>
double dice_coef_raw(std::span<const T> gt, std::span<const T> pr);
template <typename T>
double iou(std::span<const T> gt, std::span<const T> pr);

/// A probability counts as a positive prediction when >= threshold.
template <typename T>
ConfusionCounts confusion_counts(std::span<const T> gt, std::span<const T> probs,
                                 double threshold = 0.5);
ConfusionMetrics confusion_metrics(const ConfusionCounts& counts);

/// Area under the ROC curve via the rank statistic; tied scores earn half
/// credit. Throws DegenerateInputError unless both classes are present.
template <typename T>
double auc_roc(std::span<const T> gt, std::span<const T> probs);

/// The seven reported metrics plus the extra dice variants for one image
/// (or one pooled set of pixels).
struct MetricsReport {
  double dice = 0;       ///< smoothed, on binarized predictions
  double dice_raw = 0;   ///< unsmoothed, on binarized predictions
  double dice_loss = 0;  ///< soft, on probabilities
  double accuracy = 0;
  double iou = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double auc = 0;  ///< NaN when the ground truth has a single class
  ConfusionCounts counts;
  double threshold = 0.5;
};

template <typename T>
MetricsReport evaluate_pixels(std::span<const T> gt, std::span<const T> probs,
                              double threshold = 0.5);

/// Per-field mean. AUC averages only images where it is defined (NaN if none).
MetricsReport mean_report(std::span<const MetricsReport> reports);

/// Reported columns, in table order.
const std::vector<std::string>& metric_names();
/// Looks up a reported column by name (see metric_names()).
double metric_value(const MetricsReport& report, const std::string& name);

}  // namespace defu
