#include "defu/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "defu/errors.hpp"

namespace defu {
namespace {

template <typename T>
void check_sizes(std::span<const T> a, std::span<const T> b, const char* what) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(what) + ": size mismatch (" +
                         std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + ")");
  }
}

template <typename T>
bool on(T v) {
  return v >= T(0.5);
}

struct Overlap {
  double inter = 0, gt = 0, pr = 0;
};

template <typename T>
Overlap overlap(std::span<const T> gt, std::span<const T> pr) {
  Overlap o;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool g = on(gt[i]);
    const bool p = on(pr[i]);
    o.inter += g && p;
    o.gt += g;
    o.pr += p;
  }
  return o;
}

}  // namespace

template <typename T>
double dice_loss_value(std::span<const T> g, std::span<const T> p) {
  check_sizes(g, p, "dice_loss");
  double gp = 0, gg = 0, pp = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    gp += static_cast<double>(g[i]) * p[i];
    gg += static_cast<double>(g[i]) * g[i];
    pp += static_cast<double>(p[i]) * p[i];
  }
  return -(2.0 * gp + 1.0) / (gg + pp + 1.0);
}

namespace ad {

template <typename T>
Var<T> dice_loss(const Var<T>& p, const BasicTensor<T>& target) {
  if (p.shape() != target.shape()) {
    throw DimensionError("dice_loss: prediction " + to_string(p.shape()) +
                         " vs target " + to_string(target.shape()));
  }
  const auto& pv = p.value();
  double gp = 0, gg = 0, pp = 0;
  for (std::size_t i = 0; i < pv.numel(); ++i) {
    gp += static_cast<double>(target[i]) * pv[i];
    gg += static_cast<double>(target[i]) * target[i];
    pp += static_cast<double>(pv[i]) * pv[i];
  }
  const double num = 2.0 * gp + 1.0;
  const double den = gg + pp + 1.0;
  auto g = std::make_shared<const BasicTensor<T>>(target);
  auto pval = p.shared_value();
  return p.tape()->record(
      OpKind::DiceLoss, {p}, BasicTensor<T>::scalar(static_cast<T>(-num / den)),
      [g, pval, num, den](const BasicTensor<T>& grad,
                          typename Tape<T>::Targets t) {
        // d/dp_i of -(num/den) = -(2 g_i den - num 2 p_i) / den^2
        const double up = grad.item();
        const double inv = 1.0 / (den * den);
        T* dst = t[0]->raw();
        const T* gv = g->raw();
        const T* pv = pval->raw();
        for (std::size_t i = 0; i < t[0]->numel(); ++i) {
          const double d = -(2.0 * gv[i] * den - 2.0 * num * pv[i]) * inv;
          dst[i] += static_cast<T>(up * d);
        }
      });
}

}  // namespace ad

template <typename T>
double dice_coef(std::span<const T> gt, std::span<const T> pr) {
  check_sizes(gt, pr, "dice_coef");
  const Overlap o = overlap(gt, pr);
  return (2.0 * o.inter + 1.0) / (o.gt + o.pr + 1.0);
}

template <typename T>
double dice_coef_raw(std::span<const T> gt, std::span<const T> pr) {
  check_sizes(gt, pr, "dice_coef_raw");
  const Overlap o = overlap(gt, pr);
  if (o.gt + o.pr == 0) return 1.0;
  return 2.0 * o.inter / (o.gt + o.pr);
}

template <typename T>
double iou(std::span<const T> gt, std::span<const T> pr) {
  check_sizes(gt, pr, "iou");
  const Overlap o = overlap(gt, pr);
  return (o.inter + 1.0) / (o.gt + o.pr - o.inter + 1.0);
}

template <typename T>
ConfusionCounts confusion_counts(std::span<const T> gt, std::span<const T> probs,
                                 double threshold) {
  check_sizes(gt, probs, "confusion_counts");
  ConfusionCounts c;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool g = on(gt[i]);
    const bool p = static_cast<double>(probs[i]) >= threshold;
    if (g && p) ++c.tp;
    else if (g) ++c.fn;
    else if (p) ++c.fp;
    else ++c.tn;
  }
  return c;
}

ConfusionMetrics confusion_metrics(const ConfusionCounts& c) {
  ConfusionMetrics m;
  m.counts = c;
  const double tp = static_cast<double>(c.tp);
  const double total = static_cast<double>(c.total());
  m.accuracy = total > 0 ? (tp + static_cast<double>(c.tn)) / total : 1.0;
  if (c.tp + c.fp > 0) {
    m.precision = tp / static_cast<double>(c.tp + c.fp);
  } else {
    m.precision = c.fn == 0 ? 1.0 : 0.0;
  }
  if (c.tp + c.fn > 0) {
    m.recall = tp / static_cast<double>(c.tp + c.fn);
  } else {
    m.recall = c.fp == 0 ? 1.0 : 0.0;
  }
  const double pr = m.precision + m.recall;
  m.f1 = pr > 0 ? 2.0 * m.precision * m.recall / pr : 0.0;
  return m;
}

template <typename T>
double auc_roc(std::span<const T> gt, std::span<const T> probs) {
  check_sizes(gt, probs, "auc_roc");
  std::vector<std::size_t> order(gt.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return probs[a] < probs[b];
  });
  // Sum of (1-based, tie-averaged) ranks of the positives.
  double rank_sum = 0;
  double positives = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    double group_pos = 0;
    while (j < order.size() && probs[order[j]] == probs[order[i]]) {
      group_pos += on(gt[order[j]]);
      ++j;
    }
    const double mean_rank = 0.5 * static_cast<double>(i + 1 + j);
    rank_sum += group_pos * mean_rank;
    positives += group_pos;
    i = j;
  }
  const double negatives = static_cast<double>(gt.size()) - positives;
  if (positives == 0 || negatives == 0) {
    throw DegenerateInputError("AUC needs both classes in the ground truth");
  }
  return (rank_sum - positives * (positives + 1) / 2) / (positives * negatives);
}

template <typename T>
MetricsReport evaluate_pixels(std::span<const T> gt, std::span<const T> probs,
                              double threshold) {
  check_sizes(gt, probs, "evaluate");
  std::vector<T> binary(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    binary[i] = static_cast<double>(probs[i]) >= threshold ? T(1) : T(0);
  }
  const std::span<const T> pr(binary);
  MetricsReport r;
  r.threshold = threshold;
  r.dice = dice_coef(gt, pr);
  r.dice_raw = dice_coef_raw(gt, pr);
  r.dice_loss = dice_loss_value(gt, probs);
  r.iou = iou(gt, pr);
  const ConfusionMetrics cm = confusion_metrics(confusion_counts(gt, probs, threshold));
  r.counts = cm.counts;
  r.accuracy = cm.accuracy;
  r.precision = cm.precision;
  r.recall = cm.recall;
  r.f1 = cm.f1;
  const bool both = cm.counts.tp + cm.counts.fn > 0 && cm.counts.tn + cm.counts.fp > 0;
  r.auc = both ? auc_roc(gt, probs) : std::numeric_limits<double>::quiet_NaN();
  return r;
}

MetricsReport mean_report(std::span<const MetricsReport> reports) {
  MetricsReport m;
  if (reports.empty()) {
    m.auc = std::numeric_limits<double>::quiet_NaN();
    return m;
  }
  double auc_sum = 0;
  std::size_t auc_n = 0;
  for (const auto& r : reports) {
    m.dice += r.dice;
    m.dice_raw += r.dice_raw;
    m.dice_loss += r.dice_loss;
    m.accuracy += r.accuracy;
    m.iou += r.iou;
    m.precision += r.precision;
    m.recall += r.recall;
    m.f1 += r.f1;
    if (!std::isnan(r.auc)) {
      auc_sum += r.auc;
      ++auc_n;
    }
    m.counts.tp += r.counts.tp;
    m.counts.tn += r.counts.tn;
    m.counts.fp += r.counts.fp;
    m.counts.fn += r.counts.fn;
  }
  const double n = static_cast<double>(reports.size());
  m.dice /= n;
  m.dice_raw /= n;
  m.dice_loss /= n;
  m.accuracy /= n;
  m.iou /= n;
  m.precision /= n;
  m.recall /= n;
  m.f1 /= n;
  m.auc = auc_n ? auc_sum / static_cast<double>(auc_n)
                : std::numeric_limits<double>::quiet_NaN();
  m.threshold = reports.front().threshold;
  return m;
}

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {
      "dice", "ac", "iou", "precision", "recall", "f1", "auc"};
  return names;
}

double metric_value(const MetricsReport& r, const std::string& name) {
  if (name == "dice") return r.dice;
  if (name == "ac") return r.accuracy;
  if (name == "iou") return r.iou;
  if (name == "precision") return r.precision;
  if (name == "recall") return r.recall;
  if (name == "f1") return r.f1;
  if (name == "auc") return r.auc;
  if (name == "dice_raw") return r.dice_raw;
  if (name == "dice_loss") return r.dice_loss;
  throw ContractError("unknown metric '" + name + "'");
}

#define DEFU_INSTANTIATE_METRICS(T)                                           \
  template double dice_loss_value<T>(std::span<const T>, std::span<const T>); \
  template ad::Var<T> ad::dice_loss<T>(const ad::Var<T>&,                     \
                                       const BasicTensor<T>&);                \
  template double dice_coef<T>(std::span<const T>, std::span<const T>);       \
  template double dice_coef_raw<T>(std::span<const T>, std::span<const T>);   \
  template double iou<T>(std::span<const T>, std::span<const T>);             \
  template ConfusionCounts confusion_counts<T>(std::span<const T>,            \
                                               std::span<const T>, double);   \
  template double auc_roc<T>(std::span<const T>, std::span<const T>);         \
  template MetricsReport evaluate_pixels<T>(std::span<const T>,               \
                                            std::span<const T>, double);

DEFU_INSTANTIATE_METRICS(float)
DEFU_INSTANTIATE_METRICS(double)

#undef DEFU_INSTANTIATE_METRICS

}  // namespace defu
