#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "defu/autodiff.hpp"

namespace defu {

template <typename T>
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::map<std::string, BasicTensor<T>> m;  ///< first moments, by parameter
  std::map<std::string, BasicTensor<T>> v;  ///< second moments, by parameter
};

/// Bias-corrected Adam: w -= lr * m_hat / (sqrt(v_hat) + eps).
template <typename T>
class Adam {
 public:
  explicit Adam(double lr = 1e-3) { state_.lr = lr; }
  explicit Adam(AdamState<T> state) : state_(std::move(state)) {}

  /// Every parameter must have a same-shaped entry in `grads`.
  void step(std::span<ad::Parameter<T>* const> params,
            const ad::GradMap<T>& grads);

  double lr() const noexcept { return state_.lr; }
  void set_lr(double lr) { state_.lr = lr; }
  AdamState<T>& state() noexcept { return state_; }
  const AdamState<T>& state() const noexcept { return state_; }

 private:
  AdamState<T> state_;
};

/// Shared definition of "improved": strictly below the best seen so far.
class ImprovementTracker {
 public:
  /// Records `value`; returns whether it improved on the best.
  bool observe(double value);
  double best() const noexcept { return best_; }
  std::size_t wait() const noexcept { return wait_; }
  bool last_improved() const noexcept { return last_improved_; }
  void reset_wait() noexcept { wait_ = 0; }

 private:
  double best_ = 0;
  bool has_best_ = false;
  std::size_t wait_ = 0;
  bool last_improved_ = false;
};

/// Multiplies lr by `factor` once the monitored value has failed to improve
/// for more than `patience` consecutive epochs.
class PlateauScheduler {
 public:
  explicit PlateauScheduler(double lr, double factor = 0.2,
                            std::size_t patience = 5, double min_lr = 0.0);

  double update(double value);
  double lr() const noexcept { return lr_; }
  std::size_t wait() const noexcept { return tracker_.wait(); }
  double best() const noexcept { return tracker_.best(); }
  bool last_improved() const noexcept { return tracker_.last_improved(); }

 private:
  double lr_;
  double factor_;
  std::size_t patience_;
  double min_lr_;
  ImprovementTracker tracker_;
};

/// Signals a stop once the monitored value has failed to improve for more
/// than `patience` consecutive epochs. Stays stopped.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience = 5) : patience_(patience) {}

  bool update(double value);
  bool stopped() const noexcept { return stopped_; }
  std::size_t wait() const noexcept { return tracker_.wait(); }
  bool last_improved() const noexcept { return tracker_.last_improved(); }

 private:
  std::size_t patience_;
  bool stopped_ = false;
  ImprovementTracker tracker_;
};

}  // namespace defu
