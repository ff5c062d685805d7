#include "defu/optim.hpp"

#include <algorithm>
#include <cmath>

#include "defu/errors.hpp"

namespace defu {

template <typename T>
void Adam<T>::step(std::span<ad::Parameter<T>* const> params,
                   const ad::GradMap<T>& grads) {
  for (const auto* p : params) {
    const auto it = grads.find(p->name);
    if (it == grads.end()) {
      throw ContractError("no gradient for parameter '" + p->name + "'");
    }
    if (it->second.shape() != p->value.shape()) {
      throw DimensionError("gradient shape " + to_string(it->second.shape()) +
                           " does not match parameter '" + p->name + "' " +
                           to_string(p->value.shape()));
    }
  }

  auto& s = state_;
  ++s.step;
  const double t = static_cast<double>(s.step);
  const double c1 = 1.0 - std::pow(s.beta1, t);
  const double c2 = 1.0 - std::pow(s.beta2, t);
  for (auto* p : params) {
    const BasicTensor<T>& g = grads.at(p->name);
    auto [mi, m_new] = s.m.try_emplace(p->name, p->value.shape(), T(0));
    auto [vi, v_new] = s.v.try_emplace(p->name, p->value.shape(), T(0));
    if (mi->second.shape() != p->value.shape() ||
        vi->second.shape() != p->value.shape()) {
      throw DimensionError("optimizer state for '" + p->name +
                           "' has the wrong shape");
    }
    T* w = p->value.raw();
    T* m = mi->second.raw();
    T* v = vi->second.raw();
    const T* gr = g.raw();
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      const double gi = gr[i];
      const double mi_ = s.beta1 * m[i] + (1.0 - s.beta1) * gi;
      const double vi_ = s.beta2 * v[i] + (1.0 - s.beta2) * gi * gi;
      m[i] = static_cast<T>(mi_);
      v[i] = static_cast<T>(vi_);
      const double update = s.lr * (mi_ / c1) / (std::sqrt(vi_ / c2) + s.eps);
      w[i] = static_cast<T>(w[i] - update);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

bool ImprovementTracker::observe(double value) {
  last_improved_ = !has_best_ || value < best_;
  if (last_improved_) {
    best_ = value;
    has_best_ = true;
    wait_ = 0;
  } else {
    ++wait_;
  }
  return last_improved_;
}

PlateauScheduler::PlateauScheduler(double lr, double factor,
                                   std::size_t patience, double min_lr)
    : lr_(lr), factor_(factor), patience_(patience), min_lr_(min_lr) {
  if (!(lr > 0)) throw ConfigError("learning rate must be positive");
  if (!(factor > 0 && factor < 1)) {
    throw ConfigError("plateau factor must be in (0, 1)");
  }
  if (min_lr < 0) throw ConfigError("min_lr must be non-negative");
}

double PlateauScheduler::update(double value) {
  tracker_.observe(value);
  if (tracker_.wait() > patience_) {
    lr_ = std::max(lr_ * factor_, min_lr_);
    if (!(lr_ > 0)) throw NumericError("learning rate underflowed to zero");
    tracker_.reset_wait();
  }
  return lr_;
}

bool EarlyStopper::update(double value) {
  tracker_.observe(value);
  if (tracker_.wait() > patience_) stopped_ = true;
  return stopped_;
}

}  // namespace defu
