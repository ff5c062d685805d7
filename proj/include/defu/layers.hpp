#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "defu/autodiff.hpp"
#include "defu/ops.hpp"

namespace defu::nn {

using ad::Parameter;
using ad::Tape;
using ad::Var;

using Rng = std::mt19937_64;

/// Non-trainable state that still has to be checkpointed (running stats).
template <typename T>
struct NamedBuffer {
  std::string name;
  std::vector<T>* data;
};

/// Flat view over a module's state, in deterministic registration order.
template <typename T>
struct StateRefs {
  std::vector<Parameter<T>*> params;
  std::vector<NamedBuffer<T>> buffers;
};

struct LayerOptions {
  double alpha = 0.01;  ///< LeakyReLU negative slope
  BatchNormOptions batchnorm;
};

/// Convolution with He (fan-in) normal initialization and zero bias.
template <typename T>
class Conv2d {
 public:
  Conv2d(const std::string& name, const ConvSpec& spec, Rng& rng);

  Var<T> forward(Tape<T>& tape, const Var<T>& x) const;
  void collect(StateRefs<T>& refs);

  const ConvSpec& spec() const noexcept { return spec_; }
  Parameter<T>& weight() noexcept { return weight_; }
  Parameter<T>& bias() noexcept { return bias_; }

 private:
  ConvSpec spec_;
  Parameter<T> weight_;
  Parameter<T> bias_;
};

/// Batch normalization with one set of affine parameters and `slots`
/// independent running-statistics buffers. A module that reuses the same
/// affine parameters at several recurrence steps keeps one slot per step.
template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d(const std::string& name, std::size_t channels,
              const BatchNormOptions& options, std::size_t slots = 1);

  Var<T> forward(Tape<T>& tape, const Var<T>& x, Mode mode,
                 std::size_t slot = 0);
  void collect(StateRefs<T>& refs);

  Parameter<T>& gamma() noexcept { return gamma_; }
  Parameter<T>& beta() noexcept { return beta_; }
  RunningStats<T>& stats(std::size_t slot = 0) { return stats_.at(slot); }

 private:
  std::string name_;
  BatchNormOptions options_;
  Parameter<T> gamma_;
  Parameter<T> beta_;
  std::vector<RunningStats<T>> stats_;
};

/// conv -> [batchnorm] -> LeakyReLU
template <typename T>
class ConvBnAct {
 public:
  ConvBnAct(const std::string& name, const ConvSpec& spec,
            const LayerOptions& options, Rng& rng, bool batchnorm = true);

  Var<T> forward(Tape<T>& tape, const Var<T>& x, Mode mode);
  void collect(StateRefs<T>& refs);

  Conv2d<T>& conv() noexcept { return conv_; }

 private:
  Conv2d<T> conv_;
  std::vector<BatchNorm2d<T>> bn_;  // empty when batchnorm is disabled
  T alpha_;
};

/// 1x1 conv -> LeakyReLU, used to compress concatenated features.
template <typename T>
class Bottleneck {
 public:
  Bottleneck(const std::string& name, std::size_t in_channels,
             std::size_t out_channels, const LayerOptions& options, Rng& rng);

  Var<T> forward(Tape<T>& tape, const Var<T>& x) const;
  void collect(StateRefs<T>& refs);

  Conv2d<T>& conv() noexcept { return conv_; }

 private:
  Conv2d<T> conv_;
  T alpha_;
};

ConvSpec conv_spec(std::size_t in_channels, std::size_t out_channels,
                   std::size_t kernel, std::size_t stride = 1,
                   Extent2 dilation = {1, 1});

}  // namespace defu::nn
