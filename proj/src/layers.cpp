#include "defu/layers.hpp"

#include <cmath>

namespace defu::nn {

ConvSpec conv_spec(std::size_t in_channels, std::size_t out_channels,
                   std::size_t kernel, std::size_t stride, Extent2 dilation) {
  ConvSpec spec;
  spec.in_channels = in_channels;
  spec.out_channels = out_channels;
  spec.kernel = {kernel, kernel};
  spec.stride = {stride, stride};
  spec.dilation = dilation;
  spec.padding = Padding::Same;
  return spec;
}

template <typename T>
Conv2d<T>::Conv2d(const std::string& name, const ConvSpec& spec, Rng& rng)
    : spec_(spec),
      weight_{name + ".weight", BasicTensor<T>(spec.weight_shape())},
      bias_{name + ".bias", BasicTensor<T>({spec.out_channels, 1, 1, 1})} {
  spec_.validate();
  const double fan_in =
      static_cast<double>(spec.in_channels * spec.kernel.h * spec.kernel.w);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (auto& w : weight_.value.data()) w = static_cast<T>(dist(rng));
}

template <typename T>
Var<T> Conv2d<T>::forward(Tape<T>& tape, const Var<T>& x) const {
  return ad::conv2d(x, tape.parameter(weight_), tape.parameter(bias_), spec_);
}

template <typename T>
void Conv2d<T>::collect(StateRefs<T>& refs) {
  refs.params.push_back(&weight_);
  refs.params.push_back(&bias_);
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(const std::string& name, std::size_t channels,
                            const BatchNormOptions& options, std::size_t slots)
    : name_(name),
      options_(options),
      gamma_{name + ".gamma", BasicTensor<T>({channels, 1, 1, 1}, T(1))},
      beta_{name + ".beta", BasicTensor<T>({channels, 1, 1, 1}, T(0))},
      stats_(slots, RunningStats<T>(channels)) {}

template <typename T>
Var<T> BatchNorm2d<T>::forward(Tape<T>& tape, const Var<T>& x, Mode mode,
                               std::size_t slot) {
  return ad::batchnorm(x, tape.parameter(gamma_), tape.parameter(beta_),
                       stats_.at(slot), mode, options_);
}

template <typename T>
void BatchNorm2d<T>::collect(StateRefs<T>& refs) {
  refs.params.push_back(&gamma_);
  refs.params.push_back(&beta_);
  for (std::size_t s = 0; s < stats_.size(); ++s) {
    const std::string suffix = stats_.size() > 1 ? "." + std::to_string(s) : "";
    refs.buffers.push_back({name_ + ".running_mean" + suffix, &stats_[s].mean});
    refs.buffers.push_back({name_ + ".running_var" + suffix, &stats_[s].var});
  }
}

template <typename T>
ConvBnAct<T>::ConvBnAct(const std::string& name, const ConvSpec& spec,
                        const LayerOptions& options, Rng& rng, bool batchnorm)
    : conv_(name + ".conv", spec, rng), alpha_(static_cast<T>(options.alpha)) {
  if (batchnorm) {
    bn_.emplace_back(name + ".bn", spec.out_channels, options.batchnorm);
  }
}

template <typename T>
Var<T> ConvBnAct<T>::forward(Tape<T>& tape, const Var<T>& x, Mode mode) {
  Var<T> y = conv_.forward(tape, x);
  if (!bn_.empty()) y = bn_.front().forward(tape, y, mode);
  return ad::leaky_relu(y, alpha_);
}

template <typename T>
void ConvBnAct<T>::collect(StateRefs<T>& refs) {
  conv_.collect(refs);
  for (auto& bn : bn_) bn.collect(refs);
}

template <typename T>
Bottleneck<T>::Bottleneck(const std::string& name, std::size_t in_channels,
                          std::size_t out_channels, const LayerOptions& options,
                          Rng& rng)
    : conv_(name + ".conv", conv_spec(in_channels, out_channels, 1), rng),
      alpha_(static_cast<T>(options.alpha)) {}

template <typename T>
Var<T> Bottleneck<T>::forward(Tape<T>& tape, const Var<T>& x) const {
  return ad::leaky_relu(conv_.forward(tape, x), alpha_);
}

template <typename T>
void Bottleneck<T>::collect(StateRefs<T>& refs) {
  conv_.collect(refs);
}

template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;
template class ConvBnAct<float>;
template class ConvBnAct<double>;
template class Bottleneck<float>;
template class Bottleneck<double>;

}  // namespace defu::nn
