#include "defu/blocks.hpp"

#include "defu/errors.hpp"

namespace defu::nn {

template <typename T>
RecurrentConvUnit<T>::RecurrentConvUnit(const std::string& name,
                                        std::size_t channels, std::size_t steps,
                                        const LayerOptions& options, Rng& rng)
    : channels_(channels),
      steps_(steps),
      alpha_(static_cast<T>(options.alpha)),
      conv_(name + ".conv", conv_spec(channels, channels, 3), rng),
      bn_(name + ".bn", channels, options.batchnorm, steps + 1) {}

template <typename T>
Var<T> RecurrentConvUnit<T>::forward(Tape<T>& tape, const Var<T>& x,
                                     Mode mode) {
  if (x.shape().c != channels_) {
    throw DimensionError(Axis::Channel, "recurrent unit expects " +
                                             std::to_string(channels_) +
                                             " channels, got " +
                                             std::to_string(x.shape().c));
  }
  Var<T> z = ad::leaky_relu(bn_.forward(tape, conv_.forward(tape, x), mode, 0),
                            alpha_);
  for (std::size_t k = 1; k <= steps_; ++k) {
    Var<T> y = conv_.forward(tape, ad::add(x, z));
    z = ad::leaky_relu(bn_.forward(tape, y, mode, k), alpha_);
  }
  return z;
}

template <typename T>
void RecurrentConvUnit<T>::collect(StateRefs<T>& refs) {
  conv_.collect(refs);
  bn_.collect(refs);
}

template <typename T>
DcrcBlock<T>::DcrcBlock(const std::string& name, std::size_t in,
                        std::size_t out, std::size_t units, std::size_t steps,
                        const LayerOptions& options, Rng& rng)
    : in_(in), out_(out) {
  if (units == 0) throw ConfigError("DCRC block needs at least one unit");
  if (in != out) {
    entry_ = std::make_unique<Bottleneck<T>>(name + ".entry", in, out, options,
                                             rng);
  }
  for (std::size_t j = 0; j < units; ++j) {
    const std::string prefix = name + ".unit" + std::to_string(j);
    if (j > 0) {
      squeeze_.push_back(std::make_unique<Bottleneck<T>>(
          prefix + ".squeeze", in + j * out, out, options, rng));
    }
    units_.push_back(
        std::make_unique<RecurrentConvUnit<T>>(prefix, out, steps, options, rng));
  }
  final_ = std::make_unique<Bottleneck<T>>(name + ".fuse", in + units * out,
                                           out, options, rng);
}

template <typename T>
Var<T> DcrcBlock<T>::forward_traced(Tape<T>& tape, const Var<T>& x, Mode mode,
                                    DcrcTrace* trace) {
  if (x.shape().c != in_) {
    throw DimensionError(Axis::Channel, "DCRC block expects " +
                                             std::to_string(in_) +
                                             " channels, got " +
                                             std::to_string(x.shape().c));
  }
  std::vector<Var<T>> features{x};
  for (std::size_t j = 0; j < units_.size(); ++j) {
    Var<T> r;
    if (j == 0) {
      r = entry_ ? entry_->forward(tape, x) : x;
    } else {
      r = squeeze_[j - 1]->forward(tape, ad::concat_channels(features));
    }
    if (trace) trace->unit_input_channels.push_back(r.shape().c);
    features.push_back(units_[j]->forward(tape, r, mode));
  }
  Var<T> all = ad::concat_channels(features);
  if (trace) trace->concat_channels = all.shape().c;
  return final_->forward(tape, all);
}

template <typename T>
void DcrcBlock<T>::collect(StateRefs<T>& refs) {
  if (entry_) entry_->collect(refs);
  for (std::size_t j = 0; j < units_.size(); ++j) {
    if (j > 0) squeeze_[j - 1]->collect(refs);
    units_[j]->collect(refs);
  }
  final_->collect(refs);
}

template <typename T>
InceptionDilationBlock<T>::InceptionDilationBlock(const std::string& name,
                                                  std::size_t in,
                                                  std::size_t out,
                                                  const LayerOptions& options,
                                                  Rng& rng,
                                                  bool branch_batchnorm)
    : in_(in), out_(out) {
  const ConvSpec specs[kBranches] = {
      conv_spec(in, out, 1, 2),
      conv_spec(in, out, 3, 2),
      conv_spec(in, out, 1, 1),  // applied after 3x3/2 average pooling
      conv_spec(in, out, 3, 2, {3, 1}),
      conv_spec(in, out, 3, 2, {1, 2}),
  };
  for (std::size_t b = 0; b < kBranches; ++b) {
    branches_.push_back(std::make_unique<ConvBnAct<T>>(
        name + ".branch" + std::to_string(b), specs[b], options, rng,
        branch_batchnorm));
  }
  projection_ = std::make_unique<ConvBnAct<T>>(
      name + ".project", conv_spec(kBranches * out, out, 1), options, rng);
}

template <typename T>
Var<T> InceptionDilationBlock<T>::branch(std::size_t index, Tape<T>& tape,
                                         const Var<T>& x, Mode mode) {
  if (x.shape().c != in_) {
    throw DimensionError(Axis::Channel, "inception block expects " +
                                             std::to_string(in_) +
                                             " channels, got " +
                                             std::to_string(x.shape().c));
  }
  if (index == 2) return branches_[2]->forward(tape, ad::avgpool2d(x), mode);
  return branches_.at(index)->forward(tape, x, mode);
}

template <typename T>
Var<T> InceptionDilationBlock<T>::project(Tape<T>& tape,
                                          const std::vector<Var<T>>& branches,
                                          Mode mode) {
  if (branches.size() != kBranches) {
    throw ContractError("inception projection expects five branch outputs");
  }
  return projection_->forward(tape, ad::concat_channels(branches), mode);
}

template <typename T>
Var<T> InceptionDilationBlock<T>::forward(Tape<T>& tape, const Var<T>& x,
                                          Mode mode) {
  std::vector<Var<T>> outs;
  for (std::size_t b = 0; b < kBranches; ++b) {
    outs.push_back(branch(b, tape, x, mode));
  }
  return project(tape, outs, mode);
}

template <typename T>
void InceptionDilationBlock<T>::collect(StateRefs<T>& refs) {
  for (auto& b : branches_) b->collect(refs);
  projection_->collect(refs);
}

template <typename T>
DoubleConvBlock<T>::DoubleConvBlock(const std::string& name, std::size_t in,
                                    std::size_t out,
                                    const LayerOptions& options, Rng& rng)
    : in_(in),
      out_(out),
      first_(name + ".conv1", conv_spec(in, out, 3), options, rng),
      second_(name + ".conv2", conv_spec(out, out, 3), options, rng) {}

template <typename T>
Var<T> DoubleConvBlock<T>::forward(Tape<T>& tape, const Var<T>& x, Mode mode) {
  return second_.forward(tape, first_.forward(tape, x, mode), mode);
}

template <typename T>
void DoubleConvBlock<T>::collect(StateRefs<T>& refs) {
  first_.collect(refs);
  second_.collect(refs);
}

template class RecurrentConvUnit<float>;
template class RecurrentConvUnit<double>;
template class DcrcBlock<float>;
template class DcrcBlock<double>;
template class InceptionDilationBlock<float>;
template class InceptionDilationBlock<double>;
template class DoubleConvBlock<float>;
template class DoubleConvBlock<double>;

}  // namespace defu::nn
