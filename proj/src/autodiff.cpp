#include "defu/autodiff.hpp"

#include <algorithm>
#include <array>
#include <optional>

namespace defu::ad {
namespace {

constexpr std::array kRegistry{
    OpInfo{OpKind::Conv2d, "conv2d", true},
    OpInfo{OpKind::MaxPool2d, "maxpool2d", true},
    OpInfo{OpKind::AvgPool2d, "avgpool2d", true},
    OpInfo{OpKind::UpsampleNearest2x, "upsample_nearest2x", true},
    OpInfo{OpKind::BatchNorm, "batchnorm", true},
    OpInfo{OpKind::LeakyRelu, "leaky_relu", true},
    OpInfo{OpKind::Sigmoid, "sigmoid", true},
    OpInfo{OpKind::Add, "add", true},
    OpInfo{OpKind::Mul, "mul", true},
    OpInfo{OpKind::Scale, "scale", true},
    OpInfo{OpKind::ConcatChannels, "concat_channels", true},
    OpInfo{OpKind::Sum, "sum", true},
    OpInfo{OpKind::DiceLoss, "dice_loss", true},
    OpInfo{OpKind::Threshold, "threshold", false},
};

template <typename T>
void accumulate(BasicTensor<T>* target, const BasicTensor<T>& contribution) {
  if (target == nullptr) return;
  T* dst = target->raw();
  const T* src = contribution.raw();
  for (std::size_t i = 0; i < contribution.numel(); ++i) dst[i] += src[i];
}

template <typename T>
void accumulate(BasicTensor<T>* target, std::span<const T> contribution) {
  if (target == nullptr) return;
  T* dst = target->raw();
  for (std::size_t i = 0; i < contribution.size(); ++i) dst[i] += contribution[i];
}

template <typename T>
Tape<T>& tape_of(const Var<T>& v) {
  if (v.tape() == nullptr) throw ContractError("variable is not on a tape");
  return *v.tape();
}

}  // namespace

std::span<const OpInfo> op_registry() { return kRegistry; }

const OpInfo& op_info(OpKind kind) {
  for (const auto& info : kRegistry) {
    if (info.kind == kind) return info;
  }
  throw UnsupportedOpError("operation is not registered");
}

template <typename T>
void Tape<T>::check_owned(const Var<T>& v) const {
  if (v.tape() != this || v.id() >= nodes_.size()) {
    throw ContractError("variable belongs to a different tape");
  }
}

template <typename T>
Var<T> Tape<T>::constant(BasicTensor<T> value) {
  Node node;
  node.is_leaf = true;
  node.shape = value.shape();
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1,
                std::make_shared<const BasicTensor<T>>(std::move(value)), false);
}

template <typename T>
Var<T> Tape<T>::leaf(BasicTensor<T> value, std::string name) {
  Node node;
  node.is_leaf = true;
  node.requires_grad = grad_enabled_;
  node.shape = value.shape();
  node.name = std::move(name);
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1,
                std::make_shared<const BasicTensor<T>>(std::move(value)),
                grad_enabled_);
}

template <typename T>
Var<T> Tape<T>::record(OpKind kind, std::vector<Var<T>> inputs,
                       BasicTensor<T> value, BackwardFn backward) {
  const OpInfo& info = op_info(kind);
  bool needs_grad = false;
  for (const auto& in : inputs) {
    check_owned(in);
    needs_grad = needs_grad || in.requires_grad();
  }
  needs_grad = needs_grad && grad_enabled_;
  if (needs_grad && (!info.differentiable || !backward)) {
    throw UnsupportedOpError("no gradient rule for operation '" +
                             std::string(info.name) + "'");
  }
  Node node;
  node.kind = kind;
  node.requires_grad = needs_grad;
  node.shape = value.shape();
  if (needs_grad) {
    node.inputs.reserve(inputs.size());
    for (const auto& in : inputs) node.inputs.push_back(in.id());
    node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1,
                std::make_shared<const BasicTensor<T>>(std::move(value)),
                needs_grad);
}

template <typename T>
GradMap<T> Tape<T>::backward(const Var<T>& loss) {
  check_owned(loss);
  if (loss.value().numel() != 1) {
    throw ContractError("backward needs a single-element loss, got shape " +
                        to_string(loss.shape()));
  }
  GradMap<T> result;
  std::vector<std::optional<BasicTensor<T>>> grads(nodes_.size());
  if (nodes_[loss.id()].requires_grad) {
    grads[loss.id()].emplace(loss.shape(), T(1));
  }

  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.requires_grad || !grads[id]) continue;
    if (node.is_leaf) {
      auto [it, inserted] = result.try_emplace(node.name, std::move(*grads[id]));
      if (!inserted) accumulate(&it->second, *grads[id]);
      grads[id].reset();
      continue;
    }
    std::vector<BasicTensor<T>*> targets(node.inputs.size(), nullptr);
    const auto fault = faults_.find(node.kind);
    std::vector<BasicTensor<T>> scratch;
    if (fault != faults_.end()) scratch.reserve(node.inputs.size());
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      const std::size_t in = node.inputs[i];
      if (!nodes_[in].requires_grad) continue;
      if (fault != faults_.end()) {
        scratch.emplace_back(nodes_[in].shape);
        targets[i] = &scratch.back();
        continue;
      }
      if (!grads[in]) grads[in].emplace(nodes_[in].shape);
      targets[i] = &*grads[in];
    }
    node.backward(*grads[id], targets);
    if (fault != faults_.end()) {
      for (std::size_t i = 0; i < node.inputs.size(); ++i) {
        if (targets[i] == nullptr) continue;
        const std::size_t in = node.inputs[i];
        if (!grads[in]) grads[in].emplace(nodes_[in].shape);
        accumulate(&*grads[in], scale(*targets[i], fault->second));
      }
    }
    grads[id].reset();
  }

  for (const Node& node : nodes_) {
    if (node.is_leaf && node.requires_grad && !result.contains(node.name)) {
      result.emplace(node.name, BasicTensor<T>(node.shape));
    }
  }
  return result;
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias,
              const ConvSpec& spec) {
  auto xs = x.shared_value();
  auto ws = weight.shared_value();
  BasicTensor<T> out = defu::conv2d(*xs, *ws, bias.value().data(), spec);
  const bool need_input = x.requires_grad();
  return tape_of(x).record(
      OpKind::Conv2d, {x, weight, bias}, std::move(out),
      [xs, ws, spec, need_input](const BasicTensor<T>& g,
                                 typename Tape<T>::Targets t) {
        auto grads = defu::conv2d_backward(*xs, *ws, g, spec, need_input);
        if (need_input) accumulate(t[0], grads.input);
        accumulate(t[1], grads.weight);
        accumulate<T>(t[2], grads.bias);
      });
}

template <typename T>
Var<T> maxpool2d(const Var<T>& x) {
  auto r = defu::maxpool2d(x.value());
  auto argmax =
      std::make_shared<const std::vector<std::size_t>>(std::move(r.argmax));
  const Shape in_shape = x.shape();
  return tape_of(x).record(
      OpKind::MaxPool2d, {x}, std::move(r.output),
      [argmax, in_shape](const BasicTensor<T>& g, typename Tape<T>::Targets t) {
        accumulate(t[0], defu::maxpool2d_backward(g, *argmax, in_shape));
      });
}

template <typename T>
Var<T> avgpool2d(const Var<T>& x) {
  const Shape in_shape = x.shape();
  return tape_of(x).record(
      OpKind::AvgPool2d, {x}, defu::avgpool2d(x.value()),
      [in_shape](const BasicTensor<T>& g, typename Tape<T>::Targets t) {
        accumulate(t[0], defu::avgpool2d_backward(g, in_shape));
      });
}

template <typename T>
Var<T> upsample_nearest2x(const Var<T>& x) {
  return tape_of(x).record(
      OpKind::UpsampleNearest2x, {x}, defu::upsample_nearest2x(x.value()),
      [](const BasicTensor<T>& g, typename Tape<T>::Targets t) {
        accumulate(t[0], defu::upsample_nearest2x_backward(g));
      });
}

template <typename T>
Var<T> batchnorm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                 RunningStats<T>& stats, Mode mode,
                 const BatchNormOptions& options) {
  auto fwd = defu::batchnorm(x.value(), gamma.value().data(),
                             beta.value().data(), stats, mode, options);
  BasicTensor<T> out = std::move(fwd.output);
  fwd.output = BasicTensor<T>();
  auto saved = std::make_shared<const BatchNormForward<T>>(std::move(fwd));
  auto gs = gamma.shared_value();
  return tape_of(x).record(
      OpKind::BatchNorm, {x, gamma, beta}, std::move(out),
      [saved, gs, mode](const BasicTensor<T>& g, typename Tape<T>::Targets t) {
        auto grads = defu::batchnorm_backward(g, *saved, gs->data(), mode);
        accumulate(t[0], grads.input);
        accumulate<T>(t[1], grads.gamma);
        accumulate<T>(t[2], grads.beta);
      });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T alpha) {
  auto xs = x.shared_value();
  return tape_of(x).record(
      OpKind::LeakyRelu, {x}, defu::leaky_relu(*xs, alpha),
      [xs, alpha](const BasicTensor<T>& g, typename Tape<T>::Targets t) {
        accumulate(t[0], defu::leaky_relu_backward(g, *xs, alpha));
      });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  auto out = std::make_shared<const BasicTensor<T>>(defu::sigmoid(x.value()));
  return tape_of(x).record(
      OpKind::Sigmoid, {x}, *out,
      [out](const BasicTensor<T>& g, typename Tape<T>::Targets t) {
        accumulate(t[0], defu::sigmoid_backward(g, *out));
      });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return tape_of(a).record(
      OpKind::Add, {a, b}, defu::add(a.value(), b.value()),
      [](const BasicTensor<T>& g, typename Tape<T>::Targets t) {
        accumulate(t[0], g);
        accumulate(t[1], g);
      });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  auto as = a.shared_value();
  auto bs = b.shared_value();
  return tape_of(a).record(
      OpKind::Mul, {a, b}, defu::mul(*as, *bs),
      [as, bs](const BasicTensor<T>& g, typename Tape<T>::Targets t) {
        if (t[0]) accumulate(t[0], defu::mul(g, *bs));
        if (t[1]) accumulate(t[1], defu::mul(g, *as));
      });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  return tape_of(a).record(
      OpKind::Scale, {a}, defu::scale(a.value(), factor),
      [factor](const BasicTensor<T>& g, typename Tape<T>::Targets t) {
        accumulate(t[0], defu::scale(g, factor));
      });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no parts");
  std::vector<const BasicTensor<T>*> values;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    values.push_back(&p.value());
    widths.push_back(p.shape().c);
  }
  BasicTensor<T> out = defu::concat_channels<T>(
      std::span<const BasicTensor<T>* const>(values));
  return tape_of(parts.front())
      .record(OpKind::ConcatChannels, parts, std::move(out),
              [widths](const BasicTensor<T>& g, typename Tape<T>::Targets t) {
                std::size_t begin = 0;
                for (std::size_t i = 0; i < widths.size(); ++i) {
                  if (t[i]) {
                    accumulate(t[i], defu::slice_channels(g, begin, widths[i]));
                  }
                  begin += widths[i];
                }
              });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  return tape_of(x).record(
      OpKind::Sum, {x}, BasicTensor<T>::scalar(defu::sum(x.value())),
      [](const BasicTensor<T>& g, typename Tape<T>::Targets t) {
        const T v = g.item();
        T* dst = t[0]->raw();
        for (std::size_t i = 0; i < t[0]->numel(); ++i) dst[i] += v;
      });
}

template <typename T>
Var<T> threshold(const Var<T>& x, T level) {
  return tape_of(x).record(OpKind::Threshold, {x},
                           defu::threshold(x.value(), level), nullptr);
}

#define DEFU_INSTANTIATE_AD(T)                                              \
  template class Tape<T>;                                                   \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&,       \
                         const ConvSpec&);                                  \
  template Var<T> maxpool2d(const Var<T>&);                                 \
  template Var<T> avgpool2d(const Var<T>&);                                 \
  template Var<T> upsample_nearest2x(const Var<T>&);                        \
  template Var<T> batchnorm(const Var<T>&, const Var<T>&, const Var<T>&,    \
                            RunningStats<T>&, Mode, const BatchNormOptions&); \
  template Var<T> leaky_relu(const Var<T>&, T);                             \
  template Var<T> sigmoid(const Var<T>&);                                   \
  template Var<T> add(const Var<T>&, const Var<T>&);                        \
  template Var<T> mul(const Var<T>&, const Var<T>&);                        \
  template Var<T> scale(const Var<T>&, T);                                  \
  template Var<T> concat_channels(const std::vector<Var<T>>&);              \
  template Var<T> sum(const Var<T>&);                                       \
  template Var<T> threshold(const Var<T>&, T);

DEFU_INSTANTIATE_AD(float)
DEFU_INSTANTIATE_AD(double)

#undef DEFU_INSTANTIATE_AD

}  // namespace defu::ad
