#pragma once

// Reverse-mode differentiation. Forward values are computed eagerly; each
// recorded operation registers a closure that maps the gradient of its output
// to gradients of its inputs. Backward walks the tape in reverse insertion
// order, visiting each node once.

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "defu/ops.hpp"
#include "defu/tensor.hpp"

namespace defu::ad {

enum class OpKind {
  Conv2d,
  MaxPool2d,
  AvgPool2d,
  UpsampleNearest2x,
  BatchNorm,
  LeakyRelu,
  Sigmoid,
  Add,
  Mul,
  Scale,
  ConcatChannels,
  Sum,
  DiceLoss,
  Threshold,
};

struct OpInfo {
  OpKind kind;
  std::string_view name;
  bool differentiable;
};

/// Every operation the tape knows about, in declaration order.
std::span<const OpInfo> op_registry();
const OpInfo& op_info(OpKind kind);

/// A named trainable tensor.
template <typename T>
struct Parameter {
  std::string name;
  BasicTensor<T> value;
};

/// Gradients of named leaves, keyed by leaf name.
template <typename T>
using GradMap = std::map<std::string, BasicTensor<T>>;

template <typename T>
class Tape;

/// Handle to a node on a tape plus its forward value.
template <typename T>
class Var {
 public:
  Var() = default;

  const BasicTensor<T>& value() const { return *value_; }
  const std::shared_ptr<const BasicTensor<T>>& shared_value() const {
    return value_;
  }
  const Shape& shape() const { return value_->shape(); }
  std::size_t id() const noexcept { return id_; }
  Tape<T>* tape() const noexcept { return tape_; }
  bool requires_grad() const noexcept { return requires_grad_; }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id,
      std::shared_ptr<const BasicTensor<T>> value, bool requires_grad)
      : tape_(tape), id_(id), value_(std::move(value)),
        requires_grad_(requires_grad) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
  std::shared_ptr<const BasicTensor<T>> value_;
  bool requires_grad_ = false;
};

template <typename T>
class Tape {
 public:
  /// Gradient accumulation targets, one per input; null for inputs that do
  /// not require a gradient. Backward closures add into them.
  using Targets = std::span<BasicTensor<T>* const>;
  using BackwardFn = std::function<void(const BasicTensor<T>&, Targets)>;

  /// With grad disabled nothing is retained for backward and leaves are
  /// treated as constants (inference mode).
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var<T> constant(BasicTensor<T> value);

  /// Differentiable leaf reported in the GradMap under `name`. Several leaves
  /// may share a name; their gradients are summed.
  Var<T> leaf(BasicTensor<T> value, std::string name);
  Var<T> parameter(const Parameter<T>& p) { return leaf(p.value, p.name); }

  /// Registers an already computed forward value. Throws UnsupportedOpError
  /// when a gradient is required but `kind` has no gradient rule.
  Var<T> record(OpKind kind, std::vector<Var<T>> inputs, BasicTensor<T> value,
                BackwardFn backward);

  /// Gradients of a single-element `loss` with respect to every named leaf.
  /// Leaves the loss does not depend on receive zero tensors.
  GradMap<T> backward(const Var<T>& loss);

  /// Test hook: multiplies every gradient contribution produced by `kind`
  /// by `factor`.
  void inject_fault(OpKind kind, T factor) { faults_[kind] = factor; }

 private:
  struct Node {
    OpKind kind{};
    bool is_leaf = false;
    bool requires_grad = false;
    Shape shape;
    std::string name;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  void check_owned(const Var<T>& v) const;

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::map<OpKind, T> faults_;
};

// Differentiable primitives. All inputs must live on the same tape.

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias,
              const ConvSpec& spec);
template <typename T>
Var<T> maxpool2d(const Var<T>& x);
template <typename T>
Var<T> avgpool2d(const Var<T>& x);
template <typename T>
Var<T> upsample_nearest2x(const Var<T>& x);
template <typename T>
Var<T> batchnorm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                 RunningStats<T>& stats, Mode mode,
                 const BatchNormOptions& options = {});
template <typename T>
Var<T> leaky_relu(const Var<T>& x, T alpha);
template <typename T>
Var<T> sigmoid(const Var<T>& x);
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& a, T factor);
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts);
template <typename T>
Var<T> sum(const Var<T>& x);
/// Forward-only: (x >= level) ? 1 : 0. Has no gradient rule.
template <typename T>
Var<T> threshold(const Var<T>& x, T level);

}  // namespace defu::ad
