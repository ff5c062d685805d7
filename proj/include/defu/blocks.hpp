#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "defu/layers.hpp"

namespace defu::nn {

/// Common interface for the encoder, decoder and bridge blocks.
template <typename T>
class Block {
 public:
  virtual ~Block() = default;
  virtual Var<T> forward(Tape<T>& tape, const Var<T>& x, Mode mode) = 0;
  virtual void collect(StateRefs<T>& refs) = 0;
  virtual std::size_t in_channels() const = 0;
  virtual std::size_t out_channels() const = 0;
};

/// Recurrent convolution: z0 = f(x), z_k = f(x + z_{k-1}) for k = 1..steps,
/// where f = LeakyReLU(BN(conv3x3(.))). Weights and affine BN parameters are
/// shared across steps; running statistics are kept per step.
template <typename T>
class RecurrentConvUnit final : public Block<T> {
 public:
  RecurrentConvUnit(const std::string& name, std::size_t channels,
                    std::size_t steps, const LayerOptions& options, Rng& rng);

  Var<T> forward(Tape<T>& tape, const Var<T>& x, Mode mode) override;
  void collect(StateRefs<T>& refs) override;
  std::size_t in_channels() const override { return channels_; }
  std::size_t out_channels() const override { return channels_; }

  std::size_t steps() const noexcept { return steps_; }
  Conv2d<T>& conv() noexcept { return conv_; }
  BatchNorm2d<T>& bn() noexcept { return bn_; }

 private:
  std::size_t channels_;
  std::size_t steps_;
  T alpha_;
  Conv2d<T> conv_;
  BatchNorm2d<T> bn_;
};

struct DcrcTrace {
  std::size_t concat_channels = 0;  ///< channels entering the final 1x1 conv
  std::vector<std::size_t> unit_input_channels;
};

/// Densely connected recurrent convolution block. Keeps a feature list
/// F = [x]; each of `units` recurrent units consumes a compressed view of F
/// and appends its output; a final 1x1 conv maps concat(F) to `out` channels.
template <typename T>
class DcrcBlock final : public Block<T> {
 public:
  DcrcBlock(const std::string& name, std::size_t in, std::size_t out,
            std::size_t units, std::size_t steps, const LayerOptions& options,
            Rng& rng);

  Var<T> forward(Tape<T>& tape, const Var<T>& x, Mode mode) override {
    return forward_traced(tape, x, mode, nullptr);
  }
  Var<T> forward_traced(Tape<T>& tape, const Var<T>& x, Mode mode,
                        DcrcTrace* trace);
  void collect(StateRefs<T>& refs) override;
  std::size_t in_channels() const override { return in_; }
  std::size_t out_channels() const override { return out_; }

  RecurrentConvUnit<T>& unit(std::size_t i) { return *units_.at(i); }
  Bottleneck<T>& fuse() noexcept { return *final_; }
  Bottleneck<T>* entry() noexcept { return entry_.get(); }

 private:
  std::size_t in_;
  std::size_t out_;
  std::unique_ptr<Bottleneck<T>> entry_;  // only when in != out
  std::vector<std::unique_ptr<RecurrentConvUnit<T>>> units_;
  std::vector<std::unique_ptr<Bottleneck<T>>> squeeze_;  // units - 1 of them
  std::unique_ptr<Bottleneck<T>> final_;
};

/// Five stride-2 branches over the same input, concatenated and projected:
/// 1x1, 3x3, avgpool + 1x1, 3x3 dilated (3,1), 3x3 dilated (1,2).
template <typename T>
class InceptionDilationBlock final : public Block<T> {
 public:
  static constexpr std::size_t kBranches = 5;

  InceptionDilationBlock(const std::string& name, std::size_t in,
                         std::size_t out, const LayerOptions& options, Rng& rng,
                         bool branch_batchnorm = true);

  Var<T> forward(Tape<T>& tape, const Var<T>& x, Mode mode) override;
  Var<T> branch(std::size_t index, Tape<T>& tape, const Var<T>& x, Mode mode);
  /// Projection of branch outputs given in canonical branch order.
  Var<T> project(Tape<T>& tape, const std::vector<Var<T>>& branches,
                 Mode mode);
  void collect(StateRefs<T>& refs) override;
  std::size_t in_channels() const override { return in_; }
  std::size_t out_channels() const override { return out_; }

  ConvBnAct<T>& branch_layer(std::size_t i) { return *branches_.at(i); }
  ConvBnAct<T>& projection() noexcept { return *projection_; }

 private:
  std::size_t in_;
  std::size_t out_;
  std::vector<std::unique_ptr<ConvBnAct<T>>> branches_;
  std::unique_ptr<ConvBnAct<T>> projection_;
};

/// Two 3x3 conv-BN-LeakyReLU layers (plain U-Net stage).
template <typename T>
class DoubleConvBlock final : public Block<T> {
 public:
  DoubleConvBlock(const std::string& name, std::size_t in, std::size_t out,
                  const LayerOptions& options, Rng& rng);

  Var<T> forward(Tape<T>& tape, const Var<T>& x, Mode mode) override;
  void collect(StateRefs<T>& refs) override;
  std::size_t in_channels() const override { return in_; }
  std::size_t out_channels() const override { return out_; }

 private:
  std::size_t in_;
  std::size_t out_;
  ConvBnAct<T> first_;
  ConvBnAct<T> second_;
};

}  // namespace defu::nn
