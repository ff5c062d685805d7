#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "defu/blocks.hpp"

namespace defu {

enum class Arch { DEFUNet, UNetBaseline };

const char* arch_name(Arch arch);
Arch parse_arch(const std::string& text);

struct ModelConfig {
  Arch arch = Arch::DEFUNet;
  std::size_t levels = 5;
  std::size_t base_filters = 32;
  /// Explicit per-level widths. Empty means f, 2f, 4f, ... with the bottom
  /// level repeating the one above it.
  std::vector<std::size_t> filters;
  /// Requires filters[levels-1] == filters[levels-2]. Disable only to build
  /// comparison models with a fully doubling schedule.
  bool bottom_matches_previous = true;
  std::size_t recurrence = 2;  ///< t, extra steps per recurrent unit
  std::size_t units = 2;       ///< m, recurrent units per DCRC block
  double alpha = 0.01;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  /// Decoder starts from the fused bottom feature (X_L + Y_L) instead of X_L.
  bool fuse_bottom = true;
  bool inception_batchnorm = true;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  std::vector<std::size_t> filter_schedule() const;
  /// Spatial dims must be multiples of this.
  std::size_t divisor() const { return std::size_t{1} << (levels - 1); }
  void validate() const;  // throws ConfigError

  /// Line-oriented `key = value` text; round-trips through parse().
  std::string to_text() const;
  static ModelConfig parse(const std::string& text);

  bool operator==(const ModelConfig&) const = default;
};

/// Per-level encoder state. For level 1 y == x and skip == x.
template <typename T>
struct FusionStage {
  BasicTensor<T> x;
  BasicTensor<T> y;
  BasicTensor<T> skip;
};

template <typename T>
class SegmentationModel {
 public:
  static SegmentationModel build(const ModelConfig& config,
                                 std::uint64_t seed);

  SegmentationModel(SegmentationModel&&) noexcept = default;
  SegmentationModel& operator=(SegmentationModel&&) noexcept = default;

  /// Probabilities in (0, 1), shape (N, out_channels, H, W).
  ad::Var<T> forward(ad::Tape<T>& tape, const ad::Var<T>& input, Mode mode);
  /// Eval-mode inference without a tape.
  BasicTensor<T> predict(const BasicTensor<T>& input);
  /// Encoder states of an eval-mode forward, one entry per level.
  std::vector<FusionStage<T>> fusion_trace(const BasicTensor<T>& input,
                                           BasicTensor<T>* output = nullptr);

  std::vector<ad::Parameter<T>*> parameters();
  std::vector<nn::NamedBuffer<T>> buffers();
  std::size_t count_params();

  const ModelConfig& config() const noexcept { return config_; }
  nn::Block<T>& encoder(std::size_t level) { return *encoder_.at(level); }
  nn::Block<T>& decoder(std::size_t level) { return *decoder_.at(level); }
  nn::InceptionDilationBlock<T>& inception(std::size_t level) {
    return *inception_.at(level);
  }

 private:
  SegmentationModel() = default;

  void check_input(const Shape& shape) const;
  ad::Var<T> run(ad::Tape<T>& tape, const ad::Var<T>& input, Mode mode,
                 std::vector<FusionStage<T>>* trace);
  nn::StateRefs<T> state();

  ModelConfig config_;
  std::vector<std::unique_ptr<nn::Block<T>>> encoder_;
  std::vector<std::unique_ptr<nn::InceptionDilationBlock<T>>> inception_;
  std::vector<std::unique_ptr<nn::Block<T>>> decoder_;  // index = level
  std::unique_ptr<nn::Conv2d<T>> head_;
};

using Model = SegmentationModel<float>;
using Model64 = SegmentationModel<double>;

}  // namespace defu
