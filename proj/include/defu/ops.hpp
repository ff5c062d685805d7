#pragma once

// Forward numeric primitives and their hand-derived backward kernels. These
// are plain tensor -> tensor functions; defu/autodiff.hpp wraps them into
// taped operations.

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "defu/tensor.hpp"

namespace defu {

enum class Padding { Same, Valid };

struct Extent2 {
  std::size_t h = 1;
  std::size_t w = 1;
  friend bool operator==(const Extent2&, const Extent2&) = default;
};

/// Spatial extent covered by a kernel of size `kernel` with taps spaced
/// `rate` apart: (rate - 1) * (kernel - 1) + kernel.
constexpr std::size_t effective_kernel(std::size_t kernel, std::size_t rate) {
  return (rate - 1) * (kernel - 1) + kernel;
}

struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  Extent2 kernel{3, 3};
  Extent2 stride{1, 1};
  Extent2 dilation{1, 1};
  Padding padding = Padding::Same;

  Extent2 effective_extent() const {
    return {effective_kernel(kernel.h, dilation.h),
            effective_kernel(kernel.w, dilation.w)};
  }
  Shape weight_shape() const {
    return {out_channels, in_channels, kernel.h, kernel.w};
  }
  /// Throws ConfigError on zero kernel/stride/dilation/channel entries.
  void validate() const;
};

/// Output size and leading padding of one spatial axis.
struct AxisGeometry {
  std::size_t out = 0;
  std::size_t pad_before = 0;
};

/// Same: out = ceil(in / stride), odd total padding puts the extra row/column
/// at the bottom/right. Valid: no padding, throws if the input is smaller
/// than the effective extent.
AxisGeometry conv_axis_geometry(std::size_t in, std::size_t kernel,
                                std::size_t stride, std::size_t dilation,
                                Padding padding, Axis axis);

Shape conv2d_output_shape(const Shape& input, const ConvSpec& spec);

/// Dilated, strided cross-correlation plus bias. Uses the patch-matrix
/// (im2col + packed GEMM) path.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      std::span<const T> bias, const ConvSpec& spec);

/// Direct nested-loop convolution. Accumulates taps in the same order as the
/// patch-matrix path, so both agree bit-for-bit.
template <typename T>
BasicTensor<T> conv2d_direct(const BasicTensor<T>& input,
                             const BasicTensor<T>& weight,
                             std::span<const T> bias, const ConvSpec& spec);

template <typename T>
struct ConvGrads {
  BasicTensor<T> input;
  BasicTensor<T> weight;
  std::vector<T> bias;
};

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input,
                             const BasicTensor<T>& weight,
                             const BasicTensor<T>& grad_out,
                             const ConvSpec& spec, bool need_input_grad = true);

template <typename T>
struct PoolResult {
  BasicTensor<T> output;
  /// Flat input offset of the winning element of each output window.
  std::vector<std::size_t> argmax;
};

/// 2x2 max pooling, stride 2. Ties resolve to the first element in scan order.
template <typename T>
PoolResult<T> maxpool2d(const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> maxpool2d_backward(const BasicTensor<T>& grad_out,
                                  std::span<const std::size_t> argmax,
                                  const Shape& input_shape);

/// 3x3 average pooling, stride 2, Same zero padding. Border windows divide by
/// the full window size (padding counts).
template <typename T>
BasicTensor<T> avgpool2d(const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> avgpool2d_backward(const BasicTensor<T>& grad_out,
                                  const Shape& input_shape);

template <typename T>
BasicTensor<T> upsample_nearest2x(const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> upsample_nearest2x_backward(const BasicTensor<T>& grad_out);

enum class Mode { Train, Eval };

/// Per-channel running statistics. `var` holds the biased batch variance.
template <typename T>
struct RunningStats {
  std::vector<T> mean;
  std::vector<T> var;

  explicit RunningStats(std::size_t channels = 0)
      : mean(channels, T(0)), var(channels, T(1)) {}
};

struct BatchNormOptions {
  double momentum = 0.1;  ///< weight of the new batch statistic
  double eps = 1e-5;
};

template <typename T>
struct BatchNormForward {
  BasicTensor<T> output;
  BasicTensor<T> normalized;  ///< (x - mean) * inv_std
  std::vector<T> inv_std;
};

/// Train mode normalizes with batch statistics over N*H*W and updates `stats`;
/// eval mode reads `stats` only.
template <typename T>
BatchNormForward<T> batchnorm(const BasicTensor<T>& input,
                              std::span<const T> gamma, std::span<const T> beta,
                              RunningStats<T>& stats, Mode mode,
                              const BatchNormOptions& options = {});

template <typename T>
struct BatchNormGrads {
  BasicTensor<T> input;
  std::vector<T> gamma;
  std::vector<T> beta;
};

/// Train mode differentiates through the batch statistics.
template <typename T>
BatchNormGrads<T> batchnorm_backward(const BasicTensor<T>& grad_out,
                                     const BatchNormForward<T>& saved,
                                     std::span<const T> gamma, Mode mode);

template <typename T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& input, T alpha);

template <typename T>
BasicTensor<T> leaky_relu_backward(const BasicTensor<T>& grad_out,
                                   const BasicTensor<T>& input, T alpha);

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& input);

/// Uses the forward output: d/dx = s * (1 - s).
template <typename T>
BasicTensor<T> sigmoid_backward(const BasicTensor<T>& grad_out,
                                const BasicTensor<T>& output);

/// Elementwise sum. No broadcasting: shapes must match exactly.
template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor);

template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>* const> parts);

template <typename T>
BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>& parts);

template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& input, std::size_t begin,
                              std::size_t count);

/// Sum of all elements, accumulated in fixed order in double precision.
template <typename T>
T sum(const BasicTensor<T>& input);

/// Batch slice [begin, begin + count).
template <typename T>
BasicTensor<T> slice_batch(const BasicTensor<T>& input, std::size_t begin,
                           std::size_t count);

template <typename T>
BasicTensor<T> concat_batch(const std::vector<BasicTensor<T>>& parts);

/// Elementwise (x >= threshold) ? 1 : 0.
template <typename T>
BasicTensor<T> threshold(const BasicTensor<T>& input, T level);

}  // namespace defu
