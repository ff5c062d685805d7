#include "defu/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gemm.hpp"

namespace defu {
namespace {

// Bound on the number of elements in one patch-matrix chunk.
constexpr std::size_t kMaxPatchElems = std::size_t{1} << 22;

std::string describe(Axis axis, std::size_t expected, std::size_t got) {
  return std::string(axis_name(axis)) + " expected " + std::to_string(expected) +
         ", got " + std::to_string(got);
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  for (Axis axis : {Axis::Batch, Axis::Channel, Axis::Height, Axis::Width}) {
    if (a[axis] != b[axis]) {
      throw DimensionError(axis, std::string(op) + ": " +
                                     describe(axis, a[axis], b[axis]));
    }
  }
}

struct ConvGeometry {
  AxisGeometry y;
  AxisGeometry x;
};

template <typename T>
ConvGeometry check_conv(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                        std::size_t bias_size, const ConvSpec& spec) {
  spec.validate();
  if (input.shape().c != spec.in_channels) {
    throw DimensionError(Axis::Channel,
                         "conv2d input: " + describe(Axis::Channel,
                                                     spec.in_channels,
                                                     input.shape().c));
  }
  const Shape ws = spec.weight_shape();
  if (weight.shape() != ws) {
    Axis bad = Axis::Batch;
    for (Axis axis : {Axis::Batch, Axis::Channel, Axis::Height, Axis::Width}) {
      if (weight.shape()[axis] != ws[axis]) {
        bad = axis;
        break;
      }
    }
    throw DimensionError(bad, "conv2d weight shape " +
                                  to_string(weight.shape()) + " != " +
                                  to_string(ws));
  }
  if (bias_size != spec.out_channels) {
    throw DimensionError(Axis::Channel,
                         "conv2d bias: " + describe(Axis::Channel,
                                                    spec.out_channels,
                                                    bias_size));
  }
  return {conv_axis_geometry(input.shape().h, spec.kernel.h, spec.stride.h,
                             spec.dilation.h, spec.padding, Axis::Height),
          conv_axis_geometry(input.shape().w, spec.kernel.w, spec.stride.w,
                             spec.dilation.w, spec.padding, Axis::Width)};
}

// Columns [q0, q0 + count) of the batch-folded patch matrix. Column q maps to
// (n, oy, ox) with q = n * oh * ow + oy * ow + ox; row k maps to
// (ic, ky, kx) with k = (ic * kh + ky) * kw + kx.
template <typename T>
void fill_patches(const BasicTensor<T>& input, const ConvSpec& spec,
                  const ConvGeometry& g, std::size_t q0, std::size_t count,
                  T* col) {
  const Shape& s = input.shape();
  const std::size_t oh = g.y.out, ow = g.x.out, plane = oh * ow;
  const T* src = input.raw();
  std::size_t row = 0;
  for (std::size_t ic = 0; ic < s.c; ++ic) {
    for (std::size_t ky = 0; ky < spec.kernel.h; ++ky) {
      for (std::size_t kx = 0; kx < spec.kernel.w; ++kx, ++row) {
        T* dst = col + row * count;
        const long dy = static_cast<long>(ky * spec.dilation.h) -
                        static_cast<long>(g.y.pad_before);
        const long dx = static_cast<long>(kx * spec.dilation.w) -
                        static_cast<long>(g.x.pad_before);
        std::size_t n = q0 / plane, rem = q0 % plane;
        std::size_t oy = rem / ow, ox = rem % ow;
        for (std::size_t t = 0; t < count; ++t) {
          const long iy = static_cast<long>(oy * spec.stride.h) + dy;
          const long ix = static_cast<long>(ox * spec.stride.w) + dx;
          dst[t] = (iy >= 0 && ix >= 0 && iy < static_cast<long>(s.h) &&
                    ix < static_cast<long>(s.w))
                       ? src[((n * s.c + ic) * s.h + iy) * s.w + ix]
                       : T(0);
          if (++ox == ow) {
            ox = 0;
            if (++oy == oh) {
              oy = 0;
              ++n;
            }
          }
        }
      }
    }
  }
}

// Scatter-add of a patch-matrix chunk back onto the input grid.
template <typename T>
void accumulate_patches(const T* col, const ConvSpec& spec,
                        const ConvGeometry& g, std::size_t q0,
                        std::size_t count, BasicTensor<T>& grad_input) {
  const Shape& s = grad_input.shape();
  const std::size_t oh = g.y.out, ow = g.x.out, plane = oh * ow;
  T* dst = grad_input.raw();
  std::size_t row = 0;
  for (std::size_t ic = 0; ic < s.c; ++ic) {
    for (std::size_t ky = 0; ky < spec.kernel.h; ++ky) {
      for (std::size_t kx = 0; kx < spec.kernel.w; ++kx, ++row) {
        const T* src = col + row * count;
        const long dy = static_cast<long>(ky * spec.dilation.h) -
                        static_cast<long>(g.y.pad_before);
        const long dx = static_cast<long>(kx * spec.dilation.w) -
                        static_cast<long>(g.x.pad_before);
        std::size_t n = q0 / plane, rem = q0 % plane;
        std::size_t oy = rem / ow, ox = rem % ow;
        for (std::size_t t = 0; t < count; ++t) {
          const long iy = static_cast<long>(oy * spec.stride.h) + dy;
          const long ix = static_cast<long>(ox * spec.stride.w) + dx;
          if (iy >= 0 && ix >= 0 && iy < static_cast<long>(s.h) &&
              ix < static_cast<long>(s.w)) {
            dst[((n * s.c + ic) * s.h + iy) * s.w + ix] += src[t];
          }
          if (++ox == ow) {
            ox = 0;
            if (++oy == oh) {
              oy = 0;
              ++n;
            }
          }
        }
      }
    }
  }
}

std::size_t chunk_width(std::size_t rows, std::size_t total) {
  const std::size_t by_budget = std::max<std::size_t>(64, kMaxPatchElems / rows);
  return std::min(total, by_budget);
}

}  // namespace

const char* axis_name(Axis axis) {
  switch (axis) {
    case Axis::Batch:
      return "batch";
    case Axis::Channel:
      return "channel";
    case Axis::Height:
      return "height";
    case Axis::Width:
      return "width";
    case Axis::None:
      break;
  }
  return "none";
}

DimensionError::DimensionError(Axis axis, const std::string& what)
    : std::invalid_argument(std::string(axis_name(axis)) + " axis: " + what),
      axis_(axis) {}

DimensionError::DimensionError(const std::string& what)
    : std::invalid_argument(what), axis_(Axis::None) {}

std::size_t Shape::operator[](Axis axis) const {
  switch (axis) {
    case Axis::Batch:
      return n;
    case Axis::Channel:
      return c;
    case Axis::Height:
      return h;
    case Axis::Width:
      return w;
    case Axis::None:
      break;
  }
  throw DimensionError("no extent for axis none");
}

std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," +
         std::to_string(s.h) + "," + std::to_string(s.w) + ")";
}

void validate_shape(const Shape& s) {
  for (Axis axis : {Axis::Batch, Axis::Channel, Axis::Height, Axis::Width}) {
    if (s[axis] == 0) {
      throw DimensionError(axis, "extent must be >= 1 in " + to_string(s));
    }
  }
}

void ConvSpec::validate() const {
  if (in_channels == 0 || out_channels == 0) {
    throw ConfigError("conv spec: channel counts must be >= 1");
  }
  if (kernel.h == 0 || kernel.w == 0 || stride.h == 0 || stride.w == 0 ||
      dilation.h == 0 || dilation.w == 0) {
    throw ConfigError("conv spec: kernel, stride and dilation must be >= 1");
  }
}

AxisGeometry conv_axis_geometry(std::size_t in, std::size_t kernel,
                                std::size_t stride, std::size_t dilation,
                                Padding padding, Axis axis) {
  const std::size_t extent = effective_kernel(kernel, dilation);
  if (padding == Padding::Valid) {
    if (in < extent) {
      throw DimensionError(axis, "input extent " + std::to_string(in) +
                                     " smaller than dilated kernel extent " +
                                     std::to_string(extent));
    }
    return {(in - extent) / stride + 1, 0};
  }
  const std::size_t out = (in + stride - 1) / stride;
  const std::size_t needed = (out - 1) * stride + extent;
  const std::size_t total = needed > in ? needed - in : 0;
  return {out, total / 2};
}

Shape conv2d_output_shape(const Shape& input, const ConvSpec& spec) {
  spec.validate();
  const auto y = conv_axis_geometry(input.h, spec.kernel.h, spec.stride.h,
                                    spec.dilation.h, spec.padding, Axis::Height);
  const auto x = conv_axis_geometry(input.w, spec.kernel.w, spec.stride.w,
                                    spec.dilation.w, spec.padding, Axis::Width);
  return {input.n, spec.out_channels, y.out, x.out};
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      std::span<const T> bias, const ConvSpec& spec) {
  const ConvGeometry g = check_conv(input, weight, bias.size(), spec);
  const Shape& s = input.shape();
  const std::size_t oc = spec.out_channels;
  const std::size_t k = s.c * spec.kernel.h * spec.kernel.w;
  const std::size_t plane = g.y.out * g.x.out;
  const std::size_t total = s.n * plane;
  BasicTensor<T> out({s.n, oc, g.y.out, g.x.out});

  const std::size_t cw = chunk_width(k, total);
  std::vector<T> col(k * cw);
  std::vector<T> res(oc * cw);
  T* dst = out.raw();
  for (std::size_t q0 = 0; q0 < total; q0 += cw) {
    const std::size_t count = std::min(cw, total - q0);
    fill_patches(input, spec, g, q0, count, col.data());
    detail::gemm(oc, count, k, weight.raw(), k, col.data(), count, res.data(),
                 count);
    for (std::size_t o = 0; o < oc; ++o) {
      const T b = bias[o];
      const T* r = res.data() + o * count;
      std::size_t n = q0 / plane, p = q0 % plane;
      for (std::size_t t = 0; t < count; ++t) {
        dst[(n * oc + o) * plane + p] = r[t] + b;
        if (++p == plane) {
          p = 0;
          ++n;
        }
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> conv2d_direct(const BasicTensor<T>& input,
                             const BasicTensor<T>& weight,
                             std::span<const T> bias, const ConvSpec& spec) {
  const ConvGeometry g = check_conv(input, weight, bias.size(), spec);
  const Shape& s = input.shape();
  BasicTensor<T> out({s.n, spec.out_channels, g.y.out, g.x.out});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t o = 0; o < spec.out_channels; ++o) {
      for (std::size_t oy = 0; oy < g.y.out; ++oy) {
        for (std::size_t ox = 0; ox < g.x.out; ++ox) {
          T acc = T(0);
          for (std::size_t ic = 0; ic < s.c; ++ic) {
            for (std::size_t ky = 0; ky < spec.kernel.h; ++ky) {
              for (std::size_t kx = 0; kx < spec.kernel.w; ++kx) {
                const long iy = static_cast<long>(oy * spec.stride.h +
                                                  ky * spec.dilation.h) -
                                static_cast<long>(g.y.pad_before);
                const long ix = static_cast<long>(ox * spec.stride.w +
                                                  kx * spec.dilation.w) -
                                static_cast<long>(g.x.pad_before);
                const bool inside = iy >= 0 && ix >= 0 &&
                                    iy < static_cast<long>(s.h) &&
                                    ix < static_cast<long>(s.w);
                const T v = inside ? input.at(n, ic, iy, ix) : T(0);
                acc = std::fma(weight.at(o, ic, ky, kx), v, acc);
              }
            }
          }
          out.at(n, o, oy, ox) = acc + bias[o];
        }
      }
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input,
                             const BasicTensor<T>& weight,
                             const BasicTensor<T>& grad_out,
                             const ConvSpec& spec, bool need_input_grad) {
  const ConvGeometry g = check_conv(input, weight, spec.out_channels, spec);
  const Shape& s = input.shape();
  const Shape expected{s.n, spec.out_channels, g.y.out, g.x.out};
  require_same_shape(expected, grad_out.shape(), "conv2d_backward");

  const std::size_t oc = spec.out_channels;
  const std::size_t k = s.c * spec.kernel.h * spec.kernel.w;
  const std::size_t plane = g.y.out * g.x.out;
  const std::size_t total = s.n * plane;

  ConvGrads<T> grads{need_input_grad ? BasicTensor<T>(s) : BasicTensor<T>(),
                     BasicTensor<T>(weight.shape()), std::vector<T>(oc, T(0))};

  const T* gsrc = grad_out.raw();
  for (std::size_t o = 0; o < oc; ++o) {
    double acc = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* row = gsrc + (n * oc + o) * plane;
      for (std::size_t p = 0; p < plane; ++p) acc += row[p];
    }
    grads.bias[o] = static_cast<T>(acc);
  }

  std::vector<T> weight_t;
  if (need_input_grad) {
    weight_t.resize(k * oc);
    detail::transpose(weight.raw(), oc, k, weight_t.data());
  }

  const std::size_t cw = chunk_width(k, total);
  std::vector<T> col(k * cw), col_t(k * cw), gmat(oc * cw), wpart(oc * k);
  T* gw = grads.weight.raw();
  for (std::size_t q0 = 0; q0 < total; q0 += cw) {
    const std::size_t count = std::min(cw, total - q0);
    for (std::size_t o = 0; o < oc; ++o) {
      T* dst = gmat.data() + o * count;
      std::size_t n = q0 / plane, p = q0 % plane;
      for (std::size_t t = 0; t < count; ++t) {
        dst[t] = gsrc[(n * oc + o) * plane + p];
        if (++p == plane) {
          p = 0;
          ++n;
        }
      }
    }
    fill_patches(input, spec, g, q0, count, col.data());
    detail::transpose(col.data(), k, count, col_t.data());
    detail::gemm(oc, k, count, gmat.data(), count, col_t.data(), k,
                 wpart.data(), k);
    for (std::size_t i = 0; i < oc * k; ++i) gw[i] += wpart[i];

    if (need_input_grad) {
      detail::gemm(k, count, oc, weight_t.data(), oc, gmat.data(), count,
                   col.data(), count);
      accumulate_patches(col.data(), spec, g, q0, count, grads.input);
    }
  }
  return grads;
}

template <typename T>
PoolResult<T> maxpool2d(const BasicTensor<T>& input) {
  const Shape& s = input.shape();
  if (s.h % 2 != 0) {
    throw DimensionError(Axis::Height, "maxpool2d needs an even extent, got " +
                                           std::to_string(s.h));
  }
  if (s.w % 2 != 0) {
    throw DimensionError(Axis::Width, "maxpool2d needs an even extent, got " +
                                          std::to_string(s.w));
  }
  PoolResult<T> r{BasicTensor<T>({s.n, s.c, s.h / 2, s.w / 2}), {}};
  r.argmax.resize(r.output.numel());
  std::size_t idx = 0;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t y = 0; y < s.h; y += 2) {
        for (std::size_t x = 0; x < s.w; x += 2, ++idx) {
          std::size_t best = input.offset(n, c, y, x);
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t off = input.offset(n, c, y + dy, x + dx);
              if (input[off] > input[best]) best = off;
            }
          }
          r.output[idx] = input[best];
          r.argmax[idx] = best;
        }
      }
    }
  }
  return r;
}

template <typename T>
BasicTensor<T> maxpool2d_backward(const BasicTensor<T>& grad_out,
                                  std::span<const std::size_t> argmax,
                                  const Shape& input_shape) {
  if (argmax.size() != grad_out.numel()) {
    throw DimensionError("maxpool2d_backward: argmax/grad size mismatch");
  }
  BasicTensor<T> gin(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) gin[argmax[i]] += grad_out[i];
  return gin;
}

template <typename T>
BasicTensor<T> avgpool2d(const BasicTensor<T>& input) {
  const Shape& s = input.shape();
  const auto gy = conv_axis_geometry(s.h, 3, 2, 1, Padding::Same, Axis::Height);
  const auto gx = conv_axis_geometry(s.w, 3, 2, 1, Padding::Same, Axis::Width);
  BasicTensor<T> out({s.n, s.c, gy.out, gx.out});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t oy = 0; oy < gy.out; ++oy) {
        for (std::size_t ox = 0; ox < gx.out; ++ox) {
          T acc = T(0);
          for (std::size_t ky = 0; ky < 3; ++ky) {
            const long iy = static_cast<long>(oy * 2 + ky) -
                            static_cast<long>(gy.pad_before);
            if (iy < 0 || iy >= static_cast<long>(s.h)) continue;
            for (std::size_t kx = 0; kx < 3; ++kx) {
              const long ix = static_cast<long>(ox * 2 + kx) -
                              static_cast<long>(gx.pad_before);
              if (ix < 0 || ix >= static_cast<long>(s.w)) continue;
              acc += input.at(n, c, iy, ix);
            }
          }
          out.at(n, c, oy, ox) = acc / T(9);
        }
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> avgpool2d_backward(const BasicTensor<T>& grad_out,
                                  const Shape& input_shape) {
  const Shape& s = input_shape;
  const auto gy = conv_axis_geometry(s.h, 3, 2, 1, Padding::Same, Axis::Height);
  const auto gx = conv_axis_geometry(s.w, 3, 2, 1, Padding::Same, Axis::Width);
  require_same_shape({s.n, s.c, gy.out, gx.out}, grad_out.shape(),
                     "avgpool2d_backward");
  BasicTensor<T> gin(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t oy = 0; oy < gy.out; ++oy) {
        for (std::size_t ox = 0; ox < gx.out; ++ox) {
          const T g = grad_out.at(n, c, oy, ox) / T(9);
          for (std::size_t ky = 0; ky < 3; ++ky) {
            const long iy = static_cast<long>(oy * 2 + ky) -
                            static_cast<long>(gy.pad_before);
            if (iy < 0 || iy >= static_cast<long>(s.h)) continue;
            for (std::size_t kx = 0; kx < 3; ++kx) {
              const long ix = static_cast<long>(ox * 2 + kx) -
                              static_cast<long>(gx.pad_before);
              if (ix < 0 || ix >= static_cast<long>(s.w)) continue;
              gin.at(n, c, iy, ix) += g;
            }
          }
        }
      }
    }
  }
  return gin;
}

template <typename T>
BasicTensor<T> upsample_nearest2x(const BasicTensor<T>& input) {
  const Shape& s = input.shape();
  BasicTensor<T> out({s.n, s.c, s.h * 2, s.w * 2});
  T* dst = out.raw();
  const T* src = input.raw();
  const std::size_t ow = s.w * 2;
  for (std::size_t plane = 0; plane < s.n * s.c; ++plane) {
    for (std::size_t y = 0; y < s.h; ++y) {
      const T* in_row = src + (plane * s.h + y) * s.w;
      T* row0 = dst + (plane * s.h * 2 + 2 * y) * ow;
      for (std::size_t x = 0; x < s.w; ++x) {
        row0[2 * x] = in_row[x];
        row0[2 * x + 1] = in_row[x];
      }
      std::copy_n(row0, ow, row0 + ow);
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> upsample_nearest2x_backward(const BasicTensor<T>& grad_out) {
  const Shape& s = grad_out.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw DimensionError(s.h % 2 ? Axis::Height : Axis::Width,
                         "upsample backward needs even extents");
  }
  BasicTensor<T> gin({s.n, s.c, s.h / 2, s.w / 2});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t y = 0; y < s.h / 2; ++y) {
        for (std::size_t x = 0; x < s.w / 2; ++x) {
          gin.at(n, c, y, x) =
              grad_out.at(n, c, 2 * y, 2 * x) +
              grad_out.at(n, c, 2 * y, 2 * x + 1) +
              grad_out.at(n, c, 2 * y + 1, 2 * x) +
              grad_out.at(n, c, 2 * y + 1, 2 * x + 1);
        }
      }
    }
  }
  return gin;
}

template <typename T>
BatchNormForward<T> batchnorm(const BasicTensor<T>& input,
                              std::span<const T> gamma, std::span<const T> beta,
                              RunningStats<T>& stats, Mode mode,
                              const BatchNormOptions& options) {
  const Shape& s = input.shape();
  if (gamma.size() != s.c || beta.size() != s.c) {
    throw DimensionError(Axis::Channel,
                         "batchnorm affine: " + describe(Axis::Channel, s.c,
                                                         gamma.size()));
  }
  if (stats.mean.size() != s.c || stats.var.size() != s.c) {
    throw DimensionError(Axis::Channel,
                         "batchnorm running stats: " +
                             describe(Axis::Channel, s.c, stats.mean.size()));
  }
  const std::size_t plane = s.plane();
  const double count = static_cast<double>(s.n * plane);
  BatchNormForward<T> f{BasicTensor<T>(s), BasicTensor<T>(s),
                        std::vector<T>(s.c)};
  for (std::size_t c = 0; c < s.c; ++c) {
    double mean = 0.0, var = 0.0;
    if (mode == Mode::Train) {
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* row = input.raw() + (n * s.c + c) * plane;
        for (std::size_t p = 0; p < plane; ++p) mean += row[p];
      }
      mean /= count;
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* row = input.raw() + (n * s.c + c) * plane;
        for (std::size_t p = 0; p < plane; ++p) {
          const double d = row[p] - mean;
          var += d * d;
        }
      }
      var /= count;
      const double m = options.momentum;
      stats.mean[c] = static_cast<T>((1.0 - m) * stats.mean[c] + m * mean);
      stats.var[c] = static_cast<T>((1.0 - m) * stats.var[c] + m * var);
    } else {
      mean = stats.mean[c];
      var = stats.var[c];
    }
    const T inv_std = static_cast<T>(1.0 / std::sqrt(var + options.eps));
    const T mu = static_cast<T>(mean);
    f.inv_std[c] = inv_std;
    for (std::size_t n = 0; n < s.n; ++n) {
      const std::size_t base = (n * s.c + c) * plane;
      const T* x = input.raw() + base;
      T* xhat = f.normalized.raw() + base;
      T* y = f.output.raw() + base;
      for (std::size_t p = 0; p < plane; ++p) {
        xhat[p] = (x[p] - mu) * inv_std;
        y[p] = gamma[c] * xhat[p] + beta[c];
      }
    }
  }
  return f;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BasicTensor<T>& grad_out,
                                     const BatchNormForward<T>& saved,
                                     std::span<const T> gamma, Mode mode) {
  const Shape& s = grad_out.shape();
  require_same_shape(saved.normalized.shape(), s, "batchnorm_backward");
  const std::size_t plane = s.plane();
  const double count = static_cast<double>(s.n * plane);
  BatchNormGrads<T> g{BasicTensor<T>(s), std::vector<T>(s.c),
                      std::vector<T>(s.c)};
  for (std::size_t c = 0; c < s.c; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const std::size_t base = (n * s.c + c) * plane;
      const T* go = grad_out.raw() + base;
      const T* xhat = saved.normalized.raw() + base;
      for (std::size_t p = 0; p < plane; ++p) {
        sum_g += go[p];
        sum_gx += static_cast<double>(go[p]) * xhat[p];
      }
    }
    g.beta[c] = static_cast<T>(sum_g);
    g.gamma[c] = static_cast<T>(sum_gx);
    const double scale = static_cast<double>(gamma[c]) * saved.inv_std[c];
    const double mean_g = sum_g / count;
    const double mean_gx = sum_gx / count;
    for (std::size_t n = 0; n < s.n; ++n) {
      const std::size_t base = (n * s.c + c) * plane;
      const T* go = grad_out.raw() + base;
      const T* xhat = saved.normalized.raw() + base;
      T* gi = g.input.raw() + base;
      if (mode == Mode::Train) {
        for (std::size_t p = 0; p < plane; ++p) {
          gi[p] = static_cast<T>(scale * (go[p] - mean_g - xhat[p] * mean_gx));
        }
      } else {
        for (std::size_t p = 0; p < plane; ++p) {
          gi[p] = static_cast<T>(scale * go[p]);
        }
      }
    }
  }
  return g;
}

template <typename T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& input, T alpha) {
  BasicTensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.numel(); ++i) {
    const T x = input[i];
    out[i] = x > T(0) ? x : alpha * x;
  }
  return out;
}

template <typename T>
BasicTensor<T> leaky_relu_backward(const BasicTensor<T>& grad_out,
                                   const BasicTensor<T>& input, T alpha) {
  require_same_shape(input.shape(), grad_out.shape(), "leaky_relu_backward");
  BasicTensor<T> gin(input.shape());
  for (std::size_t i = 0; i < input.numel(); ++i) {
    gin[i] = input[i] > T(0) ? grad_out[i] : alpha * grad_out[i];
  }
  return gin;
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& input) {
  BasicTensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.numel(); ++i) {
    const T x = input[i];
    if (x >= T(0)) {
      out[i] = T(1) / (T(1) + std::exp(-x));
    } else {
      const T e = std::exp(x);
      out[i] = e / (T(1) + e);
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> sigmoid_backward(const BasicTensor<T>& grad_out,
                                const BasicTensor<T>& output) {
  require_same_shape(output.shape(), grad_out.shape(), "sigmoid_backward");
  BasicTensor<T> gin(output.shape());
  for (std::size_t i = 0; i < output.numel(); ++i) {
    gin[i] = grad_out[i] * output[i] * (T(1) - output[i]);
  }
  return gin;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  return out;
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * factor;
  return out;
}

template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>* const> parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no parts");
  const Shape& first = parts.front()->shape();
  std::size_t channels = 0;
  for (const auto* part : parts) {
    const Shape& s = part->shape();
    for (Axis axis : {Axis::Batch, Axis::Height, Axis::Width}) {
      if (s[axis] != first[axis]) {
        throw DimensionError(axis, "concat_channels: " +
                                       describe(axis, first[axis], s[axis]));
      }
    }
    channels += s.c;
  }
  BasicTensor<T> out({first.n, channels, first.h, first.w});
  const std::size_t plane = first.plane();
  T* dst = out.raw();
  for (std::size_t n = 0; n < first.n; ++n) {
    for (const auto* part : parts) {
      const std::size_t len = part->shape().c * plane;
      dst = std::copy_n(part->raw() + n * len, len, dst);
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>& parts) {
  std::vector<const BasicTensor<T>*> ptrs;
  ptrs.reserve(parts.size());
  for (const auto& p : parts) ptrs.push_back(&p);
  return concat_channels<T>(std::span<const BasicTensor<T>* const>(ptrs));
}

template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& input, std::size_t begin,
                              std::size_t count) {
  const Shape& s = input.shape();
  if (count == 0 || begin + count > s.c) {
    throw DimensionError(Axis::Channel,
                         "slice [" + std::to_string(begin) + ", " +
                             std::to_string(begin + count) +
                             ") out of range for " + std::to_string(s.c));
  }
  BasicTensor<T> out({s.n, count, s.h, s.w});
  const std::size_t plane = s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    std::copy_n(input.raw() + (n * s.c + begin) * plane, count * plane,
                out.raw() + n * count * plane);
  }
  return out;
}

template <typename T>
T sum(const BasicTensor<T>& input) {
  double acc = 0.0;
  for (T v : input.data()) acc += v;
  return static_cast<T>(acc);
}

template <typename T>
BasicTensor<T> slice_batch(const BasicTensor<T>& input, std::size_t begin,
                           std::size_t count) {
  const Shape& s = input.shape();
  if (count == 0 || begin + count > s.n) {
    throw DimensionError(Axis::Batch, "batch slice out of range");
  }
  const std::size_t len = s.c * s.plane();
  std::vector<T> data(input.raw() + begin * len,
                      input.raw() + (begin + count) * len);
  return BasicTensor<T>({count, s.c, s.h, s.w}, std::move(data));
}

template <typename T>
BasicTensor<T> concat_batch(const std::vector<BasicTensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_batch: no parts");
  const Shape& first = parts.front().shape();
  std::size_t n = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    for (Axis axis : {Axis::Channel, Axis::Height, Axis::Width}) {
      if (s[axis] != first[axis]) {
        throw DimensionError(axis, "concat_batch: " +
                                       describe(axis, first[axis], s[axis]));
      }
    }
    n += s.n;
  }
  std::vector<T> data;
  data.reserve(n * first.c * first.plane());
  for (const auto& p : parts) {
    data.insert(data.end(), p.data().begin(), p.data().end());
  }
  return BasicTensor<T>({n, first.c, first.h, first.w}, std::move(data));
}

template <typename T>
BasicTensor<T> threshold(const BasicTensor<T>& input, T level) {
  BasicTensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.numel(); ++i) {
    out[i] = input[i] >= level ? T(1) : T(0);
  }
  return out;
}

#define DEFU_INSTANTIATE_OPS(T)                                               \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, \
                                 std::span<const T>, const ConvSpec&);         \
  template BasicTensor<T> conv2d_direct(const BasicTensor<T>&,                 \
                                        const BasicTensor<T>&,                 \
                                        std::span<const T>, const ConvSpec&);  \
  template ConvGrads<T> conv2d_backward(                                       \
      const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,     \
      const ConvSpec&, bool);                                                  \
  template PoolResult<T> maxpool2d(const BasicTensor<T>&);                     \
  template BasicTensor<T> maxpool2d_backward(                                  \
      const BasicTensor<T>&, std::span<const std::size_t>, const Shape&);      \
  template BasicTensor<T> avgpool2d(const BasicTensor<T>&);                    \
  template BasicTensor<T> avgpool2d_backward(const BasicTensor<T>&,            \
                                             const Shape&);                    \
  template BasicTensor<T> upsample_nearest2x(const BasicTensor<T>&);           \
  template BasicTensor<T> upsample_nearest2x_backward(const BasicTensor<T>&);  \
  template BatchNormForward<T> batchnorm(                                      \
      const BasicTensor<T>&, std::span<const T>, std::span<const T>,           \
      RunningStats<T>&, Mode, const BatchNormOptions&);                        \
  template BatchNormGrads<T> batchnorm_backward(                               \
      const BasicTensor<T>&, const BatchNormForward<T>&, std::span<const T>,   \
      Mode);                                                                   \
  template BasicTensor<T> leaky_relu(const BasicTensor<T>&, T);                \
  template BasicTensor<T> leaky_relu_backward(const BasicTensor<T>&,           \
                                              const BasicTensor<T>&, T);       \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                      \
  template BasicTensor<T> sigmoid_backward(const BasicTensor<T>&,              \
                                           const BasicTensor<T>&);             \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);   \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);   \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                     \
  template BasicTensor<T> concat_channels(                                     \
      std::span<const BasicTensor<T>* const>);                                 \
  template BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>&); \
  template BasicTensor<T> slice_channels(const BasicTensor<T>&, std::size_t,   \
                                         std::size_t);                         \
  template T sum(const BasicTensor<T>&);                                       \
  template BasicTensor<T> slice_batch(const BasicTensor<T>&, std::size_t,      \
                                      std::size_t);                            \
  template BasicTensor<T> concat_batch(const std::vector<BasicTensor<T>>&);    \
  template BasicTensor<T> threshold(const BasicTensor<T>&, T);

DEFU_INSTANTIATE_OPS(float)
DEFU_INSTANTIATE_OPS(double)

#undef DEFU_INSTANTIATE_OPS

}  // namespace defu
