#pragma once

#include <cstddef>
#include <filesystem>
#include <random>
#include <string>

#include "defu/ops.hpp"
#include "defu/tensor.hpp"

namespace defu::test {

using Rng = std::mt19937_64;

template <typename T>
BasicTensor<T> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0,
                             double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  BasicTensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(d(rng));
  return t;
}

template <typename T>
BasicTensor<T> random_mask(const Shape& shape, Rng& rng, double p = 0.5) {
  std::bernoulli_distribution d(p);
  BasicTensor<T> t(shape);
  for (auto& v : t.data()) v = d(rng) ? T(1) : T(0);
  return t;
}

/// Textbook seven-loop cross-correlation with explicit padding arithmetic.
template <typename T>
BasicTensor<T> naive_conv(const BasicTensor<T>& x, const BasicTensor<T>& w,
                          const std::vector<T>& bias, const ConvSpec& s) {
  const Shape in = x.shape();
  const auto eh = effective_kernel(s.kernel.h, s.dilation.h);
  const auto ew = effective_kernel(s.kernel.w, s.dilation.w);
  std::size_t oh, ow;
  long ph = 0, pw = 0;
  if (s.padding == Padding::Valid) {
    oh = (in.h - eh) / s.stride.h + 1;
    ow = (in.w - ew) / s.stride.w + 1;
  } else {
    oh = (in.h + s.stride.h - 1) / s.stride.h;
    ow = (in.w + s.stride.w - 1) / s.stride.w;
    const long th = std::max<long>(0, static_cast<long>((oh - 1) * s.stride.h + eh) -
                                          static_cast<long>(in.h));
    const long tw = std::max<long>(0, static_cast<long>((ow - 1) * s.stride.w + ew) -
                                          static_cast<long>(in.w));
    ph = th / 2;
    pw = tw / 2;
  }
  BasicTensor<T> out({in.n, s.out_channels, oh, ow});
  for (std::size_t n = 0; n < in.n; ++n)
    for (std::size_t o = 0; o < s.out_channels; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x0 = 0; x0 < ow; ++x0) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (std::size_t c = 0; c < in.c; ++c)
            for (std::size_t ky = 0; ky < s.kernel.h; ++ky)
              for (std::size_t kx = 0; kx < s.kernel.w; ++kx) {
                const long iy = static_cast<long>(y * s.stride.h + ky * s.dilation.h) - ph;
                const long ix = static_cast<long>(x0 * s.stride.w + kx * s.dilation.w) - pw;
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(in.h) ||
                    ix >= static_cast<long>(in.w))
                  continue;
                acc += static_cast<double>(x.at(n, c, iy, ix)) * w.at(o, c, ky, kx);
              }
          out.at(n, o, y, x0) = static_cast<T>(acc);
        }
  return out;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("defu_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace defu::test
