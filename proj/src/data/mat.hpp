#pragma once

// Conversions between single-plane tensors and CV_32F matrices.

#include <cstring>

#include <opencv2/core.hpp>

#include "defu/errors.hpp"
#include "defu/tensor.hpp"

namespace defu::data {

inline void check_plane(const Shape& s) {
  if (s.n != 1 || s.c != 1) {
    throw DimensionError("expected a single-plane (1,1,H,W) tensor, got " +
                         to_string(s));
  }
}

inline cv::Mat to_mat(const Tensor& t) {
  check_plane(t.shape());
  cv::Mat m(static_cast<int>(t.shape().h), static_cast<int>(t.shape().w),
            CV_32F);
  std::memcpy(m.ptr<float>(), t.raw(), t.numel() * sizeof(float));
  return m;
}

inline Tensor from_mat(const cv::Mat& m) {
  CV_Assert(m.type() == CV_32F);
  Tensor t({1, 1, static_cast<std::size_t>(m.rows),
            static_cast<std::size_t>(m.cols)});
  for (int r = 0; r < m.rows; ++r) {
    std::memcpy(t.raw() + static_cast<std::size_t>(r) * m.cols,
                m.ptr<float>(r), static_cast<std::size_t>(m.cols) * sizeof(float));
  }
  return t;
}

}  // namespace defu::data
