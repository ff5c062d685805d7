#include "defu/data/image_io.hpp"

#include <algorithm>
#include <filesystem>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "defu/errors.hpp"
#include "mat.hpp"

namespace defu::data {

Tensor read_image(const std::string& path) {
  if (!std::filesystem::exists(path)) {
    throw DataError("image '" + path + "' does not exist");
  }
  cv::Mat raw = cv::imread(path, cv::IMREAD_GRAYSCALE | cv::IMREAD_ANYDEPTH);
  if (raw.empty()) throw DataError("cannot decode image '" + path + "'");
  double scale = 1.0;
  switch (raw.depth()) {
    case CV_8U: scale = 1.0 / 255.0; break;
    case CV_16U: scale = 1.0 / 65535.0; break;
    default:
      throw DataError("image '" + path + "' has an unsupported bit depth");
  }
  cv::Mat f;
  raw.convertTo(f, CV_32F, scale);
  return from_mat(f);
}

Tensor read_mask(const std::string& path) {
  Tensor t = read_image(path);
  for (auto& v : t.data()) v = v >= 0.5f ? 1.0f : 0.0f;
  return t;
}

namespace {

void write(const std::string& path, const cv::Mat& m) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  if (!cv::imwrite(path, m)) throw DataError("cannot write '" + path + "'");
}

cv::Mat to_u8(const Tensor& t) {
  cv::Mat f = to_mat(t);
  cv::Mat out;
  f.convertTo(out, CV_8U, 255.0);  // saturating
  return out;
}

}  // namespace

void write_gray_png(const std::string& path, const Tensor& image) {
  write(path, to_u8(image));
}

void write_mask_png(const std::string& path, const Tensor& mask) {
  check_plane(mask.shape());
  cv::Mat out(static_cast<int>(mask.shape().h), static_cast<int>(mask.shape().w),
              CV_8U);
  for (std::size_t i = 0; i < mask.numel(); ++i) {
    out.data[i] = mask[i] >= 0.5f ? 255 : 0;
  }
  write(path, out);
}

void write_overlay_png(const std::string& path, const Tensor& image,
                       const Tensor& truth, const Tensor& prediction) {
  check_plane(image.shape());
  if (truth.shape() != image.shape() || prediction.shape() != image.shape()) {
    throw DimensionError("overlay: image, truth and prediction differ in shape");
  }
  cv::Mat out(static_cast<int>(image.shape().h),
              static_cast<int>(image.shape().w), CV_8UC3);
  for (std::size_t i = 0; i < image.numel(); ++i) {
    const float base = std::clamp(image[i], 0.0f, 1.0f) * 0.5f;
    float r = base, g = base, b = base;
    if (truth[i] >= 0.5f) r = g = b = 0.5f;
    if (prediction[i] >= 0.5f) {
      r = 0.4f * r + 0.6f;
      g = 0.4f * g;
      b = 0.4f * b;
    }
    // OpenCV stores BGR
    out.data[3 * i + 0] = static_cast<unsigned char>(b * 255.0f + 0.5f);
    out.data[3 * i + 1] = static_cast<unsigned char>(g * 255.0f + 0.5f);
    out.data[3 * i + 2] = static_cast<unsigned char>(r * 255.0f + 0.5f);
  }
  write(path, out);
}

}  // namespace defu::data
