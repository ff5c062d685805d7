#include "defu/data/transforms.hpp"

#include <cmath>
#include <numbers>

#include <opencv2/imgproc.hpp>

#include "defu/data/dataset.hpp"
#include "defu/errors.hpp"
#include "mat.hpp"

namespace defu::data {

Rng sample_stream(std::uint64_t seed, std::uint64_t epoch, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch),
                    static_cast<std::uint32_t>(epoch >> 32),
                    static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

namespace {

Tensor binarize(Tensor t) {
  for (auto& v : t.data()) v = v >= 0.5f ? 1.0f : 0.0f;
  return t;
}

cv::Size cv_size(std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) {
    throw DimensionError("resize target must be non-empty");
  }
  return {static_cast<int>(width), static_cast<int>(height)};
}

}  // namespace

Tensor resize_image(const Tensor& image, std::size_t height, std::size_t width) {
  if (image.shape().h == height && image.shape().w == width) return image;
  cv::Mat out;
  cv::resize(to_mat(image), out, cv_size(height, width), 0, 0, cv::INTER_LINEAR);
  return from_mat(out);
}

Tensor resize_mask(const Tensor& mask, std::size_t height, std::size_t width) {
  if (mask.shape().h == height && mask.shape().w == width) return binarize(mask);
  cv::Mat out;
  cv::resize(to_mat(mask), out, cv_size(height, width), 0, 0,
             cv::INTER_NEAREST);
  return binarize(from_mat(out));
}

Tensor dilate_mask(const Tensor& mask, std::size_t radius,
                   std::size_t iterations) {
  if (radius == 0 || iterations == 0) return binarize(mask);
  const int k = static_cast<int>(2 * radius + 1);
  cv::Mat out;
  cv::dilate(to_mat(binarize(mask)), out,
             cv::getStructuringElement(cv::MORPH_RECT, {k, k}), {-1, -1},
             static_cast<int>(iterations));
  return binarize(from_mat(out));
}

Tensor flip_horizontal(const Tensor& t) {
  const Shape& s = t.shape();
  Tensor out(s);
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    for (std::size_t y = 0; y < s.h; ++y) {
      const float* src = t.raw() + (p * s.h + y) * s.w;
      float* dst = out.raw() + (p * s.h + y) * s.w;
      for (std::size_t x = 0; x < s.w; ++x) dst[x] = src[s.w - 1 - x];
    }
  }
  return out;
}

void AugmentConfig::validate() const {
  if (rotation_deg < 0 || shift < 0 || shear_deg < 0 || zoom < 0) {
    throw ConfigError("augmentation ranges must be non-negative");
  }
  if (zoom >= 1) throw ConfigError("zoom range must be below 1");
  if (!(flip_prob >= 0 && flip_prob <= 1)) {
    throw ConfigError("flip probability must be in [0, 1]");
  }
}

bool AffineDraw::is_identity() const {
  return rotation_deg == 0 && shift_x == 0 && shift_y == 0 && shear_deg == 0 &&
         zoom_x == 1 && zoom_y == 1;
}

AffineDraw sample_affine(Rng& rng, const AugmentConfig& c) {
  c.validate();
  auto uniform = [&rng](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  AffineDraw d;
  d.rotation_deg = uniform(-c.rotation_deg, c.rotation_deg);
  d.shift_x = uniform(-c.shift, c.shift);
  d.shift_y = uniform(-c.shift, c.shift);
  d.shear_deg = uniform(-c.shear_deg, c.shear_deg);
  d.zoom_x = uniform(1 - c.zoom, 1 + c.zoom);
  d.zoom_y = uniform(1 - c.zoom, 1 + c.zoom);
  d.flip = uniform(0.0, 1.0) < c.flip_prob;
  return d;
}

Sample apply_affine(const Sample& sample, const AffineDraw& d) {
  Sample out = sample;
  const Shape& s = sample.image.shape();
  if (!d.is_identity()) {
    constexpr double kDeg = std::numbers::pi / 180.0;
    const double a = d.rotation_deg * kDeg;
    const double sh = std::tan(d.shear_deg * kDeg);
    const double cx = (static_cast<double>(s.w) - 1) / 2;
    const double cy = (static_cast<double>(s.h) - 1) / 2;
    // A = R * Shear * Zoom about the image center, then a translation.
    const cv::Matx22d rot(std::cos(a), -std::sin(a), std::sin(a), std::cos(a));
    const cv::Matx22d shear(1, sh, 0, 1);
    const cv::Matx22d zoom(d.zoom_x, 0, 0, d.zoom_y);
    const cv::Matx22d A = rot * shear * zoom;
    const cv::Vec2d c(cx, cy);
    const cv::Vec2d t = c - A * c +
                        cv::Vec2d(d.shift_x * static_cast<double>(s.w),
                                  d.shift_y * static_cast<double>(s.h));
    const cv::Matx23d M(A(0, 0), A(0, 1), t[0], A(1, 0), A(1, 1), t[1]);
    const cv::Size size(static_cast<int>(s.w), static_cast<int>(s.h));
    cv::Mat img, msk;
    cv::warpAffine(to_mat(sample.image), img, M, size, cv::INTER_LINEAR,
                   cv::BORDER_CONSTANT, cv::Scalar(0));
    cv::warpAffine(to_mat(sample.mask), msk, M, size, cv::INTER_NEAREST,
                   cv::BORDER_CONSTANT, cv::Scalar(0));
    out.image = from_mat(img);
    out.mask = binarize(from_mat(msk));
  }
  if (d.flip) {
    out.image = flip_horizontal(out.image);
    out.mask = flip_horizontal(out.mask);
  }
  return out;
}

Sample augment(const Sample& sample, Rng& rng, const AugmentConfig& config) {
  return apply_affine(sample, sample_affine(rng, config));
}

}  // namespace defu::data
