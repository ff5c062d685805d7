#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

#include "defu/tensor.hpp"

namespace defu::data {

struct Sample;

using Rng = std::mt19937_64;

/// Independent stream for one (epoch, sample) pair, so augmentation does not
/// depend on the order in which samples are visited.
Rng sample_stream(std::uint64_t seed, std::uint64_t epoch, std::uint64_t index);

/// Bilinear resize of a (1,1,H,W) image.
Tensor resize_image(const Tensor& image, std::size_t height, std::size_t width);
/// Nearest-neighbour resize of a binary mask, re-binarized at 0.5.
Tensor resize_mask(const Tensor& mask, std::size_t height, std::size_t width);

/// Binary dilation with a (2r+1)x(2r+1) square element, applied
/// `iterations` times. Pixels outside the image do not contribute.
Tensor dilate_mask(const Tensor& mask, std::size_t radius = 1,
                   std::size_t iterations = 1);

Tensor flip_horizontal(const Tensor& t);

struct AugmentConfig {
  double rotation_deg = 10.0;  ///< uniform in [-r, r]
  double shift = 0.05;         ///< fraction of width/height, per axis
  double shear_deg = 5.0;
  double zoom = 0.1;           ///< per-axis scale in [1-z, 1+z]
  double flip_prob = 0.5;

  void validate() const;  // throws ConfigError
};

struct AffineDraw {
  double rotation_deg = 0, shift_x = 0, shift_y = 0, shear_deg = 0;
  double zoom_x = 1, zoom_y = 1;
  bool flip = false;

  bool is_identity() const;
};

/// Consumes a fixed number of draws from `rng` regardless of the ranges.
AffineDraw sample_affine(Rng& rng, const AugmentConfig& config);

/// Applies one draw to image (bilinear, zero fill) and mask (nearest, then
/// re-binarized), then the optional horizontal flip.
Sample apply_affine(const Sample& sample, const AffineDraw& draw);

Sample augment(const Sample& sample, Rng& rng, const AugmentConfig& config);

}  // namespace defu::data
