#pragma once

#include <string>

#include "defu/tensor.hpp"

namespace defu::data {

/// Reads an 8- or 16-bit PNG (grayscale or RGB, converted to luma) as a
/// (1,1,H,W) tensor scaled to [0,1]. Throws DataError.
Tensor read_image(const std::string& path);

/// read_image() binarized at 0.5.
Tensor read_mask(const std::string& path);

/// Writes a (1,1,H,W) tensor as 8-bit grayscale, clamping to [0,1].
void write_gray_png(const std::string& path, const Tensor& image);

/// Writes a binary mask as 0/255.
void write_mask_png(const std::string& path, const Tensor& mask);

/// RGB visualization: input image dimmed, ground truth grey, prediction red.
void write_overlay_png(const std::string& path, const Tensor& image,
                       const Tensor& truth, const Tensor& prediction);

}  // namespace defu::data
