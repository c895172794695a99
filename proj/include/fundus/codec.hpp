#pragma once

#include "fundus/raster.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace fundus {

using Bytes = std::vector<std::uint8_t>;

/// Decodes a PNG or JPEG payload (sniffed by signature). Palette, grayscale, 16-bit and alpha
/// inputs are converted to 8-bit RGB. Throws DecodeError / InvalidInput.
RasterImage decode_image(std::span<const std::uint8_t> bytes);

/// 8-bit RGB PNG. Output bytes are a pure function of the image.
Bytes encode_png(const RasterImage& img);

/// 16-bit grayscale PNG, samples scaled by 65535.
Bytes encode_png16(const GrayImage& img);

/// 1-bit grayscale PNG.
Bytes encode_png_mask(const Mask& mask);

/// Baseline JPEG, used for fixtures and clinic-style exports.
Bytes encode_jpeg(const RasterImage& img, int quality = 92);

} // namespace fundus
