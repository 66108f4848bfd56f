#pragma once

#include <filesystem>
#include <string>

#include "pv/tensor.hpp"

namespace pv {

/// Decodes any format OpenCV understands into an RGB image in [0,1].
/// Grayscale is replicated to three channels; alpha is dropped.
Image read_image(const std::filesystem::path& path);
Image decode_image(const std::string& bytes);

/// 8-bit PNG with value = round(255 * v), clamped. RGB or single channel.
std::string encode_png(const Image& image);
void write_png(const std::filesystem::path& path, const Image& image);

/// Rounds every value onto the 8-bit grid.
Image quantize8(const Image& image);

}  // namespace pv
