#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cxrkit/geometry.hpp"

namespace cxrkit {

// 8-bit grayscale image.
struct image8 {
    std::vector<std::uint8_t> pixels;  // row-major
    image_dims dims;
};

// Minimal grayscale PNG encoder (8-bit, no interlace). Deterministic for a
// given input.
std::vector<std::uint8_t> encode_png_gray8(const image8& image);
void write_png_gray8(const std::filesystem::path& path, const image8& image);

}  // namespace cxrkit
