#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cxrkit/geometry.hpp"

namespace cxrkit {

enum class photometric {
    monochrome1,  // low pixel values render bright
    monochrome2,  // low pixel values render dark
};

std::string_view to_string(photometric interp);

// Decoded grayscale image plus the tags the windowing transform needs.
struct raw_image {
    std::vector<std::uint16_t> pixels;  // row-major
    image_dims dims;
    photometric interp = photometric::monochrome2;
    int bits_allocated = 16;
    std::optional<double> window_center;
    std::optional<double> window_width;
};

// Reads the restricted DICOM profile: explicit-VR little-endian,
// uncompressed, single-sample grayscale. Anything else raises format_error
// naming the transfer syntax; truncated or inconsistent files raise
// corrupt_error.
raw_image read_dicom(std::span<const std::uint8_t> bytes);
raw_image read_dicom_file(const std::filesystem::path& path);

// Pre-decoded ingestion path: a JSON sidecar
//   {study_id, pixels_path, width, height, photometric,
//    window_center?, window_width?}
// next to a raw little-endian 16-bit array file.
struct sidecar_image {
    std::string study_id;
    raw_image image;
};

sidecar_image read_raw_sidecar(const std::filesystem::path& json_path);

}  // namespace cxrkit
