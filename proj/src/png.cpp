#include "cxrkit/png.hpp"

#include <cstring>
#include <fstream>

#include <zlib.h>

#include "cxrkit/errors.hpp"

namespace cxrkit {

namespace {

void push_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

void push_chunk(std::vector<std::uint8_t>& out, const char type[4],
                const std::vector<std::uint8_t>& payload) {
    push_u32_be(out, static_cast<std::uint32_t>(payload.size()));
    const std::size_t crc_begin = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    const auto crc = crc32(0L, out.data() + crc_begin, static_cast<uInt>(out.size() - crc_begin));
    push_u32_be(out, static_cast<std::uint32_t>(crc));
}

}  // namespace

std::vector<std::uint8_t> encode_png_gray8(const image8& image) {
    if (!is_valid(image.dims) ||
        image.pixels.size() !=
            static_cast<std::size_t>(image.dims.width) * image.dims.height) {
        throw domain_error("encode_png_gray8: pixel buffer does not match dimensions");
    }
    const std::size_t w = image.dims.width;
    const std::size_t h = image.dims.height;

    // Raw scanline stream: one filter byte (0 = none) per row.
    std::vector<std::uint8_t> raw;
    raw.reserve(h * (w + 1));
    for (std::size_t y = 0; y < h; ++y) {
        raw.push_back(0);
        raw.insert(raw.end(), image.pixels.begin() + y * w, image.pixels.begin() + (y + 1) * w);
    }

    uLongf compressed_size = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> compressed(compressed_size);
    if (compress2(compressed.data(), &compressed_size, raw.data(),
                  static_cast<uLong>(raw.size()), 6) != Z_OK) {
        throw error("encode_png_gray8: deflate failed");
    }
    compressed.resize(compressed_size);

    std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
    std::vector<std::uint8_t> ihdr;
    push_u32_be(ihdr, static_cast<std::uint32_t>(w));
    push_u32_be(ihdr, static_cast<std::uint32_t>(h));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(0);  // color type: grayscale
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter
    ihdr.push_back(0);  // interlace
    push_chunk(out, "IHDR", ihdr);
    push_chunk(out, "IDAT", compressed);
    push_chunk(out, "IEND", {});
    return out;
}

void write_png_gray8(const std::filesystem::path& path, const image8& image) {
    const auto bytes = encode_png_gray8(image);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw data_error("short write to " + path.string());
}

}  // namespace cxrkit
