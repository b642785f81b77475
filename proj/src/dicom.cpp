#include "cxrkit/dicom.hpp"

#include <cstdlib>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "cxrkit/errors.hpp"

namespace cxrkit {

namespace {

constexpr std::string_view kExplicitVrLittleEndian = "1.2.840.10008.1.2.1";

struct reader {
    std::span<const std::uint8_t> bytes;
    std::size_t pos = 0;

    std::size_t remaining() const { return bytes.size() - pos; }

    void require(std::size_t n, const char* what) const {
        if (remaining() < n) {
            throw corrupt_error(std::string("dicom: truncated ") + what);
        }
    }

    std::uint16_t read_u16() {
        require(2, "element header");
        std::uint16_t v = static_cast<std::uint16_t>(bytes[pos]) |
                          static_cast<std::uint16_t>(bytes[pos + 1]) << 8;
        pos += 2;
        return v;
    }

    std::uint32_t read_u32() {
        require(4, "element length");
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = v << 8 | bytes[pos + i];
        pos += 4;
        return v;
    }

    std::span<const std::uint8_t> read_value(std::size_t n) {
        require(n, "element value");
        auto out = bytes.subspan(pos, n);
        pos += n;
        return out;
    }
};

struct element {
    std::uint16_t group = 0;
    std::uint16_t tag = 0;
    std::string vr;
    std::span<const std::uint8_t> value;
};

bool long_form_vr(const std::string& vr) {
    return vr == "OB" || vr == "OW" || vr == "OF" || vr == "SQ" || vr == "UT" || vr == "UN";
}

element read_element(reader& r) {
    element e;
    e.group = r.read_u16();
    e.tag = r.read_u16();
    r.require(2, "VR");
    e.vr.assign(reinterpret_cast<const char*>(r.bytes.data() + r.pos), 2);
    r.pos += 2;
    std::uint32_t length = 0;
    if (long_form_vr(e.vr)) {
        r.read_u16();  // reserved
        length = r.read_u32();
    } else {
        length = r.read_u16();
    }
    if (length == 0xFFFFFFFFu) {
        throw format_error("dicom: undefined-length element (encapsulated data) unsupported");
    }
    e.value = r.read_value(length);
    return e;
}

std::string trimmed_string(std::span<const std::uint8_t> value) {
    std::string s(reinterpret_cast<const char*>(value.data()), value.size());
    while (!s.empty() && (s.back() == ' ' || s.back() == '\0')) s.pop_back();
    while (!s.empty() && s.front() == ' ') s.erase(s.begin());
    return s;
}

std::uint16_t as_u16(const element& e, const char* name) {
    if (e.value.size() != 2) {
        throw corrupt_error(std::string("dicom: ") + name + " has unexpected length " +
                            std::to_string(e.value.size()));
    }
    return static_cast<std::uint16_t>(e.value[0]) | static_cast<std::uint16_t>(e.value[1]) << 8;
}

// Decimal string; multi-valued tags are backslash-separated and the first
// value wins.
double as_decimal(const element& e, const char* name) {
    std::string s = trimmed_string(e.value);
    const std::size_t sep = s.find('\\');
    if (sep != std::string::npos) s.resize(sep);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str()) {
        throw corrupt_error(std::string("dicom: unreadable decimal string in ") + name + ": '" +
                            s + "'");
    }
    return v;
}

constexpr std::uint32_t tag_key(std::uint16_t group, std::uint16_t tag) {
    return static_cast<std::uint32_t>(group) << 16 | tag;
}

}  // namespace

std::string_view to_string(photometric interp) {
    return interp == photometric::monochrome1 ? "MONOCHROME1" : "MONOCHROME2";
}

raw_image read_dicom(std::span<const std::uint8_t> bytes) {
    reader r{bytes};
    r.require(132, "preamble");
    r.pos = 128;
    if (std::memcmp(bytes.data() + 128, "DICM", 4) != 0) {
        throw corrupt_error("dicom: missing DICM magic");
    }
    r.pos = 132;

    std::optional<std::uint16_t> rows, cols, bits;
    std::optional<photometric> interp;
    raw_image out;
    std::span<const std::uint8_t> pixel_data;
    bool saw_pixels = false;
    std::string transfer_syntax;

    while (r.remaining() > 0) {
        const element e = read_element(r);
        switch (tag_key(e.group, e.tag)) {
            case tag_key(0x0002, 0x0010):
                transfer_syntax = trimmed_string(e.value);
                if (transfer_syntax != kExplicitVrLittleEndian) {
                    throw format_error("dicom: unsupported transfer syntax " + transfer_syntax);
                }
                break;
            case tag_key(0x0028, 0x0004): {
                const std::string value = trimmed_string(e.value);
                if (value == "MONOCHROME1") {
                    interp = photometric::monochrome1;
                } else if (value == "MONOCHROME2") {
                    interp = photometric::monochrome2;
                } else {
                    throw format_error("dicom: unsupported photometric interpretation '" + value +
                                       "'");
                }
                break;
            }
            case tag_key(0x0028, 0x0010): rows = as_u16(e, "Rows"); break;
            case tag_key(0x0028, 0x0011): cols = as_u16(e, "Columns"); break;
            case tag_key(0x0028, 0x0100): bits = as_u16(e, "BitsAllocated"); break;
            case tag_key(0x0028, 0x1050):
                out.window_center = as_decimal(e, "WindowCenter");
                break;
            case tag_key(0x0028, 0x1051):
                out.window_width = as_decimal(e, "WindowWidth");
                break;
            case tag_key(0x7FE0, 0x0010):
                pixel_data = e.value;
                saw_pixels = true;
                break;
            default: break;  // skip unrelated tags
        }
        if (saw_pixels) break;
    }

    if (transfer_syntax.empty()) {
        throw corrupt_error("dicom: missing transfer syntax (0002,0010)");
    }
    if (!rows || !cols) throw corrupt_error("dicom: missing Rows/Columns");
    if (!bits) throw corrupt_error("dicom: missing BitsAllocated");
    if (!interp) throw corrupt_error("dicom: missing PhotometricInterpretation");
    if (!saw_pixels) throw corrupt_error("dicom: missing PixelData");
    if (*bits < 8 || *bits > 16) {
        throw format_error("dicom: BitsAllocated " + std::to_string(*bits) +
                           " outside the supported 8..16 range");
    }

    out.dims = image_dims{*cols, *rows};
    out.interp = *interp;
    out.bits_allocated = *bits;
    const std::size_t count = static_cast<std::size_t>(*rows) * *cols;
    const std::size_t bytes_per_pixel = *bits <= 8 ? 1 : 2;
    if (pixel_data.size() < count * bytes_per_pixel) {
        throw corrupt_error("dicom: truncated pixel data (" + std::to_string(pixel_data.size()) +
                            " bytes for " + std::to_string(count * bytes_per_pixel) +
                            " expected)");
    }
    out.pixels.resize(count);
    if (bytes_per_pixel == 1) {
        for (std::size_t i = 0; i < count; ++i) out.pixels[i] = pixel_data[i];
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            out.pixels[i] = static_cast<std::uint16_t>(pixel_data[2 * i]) |
                            static_cast<std::uint16_t>(pixel_data[2 * i + 1]) << 8;
        }
    }
    return out;
}

raw_image read_dicom_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return read_dicom(bytes);
}

sidecar_image read_raw_sidecar(const std::filesystem::path& json_path) {
    std::ifstream in(json_path);
    if (!in) throw data_error("cannot open " + json_path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw corrupt_error("sidecar " + json_path.string() + ": " + e.what());
    }

    sidecar_image out;
    try {
        out.study_id = doc.at("study_id").get<std::string>();
        out.image.dims.width = doc.at("width").get<int>();
        out.image.dims.height = doc.at("height").get<int>();
        const std::string interp = doc.at("photometric").get<std::string>();
        if (interp == "MONOCHROME1") {
            out.image.interp = photometric::monochrome1;
        } else if (interp == "MONOCHROME2") {
            out.image.interp = photometric::monochrome2;
        } else {
            throw format_error("sidecar: unsupported photometric '" + interp + "'");
        }
        if (doc.contains("window_center")) {
            out.image.window_center = doc["window_center"].get<double>();
        }
        if (doc.contains("window_width")) {
            out.image.window_width = doc["window_width"].get<double>();
        }
        const std::filesystem::path pixels_path =
            json_path.parent_path() / doc.at("pixels_path").get<std::string>();
        std::ifstream raw(pixels_path, std::ios::binary);
        if (!raw) throw data_error("cannot open " + pixels_path.string());
        std::vector<char> bytes((std::istreambuf_iterator<char>(raw)),
                                std::istreambuf_iterator<char>());
        const std::size_t count =
            static_cast<std::size_t>(out.image.dims.width) * out.image.dims.height;
        if (bytes.size() != count * 2) {
            throw corrupt_error("sidecar raw file " + pixels_path.string() + ": " +
                                std::to_string(bytes.size()) + " bytes, expected " +
                                std::to_string(count * 2));
        }
        out.image.pixels.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
            out.image.pixels[i] =
                static_cast<std::uint16_t>(static_cast<std::uint8_t>(bytes[2 * i])) |
                static_cast<std::uint16_t>(static_cast<std::uint8_t>(bytes[2 * i + 1])) << 8;
        }
    } catch (const nlohmann::json::exception& e) {
        throw data_error("sidecar " + json_path.string() + ": " + e.what());
    }
    if (!is_valid(out.image.dims)) {
        throw data_error("sidecar " + json_path.string() + ": non-positive dimensions");
    }
    return out;
}

}  // namespace cxrkit
