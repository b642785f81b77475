#pragma once

// Seeded random generators for property tests.

#include <random>
#include <string>
#include <vector>

#include "cxrkit/geometry.hpp"
#include "cxrkit/labels.hpp"

namespace gen {

struct rng {
    std::mt19937_64 engine;

    explicit rng(std::uint64_t seed) : engine(seed) {}

    int int_in(int lo, int hi) {  // inclusive
        return std::uniform_int_distribution<int>(lo, hi)(engine);
    }

    double real_in(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(engine);
    }

    bool chance(double p) { return real_in(0.0, 1.0) < p; }
};

inline cxrkit::norm_box norm_box(rng& r, int min_extent = 1) {
    const int x1 = r.int_in(0, 100 - min_extent);
    const int y1 = r.int_in(0, 100 - min_extent);
    const int x2 = r.int_in(x1 + min_extent, 100);
    const int y2 = r.int_in(y1 + min_extent, 100);
    return {x1, y1, x2, y2};
}

inline cxrkit::pixel_box pixel_box(rng& r, double width, double height) {
    const double x1 = r.real_in(0.0, width * 0.9);
    const double y1 = r.real_in(0.0, height * 0.9);
    const double x2 = r.real_in(x1 + width * 0.01, width);
    const double y2 = r.real_in(y1 + height * 0.01, height);
    return {x1, y1, x2, y2};
}

inline cxrkit::finding finding(rng& r, int label_pool = 22) {
    return {static_cast<cxrkit::local_label>(r.int_in(0, label_pool - 1)), norm_box(r)};
}

inline std::vector<cxrkit::finding> findings(rng& r, int count, int label_pool = 22) {
    std::vector<cxrkit::finding> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) out.push_back(finding(r, label_pool));
    return out;
}

inline std::string word(rng& r) {
    static const char* pool[] = {"lung",    "heart",  "shadow", "left",   "right",  "upper",
                                 "lower",   "field",  "normal", "dense",  "mild",   "severe",
                                 "opacity", "border", "costal", "angle",  "pleura", "apex",
                                 "base",    "hilum",  "marked", "subtle", "large",  "small"};
    return pool[r.int_in(0, 23)];
}

inline std::string sentence(rng& r, int min_words, int max_words) {
    const int n = r.int_in(min_words, max_words);
    std::string out;
    for (int i = 0; i < n; ++i) {
        if (i) out += ' ';
        out += word(r);
    }
    return out;
}

// Printable garbage interleaved with fragments that look like (broken)
// grounded syntax, for robustness fuzzing.
inline std::string garbage_line(rng& r) {
    std::string out;
    const int pieces = r.int_in(1, 12);
    for (int i = 0; i < pieces; ++i) {
        switch (r.int_in(0, 9)) {
            case 0: out += "<p>"; break;
            case 1: out += "</p>"; break;
            case 2: out += "{<" + std::to_string(r.int_in(0, 500)) + ">"; break;
            case 3:
                out += "{<" + std::to_string(r.int_in(0, 120)) + "><" +
                       std::to_string(r.int_in(0, 120)) + "><" + std::to_string(r.int_in(0, 120)) +
                       "><" + std::to_string(r.int_in(0, 120)) + ">}";
                break;
            case 4: out += "<p>Cardiomegaly</p>"; break;
            case 5: out += word(r); break;
            case 6: out += std::string(1, static_cast<char>(r.int_in(32, 126))); break;
            case 7: out += " Pneumonia "; break;
            case 8: out += "<" + std::to_string(r.int_in(0, 99)); break;
            default: out += sentence(r, 1, 6); break;
        }
        if (r.chance(0.5)) out += ' ';
    }
    return out;
}

}  // namespace gen
