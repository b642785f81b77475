#pragma once

// Independent reference computations for the test suites. These stay
// deliberately naive: counting, enumeration and series expansions, never
// the library's own code paths.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "cxrkit/geometry.hpp"

namespace oracle {

// IoU of two integer-coordinate boxes by rasterizing unit cells.
inline double rasterized_iou(const cxrkit::norm_box& a, const cxrkit::norm_box& b) {
    long inter = 0, only_a = 0, only_b = 0;
    const int lo_x = std::min(a.x_min, b.x_min);
    const int hi_x = std::max(a.x_max, b.x_max);
    const int lo_y = std::min(a.y_min, b.y_min);
    const int hi_y = std::max(a.y_max, b.y_max);
    for (int y = lo_y; y < hi_y; ++y) {
        for (int x = lo_x; x < hi_x; ++x) {
            const bool in_a = x >= a.x_min && x < a.x_max && y >= a.y_min && y < a.y_max;
            const bool in_b = x >= b.x_min && x < b.x_max && y >= b.y_min && y < b.y_max;
            if (in_a && in_b) {
                ++inter;
            } else if (in_a) {
                ++only_a;
            } else if (in_b) {
                ++only_b;
            }
        }
    }
    const long uni = inter + only_a + only_b;
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// General integer boxes (not limited to the [0,100] grid).
struct int_box {
    int x_min, y_min, x_max, y_max;
};

inline double rasterized_iou(const int_box& a, const int_box& b) {
    long inter = 0, only_a = 0, only_b = 0;
    const int lo_x = std::min(a.x_min, b.x_min);
    const int hi_x = std::max(a.x_max, b.x_max);
    const int lo_y = std::min(a.y_min, b.y_min);
    const int hi_y = std::max(a.y_max, b.y_max);
    for (int y = lo_y; y < hi_y; ++y) {
        for (int x = lo_x; x < hi_x; ++x) {
            const bool in_a = x >= a.x_min && x < a.x_max && y >= a.y_min && y < a.y_max;
            const bool in_b = x >= b.x_min && x < b.x_max && y >= b.y_min && y < b.y_max;
            if (in_a && in_b) {
                ++inter;
            } else if (in_a) {
                ++only_a;
            } else if (in_b) {
                ++only_b;
            }
        }
    }
    const long uni = inter + only_a + only_b;
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Connected components of same-label findings under {IoU > threshold},
// grown by plain repeated sweeps.
inline std::vector<int> overlap_components(const std::vector<cxrkit::finding>& findings,
                                           double threshold) {
    const std::size_t n = findings.size();
    std::vector<int> component(n);
    std::iota(component.begin(), component.end(), 0);
    bool changed = true;
    while (changed) {
        changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (findings[i].label != findings[j].label) continue;
                if (rasterized_iou(findings[i].box, findings[j].box) > threshold &&
                    component[i] != component[j]) {
                    const int merged = std::min(component[i], component[j]);
                    component[i] = component[j] = merged;
                    changed = true;
                }
            }
        }
    }
    return component;
}

// erf via its Maclaurin series; converges quickly for |x| <= 3.
inline double erf_series(double x) {
    const double two_over_sqrt_pi = 1.1283791670955125739;
    double term = x;
    double sum = x;
    for (int n = 1; n < 80; ++n) {
        term *= -x * x / n;
        sum += term / (2 * n + 1);
    }
    return two_over_sqrt_pi * sum;
}

}  // namespace oracle
