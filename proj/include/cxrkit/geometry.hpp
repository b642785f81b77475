#pragma once

#include <compare>
#include <vector>

#include "cxrkit/labels.hpp"

namespace cxrkit {

// Image size in pixels.
struct image_dims {
    int width = 0;
    int height = 0;

    bool operator==(const image_dims&) const = default;
};

bool is_valid(const image_dims& dims);

// Axis-aligned box in pixel coordinates. Valid boxes have non-negative
// corners and strictly positive extent on both axes.
struct pixel_box {
    double x_min = 0.0;
    double y_min = 0.0;
    double x_max = 0.0;
    double y_max = 0.0;

    bool operator==(const pixel_box&) const = default;
};

double area(const pixel_box& box);
bool is_valid(const pixel_box& box);

// Axis-aligned box on the integer [0,100] grid.
struct norm_box {
    int x_min = 0;
    int y_min = 0;
    int x_max = 0;
    int y_max = 0;

    auto operator<=>(const norm_box&) const = default;
};

long area(const norm_box& box);
bool is_valid(const norm_box& box);

// Intersection-over-union in [0,1]. Throws domain_error when either box is
// invalid or has zero area.
double iou(const pixel_box& a, const pixel_box& b);
double iou(const norm_box& a, const norm_box& b);

// What to do with boxes that fall outside the image bounds.
enum class bounds_policy {
    reject,  // throw domain_error
    clamp,   // clamp coordinates into [0,w]x[0,h] first
};

// Maps a pixel box onto the [0,100] grid: round-half-away-from-zero of
// coord/extent*100, clamped to [0,100]. A coordinate pair that collapses
// under rounding is re-expanded by one grid unit so the result always has
// positive area.
norm_box normalize_box(const pixel_box& box, const image_dims& dims,
                       bounds_policy policy = bounds_policy::reject);

// Inverse grid-to-pixel mapping (coord * extent / 100). Rejects zero-area
// input since it cannot produce a valid pixel box.
pixel_box denormalize_box(const norm_box& box, const image_dims& dims);

// A localized finding on the normalized grid.
struct finding {
    local_label label;
    norm_box box;

    auto operator<=>(const finding&) const = default;
};

// Collapses near-duplicate findings. Within each label, findings are
// clustered by the transitive closure of {IoU > threshold} and exactly one
// representative per cluster survives: the medoid (maximal summed IoU to
// the other members), ties broken by smaller area, then lexicographic
// coordinates. Survivors keep their input order.
std::vector<finding> dedup_findings(const std::vector<finding>& findings,
                                    double threshold = 0.5);

}  // namespace cxrkit
