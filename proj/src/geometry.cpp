#include "cxrkit/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cxrkit/errors.hpp"

namespace cxrkit {

namespace {

std::string describe(const pixel_box& b) {
    return "(" + std::to_string(b.x_min) + "," + std::to_string(b.y_min) + "," +
           std::to_string(b.x_max) + "," + std::to_string(b.y_max) + ")";
}

std::string describe(const norm_box& b) {
    return "(" + std::to_string(b.x_min) + "," + std::to_string(b.y_min) + "," +
           std::to_string(b.x_max) + "," + std::to_string(b.y_max) + ")";
}

double iou_impl(double ax1, double ay1, double ax2, double ay2, double bx1, double by1,
                double bx2, double by2) {
    const double iw = std::min(ax2, bx2) - std::max(ax1, bx1);
    const double ih = std::min(ay2, by2) - std::max(ay1, by1);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    const double area_a = (ax2 - ax1) * (ay2 - ay1);
    const double area_b = (bx2 - bx1) * (by2 - by1);
    return inter / (area_a + area_b - inter);
}

// Round half away from zero; coordinates here are non-negative.
int round_grid(double value) {
    return static_cast<int>(std::llround(value));
}

// Re-expand a coordinate pair that collapsed under rounding by one grid
// unit, staying inside [0,100].
void expand_if_collapsed(int& lo, int& hi) {
    if (lo != hi) return;
    if (hi < 100) {
        ++hi;
    } else {
        --lo;
    }
}

// Union-find over finding indices.
class disjoint_sets {
  public:
    explicit disjoint_sets(std::size_t n) : parent_(n) {
        std::iota(parent_.begin(), parent_.end(), std::size_t{0});
    }

    std::size_t find(std::size_t i) {
        while (parent_[i] != i) {
            parent_[i] = parent_[parent_[i]];
            i = parent_[i];
        }
        return i;
    }

    void unite(std::size_t a, std::size_t b) { parent_[find(a)] = find(b); }

  private:
    std::vector<std::size_t> parent_;
};

}  // namespace

bool is_valid(const image_dims& dims) { return dims.width >= 1 && dims.height >= 1; }

double area(const pixel_box& box) {
    return (box.x_max - box.x_min) * (box.y_max - box.y_min);
}

bool is_valid(const pixel_box& box) {
    return std::isfinite(box.x_min) && std::isfinite(box.y_min) && std::isfinite(box.x_max) &&
           std::isfinite(box.y_max) && box.x_min >= 0.0 && box.y_min >= 0.0 &&
           box.x_min < box.x_max && box.y_min < box.y_max;
}

long area(const norm_box& box) {
    return static_cast<long>(box.x_max - box.x_min) * static_cast<long>(box.y_max - box.y_min);
}

bool is_valid(const norm_box& box) {
    return 0 <= box.x_min && box.x_min <= box.x_max && box.x_max <= 100 && 0 <= box.y_min &&
           box.y_min <= box.y_max && box.y_max <= 100;
}

double iou(const pixel_box& a, const pixel_box& b) {
    if (!is_valid(a) || area(a) <= 0.0) {
        throw domain_error("iou: degenerate pixel box " + describe(a));
    }
    if (!is_valid(b) || area(b) <= 0.0) {
        throw domain_error("iou: degenerate pixel box " + describe(b));
    }
    return iou_impl(a.x_min, a.y_min, a.x_max, a.y_max, b.x_min, b.y_min, b.x_max, b.y_max);
}

double iou(const norm_box& a, const norm_box& b) {
    if (!is_valid(a) || area(a) == 0) {
        throw domain_error("iou: degenerate grid box " + describe(a));
    }
    if (!is_valid(b) || area(b) == 0) {
        throw domain_error("iou: degenerate grid box " + describe(b));
    }
    return iou_impl(a.x_min, a.y_min, a.x_max, a.y_max, b.x_min, b.y_min, b.x_max, b.y_max);
}

norm_box normalize_box(const pixel_box& box, const image_dims& dims, bounds_policy policy) {
    if (!is_valid(dims)) {
        throw domain_error("normalize_box: invalid image dims " + std::to_string(dims.width) +
                           "x" + std::to_string(dims.height));
    }
    if (!is_valid(box)) {
        throw domain_error("normalize_box: invalid pixel box " + describe(box));
    }
    const double w = dims.width;
    const double h = dims.height;
    pixel_box b = box;
    if (b.x_max > w || b.y_max > h) {
        if (policy == bounds_policy::reject) {
            throw domain_error("normalize_box: box " + describe(box) + " outside image " +
                               std::to_string(dims.width) + "x" + std::to_string(dims.height));
        }
        b.x_min = std::min(b.x_min, w);
        b.x_max = std::min(b.x_max, w);
        b.y_min = std::min(b.y_min, h);
        b.y_max = std::min(b.y_max, h);
    }

    norm_box out;
    out.x_min = std::clamp(round_grid(b.x_min / w * 100.0), 0, 100);
    out.x_max = std::clamp(round_grid(b.x_max / w * 100.0), 0, 100);
    out.y_min = std::clamp(round_grid(b.y_min / h * 100.0), 0, 100);
    out.y_max = std::clamp(round_grid(b.y_max / h * 100.0), 0, 100);
    expand_if_collapsed(out.x_min, out.x_max);
    expand_if_collapsed(out.y_min, out.y_max);
    return out;
}

pixel_box denormalize_box(const norm_box& box, const image_dims& dims) {
    if (!is_valid(dims)) {
        throw domain_error("denormalize_box: invalid image dims " + std::to_string(dims.width) +
                           "x" + std::to_string(dims.height));
    }
    if (!is_valid(box) || area(box) == 0) {
        throw domain_error("denormalize_box: degenerate grid box " + describe(box));
    }
    pixel_box out;
    out.x_min = box.x_min * dims.width / 100.0;
    out.x_max = box.x_max * dims.width / 100.0;
    out.y_min = box.y_min * dims.height / 100.0;
    out.y_max = box.y_max * dims.height / 100.0;
    return out;
}

std::vector<finding> dedup_findings(const std::vector<finding>& findings, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw domain_error("dedup_findings: threshold " + std::to_string(threshold) +
                           " outside (0,1)");
    }
    for (const auto& f : findings) {
        if (!is_valid(f.box) || area(f.box) == 0) {
            throw domain_error("dedup_findings: degenerate grid box " + describe(f.box));
        }
    }
    const std::size_t n = findings.size();
    disjoint_sets sets(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (findings[i].label != findings[j].label) continue;
            if (iou(findings[i].box, findings[j].box) > threshold) sets.unite(i, j);
        }
    }

    // Medoid per cluster: maximal summed IoU to the other members, ties by
    // smaller area, then lexicographic coordinates.
    std::vector<std::size_t> best(n, n);  // cluster root -> representative index
    std::vector<double> best_score(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t root = sets.find(i);
        double score = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i || sets.find(j) != root) continue;
            score += iou(findings[i].box, findings[j].box);
        }
        if (best[root] == n) {
            best[root] = i;
            best_score[root] = score;
            continue;
        }
        const auto& cur = findings[best[root]].box;
        const auto& cand = findings[i].box;
        const bool better =
            score > best_score[root] ||
            (score == best_score[root] &&
             (area(cand) < area(cur) || (area(cand) == area(cur) && cand < cur)));
        if (better) {
            best[root] = i;
            best_score[root] = score;
        }
    }

    std::vector<finding> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (best[sets.find(i)] == i) out.push_back(findings[i]);
    }
    return out;
}

}  // namespace cxrkit
