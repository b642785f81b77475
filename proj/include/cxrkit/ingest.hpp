#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cxrkit/codec.hpp"
#include "cxrkit/dicom.hpp"
#include "cxrkit/geometry.hpp"
#include "cxrkit/png.hpp"

namespace cxrkit {

// Windowing transform to 8 bits: n = (p - center)/width when the window
// tags are present, otherwise (p - mean)/(max - min); the output value is
// trunc(clip(n, -1, 1) * flip * 127.5 + 127.5) with flip = -1 for
// MONOCHROME1. A flat fallback image (max == min) maps to uniform 127.
image8 normalize_pixels(const raw_image& image);

// One finding as drawn by one annotator, in pixel space.
struct labeled_pixel_box {
    local_label label;
    pixel_box box;
};

struct annotator_labels {
    std::string annotator_id;
    std::vector<labeled_pixel_box> findings;
    std::set<global_label> global;

    // True when this annotator marked the study as having nothing to
    // report: no local findings and no diagnosis besides "No finding".
    bool marked_no_finding() const;
};

struct study_record {
    std::string study_id;
    std::string image;  // relative image reference
    image_dims dims;
    std::vector<annotator_labels> annotators;
};

struct conflict_partition {
    std::vector<study_record> kept;
    std::vector<study_record> removed;
};

// Drops studies where one annotator marked "no finding" while another
// supplied an actual finding or diagnosis; the removed list is kept for
// audit.
conflict_partition filter_conflicts(std::vector<study_record> records);

// One training example: prompt/target pair for a stage.
struct stage_record {
    std::string image;
    int stage = 1;
    std::string prompt;
    std::string target;
};

struct export_options {
    bounds_policy bounds = bounds_policy::reject;
    double dedup_threshold = 0.5;
    prompt_template prompt;
    int jobs = 1;
};

struct export_result {
    std::vector<stage_record> records;  // sorted by study id
    std::vector<std::string> skipped;   // skip reasons, for logging
};

// Builds stage-1/stage-2 records from conflict-filtered studies: findings
// are merged across annotators, normalized, deduplicated and serialized;
// stage-2 targets carry the union of the annotators' diagnoses. Studies
// with out-of-bounds boxes (under the reject policy) are skipped with a
// recorded reason.
export_result export_stage_records(const std::vector<study_record>& records, int stage,
                                   const export_options& options = {});

// Evaluation-ready ground truth for one study: normalized, deduplicated
// findings plus the diagnosis union.
struct eval_ground_truth {
    std::string study_id;
    std::vector<finding> findings;
    std::set<global_label> global;
};

struct ground_truth_result {
    std::vector<eval_ground_truth> records;  // sorted by study id
    std::vector<std::string> skipped;
};

ground_truth_result build_eval_ground_truth(const std::vector<study_record>& records,
                                            const export_options& options = {});

// Flat annotation row matching the public release layout; "No finding"
// rows carry no coordinates.
struct annotation_row {
    std::string image_id;
    std::string annotator_id;
    std::string class_name;
    std::optional<pixel_box> box;
};

// Reads annotation rows from CSV (with header) or JSONL, keyed by file
// extension.
std::vector<annotation_row> load_annotations(const std::filesystem::path& path);

// Groups rows into per-study, per-annotator label sets. Rows whose class
// name is a local label need a box; global labels and "No finding" must
// not carry one. Unknown class names raise data_error.
std::vector<study_record> assemble_studies(const std::vector<annotation_row>& rows);

// Study JSONL round-trip (one study_record per line).
void write_studies_jsonl(const std::filesystem::path& path,
                         const std::vector<study_record>& records);
std::vector<study_record> read_studies_jsonl(const std::filesystem::path& path);

}  // namespace cxrkit
