#pragma once

#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "cxrkit/geometry.hpp"
#include "cxrkit/labels.hpp"

namespace cxrkit {

// A study's grounded findings; an empty list means "no findings".
struct grounded_report {
    std::vector<finding> findings;

    bool no_finding() const { return findings.empty(); }
    bool operator==(const grounded_report&) const = default;
};

// Set of whole-image diagnoses. Kept ordered by enum value so serialization
// emits canonical report order.
struct diagnosis_set {
    std::set<global_label> labels;

    bool operator==(const diagnosis_set&) const = default;
};

enum class warning_kind {
    malformed_box,        // box group unreadable (wrong arity, inverted corners, ...)
    unknown_label,        // <p>...</p> text not in the 22-label vocabulary
    coordinate_clamped,   // coordinate above 100 clamped onto the grid
    no_labels_found,      // diagnosis text contained no recognizable label
    conflicting_no_finding,  // "No finding" alongside an actual diagnosis
};

std::string_view to_string(warning_kind kind);

struct parse_warning {
    warning_kind kind;
    std::string message;
};

// Fixed sentence fragments of the wire format.
inline constexpr std::string_view kLocalSentencePrefix =
    "Local diseases of this chest radiograph are ";
inline constexpr std::string_view kGlobalSentencePrefix =
    "Global diseases of this chest radiograph are ";
inline constexpr std::string_view kNoFindingsSentence =
    "The chest radiograph shows no findings.";

// `Local diseases of this chest radiograph are <p>LABEL</p>
// {<x1><y1><x2><y2>},<p>LABEL</p> {...}.`; the empty report serializes to
// the fixed no-findings sentence.
std::string serialize_findings(const grounded_report& report);

struct parsed_report {
    grounded_report report;
    std::vector<parse_warning> warnings;
};

// Tolerant scanner over arbitrary model output: every well-formed
// `<p>...</p> {<int><int><int><int>}` fragment becomes a finding; anything
// malformed produces a warning instead of a failure. Coordinates above 100
// are clamped; inverted boxes are dropped. Never throws on text input.
parsed_report parse_grounded_report(std::string_view text);

// `Global diseases of this chest radiograph are A, B.` with canonical label
// order. Throws domain_error when the set is empty or pairs "No finding"
// with another diagnosis.
std::string serialize_diagnoses(const diagnosis_set& diagnoses);

struct parsed_diagnoses {
    std::set<global_label> labels;
    std::vector<parse_warning> warnings;
};

// Case-insensitive scan for the 6 diagnosis names anywhere in the text,
// deduplicated. Zero recognizable labels yields an empty set plus a
// warning; "No finding" alongside a diagnosis is kept but flagged.
parsed_diagnoses parse_diagnoses(std::string_view text);

// Removes every `{<int><int><int><int>}` group and (by default) the
// <p>/</p> markers, then collapses the whitespace/comma artifacts the
// removal leaves behind.
std::string strip_localization(std::string_view text, bool strip_tags = true);

// Identifier tokens routing the two tasks (plus the grounding ablation).
inline constexpr std::string_view kIdentifyToken = "[identify]";
inline constexpr std::string_view kVqaToken = "[vqa]";
inline constexpr std::string_view kGroundingToken = "[grounding]";

inline constexpr std::string_view kStage1Instruction =
    "Please describe the critical findings along with their localized bounding boxes "
    "in the radiological image of a chest as much detail as possible. If there are no "
    "findings, state that the chest radiograph shows no findings.";
inline constexpr std::string_view kStage2Instruction =
    "Given the provided chest X-ray image, which of the following diagnoses are present "
    "(select all that apply): COPD, Lung Tumor, Pneumonia, Tuberculosis, Other Disease, "
    "or No Finding?";

// Prompt pieces; empty identifier/instruction fall back to the stage
// defaults ([identify]/[vqa] and the two instructions above).
struct prompt_template {
    std::string image_open = "<Img>";
    std::string image_placeholder = "<ImageFeature>";
    std::string image_close = "</Img>";
    std::string identifier;
    std::string instruction;
};

// `<Img><ImageFeature></Img> [token] instruction`. Throws domain_error for
// a stage outside {1,2} or an identifier outside the closed token set.
std::string build_prompt(int stage, const prompt_template& tpl = {});

}  // namespace cxrkit
