#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace cxrkit {

// The 22 localized finding classes, in canonical report order.
enum class local_label : int {
    aortic_enlargement,
    atelectasis,
    calcification,
    cardiomegaly,
    clavicle_fracture,
    consolidation,
    edema,
    emphysema,
    enlarged_pa,
    ild,
    infiltration,
    lung_opacity,
    lung_cavity,
    lung_cyst,
    mediastinal_shift,
    nodule_mass,
    pleural_effusion,
    pleural_thickening,
    pneumothorax,
    pulmonary_fibrosis,
    rib_fracture,
    other_lesion,
};

inline constexpr std::size_t local_label_count = 22;

// The 6 whole-image diagnosis classes, in canonical report order.
enum class global_label : int {
    copd,
    lung_tumor,
    pneumonia,
    tuberculosis,
    other_disease,
    no_finding,
};

inline constexpr std::size_t global_label_count = 6;

std::string_view to_string(local_label label);
std::string_view to_string(global_label label);

const std::array<local_label, local_label_count>& all_local_labels();
const std::array<global_label, global_label_count>& all_global_labels();

// Lowercases ASCII, trims, and collapses internal whitespace runs to one
// space; the key used for case-insensitive label matching.
std::string normalize_label_key(std::string_view text);

// Case-insensitive, whitespace-tolerant lookup of a canonical label name.
std::optional<local_label> parse_local_label(std::string_view text);
std::optional<global_label> parse_global_label(std::string_view text);

}  // namespace cxrkit
