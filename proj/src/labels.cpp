#include "cxrkit/labels.hpp"

#include <cctype>
#include <unordered_map>

namespace cxrkit {

namespace {

constexpr std::array<std::string_view, local_label_count> kLocalNames = {
    "Aortic enlargement",
    "Atelectasis",
    "Calcification",
    "Cardiomegaly",
    "Clavicle fracture",
    "Consolidation",
    "Edema",
    "Emphysema",
    "Enlarged PA",
    "ILD",
    "Infiltration",
    "Lung Opacity",
    "Lung cavity",
    "Lung cyst",
    "Mediastinal shift",
    "Nodule/Mass",
    "Pleural effusion",
    "Pleural thickening",
    "Pneumothorax",
    "Pulmonary fibrosis",
    "Rib fracture",
    "Other lesion",
};

constexpr std::array<std::string_view, global_label_count> kGlobalNames = {
    "COPD", "Lung tumor", "Pneumonia", "Tuberculosis", "Other disease", "No finding",
};

}  // namespace

std::string_view to_string(local_label label) {
    return kLocalNames[static_cast<std::size_t>(label)];
}

std::string_view to_string(global_label label) {
    return kGlobalNames[static_cast<std::size_t>(label)];
}

const std::array<local_label, local_label_count>& all_local_labels() {
    static const auto labels = [] {
        std::array<local_label, local_label_count> out{};
        for (std::size_t i = 0; i < local_label_count; ++i) {
            out[i] = static_cast<local_label>(i);
        }
        return out;
    }();
    return labels;
}

const std::array<global_label, global_label_count>& all_global_labels() {
    static const auto labels = [] {
        std::array<global_label, global_label_count> out{};
        for (std::size_t i = 0; i < global_label_count; ++i) {
            out[i] = static_cast<global_label>(i);
        }
        return out;
    }();
    return labels;
}

std::string normalize_label_key(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

std::optional<local_label> parse_local_label(std::string_view text) {
    static const auto index = [] {
        std::unordered_map<std::string, local_label> map;
        for (auto label : all_local_labels()) {
            map.emplace(normalize_label_key(to_string(label)), label);
        }
        return map;
    }();
    auto it = index.find(normalize_label_key(text));
    if (it == index.end()) return std::nullopt;
    return it->second;
}

std::optional<global_label> parse_global_label(std::string_view text) {
    static const auto index = [] {
        std::unordered_map<std::string, global_label> map;
        for (auto label : all_global_labels()) {
            map.emplace(normalize_label_key(to_string(label)), label);
        }
        return map;
    }();
    auto it = index.find(normalize_label_key(text));
    if (it == index.end()) return std::nullopt;
    return it->second;
}

}  // namespace cxrkit
