#include "cxrkit/codec.hpp"

#include <algorithm>
#include <cctype>

#include "cxrkit/errors.hpp"

namespace cxrkit {

namespace {

bool is_ws(char c) { return std::isspace(static_cast<unsigned char>(c)); }

void skip_ws(std::string_view s, std::size_t& pos) {
    while (pos < s.size() && is_ws(s[pos])) ++pos;
}

// Parses one `<digits>` token at pos. Returns false without moving pos when
// the next characters are not a coordinate token. Values that overflow are
// pinned far above the grid so the caller clamps them.
bool parse_coord_token(std::string_view s, std::size_t& pos, long& value) {
    std::size_t p = pos;
    if (p >= s.size() || s[p] != '<') return false;
    ++p;
    skip_ws(s, p);
    std::size_t digits_begin = p;
    long v = 0;
    bool overflow = false;
    while (p < s.size() && std::isdigit(static_cast<unsigned char>(s[p]))) {
        if (v > 100000) {
            overflow = true;
        } else {
            v = v * 10 + (s[p] - '0');
        }
        ++p;
    }
    if (p == digits_begin) return false;
    skip_ws(s, p);
    if (p >= s.size() || s[p] != '>') return false;
    ++p;
    value = overflow ? 1000000 : v;
    pos = p;
    return true;
}

struct box_scan {
    enum class status { ok, malformed, absent } state = status::absent;
    long coords[4] = {0, 0, 0, 0};
    int count = 0;
};

// Parses `{<a><b><c><d>}` at pos (whitespace tolerated between tokens).
// `absent` means there was no `{` at all; `malformed` means a group opened
// but did not contain exactly four coordinates.
box_scan parse_box_group(std::string_view s, std::size_t& pos) {
    box_scan out;
    std::size_t p = pos;
    skip_ws(s, p);
    if (p >= s.size() || s[p] != '{') return out;
    ++p;
    skip_ws(s, p);
    while (out.count < 4) {
        long v = 0;
        if (!parse_coord_token(s, p, v)) break;
        out.coords[out.count++] = v;
        skip_ws(s, p);
    }
    if (out.count == 4 && p < s.size() && s[p] == '}') {
        ++p;
        out.state = box_scan::status::ok;
    } else {
        // consume up to the closing brace so scanning resumes after the group
        while (p < s.size() && s[p] != '}' && s[p] != '<') ++p;
        if (p < s.size() && s[p] == '}') ++p;
        out.state = box_scan::status::malformed;
    }
    pos = p;
    return out;
}

std::string coord_string(const long (&c)[4]) {
    return "{<" + std::to_string(c[0]) + "><" + std::to_string(c[1]) + "><" +
           std::to_string(c[2]) + "><" + std::to_string(c[3]) + ">}";
}

std::string lowercase(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

bool starts_with_at(std::string_view s, std::size_t pos, std::string_view token) {
    return s.size() - pos >= token.size() && s.substr(pos, token.size()) == token;
}

}  // namespace

std::string_view to_string(warning_kind kind) {
    switch (kind) {
        case warning_kind::malformed_box: return "malformed_box";
        case warning_kind::unknown_label: return "unknown_label";
        case warning_kind::coordinate_clamped: return "coordinate_clamped";
        case warning_kind::no_labels_found: return "no_labels_found";
        case warning_kind::conflicting_no_finding: return "conflicting_no_finding";
    }
    return "unknown";
}

std::string serialize_findings(const grounded_report& report) {
    if (report.no_finding()) return std::string(kNoFindingsSentence);
    std::string out(kLocalSentencePrefix);
    bool first = true;
    for (const auto& f : report.findings) {
        if (!is_valid(f.box)) {
            throw domain_error("serialize_findings: invalid grid box");
        }
        if (!first) out += ',';
        first = false;
        out += "<p>";
        out += to_string(f.label);
        out += "</p> {<";
        out += std::to_string(f.box.x_min);
        out += "><";
        out += std::to_string(f.box.y_min);
        out += "><";
        out += std::to_string(f.box.x_max);
        out += "><";
        out += std::to_string(f.box.y_max);
        out += ">}";
    }
    out += '.';
    return out;
}

parsed_report parse_grounded_report(std::string_view text) {
    parsed_report out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t open = text.find("<p>", pos);
        if (open == std::string_view::npos) break;
        const std::size_t label_begin = open + 3;
        const std::size_t close = text.find("</p>", label_begin);
        if (close == std::string_view::npos) {
            out.warnings.push_back({warning_kind::malformed_box,
                                    "unterminated <p> tag near offset " + std::to_string(open)});
            pos = label_begin;
            continue;
        }
        const std::string_view label_text = text.substr(label_begin, close - label_begin);
        std::size_t p = close + 4;
        const box_scan box = parse_box_group(text, p);
        pos = p;

        if (box.state != box_scan::status::ok) {
            out.warnings.push_back(
                {warning_kind::malformed_box,
                 "no well-formed box group after label '" + std::string(label_text) + "'"});
            continue;
        }
        const auto label = parse_local_label(label_text);
        if (!label) {
            out.warnings.push_back({warning_kind::unknown_label,
                                    "label '" + std::string(label_text) +
                                        "' is not in the finding vocabulary"});
            continue;
        }
        long c[4] = {box.coords[0], box.coords[1], box.coords[2], box.coords[3]};
        bool clamped = false;
        for (long& v : c) {
            if (v > 100) {
                v = 100;
                clamped = true;
            }
        }
        if (clamped) {
            out.warnings.push_back({warning_kind::coordinate_clamped,
                                    "coordinates above 100 clamped in " + coord_string(box.coords)});
        }
        if (c[0] > c[2] || c[1] > c[3]) {
            out.warnings.push_back({warning_kind::malformed_box,
                                    "inverted corners in " + coord_string(box.coords)});
            continue;
        }
        out.report.findings.push_back(
            {*label, norm_box{static_cast<int>(c[0]), static_cast<int>(c[1]),
                              static_cast<int>(c[2]), static_cast<int>(c[3])}});
    }
    return out;
}

std::string serialize_diagnoses(const diagnosis_set& diagnoses) {
    if (diagnoses.labels.empty()) {
        throw domain_error("serialize_diagnoses: empty diagnosis set");
    }
    if (diagnoses.labels.contains(global_label::no_finding) && diagnoses.labels.size() > 1) {
        throw domain_error("serialize_diagnoses: 'No finding' cannot accompany a diagnosis");
    }
    std::string out(kGlobalSentencePrefix);
    bool first = true;
    for (auto label : diagnoses.labels) {
        if (!first) out += ", ";
        first = false;
        out += to_string(label);
    }
    out += '.';
    return out;
}

parsed_diagnoses parse_diagnoses(std::string_view text) {
    parsed_diagnoses out;
    const std::string haystack = lowercase(text);
    for (auto label : all_global_labels()) {
        const std::string needle = lowercase(to_string(label));
        if (haystack.find(needle) != std::string::npos) {
            out.labels.insert(label);
        }
    }
    if (out.labels.empty()) {
        out.warnings.push_back(
            {warning_kind::no_labels_found, "no recognizable diagnosis label in text"});
    } else if (out.labels.contains(global_label::no_finding) && out.labels.size() > 1) {
        out.warnings.push_back({warning_kind::conflicting_no_finding,
                                "'No finding' found alongside a diagnosis"});
    }
    return out;
}

std::string strip_localization(std::string_view text, bool strip_tags) {
    std::string pass1;
    pass1.reserve(text.size());
    std::size_t pos = 0;
    while (pos < text.size()) {
        if (text[pos] == '{') {
            std::size_t p = pos;
            const box_scan box = parse_box_group(text, p);
            if (box.state == box_scan::status::ok) {
                pos = p;
                continue;
            }
        }
        if (strip_tags && starts_with_at(text, pos, "<p>")) {
            pos += 3;
            continue;
        }
        if (strip_tags && starts_with_at(text, pos, "</p>")) {
            pos += 4;
            continue;
        }
        pass1.push_back(text[pos++]);
    }

    // Collapse the artifacts removal leaves behind: runs of whitespace
    // (newlines survive as a single newline), and stray whitespace/commas
    // before punctuation.
    std::string out;
    out.reserve(pass1.size());
    bool pending_ws = false;
    bool pending_nl = false;
    for (char c : pass1) {
        if (is_ws(c)) {
            pending_ws = true;
            if (c == '\n' || c == '\r') pending_nl = true;
            continue;
        }
        if (c == ',' || c == '.') {
            pending_ws = pending_nl = false;
            if (c == ',' && !out.empty() && out.back() == ',') continue;
            if (c == '.' && !out.empty() && out.back() == ',') out.pop_back();
            out.push_back(c);
            continue;
        }
        if (pending_ws && !out.empty()) out.push_back(pending_nl ? '\n' : ' ');
        pending_ws = pending_nl = false;
        out.push_back(c);
    }
    return out;
}

std::string build_prompt(int stage, const prompt_template& tpl) {
    if (stage != 1 && stage != 2) {
        throw domain_error("build_prompt: stage " + std::to_string(stage) + " not in {1,2}");
    }
    std::string identifier = tpl.identifier;
    if (identifier.empty()) {
        identifier = stage == 1 ? std::string(kIdentifyToken) : std::string(kVqaToken);
    }
    if (identifier != kIdentifyToken && identifier != kVqaToken &&
        identifier != kGroundingToken) {
        throw domain_error("build_prompt: unknown identifier token '" + identifier + "'");
    }
    std::string instruction = tpl.instruction;
    if (instruction.empty()) {
        instruction = stage == 1 ? std::string(kStage1Instruction) : std::string(kStage2Instruction);
    }
    return tpl.image_open + tpl.image_placeholder + tpl.image_close + " " + identifier + " " +
           instruction;
}

}  // namespace cxrkit
