#include "cxrkit/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>

#include <nlohmann/json.hpp>

#include "cxrkit/errors.hpp"
#include "cxrkit/util.hpp"

namespace cxrkit {

namespace {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::uint8_t window_one(double p, double offset, double scale, double flip) {
    double n = (p - offset) / scale;
    if (std::isnan(n)) n = 0.0;  // zero-width window at the center value
    if (n > 1.0) n = 1.0;
    if (n < -1.0) n = -1.0;
    return static_cast<std::uint8_t>(n * flip * 127.5 + 127.5);
}

// Per-study normalized view shared by the exporters.
struct normalized_study {
    std::vector<finding> findings;      // merged, normalized, deduplicated
    std::set<global_label> global;      // sanitized annotator union
    bool no_finding_study = false;      // every annotator marked no finding
    std::string skip_reason;            // non-empty: study unusable
};

normalized_study normalize_study(const study_record& record, const export_options& options) {
    normalized_study out;
    if (record.annotators.empty()) {
        out.skip_reason = "study " + record.study_id + ": no annotators";
        return out;
    }
    out.no_finding_study = std::all_of(record.annotators.begin(), record.annotators.end(),
                                       [](const auto& a) { return a.marked_no_finding(); });

    std::vector<finding> merged;
    for (const auto& annotator : record.annotators) {
        for (const auto& lb : annotator.findings) {
            try {
                merged.push_back({lb.label, normalize_box(lb.box, record.dims, options.bounds)});
            } catch (const domain_error& e) {
                out.skip_reason = "study " + record.study_id + ": " + e.what();
                return out;
            }
        }
        out.global.insert(annotator.global.begin(), annotator.global.end());
    }
    out.findings = dedup_findings(merged, options.dedup_threshold);

    if (out.global.empty() && out.no_finding_study) {
        out.global.insert(global_label::no_finding);
    }
    // An annotator that drew findings but also ticked "No finding" is
    // internally inconsistent; the diagnoses win.
    if (out.global.size() > 1) out.global.erase(global_label::no_finding);
    return out;
}

std::optional<double> parse_csv_number(const std::string& cell) {
    if (cell.empty()) return std::nullopt;
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw data_error("unreadable coordinate '" + cell + "'");
    return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (char c : line) {
        if (c == '"') {
            quoted = !quoted;
        } else if (c == ',' && !quoted) {
            cells.push_back(cell);
            cell.clear();
        } else {
            cell.push_back(c);
        }
    }
    cells.push_back(cell);
    for (auto& s : cells) {
        while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
        while (!s.empty() && s.front() == ' ') s.erase(s.begin());
    }
    return cells;
}

annotation_row row_from_json(const json& doc, std::size_t line_no) {
    annotation_row row;
    try {
        row.image_id = doc.at("image_id").get<std::string>();
        row.annotator_id = doc.at("annotator_id").get<std::string>();
        row.class_name = doc.at("class_name").get<std::string>();
        if (doc.contains("x_min") && !doc["x_min"].is_null()) {
            row.box = pixel_box{doc["x_min"].get<double>(), doc["y_min"].get<double>(),
                                doc["x_max"].get<double>(), doc["y_max"].get<double>()};
        }
    } catch (const json::exception& e) {
        throw data_error("annotations line " + std::to_string(line_no) + ": " + e.what());
    }
    return row;
}

json box_to_json(const pixel_box& box) {
    return json::array({box.x_min, box.y_min, box.x_max, box.y_max});
}

pixel_box box_from_json(const json& arr) {
    if (!arr.is_array() || arr.size() != 4) throw data_error("box must be [x1,y1,x2,y2]");
    return pixel_box{arr[0].get<double>(), arr[1].get<double>(), arr[2].get<double>(),
                     arr[3].get<double>()};
}

}  // namespace

image8 normalize_pixels(const raw_image& image) {
    const std::size_t count =
        static_cast<std::size_t>(image.dims.width) * image.dims.height;
    if (!is_valid(image.dims) || image.pixels.size() != count) {
        throw domain_error("normalize_pixels: pixel buffer does not match dimensions");
    }
    image8 out;
    out.dims = image.dims;
    out.pixels.resize(count);
    const double flip = image.interp == photometric::monochrome1 ? -1.0 : 1.0;

    if (image.window_center && image.window_width) {
        const double center = *image.window_center;
        const double width = *image.window_width;
        for (std::size_t i = 0; i < count; ++i) {
            out.pixels[i] = window_one(image.pixels[i], center, width, flip);
        }
        return out;
    }

    double sum = 0.0;
    std::uint16_t lo = image.pixels[0];
    std::uint16_t hi = image.pixels[0];
    for (std::uint16_t p : image.pixels) {
        sum += p;
        lo = std::min(lo, p);
        hi = std::max(hi, p);
    }
    if (lo == hi) {
        std::fill(out.pixels.begin(), out.pixels.end(), std::uint8_t{127});
        return out;
    }
    const double mean = sum / static_cast<double>(count);
    const double range = static_cast<double>(hi) - lo;
    for (std::size_t i = 0; i < count; ++i) {
        out.pixels[i] = window_one(image.pixels[i], mean, range, flip);
    }
    return out;
}

bool annotator_labels::marked_no_finding() const {
    if (!findings.empty()) return false;
    return std::all_of(global.begin(), global.end(),
                       [](global_label g) { return g == global_label::no_finding; });
}

conflict_partition filter_conflicts(std::vector<study_record> records) {
    conflict_partition out;
    for (auto& record : records) {
        const bool any_clear = std::any_of(record.annotators.begin(), record.annotators.end(),
                                           [](const auto& a) { return a.marked_no_finding(); });
        const bool any_positive =
            std::any_of(record.annotators.begin(), record.annotators.end(),
                        [](const auto& a) { return !a.marked_no_finding(); });
        if (any_clear && any_positive) {
            out.removed.push_back(std::move(record));
        } else {
            out.kept.push_back(std::move(record));
        }
    }
    return out;
}

export_result export_stage_records(const std::vector<study_record>& records, int stage,
                                   const export_options& options) {
    if (stage != 1 && stage != 2) {
        throw domain_error("export_stage_records: stage " + std::to_string(stage) +
                           " not in {1,2}");
    }
    std::vector<std::size_t> order(records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return records[a].study_id < records[b].study_id;
    });

    const std::string prompt = build_prompt(stage, options.prompt);
    struct slot {
        std::optional<stage_record> record;
        std::string skip;
    };
    auto slots = parallel_map_indexed<slot>(order.size(), options.jobs, [&](std::size_t k) {
        const study_record& rec = records[order[k]];
        slot s;
        const normalized_study norm = normalize_study(rec, options);
        if (!norm.skip_reason.empty()) {
            s.skip = norm.skip_reason;
            return s;
        }
        if (stage == 1) {
            if (!norm.findings.empty()) {
                s.record = stage_record{rec.image, 1, prompt,
                                        serialize_findings({norm.findings})};
            } else if (norm.no_finding_study) {
                s.record =
                    stage_record{rec.image, 1, prompt, std::string(kNoFindingsSentence)};
            } else {
                s.skip = "study " + rec.study_id + ": no grounded findings for stage 1";
            }
            return s;
        }
        if (norm.global.empty()) {
            s.skip = "study " + rec.study_id + ": no diagnosis labels for stage 2";
            return s;
        }
        s.record = stage_record{rec.image, 2, prompt,
                                serialize_diagnoses({norm.global})};
        return s;
    });

    export_result out;
    for (auto& s : slots) {
        if (s.record) out.records.push_back(std::move(*s.record));
        if (!s.skip.empty()) out.skipped.push_back(std::move(s.skip));
    }
    return out;
}

ground_truth_result build_eval_ground_truth(const std::vector<study_record>& records,
                                            const export_options& options) {
    std::vector<std::size_t> order(records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return records[a].study_id < records[b].study_id;
    });

    struct slot {
        std::optional<eval_ground_truth> record;
        std::string skip;
    };
    auto slots = parallel_map_indexed<slot>(order.size(), options.jobs, [&](std::size_t k) {
        const study_record& rec = records[order[k]];
        slot s;
        const normalized_study norm = normalize_study(rec, options);
        if (!norm.skip_reason.empty()) {
            s.skip = norm.skip_reason;
            return s;
        }
        s.record = eval_ground_truth{rec.study_id, norm.findings, norm.global};
        return s;
    });

    ground_truth_result out;
    for (auto& s : slots) {
        if (s.record) out.records.push_back(std::move(*s.record));
        if (!s.skip.empty()) out.skipped.push_back(std::move(s.skip));
    }
    return out;
}

std::vector<annotation_row> load_annotations(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open " + path.string());
    std::vector<annotation_row> rows;
    std::string line;
    std::size_t line_no = 0;

    if (path.extension() == ".jsonl") {
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            json doc;
            try {
                doc = json::parse(line);
            } catch (const json::exception& e) {
                throw data_error("annotations line " + std::to_string(line_no) + ": " + e.what());
            }
            rows.push_back(row_from_json(doc, line_no));
        }
        return rows;
    }

    // CSV with a header row.
    if (!std::getline(in, line)) throw data_error(path.string() + ": empty annotations file");
    ++line_no;
    const auto header = split_csv_line(line);
    auto column = [&](const std::string& name) {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) {
            throw data_error(path.string() + ": missing column '" + name + "'");
        }
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t c_image = column("image_id");
    const std::size_t c_rad = column("rad_id");
    const std::size_t c_class = column("class_name");
    const std::size_t c_x1 = column("x_min");
    const std::size_t c_y1 = column("y_min");
    const std::size_t c_x2 = column("x_max");
    const std::size_t c_y2 = column("y_max");

    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() < header.size()) {
            throw data_error("annotations line " + std::to_string(line_no) + ": expected " +
                             std::to_string(header.size()) + " cells, got " +
                             std::to_string(cells.size()));
        }
        annotation_row row;
        row.image_id = cells[c_image];
        row.annotator_id = cells[c_rad];
        row.class_name = cells[c_class];
        try {
            const auto x1 = parse_csv_number(cells[c_x1]);
            const auto y1 = parse_csv_number(cells[c_y1]);
            const auto x2 = parse_csv_number(cells[c_x2]);
            const auto y2 = parse_csv_number(cells[c_y2]);
            if (x1 && y1 && x2 && y2) row.box = pixel_box{*x1, *y1, *x2, *y2};
        } catch (const std::exception& e) {
            throw data_error("annotations line " + std::to_string(line_no) + ": " + e.what());
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<study_record> assemble_studies(const std::vector<annotation_row>& rows) {
    std::vector<study_record> records;
    std::map<std::string, std::size_t> by_study;
    for (const auto& row : rows) {
        auto [sit, inserted] = by_study.try_emplace(row.image_id, records.size());
        if (inserted) {
            records.push_back(study_record{row.image_id, row.image_id, image_dims{}, {}});
        }
        study_record& record = records[sit->second];
        auto ait = std::find_if(record.annotators.begin(), record.annotators.end(),
                                [&](const auto& a) { return a.annotator_id == row.annotator_id; });
        if (ait == record.annotators.end()) {
            record.annotators.push_back(annotator_labels{row.annotator_id, {}, {}});
            ait = std::prev(record.annotators.end());
        }

        if (const auto local = parse_local_label(row.class_name)) {
            if (!row.box) {
                throw data_error("study " + row.image_id + ": finding '" + row.class_name +
                                 "' without coordinates");
            }
            ait->findings.push_back({*local, *row.box});
            continue;
        }
        if (const auto global = parse_global_label(row.class_name)) {
            if (row.box) {
                throw data_error("study " + row.image_id + ": diagnosis '" + row.class_name +
                                 "' with coordinates");
            }
            ait->global.insert(*global);
            continue;
        }
        throw data_error("study " + row.image_id + ": unknown class name '" + row.class_name +
                         "'");
    }
    std::sort(records.begin(), records.end(),
              [](const auto& a, const auto& b) { return a.study_id < b.study_id; });
    return records;
}

void write_studies_jsonl(const std::filesystem::path& path,
                         const std::vector<study_record>& records) {
    std::ofstream out(path);
    if (!out) throw data_error("cannot write " + path.string());
    for (const auto& record : records) {
        ordered_json doc;
        doc["study_id"] = record.study_id;
        doc["image"] = record.image;
        doc["width"] = record.dims.width;
        doc["height"] = record.dims.height;
        auto& annotators = doc["annotators"] = ordered_json::array();
        for (const auto& a : record.annotators) {
            ordered_json ad;
            ad["id"] = a.annotator_id;
            auto& findings = ad["findings"] = ordered_json::array();
            for (const auto& f : a.findings) {
                findings.push_back({{"label", to_string(f.label)}, {"box", box_to_json(f.box)}});
            }
            auto& global = ad["global"] = ordered_json::array();
            for (auto g : a.global) global.push_back(to_string(g));
            annotators.push_back(std::move(ad));
        }
        out << doc.dump() << '\n';
    }
    if (!out) throw data_error("short write to " + path.string());
}

std::vector<study_record> read_studies_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open " + path.string());
    std::vector<study_record> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json doc;
        try {
            doc = json::parse(line);
        } catch (const json::exception& e) {
            throw data_error(path.string() + " line " + std::to_string(line_no) + ": " +
                             e.what());
        }
        try {
            study_record record;
            record.study_id = doc.at("study_id").get<std::string>();
            record.image = doc.value("image", record.study_id);
            record.dims.width = doc.at("width").get<int>();
            record.dims.height = doc.at("height").get<int>();
            for (const auto& ad : doc.at("annotators")) {
                annotator_labels a;
                a.annotator_id = ad.at("id").get<std::string>();
                for (const auto& fd : ad.value("findings", json::array())) {
                    const auto label = parse_local_label(fd.at("label").get<std::string>());
                    if (!label) {
                        throw data_error("unknown finding label '" +
                                         fd.at("label").get<std::string>() + "'");
                    }
                    a.findings.push_back({*label, box_from_json(fd.at("box"))});
                }
                for (const auto& gd : ad.value("global", json::array())) {
                    const auto label = parse_global_label(gd.get<std::string>());
                    if (!label) {
                        throw data_error("unknown diagnosis label '" + gd.get<std::string>() +
                                         "'");
                    }
                    a.global.insert(*label);
                }
                record.annotators.push_back(std::move(a));
            }
            if (record.annotators.empty()) {
                throw data_error("study " + record.study_id + ": no annotators");
            }
            records.push_back(std::move(record));
        } catch (const json::exception& e) {
            throw data_error(path.string() + " line " + std::to_string(line_no) + ": " +
                             e.what());
        }
    }
    return records;
}

}  // namespace cxrkit
