#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "cxrkit/codec.hpp"
#include "cxrkit/dicom.hpp"
#include "cxrkit/errors.hpp"
#include "cxrkit/fusion.hpp"
#include "cxrkit/geometry.hpp"
#include "cxrkit/ingest.hpp"
#include "cxrkit/metrics.hpp"

namespace py = pybind11;
using namespace cxrkit;

namespace {

norm_box box_from_tuple(const std::array<int, 4>& b) { return norm_box{b[0], b[1], b[2], b[3]}; }

std::array<int, 4> box_to_tuple(const norm_box& b) {
    return {b.x_min, b.y_min, b.x_max, b.y_max};
}

pixel_box pixel_box_from_tuple(const std::array<double, 4>& b) {
    return pixel_box{b[0], b[1], b[2], b[3]};
}

matrix matrix_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw shape_error("expected a 2-D array");
    matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
    std::copy(a.data(), a.data() + m.data.size(), m.data.begin());
    return m;
}

py::array_t<double> matrix_to_array(const matrix& m) {
    py::array_t<double> out({m.rows, m.cols});
    std::copy(m.data.begin(), m.data.end(), out.mutable_data());
    return out;
}

projection_weights weights_from_arrays(const py::array_t<double>& w1, const py::array_t<double>& b1,
                                       const py::array_t<double>& w2,
                                       const py::array_t<double>& b2) {
    projection_weights w;
    w.w1 = matrix_from_array(w1);
    w.w2 = matrix_from_array(w2);
    auto vec = [](const py::array_t<double>& a) {
        py::array_t<double, py::array::c_style | py::array::forcecast> flat(a);
        return std::vector<double>(flat.data(), flat.data() + flat.size());
    };
    w.b1 = vec(b1);
    w.b2 = vec(b2);
    return w;
}

py::list findings_to_list(const std::vector<finding>& findings) {
    py::list out;
    for (const auto& f : findings) {
        out.append(py::make_tuple(std::string(to_string(f.label)), box_to_tuple(f.box)));
    }
    return out;
}

std::vector<finding> findings_from_list(const py::iterable& items) {
    std::vector<finding> out;
    for (const auto& item : items) {
        auto pair = item.cast<std::pair<std::string, std::array<int, 4>>>();
        const auto label = parse_local_label(pair.first);
        if (!label) throw data_error("unknown finding label '" + pair.first + "'");
        out.push_back({*label, box_from_tuple(pair.second)});
    }
    return out;
}

py::list warnings_to_list(const std::vector<parse_warning>& warnings) {
    py::list out;
    for (const auto& w : warnings) {
        out.append(py::make_tuple(std::string(to_string(w.kind)), w.message));
    }
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "chest X-ray grounding toolkit: codecs, geometry, preprocessing, metrics";

    py::register_exception<error>(m, "CxrkitError", PyExc_RuntimeError);

    // ---- labels ----
    m.def("local_labels", [] {
        std::vector<std::string> out;
        for (auto l : all_local_labels()) out.emplace_back(to_string(l));
        return out;
    });
    m.def("global_labels", [] {
        std::vector<std::string> out;
        for (auto g : all_global_labels()) out.emplace_back(to_string(g));
        return out;
    });

    // ---- geometry ----
    m.def(
        "iou",
        [](const std::array<double, 4>& a, const std::array<double, 4>& b) {
            return iou(pixel_box_from_tuple(a), pixel_box_from_tuple(b));
        },
        py::arg("a"), py::arg("b"), "IoU of two (x1,y1,x2,y2) boxes");
    m.def(
        "normalize_box",
        [](const std::array<double, 4>& box, int width, int height, bool clamp) {
            return box_to_tuple(normalize_box(pixel_box_from_tuple(box), image_dims{width, height},
                                              clamp ? bounds_policy::clamp
                                                    : bounds_policy::reject));
        },
        py::arg("box"), py::arg("width"), py::arg("height"), py::arg("clamp") = false);
    m.def(
        "denormalize_box",
        [](const std::array<int, 4>& box, int width, int height) {
            const auto out = denormalize_box(box_from_tuple(box), image_dims{width, height});
            return std::array<double, 4>{out.x_min, out.y_min, out.x_max, out.y_max};
        },
        py::arg("box"), py::arg("width"), py::arg("height"));
    m.def(
        "dedup_findings",
        [](const py::iterable& findings, double threshold) {
            return findings_to_list(dedup_findings(findings_from_list(findings), threshold));
        },
        py::arg("findings"), py::arg("threshold") = 0.5,
        "deduplicate (label, (x1,y1,x2,y2)) findings by IoU clustering");

    // ---- codec ----
    m.def(
        "serialize_findings",
        [](const py::iterable& findings) {
            return serialize_findings({findings_from_list(findings)});
        },
        py::arg("findings"));
    m.def(
        "parse_grounded_report",
        [](const std::string& text) {
            const auto parsed = parse_grounded_report(text);
            return py::make_tuple(findings_to_list(parsed.report.findings),
                                  warnings_to_list(parsed.warnings));
        },
        py::arg("text"), "returns (findings, warnings)");
    m.def(
        "serialize_diagnoses",
        [](const std::vector<std::string>& labels) {
            diagnosis_set set;
            for (const auto& name : labels) {
                const auto label = parse_global_label(name);
                if (!label) throw data_error("unknown diagnosis label '" + name + "'");
                set.labels.insert(*label);
            }
            return serialize_diagnoses(set);
        },
        py::arg("labels"));
    m.def(
        "parse_diagnoses",
        [](const std::string& text) {
            const auto parsed = parse_diagnoses(text);
            std::vector<std::string> labels;
            for (auto g : parsed.labels) labels.emplace_back(to_string(g));
            return py::make_tuple(labels, warnings_to_list(parsed.warnings));
        },
        py::arg("text"), "returns (labels, warnings)");
    m.def("strip_localization", &strip_localization, py::arg("text"),
          py::arg("strip_tags") = true);
    m.def(
        "build_prompt",
        [](int stage, const std::string& identifier, const std::string& instruction,
           const std::string& image_open, const std::string& image_placeholder,
           const std::string& image_close) {
            prompt_template tpl;
            tpl.identifier = identifier;
            tpl.instruction = instruction;
            tpl.image_open = image_open;
            tpl.image_placeholder = image_placeholder;
            tpl.image_close = image_close;
            return build_prompt(stage, tpl);
        },
        py::arg("stage"), py::arg("identifier") = "", py::arg("instruction") = "",
        py::arg("image_open") = "<Img>", py::arg("image_placeholder") = "<ImageFeature>",
        py::arg("image_close") = "</Img>");

    // ---- ingest ----
    m.def(
        "normalize_pixels",
        [](const py::array_t<std::uint16_t, py::array::c_style | py::array::forcecast>& pixels,
           const std::string& interp, std::optional<double> center,
           std::optional<double> width) {
            if (pixels.ndim() != 2) throw shape_error("expected a 2-D pixel array");
            raw_image raw;
            raw.dims = image_dims{static_cast<int>(pixels.shape(1)),
                                  static_cast<int>(pixels.shape(0))};
            raw.pixels.assign(pixels.data(), pixels.data() + pixels.size());
            if (interp == "MONOCHROME1") {
                raw.interp = photometric::monochrome1;
            } else if (interp == "MONOCHROME2") {
                raw.interp = photometric::monochrome2;
            } else {
                throw format_error("unsupported photometric '" + interp + "'");
            }
            raw.window_center = center;
            raw.window_width = width;
            const auto image = normalize_pixels(raw);
            py::array_t<std::uint8_t> out(
                {static_cast<std::size_t>(image.dims.height),
                 static_cast<std::size_t>(image.dims.width)});
            std::copy(image.pixels.begin(), image.pixels.end(), out.mutable_data());
            return out;
        },
        py::arg("pixels"), py::arg("photometric") = "MONOCHROME2",
        py::arg("window_center") = std::nullopt, py::arg("window_width") = std::nullopt);
    m.def(
        "read_dicom",
        [](const py::bytes& data) {
            const std::string_view view(data);
            const auto raw = read_dicom(std::span<const std::uint8_t>(
                reinterpret_cast<const std::uint8_t*>(view.data()), view.size()));
            py::dict out;
            out["width"] = raw.dims.width;
            out["height"] = raw.dims.height;
            out["photometric"] = std::string(to_string(raw.interp));
            out["bits_allocated"] = raw.bits_allocated;
            out["window_center"] = raw.window_center;
            out["window_width"] = raw.window_width;
            py::array_t<std::uint16_t> pixels(
                {static_cast<std::size_t>(raw.dims.height),
                 static_cast<std::size_t>(raw.dims.width)});
            std::copy(raw.pixels.begin(), raw.pixels.end(), pixels.mutable_data());
            out["pixels"] = pixels;
            return out;
        },
        py::arg("data"));

    // ---- fusion ----
    m.def("gelu", [](double x) { return gelu(x); }, py::arg("x"));
    m.def(
        "fused_forward",
        [](const py::array_t<double>& z1, const py::array_t<double>& z2,
           const py::array_t<double>& w1, const py::array_t<double>& b1,
           const py::array_t<double>& w2, const py::array_t<double>& b2, bool pad_incomplete) {
            group_options options;
            options.pad_incomplete = pad_incomplete;
            return matrix_to_array(fused_forward(matrix_from_array(z1), matrix_from_array(z2),
                                                 weights_from_arrays(w1, b1, w2, b2), options));
        },
        py::arg("z1"), py::arg("z2"), py::arg("w1"), py::arg("b1"), py::arg("w2"), py::arg("b2"),
        py::arg("pad_incomplete") = false);
    m.def(
        "group_tokens",
        [](const py::array_t<double>& z, bool pad_incomplete) {
            group_options options;
            options.pad_incomplete = pad_incomplete;
            return matrix_to_array(group_tokens(matrix_from_array(z), options));
        },
        py::arg("z"), py::arg("pad_incomplete") = false);
    m.def(
        "check_gradient",
        [](const py::array_t<double>& q, const py::array_t<double>& w1,
           const py::array_t<double>& b1, const py::array_t<double>& w2,
           const py::array_t<double>& b2, double epsilon, std::uint64_t seed) {
            return check_gradient(weights_from_arrays(w1, b1, w2, b2), matrix_from_array(q),
                                  epsilon, activation::gelu, seed);
        },
        py::arg("q"), py::arg("w1"), py::arg("b1"), py::arg("w2"), py::arg("b2"),
        py::arg("epsilon") = 1e-5, py::arg("seed") = 0);

    // ---- metrics ----
    m.def(
        "bleu",
        [](const std::vector<std::pair<std::string, std::string>>& pairs) {
            std::vector<text_pair> tp;
            for (const auto& [c, r] : pairs) tp.push_back({c, r});
            return bleu(tp);
        },
        py::arg("pairs"), "corpus BLEU-1..4 over (candidate, reference) pairs");
    m.def(
        "rouge",
        [](const std::vector<std::pair<std::string, std::string>>& pairs) {
            std::vector<text_pair> tp;
            for (const auto& [c, r] : pairs) tp.push_back({c, r});
            const auto scores = rouge(tp);
            py::dict out;
            out["rouge-1"] = scores.rouge1;
            out["rouge-2"] = scores.rouge2;
            out["rouge-l"] = scores.rouge_l;
            out["rouge-lsum"] = scores.rouge_lsum;
            return out;
        },
        py::arg("pairs"));
    m.def(
        "meteor",
        [](const std::vector<std::pair<std::string, std::string>>& pairs) {
            std::vector<text_pair> tp;
            for (const auto& [c, r] : pairs) tp.push_back({c, r});
            return meteor(tp);
        },
        py::arg("pairs"));
    m.def(
        "cider",
        [](const std::vector<std::pair<std::string, std::string>>& pairs) {
            std::vector<text_pair> tp;
            for (const auto& [c, r] : pairs) tp.push_back({c, r});
            return cider(tp).value;
        },
        py::arg("pairs"));
    m.def(
        "classification_report",
        [](const std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>>&
               samples,
           const std::string& space) {
            const bool global_space = space == "global";
            if (!global_space && space != "local") {
                throw domain_error("label space must be global or local");
            }
            std::vector<std::string> vocab;
            if (global_space) {
                for (auto g : all_global_labels()) vocab.emplace_back(to_string(g));
            } else {
                for (auto l : all_local_labels()) vocab.emplace_back(to_string(l));
            }
            auto to_indices = [&](const std::vector<std::string>& names) {
                std::set<std::size_t> out;
                for (const auto& name : names) {
                    if (global_space) {
                        const auto label = parse_global_label(name);
                        if (!label) throw data_error("unknown label '" + name + "'");
                        out.insert(static_cast<std::size_t>(*label));
                    } else {
                        const auto label = parse_local_label(name);
                        if (!label) throw data_error("unknown label '" + name + "'");
                        out.insert(static_cast<std::size_t>(*label));
                    }
                }
                return out;
            };
            std::vector<label_sample> converted;
            converted.reserve(samples.size());
            for (const auto& [truth, predicted] : samples) {
                converted.push_back({to_indices(truth), to_indices(predicted)});
            }
            const auto report = classification_report(converted, vocab);
            auto row = [](const class_metrics& m) {
                py::dict out;
                out["precision"] = m.precision;
                out["recall"] = m.recall;
                out["f1"] = m.f1;
                out["support"] = m.support;
                return out;
            };
            py::dict out;
            py::dict per_class;
            for (std::size_t c = 0; c < vocab.size(); ++c) {
                per_class[vocab[c].c_str()] = row(report.per_class[c]);
            }
            out["per_class"] = per_class;
            out["micro avg"] = row(report.micro);
            out["macro avg"] = row(report.macro);
            out["weighted avg"] = row(report.weighted);
            out["samples avg"] = row(report.samples);
            return out;
        },
        py::arg("samples"), py::arg("label_space") = "global",
        "multilabel report over (truth_labels, predicted_labels) pairs");
    m.def(
        "evaluate_run",
        [](const std::filesystem::path& gt, const std::filesystem::path& pred,
           const std::string& task, const std::vector<double>& thresholds,
           const std::string& label_set, int jobs) {
            eval_options options;
            if (task == "loc") {
                options.task = eval_task::localization;
            } else if (task == "cls") {
                options.task = eval_task::classification;
            } else if (task == "text") {
                options.task = eval_task::text;
            } else {
                throw domain_error("task must be loc, cls or text");
            }
            std::string space = label_set;
            if (space.empty()) {
                space = options.task == eval_task::classification ? "global" : "local";
            }
            options.labels = space == "global" ? label_space::global_labels
                                               : label_space::local_labels;
            if (!thresholds.empty()) options.thresholds = thresholds;
            options.jobs = jobs;
            const auto report = evaluate_run(gt, pred, options);
            auto json_module = py::module_::import("json");
            return json_module.attr("loads")(report.dump());
        },
        py::arg("gt"), py::arg("pred"), py::arg("task") = "loc",
        py::arg("thresholds") = std::vector<double>{}, py::arg("label_set") = "",
        py::arg("jobs") = 1, "run a full evaluation, returning the report as a dict");

#ifdef CXRKIT_VERSION
    m.attr("__version__") = CXRKIT_VERSION;
#else
    m.attr("__version__") = "dev";
#endif
}
