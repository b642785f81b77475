#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cxrkit/codec.hpp"
#include "cxrkit/dicom.hpp"
#include "cxrkit/errors.hpp"
#include "cxrkit/fusion.hpp"
#include "cxrkit/ingest.hpp"
#include "cxrkit/metrics.hpp"
#include "cxrkit/png.hpp"
#include "cxrkit/util.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct preprocess_config {
    std::string images_dir;
    std::string annotations;
    std::string out_dir;
    int jobs = 1;
};

struct dataset_config {
    std::string studies;
    std::string out;
    std::string gt_out;
    std::string removed_out;
    int stage = 1;
    bool clamp_boxes = false;
    double dedup_threshold = 0.5;
    std::string identifier;
    std::string image_open = "<Img>";
    std::string image_close = "</Img>";
    std::string image_placeholder = "<ImageFeature>";
    int jobs = 1;
};

struct eval_config {
    std::string gt;
    std::string pred;
    std::string task = "loc";
    std::string label_set;  // empty: per-task default
    std::vector<double> thresholds = {0.3, 0.4, 0.5};
    std::string out;
    bool json_stdout = false;
    int jobs = 1;
};

struct fusion_config {
    std::string z1, z2, w1, b1, w2, b2;
    std::size_t p1 = 196, p2 = 49;
    std::size_t dim = 4096;
    std::size_t hidden = 0;  // 0: same as dim
    std::uint64_t seed = 0;
    double epsilon = 1e-5;
};

struct parse_config {
    int stage = 1;
    std::string text;
};

int verbosity = 0;

void note(const std::string& message) {
    if (verbosity > 0) std::cerr << message << '\n';
}

void write_report(const ordered_json& report, const std::string& out_path, bool json_stdout) {
    if (!out_path.empty()) {
        std::ofstream out(out_path);
        if (!out) throw cxrkit::data_error("cannot write " + out_path);
        out << report.dump(2) << '\n';
    }
    if (json_stdout || out_path.empty()) {
        std::cout << report.dump(2) << '\n';
    }
}

int run_preprocess(const preprocess_config& cfg) {
    const auto rows = cxrkit::load_annotations(cfg.annotations);
    auto studies = cxrkit::assemble_studies(rows);

    std::vector<fs::path> inputs;
    for (const auto& entry : fs::directory_iterator(cfg.images_dir)) {
        if (!entry.is_regular_file()) continue;
        const auto ext = entry.path().extension();
        if (ext == ".dcm" || ext == ".dicom" || ext == ".json") inputs.push_back(entry.path());
    }
    std::sort(inputs.begin(), inputs.end());

    const fs::path out_dir(cfg.out_dir);
    fs::create_directories(out_dir / "images");

    struct decoded {
        std::string study_id;
        cxrkit::image_dims dims;
    };
    auto results = cxrkit::parallel_map_indexed<decoded>(
        inputs.size(), cfg.jobs, [&](std::size_t i) {
            const fs::path& path = inputs[i];
            std::string study_id;
            cxrkit::raw_image raw;
            if (path.extension() == ".json") {
                auto sidecar = cxrkit::read_raw_sidecar(path);
                study_id = sidecar.study_id;
                raw = std::move(sidecar.image);
            } else {
                study_id = path.stem().string();
                raw = cxrkit::read_dicom_file(path);
            }
            const auto image = cxrkit::normalize_pixels(raw);
            cxrkit::write_png_gray8(out_dir / "images" / (study_id + ".png"), image);
            return decoded{study_id, raw.dims};
        });

    std::map<std::string, cxrkit::image_dims> dims_by_id;
    for (const auto& d : results) {
        if (!dims_by_id.emplace(d.study_id, d.dims).second) {
            throw cxrkit::data_error("duplicate study id '" + d.study_id + "' among images");
        }
    }

    std::vector<cxrkit::study_record> kept;
    for (auto& study : studies) {
        const auto it = dims_by_id.find(study.study_id);
        if (it == dims_by_id.end()) {
            std::cerr << "warning: study " << study.study_id << " has annotations but no image\n";
            continue;
        }
        study.dims = it->second;
        study.image = "images/" + study.study_id + ".png";
        kept.push_back(std::move(study));
    }
    for (const auto& [id, dims] : dims_by_id) {
        (void)dims;
        const bool annotated = std::any_of(kept.begin(), kept.end(),
                                           [&](const auto& s) { return s.study_id == id; });
        if (!annotated) {
            std::cerr << "warning: image " << id << " has no annotations, skipped\n";
        }
    }

    cxrkit::write_studies_jsonl(out_dir / "studies.jsonl", kept);
    std::cerr << "preprocess: " << kept.size() << " studies, " << inputs.size() << " images\n";
    return 0;
}

int run_build_dataset(const dataset_config& cfg) {
    auto studies = cxrkit::read_studies_jsonl(cfg.studies);
    auto partition = cxrkit::filter_conflicts(std::move(studies));
    std::cerr << "build-dataset: " << partition.kept.size() << " studies kept, "
              << partition.removed.size() << " removed for label conflicts\n";
    if (!cfg.removed_out.empty()) {
        cxrkit::write_studies_jsonl(cfg.removed_out, partition.removed);
    }

    cxrkit::export_options options;
    options.bounds = cfg.clamp_boxes ? cxrkit::bounds_policy::clamp
                                     : cxrkit::bounds_policy::reject;
    options.dedup_threshold = cfg.dedup_threshold;
    options.jobs = cfg.jobs;
    options.prompt.identifier = cfg.identifier;
    options.prompt.image_open = cfg.image_open;
    options.prompt.image_close = cfg.image_close;
    options.prompt.image_placeholder = cfg.image_placeholder;

    const auto result = cxrkit::export_stage_records(partition.kept, cfg.stage, options);
    for (const auto& reason : result.skipped) note("skipped: " + reason);
    if (!result.skipped.empty()) {
        std::cerr << "build-dataset: " << result.skipped.size()
                  << " studies skipped (rerun with -v for detail)\n";
    }

    std::ofstream out(cfg.out);
    if (!out) throw cxrkit::data_error("cannot write " + cfg.out);
    for (const auto& record : result.records) {
        ordered_json doc;
        doc["image"] = record.image;
        doc["stage"] = record.stage;
        doc["prompt"] = record.prompt;
        doc["target"] = record.target;
        out << doc.dump() << '\n';
    }
    if (!out) throw cxrkit::data_error("short write to " + cfg.out);

    if (!cfg.gt_out.empty()) {
        const auto gt = cxrkit::build_eval_ground_truth(partition.kept, options);
        for (const auto& reason : gt.skipped) note("gt skipped: " + reason);
        std::ofstream gt_file(cfg.gt_out);
        if (!gt_file) throw cxrkit::data_error("cannot write " + cfg.gt_out);
        for (const auto& record : gt.records) {
            ordered_json doc;
            doc["id"] = record.study_id;
            auto& findings = doc["findings"] = ordered_json::array();
            for (const auto& f : record.findings) {
                findings.push_back(
                    {{"label", cxrkit::to_string(f.label)},
                     {"box", {f.box.x_min, f.box.y_min, f.box.x_max, f.box.y_max}}});
            }
            auto& global = doc["global"] = ordered_json::array();
            for (auto g : record.global) global.push_back(cxrkit::to_string(g));
            gt_file << doc.dump() << '\n';
        }
        if (!gt_file) throw cxrkit::data_error("short write to " + cfg.gt_out);
    }
    std::cerr << "build-dataset: wrote " << result.records.size() << " stage-" << cfg.stage
              << " records\n";
    return 0;
}

int run_eval(const eval_config& cfg) {
    cxrkit::eval_options options;
    if (cfg.task == "loc") {
        options.task = cxrkit::eval_task::localization;
    } else if (cfg.task == "cls") {
        options.task = cxrkit::eval_task::classification;
    } else if (cfg.task == "text") {
        options.task = cxrkit::eval_task::text;
    } else {
        throw CLI::ValidationError("--task", "must be loc, cls or text");
    }
    std::string label_set = cfg.label_set;
    if (label_set.empty()) {
        label_set = options.task == cxrkit::eval_task::classification ? "global" : "local";
    }
    if (label_set != "global" && label_set != "local") {
        throw CLI::ValidationError("--label-set", "must be global or local");
    }
    options.labels = label_set == "global" ? cxrkit::label_space::global_labels
                                           : cxrkit::label_space::local_labels;
    options.thresholds = cfg.thresholds;
    std::sort(options.thresholds.begin(), options.thresholds.end());
    for (double t : options.thresholds) {
        if (!(t > 0.0 && t < 1.0)) {
            throw CLI::ValidationError("--thresholds", "values must lie strictly in (0,1)");
        }
    }
    options.jobs = cfg.jobs;

    const auto report = cxrkit::evaluate_run(cfg.gt, cfg.pred, options);
    write_report(report, cfg.out, cfg.json_stdout);
    return 0;
}

int run_fusion_check(const fusion_config& cfg) {
    cxrkit::matrix z1, z2;
    cxrkit::projection_weights weights;
    const bool file_mode = !cfg.z1.empty();
    if (file_mode) {
        z1 = cxrkit::load_matrix(cfg.z1);
        z2 = cxrkit::load_matrix(cfg.z2);
        weights.w1 = cxrkit::load_matrix(cfg.w1);
        weights.w2 = cxrkit::load_matrix(cfg.w2);
        weights.b1 = cxrkit::load_matrix(cfg.b1).data;
        weights.b2 = cxrkit::load_matrix(cfg.b2).data;
    } else {
        const std::size_t hidden = cfg.hidden == 0 ? cfg.dim : cfg.hidden;
        z1 = cxrkit::seeded_matrix(cfg.p1, cxrkit::kEncoderDim, cfg.seed, -1.0, 1.0);
        z2 = cxrkit::seeded_matrix(cfg.p2, cxrkit::kEncoderDim, cfg.seed + 1, -1.0, 1.0);
        weights = cxrkit::projection_weights::seeded(
            cxrkit::kEncoderDim * cxrkit::kGroupSize, hidden, cfg.dim, cfg.seed + 2);
    }

    const auto concat = cxrkit::concat_rows(z1, z2);
    const auto grouped = cxrkit::group_tokens(concat);
    const auto output = cxrkit::project(grouped, weights);
    const double max_rel = cxrkit::check_gradient(weights, grouped, cfg.epsilon,
                                                  cxrkit::activation::gelu, cfg.seed);

    ordered_json report;
    auto shape = [](const cxrkit::matrix& m) {
        return ordered_json::array({m.rows, m.cols});
    };
    auto& shapes = report["shapes"] = ordered_json::object();
    shapes["z1"] = shape(z1);
    shapes["z2"] = shape(z2);
    shapes["concat"] = shape(concat);
    shapes["grouped"] = shape(grouped);
    shapes["w1"] = shape(weights.w1);
    shapes["w2"] = shape(weights.w2);
    shapes["output"] = shape(output);
    auto& grad = report["gradient_check"] = ordered_json::object();
    grad["epsilon"] = cfg.epsilon;
    grad["seed"] = cfg.seed;
    grad["max_relative_error"] = max_rel;
    grad["pass"] = max_rel < 1e-5;
    std::cout << report.dump(2) << '\n';
    return 0;
}

int run_parse(const parse_config& cfg) {
    auto emit = [&](const std::string& line) {
        ordered_json doc;
        if (cfg.stage == 1) {
            const auto parsed = cxrkit::parse_grounded_report(line);
            auto& findings = doc["findings"] = ordered_json::array();
            for (const auto& f : parsed.report.findings) {
                findings.push_back(
                    {{"label", cxrkit::to_string(f.label)},
                     {"box", {f.box.x_min, f.box.y_min, f.box.x_max, f.box.y_max}}});
            }
            doc["no_finding"] = parsed.report.no_finding();
            auto& warnings = doc["warnings"] = ordered_json::array();
            for (const auto& w : parsed.warnings) {
                warnings.push_back(
                    {{"kind", cxrkit::to_string(w.kind)}, {"message", w.message}});
            }
        } else {
            const auto parsed = cxrkit::parse_diagnoses(line);
            auto& labels = doc["labels"] = ordered_json::array();
            for (auto g : parsed.labels) labels.push_back(cxrkit::to_string(g));
            auto& warnings = doc["warnings"] = ordered_json::array();
            for (const auto& w : parsed.warnings) {
                warnings.push_back(
                    {{"kind", cxrkit::to_string(w.kind)}, {"message", w.message}});
            }
        }
        std::cout << doc.dump() << '\n';
    };

    if (!cfg.text.empty()) {
        emit(cfg.text);
        return 0;
    }
    std::string line;
    while (std::getline(std::cin, line)) emit(line);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"chest X-ray grounding toolkit: preprocessing, dataset building, evaluation"};
    app.require_subcommand(1);
    app.set_config("--config", "", "read defaults from a key=value file");
    app.add_flag("-v,--verbose", verbosity, "print per-record detail");

    preprocess_config pre;
    auto* cmd_pre = app.add_subcommand("preprocess", "decode images to 8-bit PNG + study JSONL");
    cmd_pre->add_option("--images", pre.images_dir, "directory of .dcm/.dicom or sidecar .json")
        ->required();
    cmd_pre->add_option("--annotations", pre.annotations, "annotation CSV or JSONL")->required();
    cmd_pre->add_option("--out", pre.out_dir, "output directory")->required();
    cmd_pre->add_option("--jobs", pre.jobs, "worker threads")->check(CLI::PositiveNumber);

    dataset_config ds;
    auto* cmd_ds = app.add_subcommand("build-dataset", "emit stage-1/2 training records");
    cmd_ds->add_option("--studies", ds.studies, "studies.jsonl from preprocess")->required();
    cmd_ds->add_option("--stage", ds.stage, "training stage")->check(CLI::Range(1, 2))
        ->required();
    cmd_ds->add_option("--out", ds.out, "output JSONL")->required();
    cmd_ds->add_option("--gt-out", ds.gt_out, "also write evaluation-ready ground truth JSONL");
    cmd_ds->add_option("--removed-out", ds.removed_out, "write conflict-removed studies");
    cmd_ds->add_option("--identifier", ds.identifier,
                       "identifier token override ([identify]/[vqa]/[grounding])");
    cmd_ds->add_option("--image-open", ds.image_open, "image delimiter open");
    cmd_ds->add_option("--image-close", ds.image_close, "image delimiter close");
    cmd_ds->add_option("--image-placeholder", ds.image_placeholder, "image feature placeholder");
    cmd_ds->add_flag("--clamp-boxes", ds.clamp_boxes,
                     "clamp out-of-bounds boxes instead of skipping the study");
    cmd_ds->add_option("--dedup-threshold", ds.dedup_threshold, "IoU threshold for dedup");
    cmd_ds->add_option("--jobs", ds.jobs, "worker threads")->check(CLI::PositiveNumber);

    eval_config ev;
    auto* cmd_ev = app.add_subcommand("eval", "score predictions against ground truth");
    cmd_ev->add_option("--gt", ev.gt, "ground truth JSONL")->required();
    cmd_ev->add_option("--pred", ev.pred, "prediction JSONL")->required();
    cmd_ev->add_option("--task", ev.task, "loc, cls or text")->required();
    cmd_ev->add_option("--thresholds", ev.thresholds, "IoU thresholds for --task loc")
        ->delimiter(',');
    cmd_ev->add_option("--label-set", ev.label_set,
                       "global or local (default: global for cls, local otherwise)");
    cmd_ev->add_option("--out", ev.out, "write report JSON to file");
    cmd_ev->add_flag("--json", ev.json_stdout, "print report JSON on stdout");
    cmd_ev->add_option("--jobs", ev.jobs, "worker threads")->check(CLI::PositiveNumber);

    fusion_config fc;
    auto* cmd_fc = app.add_subcommand("fusion-check",
                                      "forward-pass shape trace and gradient check");
    cmd_fc->add_option("--z1", fc.z1, "encoder-1 embedding matrix file");
    cmd_fc->add_option("--z2", fc.z2, "encoder-2 embedding matrix file");
    cmd_fc->add_option("--w1", fc.w1, "first linear layer weight file");
    cmd_fc->add_option("--b1", fc.b1, "first linear layer bias file");
    cmd_fc->add_option("--w2", fc.w2, "second linear layer weight file");
    cmd_fc->add_option("--b2", fc.b2, "second linear layer bias file");
    cmd_fc->add_option("--p1", fc.p1, "encoder-1 patch count for the seeded fixture");
    cmd_fc->add_option("--p2", fc.p2, "encoder-2 patch count for the seeded fixture");
    cmd_fc->add_option("--dim", fc.dim, "language-model width D");
    cmd_fc->add_option("--hidden", fc.hidden, "hidden width H (default: D)");
    cmd_fc->add_option("--seed", fc.seed, "fixture seed");
    cmd_fc->add_option("--epsilon", fc.epsilon, "finite-difference step");

    parse_config pc;
    auto* cmd_pc = app.add_subcommand("parse", "debug-parse model output lines");
    cmd_pc->add_option("--stage", pc.stage, "1: grounded findings, 2: diagnoses")
        ->check(CLI::Range(1, 2));
    cmd_pc->add_option("text", pc.text, "text to parse (default: stdin lines)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (cmd_pre->parsed()) return run_preprocess(pre);
        if (cmd_ds->parsed()) return run_build_dataset(ds);
        if (cmd_ev->parsed()) return run_eval(ev);
        if (cmd_fc->parsed()) return run_fusion_check(fc);
        if (cmd_pc->parsed()) return run_parse(pc);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const cxrkit::error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
