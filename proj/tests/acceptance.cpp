// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Criteria with a runtime budget are timed.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "cxrkit/codec.hpp"
#include "cxrkit/errors.hpp"
#include "cxrkit/fusion.hpp"
#include "cxrkit/geometry.hpp"
#include "cxrkit/ingest.hpp"
#include "cxrkit/metrics.hpp"
#include "support/dicom_builder.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using namespace cxrkit;

namespace {

struct check_failure {
    std::string message;
};

void expect(bool condition, const std::string& message) {
    if (!condition) throw check_failure{message};
}

void expect_near(double actual, double wanted, double tolerance, const std::string& what) {
    if (!(std::abs(actual - wanted) <= tolerance)) {
        std::ostringstream os;
        os << what << ": got " << actual << ", wanted " << wanted << " +/- " << tolerance;
        throw check_failure{os.str()};
    }
}

int failures = 0;

void criterion(int number, const std::string& title, double budget_seconds,
               const std::function<void()>& body) {
    const auto start = std::chrono::steady_clock::now();
    std::string error;
    try {
        body();
    } catch (const check_failure& f) {
        error = f.message;
    } catch (const std::exception& e) {
        error = std::string("exception: ") + e.what();
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (error.empty() && budget_seconds > 0 && elapsed > budget_seconds) {
        std::ostringstream os;
        os << "runtime " << elapsed << "s exceeded budget " << budget_seconds << "s";
        error = os.str();
    }
    if (error.empty()) {
        std::printf("[PASS] criterion %2d: %s (%.2fs)\n", number, title.c_str(), elapsed);
    } else {
        ++failures;
        std::printf("[FAIL] criterion %2d: %s (%.2fs)\n       %s\n", number, title.c_str(),
                    elapsed, error.c_str());
    }
    std::fflush(stdout);
}

fs::path g_exe_dir;

fs::path scratch_dir(const std::string& tag) {
    const fs::path dir = fs::temp_directory_path() /
                         ("cxrkit_acceptance_" + std::to_string(getpid()) + "_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    expect(in.good(), "cannot read " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_file(const fs::path& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary);
    out << contents;
    expect(out.good(), "cannot write " + path.string());
}

int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd =
        (g_exe_dir / "cxrkit").string() + " " + args + " >" + log.string() + " 2>&1";
    return std::system(cmd.c_str());
}

// ---- criterion bodies -------------------------------------------------------

void codec_fidelity() {
    struct fixture {
        std::string text;
        std::vector<finding> expected;
    };
    const std::vector<fixture> fixtures = {
        {"Local diseases of this chest radiograph are <p>Aortic enlargement</p> "
         "{<56><17><67><28>},<p>Cardiomegaly</p> {<38><48><85><65>}.",
         {{local_label::aortic_enlargement, {56, 17, 67, 28}},
          {local_label::cardiomegaly, {38, 48, 85, 65}}}},
        {"Local diseases of this chest radiograph are <p>Calcification</p> "
         "{<60><21><66><29>},<p>Cardiomegaly</p> {<35><50><86><67>}.",
         {{local_label::calcification, {60, 21, 66, 29}},
          {local_label::cardiomegaly, {35, 50, 86, 67}}}},
        {"Local diseases of this chest radiograph are <p>Aortic enlargement</p> "
         "{<48><25><60><36>},<p>Cardiomegaly</p> {<42><51><74><62>}.",
         {{local_label::aortic_enlargement, {48, 25, 60, 36}},
          {local_label::cardiomegaly, {42, 51, 74, 62}}}},
        {"Local diseases of this chest radiograph are <p>Cardiomegaly</p> "
         "{<38><48><75><65>},<p>Aortic enlargement</p> {<39><27><64><48>}.",
         {{local_label::cardiomegaly, {38, 48, 75, 65}},
          {local_label::aortic_enlargement, {39, 27, 64, 48}}}},
    };
    std::size_t boxes = 0;
    for (const auto& f : fixtures) {
        const auto parsed = parse_grounded_report(f.text);
        expect(parsed.warnings.empty(), "unexpected warnings for: " + f.text);
        expect(parsed.report.findings == f.expected, "wrong findings for: " + f.text);
        boxes += parsed.report.findings.size();
        expect(serialize_findings(parsed.report) == f.text,
               "re-serialization not byte-identical for: " + f.text);
    }
    expect(boxes == 8, "expected 8 boxes across the four strings");
}

void geometry_oracle() {
    gen::rng r(1);
    for (int k = 0; k < 10000; ++k) {
        const int ax = r.int_in(0, 199), ay = r.int_in(0, 199);
        const oracle::int_box ia{ax, ay, r.int_in(ax + 1, 200), r.int_in(ay + 1, 200)};
        const int bx = r.int_in(0, 199), by = r.int_in(0, 199);
        const oracle::int_box ib{bx, by, r.int_in(bx + 1, 200), r.int_in(by + 1, 200)};
        const pixel_box a{double(ia.x_min), double(ia.y_min), double(ia.x_max),
                          double(ia.y_max)};
        const pixel_box b{double(ib.x_min), double(ib.y_min), double(ib.x_max),
                          double(ib.y_max)};
        const double lib = iou(a, b);
        const double ref = oracle::rasterized_iou(ia, ib);
        if (std::abs(lib - ref) > 1e-9) {
            std::ostringstream os;
            os << "pair " << k << ": iou " << lib << " vs oracle " << ref;
            throw check_failure{os.str()};
        }
    }
}

void dedup_properties() {
    gen::rng r(2);
    for (int k = 0; k < 1000; ++k) {
        const auto input = gen::findings(r, r.int_in(0, 12), 4);
        const auto once = dedup_findings(input);
        expect(dedup_findings(once) == once, "dedup not idempotent");

        std::size_t cursor = 0;
        for (const auto& f : once) {
            bool found = false;
            while (cursor < input.size()) {
                if (input[cursor++] == f) {
                    found = true;
                    break;
                }
            }
            expect(found, "survivor not a subset of the input in input order");
        }
        // label partition: distinct labels never merge, so every label class
        // present in the input survives
        std::set<local_label> in_labels, out_labels;
        for (const auto& f : input) in_labels.insert(f.label);
        for (const auto& f : once) out_labels.insert(f.label);
        expect(in_labels == out_labels, "a label class vanished during dedup");
    }

    const std::vector<finding> triple = {
        {local_label::cardiomegaly, {10, 10, 50, 50}},
        {local_label::cardiomegaly, {12, 12, 52, 52}},
        {local_label::cardiomegaly, {11, 11, 51, 51}},
    };
    expect(dedup_findings(triple).size() == 1,
           "three pairwise-overlapping boxes must collapse to one");
}

void preprocessing_bit_exactness() {
    raw_image image;
    image.dims = {3, 1};
    image.window_center = 2048.0;
    image.window_width = 4096.0;
    image.pixels = {2048, 6144, 6144};
    image.interp = photometric::monochrome2;
    const image8 mono2 = normalize_pixels(image);
    expect(mono2.pixels[0] == 127, "p = center must map to 127");
    expect(mono2.pixels[1] == 255, "p = center + width must map to 255");
    image.interp = photometric::monochrome1;
    const image8 mono1 = normalize_pixels(image);
    expect(mono1.pixels[1] == 0, "MONOCHROME1 p = center + width must map to 0");

    // 16-bit synthetic gradient vs a straight-line reimplementation
    raw_image gradient;
    gradient.dims = {256, 64};
    gradient.pixels.resize(256 * 64);
    for (std::size_t i = 0; i < gradient.pixels.size(); ++i) {
        gradient.pixels[i] = static_cast<std::uint16_t>((i * 293) % 65536);
    }
    gradient.window_center = 32768.0;
    gradient.window_width = 30000.0;
    for (photometric interp : {photometric::monochrome2, photometric::monochrome1}) {
        gradient.interp = interp;
        const image8 out = normalize_pixels(gradient);
        const double flip = interp == photometric::monochrome1 ? -1.0 : 1.0;
        for (std::size_t i = 0; i < gradient.pixels.size(); ++i) {
            double n = (double(gradient.pixels[i]) - 32768.0) / 30000.0;
            if (n > 1.0) n = 1.0;
            if (n < -1.0) n = -1.0;
            const std::uint8_t want = static_cast<std::uint8_t>(n * flip * 127.5 + 127.5);
            if (out.pixels[i] != want) {
                std::ostringstream os;
                os << "pixel " << i << ": got " << int(out.pixels[i]) << ", want "
                   << int(want);
                throw check_failure{os.str()};
            }
        }
    }
}

void fusion_shape_algebra() {
    const matrix z1 = seeded_matrix(196, kEncoderDim, 10, -1.0, 1.0);
    const matrix z2 = seeded_matrix(49, kEncoderDim, 11, -1.0, 1.0);
    const projection_weights big =
        projection_weights::seeded(kEncoderDim * kGroupSize, 4096, 4096, 12);
    const matrix out = fused_forward(z1, z2, big);
    expect(out.rows == 49 && out.cols == 4096, "pipeline must yield a 49x4096 output");

    bool rejected = false;
    try {
        group_tokens(seeded_matrix(7, 4, 13, -1, 1));
    } catch (const domain_error&) {
        rejected = true;
    }
    expect(rejected, "strict mode must reject P mod 5 != 0");

    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const std::size_t m = 1 + seed % 4;
        const std::size_t h = 1 + seed % 8;
        const std::size_t d = 1 + seed % 4;
        const std::size_t k = 5 + seed % 11;
        const projection_weights w = projection_weights::seeded(k, h, d, seed * 13 + 1);
        const matrix q = seeded_matrix(m, k, seed * 17 + 3, -1.0, 1.0);
        const double err = check_gradient(w, q, 1e-5, activation::gelu, seed);
        if (!(err < 1e-5)) {
            std::ostringstream os;
            os << "seed " << seed << ": gradient relative error " << err;
            throw check_failure{os.str()};
        }
    }
}

void metric_fixed_points() {
    const fs::path dir = scratch_dir("fixed_points");
    // 10 studies, distinct findings, all six diagnoses supported
    gen::rng r(3);
    std::ostringstream gt;
    const char* globals[10] = {"COPD",          "Lung tumor", "Pneumonia", "Tuberculosis",
                               "Other disease", "No finding", "Pneumonia", "COPD",
                               "Tuberculosis",  "Other disease"};
    for (int i = 0; i < 10; ++i) {
        nlohmann::ordered_json doc;
        doc["id"] = "s" + std::to_string(i);
        auto& findings = doc["findings"] = nlohmann::ordered_json::array();
        const int n = 2 + i % 3;
        for (int f = 0; f < n; ++f) {
            const auto fin = gen::finding(r);
            findings.push_back(
                {{"label", to_string(fin.label)},
                 {"box", {fin.box.x_min, fin.box.y_min, fin.box.x_max, fin.box.y_max}}});
        }
        doc["global"] = {globals[i]};
        gt << doc.dump() << '\n';
    }
    write_file(dir / "gt.jsonl", gt.str());

    eval_options loc;
    loc.task = eval_task::localization;
    const auto loc_report = evaluate_run(dir / "gt.jsonl", dir / "gt.jsonl", loc);
    for (const char* t : {"0.3", "0.4", "0.5"}) {
        expect(loc_report["metrics"][std::string("accuracy@") + t].get<double>() == 1.0,
               std::string("accuracy@") + t + " must be exactly 1.0 for pred = gt");
    }

    eval_options cls;
    cls.task = eval_task::classification;
    const auto cls_report = evaluate_run(dir / "gt.jsonl", dir / "gt.jsonl", cls);
    for (const char* avg : {"micro avg", "macro avg", "weighted avg", "samples avg"}) {
        for (const char* metric : {"precision", "recall", "f1"}) {
            expect(cls_report["metrics"][avg][metric].get<double>() == 1.0,
                   std::string(avg) + " " + metric + " must be 1.0 for pred = gt");
        }
    }

    eval_options text;
    text.task = eval_task::text;
    const auto text_report = evaluate_run(dir / "gt.jsonl", dir / "gt.jsonl", text);
    for (const char* key : {"rouge-1", "rouge-2", "rouge-l", "rouge-lsum", "bleu-1", "bleu-2",
                            "bleu-3", "bleu-4"}) {
        expect(text_report["metrics"][key].get<double>() == 1.0,
               std::string(key) + " must be 1.0 for pred = gt");
    }
    // METEOR's fragmentation penalty is positive even on identical text
    expect(text_report["metrics"]["meteor"].get<double>() > 0.999,
           "meteor must approach 1.0 for pred = gt");
    expect(text_report["metrics"]["cider"].get<double>() > 9.0,
           "cider must exceed 9 on a 10-pair identical corpus");

    // Accuracy@t non-increasing in t on 100 random runs
    gen::rng rr(4);
    for (int run = 0; run < 100; ++run) {
        std::vector<eval_pair> pairs;
        const int n = rr.int_in(1, 5);
        for (int i = 0; i < n; ++i) {
            eval_pair pair;
            pair.id = "p" + std::to_string(i);
            pair.gt_findings = gen::findings(rr, rr.int_in(1, 4), 3);
            pair.pred_text = serialize_findings({gen::findings(rr, rr.int_in(0, 4), 3)});
            pairs.push_back(std::move(pair));
        }
        double prev = 1.0;
        for (double t : {0.1, 0.3, 0.5, 0.7, 0.9}) {
            const double acc = accuracy_at_iou(pairs, t);
            expect(acc <= prev + 1e-15, "accuracy must be non-increasing in the threshold");
            prev = acc;
        }
    }

    // BLEU-1 >= ... >= BLEU-4 on fuzzed corpora
    gen::rng rb(5);
    for (int run = 0; run < 200; ++run) {
        std::vector<text_pair> pairs;
        const int n = rb.int_in(1, 6);
        for (int i = 0; i < n; ++i) {
            pairs.push_back({gen::sentence(rb, 1, 15), gen::sentence(rb, 1, 15)});
        }
        const auto scores = bleu(pairs);
        expect(scores[0] >= scores[1] && scores[1] >= scores[2] && scores[2] >= scores[3],
               "cumulative BLEU must be non-increasing in n");
    }
    fs::remove_all(dir);
}

void classification_oracle() {
    gen::rng r(6);
    std::vector<std::string> vocab;
    for (auto g : all_global_labels()) vocab.emplace_back(to_string(g));
    for (int k = 0; k < 1000; ++k) {
        const int n = r.int_in(1, 10);
        std::vector<label_sample> samples(n);
        for (auto& s : samples) {
            for (std::size_t c = 0; c < 6; ++c) {
                if (r.chance(0.35)) s.truth.insert(c);
                if (r.chance(0.35)) s.predicted.insert(c);
            }
        }
        const auto report = classification_report(samples, vocab);

        // brute-force recount
        std::vector<long> tp(6, 0), fp(6, 0), fn(6, 0);
        double sp = 0, sr = 0, sf = 0;
        for (const auto& s : samples) {
            long inter = 0;
            for (std::size_t c = 0; c < 6; ++c) {
                const bool t = s.truth.contains(c);
                const bool p = s.predicted.contains(c);
                tp[c] += t && p;
                fp[c] += !t && p;
                fn[c] += t && !p;
                inter += t && p;
            }
            const double p = s.predicted.empty() ? 0.0 : double(inter) / s.predicted.size();
            const double rr = s.truth.empty() ? 0.0 : double(inter) / s.truth.size();
            sp += p;
            sr += rr;
            sf += p + rr > 0 ? 2 * p * rr / (p + rr) : 0.0;
        }
        auto div = [](double a, double b) { return b > 0 ? a / b : 0.0; };
        double mp = 0, mr = 0, mf = 0, wp = 0, wr = 0, wf = 0;
        long tps = 0, fps = 0, fns = 0, support = 0;
        for (std::size_t c = 0; c < 6; ++c) {
            const double pc = div(tp[c], tp[c] + fp[c]);
            const double rc = div(tp[c], tp[c] + fn[c]);
            const double fc = div(2 * pc * rc, pc + rc);
            expect_near(report.per_class[c].precision, pc, 1e-12, "per-class precision");
            expect_near(report.per_class[c].recall, rc, 1e-12, "per-class recall");
            expect_near(report.per_class[c].f1, fc, 1e-12, "per-class f1");
            mp += pc;
            mr += rc;
            mf += fc;
            wp += pc * (tp[c] + fn[c]);
            wr += rc * (tp[c] + fn[c]);
            wf += fc * (tp[c] + fn[c]);
            tps += tp[c];
            fps += fp[c];
            fns += fn[c];
            support += tp[c] + fn[c];
        }
        expect_near(report.micro.precision, div(tps, tps + fps), 1e-12, "micro precision");
        expect_near(report.micro.recall, div(tps, tps + fns), 1e-12, "micro recall");
        expect_near(report.macro.precision, mp / 6, 1e-12, "macro precision");
        expect_near(report.macro.recall, mr / 6, 1e-12, "macro recall");
        expect_near(report.macro.f1, mf / 6, 1e-12, "macro f1");
        expect_near(report.weighted.precision, div(wp, support), 1e-12, "weighted precision");
        expect_near(report.weighted.f1, div(wf, support), 1e-12, "weighted f1");
        expect_near(report.samples.precision, sp / n, 1e-12, "samples precision");
        expect_near(report.samples.recall, sr / n, 1e-12, "samples recall");
        expect_near(report.samples.f1, sf / n, 1e-12, "samples f1");
    }

    // report layout: 6 class rows + the 4 averaging rows
    const fs::path dir = scratch_dir("cls_layout");
    write_file(dir / "gt.jsonl", R"({"id":"a","findings":[],"global":["Pneumonia"]})" "\n");
    write_file(dir / "pred.jsonl",
               R"({"id":"a","text":"Global diseases of this chest radiograph are Pneumonia."})"
               "\n");
    eval_options cls;
    cls.task = eval_task::classification;
    const auto report = evaluate_run(dir / "gt.jsonl", dir / "pred.jsonl", cls);
    expect(report["per_class"].size() == 6, "report must have the 6 class rows");
    expect(report["metrics"].size() == 4, "report must have the 4 averaging rows");
    std::vector<std::string> class_order;
    for (const auto& [name, row] : report["per_class"].items()) {
        (void)row;
        class_order.push_back(name);
    }
    const std::vector<std::string> canonical = {"COPD",         "Lung tumor",    "Pneumonia",
                                                "Tuberculosis", "Other disease", "No finding"};
    expect(class_order == canonical, "class rows must follow canonical order");
    fs::remove_all(dir);
}

void text_hand_fixtures() {
    const auto bleu_scores = bleu({{"the cat sat", "the cat sat on the mat"}});
    expect_near(bleu_scores[0], 0.3679, 1e-4, "BLEU-1 brevity fixture");

    const auto rouge_scores = rouge({{"the cat", "the cat sat"}});
    expect_near(rouge_scores.rouge1, 0.8, 1e-4, "ROUGE-1 fixture");

    const double meteor_score = meteor({{"a b c", "a b c"}});
    expect_near(meteor_score, 0.9815, 1e-4, "METEOR identical-text fixture");
}

void robustness() {
    gen::rng r(7);
    joined_run run;
    for (int i = 0; i < 10000; ++i) {
        eval_pair pair;
        pair.id = "s" + std::to_string(i);
        pair.gt_findings = gen::findings(r, r.int_in(1, 3), 22);
        pair.gt_global.insert(static_cast<global_label>(r.int_in(0, 4)));
        pair.pred_text = gen::garbage_line(r);
        run.pairs.push_back(std::move(pair));
    }
    long tallied_warnings = 0;
    for (auto task : {eval_task::localization, eval_task::classification, eval_task::text}) {
        eval_options options;
        options.task = task;
        options.labels = task == eval_task::classification ? label_space::global_labels
                                                           : label_space::local_labels;
        options.jobs = 4;
        const auto report = evaluate_pairs(run, options);
        for (const auto& [key, value] : report["metrics"].items()) {
            if (!value.is_number()) continue;
            const double v = value.get<double>();
            const double hi = key == "cider" ? 10.0 + 1e-9 : 1.0 + 1e-12;
            if (!(v >= 0.0 && v <= hi)) {
                throw check_failure{"metric " + key + " out of range: " + std::to_string(v)};
            }
        }
        for (const auto& [kind, count] : report["warnings"].items()) {
            (void)kind;
            tallied_warnings += count.get<long>();
        }
    }
    expect(tallied_warnings > 0, "garbage must produce tallied warnings");
}

void end_to_end_pipeline() {
    const fs::path dir = scratch_dir("pipeline");
    const fs::path images = dir / "images_in";
    fs::create_directories(images);

    // five synthetic studies
    auto write_dicom = [&](const std::string& id, int rows, int cols,
                           const std::string& interp, bool windowed) {
        std::vector<std::uint16_t> pixels(static_cast<std::size_t>(rows) * cols);
        for (std::size_t i = 0; i < pixels.size(); ++i) {
            pixels[i] = static_cast<std::uint16_t>((i * 131 + id.back()) % 4096);
        }
        const auto bytes = fixture::minimal_dicom(
            static_cast<std::uint16_t>(rows), static_cast<std::uint16_t>(cols), pixels, interp,
            windowed ? "2048" : "", windowed ? "4096" : "");
        std::ofstream out(images / (id + ".dcm"), std::ios::binary);
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
    };
    write_dicom("d1", 64, 64, "MONOCHROME2", true);
    write_dicom("d2", 48, 64, "MONOCHROME2", false);
    write_dicom("d3", 64, 48, "MONOCHROME1", true);
    write_dicom("d4", 32, 32, "MONOCHROME2", true);
    write_dicom("d5", 64, 64, "MONOCHROME2", true);

    std::ostringstream csv;
    csv << "image_id,rad_id,class_name,x_min,y_min,x_max,y_max\n";
    // d1: two annotators, near-identical cardiomegaly boxes
    csv << "d1,R1,Cardiomegaly,16,30,52,44\n";
    csv << "d1,R1,Other disease,,,,\n";
    csv << "d1,R2,Cardiomegaly,17,31,53,45\n";
    csv << "d1,R2,Pneumonia,,,,\n";
    // d2: one annotator, two findings
    csv << "d2,R1,Aortic enlargement,30,6,44,18\n";
    csv << "d2,R1,Pleural effusion,5,20,20,40\n";
    csv << "d2,R1,Tuberculosis,,,,\n";
    // d3: clean no-finding study
    csv << "d3,R1,No finding,,,,\n";
    csv << "d3,R2,No finding,,,,\n";
    // d4: conflict (removed by the filter)
    csv << "d4,R1,No finding,,,,\n";
    csv << "d4,R2,Cardiomegaly,4,4,20,20\n";
    // d5: two disjoint nodules, two diagnoses
    csv << "d5,R1,Nodule/Mass,5,5,15,15\n";
    csv << "d5,R1,Nodule/Mass,40,40,60,60\n";
    csv << "d5,R1,Lung tumor,,,,\n";
    csv << "d5,R1,COPD,,,,\n";
    write_file(dir / "annotations.csv", csv.str());

    auto run_pipeline = [&](int jobs) {
        const fs::path out = dir / ("run_j" + std::to_string(jobs));
        fs::create_directories(out);
        const std::string j = " --jobs " + std::to_string(jobs);
        expect(run_cli("preprocess --images " + images.string() + " --annotations " +
                           (dir / "annotations.csv").string() + " --out " +
                           (out / "pre").string() + j,
                       out / "pre.log") == 0,
               "preprocess failed at jobs=" + std::to_string(jobs));
        expect(run_cli("build-dataset --studies " + (out / "pre" / "studies.jsonl").string() +
                           " --stage 1 --out " + (out / "stage1.jsonl").string() +
                           " --gt-out " + (out / "gt.jsonl").string() + j,
                       out / "stage1.log") == 0,
               "build-dataset stage 1 failed");
        expect(run_cli("build-dataset --studies " + (out / "pre" / "studies.jsonl").string() +
                           " --stage 2 --out " + (out / "stage2.jsonl").string() + j,
                       out / "stage2.log") == 0,
               "build-dataset stage 2 failed");

        // predictions echo the stage-1 targets
        std::ostringstream preds;
        std::ifstream stage1(out / "stage1.jsonl");
        std::string line;
        while (std::getline(stage1, line)) {
            const auto doc = nlohmann::json::parse(line);
            nlohmann::ordered_json pred;
            const std::string image = doc["image"].get<std::string>();
            pred["id"] = fs::path(image).stem().string();
            pred["text"] = doc["target"];
            preds << pred.dump() << '\n';
        }
        write_file(out / "pred.jsonl", preds.str());

        expect(run_cli("eval --task loc --gt " + (out / "gt.jsonl").string() + " --pred " +
                           (out / "pred.jsonl").string() + " --out " +
                           (out / "report_loc.json").string() + j,
                       out / "eval.log") == 0,
               "eval failed");
        return out;
    };

    const fs::path run1 = run_pipeline(1);
    const fs::path run8 = run_pipeline(8);

    // byte-identical outputs across parallelism
    for (const char* name :
         {"pre/studies.jsonl", "stage1.jsonl", "stage2.jsonl", "gt.jsonl", "report_loc.json",
          "pre/images/d1.png", "pre/images/d3.png"}) {
        expect(read_file(run1 / name) == read_file(run8 / name),
               std::string(name) + " differs between jobs=1 and jobs=8");
    }

    // the conflicted study d4 is gone; d3 kept as a no-finding study
    const std::string gt_text = read_file(run1 / "gt.jsonl");
    expect(gt_text.find("\"d4\"") == std::string::npos, "conflicted study must be removed");
    expect(gt_text.find("\"d3\"") != std::string::npos, "no-finding study must survive");

    // stage targets re-parse to the ground truth records
    std::map<std::string, eval_ground_truth> gt_by_id;
    {
        std::ifstream gt_file(run1 / "gt.jsonl");
        std::string line;
        while (std::getline(gt_file, line)) {
            const auto doc = nlohmann::json::parse(line);
            eval_ground_truth rec;
            rec.study_id = doc["id"].get<std::string>();
            for (const auto& fd : doc["findings"]) {
                rec.findings.push_back(
                    {*parse_local_label(fd["label"].get<std::string>()),
                     norm_box{fd["box"][0].get<int>(), fd["box"][1].get<int>(),
                              fd["box"][2].get<int>(), fd["box"][3].get<int>()}});
            }
            for (const auto& gd : doc["global"]) {
                rec.global.insert(*parse_global_label(gd.get<std::string>()));
            }
            gt_by_id[rec.study_id] = rec;
        }
    }
    expect(gt_by_id.size() == 4, "four studies must survive preprocessing");
    {
        std::ifstream stage1(run1 / "stage1.jsonl");
        std::string line;
        long checked = 0;
        while (std::getline(stage1, line)) {
            const auto doc = nlohmann::json::parse(line);
            const std::string id = fs::path(doc["image"].get<std::string>()).stem().string();
            const auto parsed = parse_grounded_report(doc["target"].get<std::string>());
            expect(parsed.warnings.empty(), "stage-1 target must parse cleanly");
            expect(parsed.report.findings == gt_by_id.at(id).findings,
                   "stage-1 target must re-parse to its ground truth for " + id);
            ++checked;
        }
        expect(checked == 4, "stage 1 must emit all four studies (incl. the no-finding one)");
    }
    {
        std::ifstream stage2(run1 / "stage2.jsonl");
        std::string line;
        long checked = 0;
        while (std::getline(stage2, line)) {
            const auto doc = nlohmann::json::parse(line);
            const std::string id = fs::path(doc["image"].get<std::string>()).stem().string();
            const auto parsed = parse_diagnoses(doc["target"].get<std::string>());
            expect(parsed.warnings.empty(), "stage-2 target must parse cleanly");
            expect(parsed.labels == gt_by_id.at(id).global,
                   "stage-2 target must re-parse to its diagnosis union for " + id);
            ++checked;
        }
        expect(checked == 4, "stage 2 must emit all four studies");
    }

    // echoing the targets back scores perfectly
    const auto report = nlohmann::json::parse(read_file(run1 / "report_loc.json"));
    for (const char* t : {"0.3", "0.4", "0.5"}) {
        expect(report["metrics"][std::string("accuracy@") + t].get<double>() == 1.0,
               "pipeline echo must score accuracy 1.0");
    }
    fs::remove_all(dir);
}

}  // namespace

int main(int, char** argv) {
    g_exe_dir = fs::canonical(fs::path(argv[0])).parent_path();

    criterion(1, "codec fidelity on the qualitative example strings", 1.0, codec_fidelity);
    criterion(2, "iou matches the rasterization oracle on 10k pairs", 10.0, geometry_oracle);
    criterion(3, "dedup idempotence, subset and label-partition properties", 0.0,
              dedup_properties);
    criterion(4, "pixel windowing bit-exactness", 0.0, preprocessing_bit_exactness);
    criterion(5, "fusion shape algebra and gradient checks", 30.0, fusion_shape_algebra);
    criterion(6, "metric fixed points and monotonicity", 0.0, metric_fixed_points);
    criterion(7, "classification report against the confusion oracle", 0.0,
              classification_oracle);
    criterion(8, "text metric hand fixtures", 0.0, text_hand_fixtures);
    criterion(9, "robustness on 10k fuzzed predictions", 60.0, robustness);
    criterion(10, "end-to-end pipeline determinism", 0.0, end_to_end_pipeline);

    if (failures) {
        std::printf("%d criterion(s) failed\n", failures);
        return 1;
    }
    std::printf("all criteria passed\n");
    return 0;
}
