#include "cxrkit/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <optional>
#include <unordered_map>
#include <unordered_set>

#include "cxrkit/errors.hpp"
#include "cxrkit/util.hpp"

namespace cxrkit {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// Overlap ratio that tolerates zero-area boxes (predictions are untrusted).
double overlap_ratio(const norm_box& a, const norm_box& b) {
    const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
    const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    const double uni = static_cast<double>(area(a)) + static_cast<double>(area(b)) - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

std::string format_threshold(double t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", t);
    return buf;
}

// ---- n-gram utilities ---------------------------------------------------

using ngram_counts = std::unordered_map<std::string, long>;

std::string ngram_key(const std::vector<std::string>& tokens, std::size_t begin, int n) {
    std::string key = tokens[begin];
    for (int i = 1; i < n; ++i) {
        key.push_back('\x1f');
        key += tokens[begin + i];
    }
    return key;
}

ngram_counts count_ngrams(const std::vector<std::string>& tokens, int n) {
    ngram_counts counts;
    if (static_cast<int>(tokens.size()) < n) return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        ++counts[ngram_key(tokens, i, n)];
    }
    return counts;
}

long clipped_matches(const ngram_counts& cand, const ngram_counts& ref) {
    long matched = 0;
    for (const auto& [key, count] : cand) {
        const auto it = ref.find(key);
        if (it != ref.end()) matched += std::min(count, it->second);
    }
    return matched;
}

double f1_from_counts(long matched, long cand_total, long ref_total) {
    const double p = cand_total > 0 ? static_cast<double>(matched) / cand_total : 0.0;
    const double r = ref_total > 0 ? static_cast<double>(matched) / ref_total : 0.0;
    return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

// ---- LCS ------------------------------------------------------------------

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    if (a.empty() || b.empty()) return 0;
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

// Indices (into `ref`) of one longest common subsequence of ref and can.
std::vector<std::size_t> lcs_indices(const std::vector<std::string>& ref,
                                     const std::vector<std::string>& can) {
    std::vector<std::size_t> out;
    if (ref.empty() || can.empty()) return out;
    const std::size_t n = ref.size();
    const std::size_t m = can.size();
    std::vector<std::vector<std::uint32_t>> table(n + 1,
                                                  std::vector<std::uint32_t>(m + 1, 0));
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= m; ++j) {
            table[i][j] = ref[i - 1] == can[j - 1] ? table[i - 1][j - 1] + 1
                                                   : std::max(table[i - 1][j], table[i][j - 1]);
        }
    }
    std::size_t i = n, j = m;
    while (i > 0 && j > 0) {
        if (ref[i - 1] == can[j - 1]) {
            out.push_back(i - 1);
            --i;
            --j;
        } else if (table[i][j - 1] > table[i - 1][j]) {
            --j;
        } else {
            --i;
        }
    }
    std::reverse(out.begin(), out.end());
    return out;
}

std::vector<std::string> split_lines(std::string_view text) {
    std::vector<std::string> out;
    std::size_t begin = 0;
    while (begin <= text.size()) {
        const std::size_t end = text.find('\n', begin);
        if (end == std::string_view::npos) {
            out.emplace_back(text.substr(begin));
            break;
        }
        out.emplace_back(text.substr(begin, end - begin));
        begin = end + 1;
    }
    return out;
}

// Summary-level union-LCS with double-counting prevention: each reference
// sentence contributes the union of its LCS positions against every
// candidate sentence, budgeted by corpus-wide token counts.
double rouge_lsum_pair(const std::string& candidate, const std::string& reference) {
    std::vector<std::vector<std::string>> cand_sents, ref_sents;
    for (const auto& line : split_lines(candidate)) {
        auto toks = tokenize(line);
        if (!toks.empty()) cand_sents.push_back(std::move(toks));
    }
    for (const auto& line : split_lines(reference)) {
        auto toks = tokenize(line);
        if (!toks.empty()) ref_sents.push_back(std::move(toks));
    }
    if (cand_sents.empty() || ref_sents.empty()) return 0.0;

    long m = 0, n = 0;
    ngram_counts ref_budget, cand_budget;
    for (const auto& s : ref_sents) {
        m += static_cast<long>(s.size());
        for (const auto& t : s) ++ref_budget[t];
    }
    for (const auto& s : cand_sents) {
        n += static_cast<long>(s.size());
        for (const auto& t : s) ++cand_budget[t];
    }

    long hits = 0;
    for (const auto& ref_sent : ref_sents) {
        std::vector<bool> in_union(ref_sent.size(), false);
        for (const auto& cand_sent : cand_sents) {
            for (std::size_t idx : lcs_indices(ref_sent, cand_sent)) in_union[idx] = true;
        }
        for (std::size_t i = 0; i < ref_sent.size(); ++i) {
            if (!in_union[i]) continue;
            const std::string& tok = ref_sent[i];
            auto rit = ref_budget.find(tok);
            auto cit = cand_budget.find(tok);
            if (rit != ref_budget.end() && rit->second > 0 && cit != cand_budget.end() &&
                cit->second > 0) {
                ++hits;
                --rit->second;
                --cit->second;
            }
        }
    }
    return f1_from_counts(hits, n, m);
}

// ---- METEOR ---------------------------------------------------------------

std::string stem(const std::string& word) {
    static constexpr std::string_view suffixes[] = {"ing", "ed", "es", "s"};
    std::string out = word;
    for (bool stripped = true; stripped;) {
        stripped = false;
        for (auto suffix : suffixes) {
            if (out.size() > suffix.size() + 2 && out.ends_with(suffix)) {
                out.resize(out.size() - suffix.size());
                stripped = true;
                break;
            }
        }
    }
    return out;
}

double meteor_pair(const std::string& candidate, const std::string& reference) {
    const auto cand = tokenize(candidate);
    const auto ref = tokenize(reference);
    if (cand.empty() || ref.empty()) return 0.0;

    std::vector<std::optional<std::size_t>> match(cand.size());
    std::vector<bool> ref_used(ref.size(), false);
    // Stage 1: exact matches, in order.
    for (std::size_t i = 0; i < cand.size(); ++i) {
        for (std::size_t j = 0; j < ref.size(); ++j) {
            if (!ref_used[j] && cand[i] == ref[j]) {
                match[i] = j;
                ref_used[j] = true;
                break;
            }
        }
    }
    // Stage 2: stem matches on the leftovers.
    for (std::size_t i = 0; i < cand.size(); ++i) {
        if (match[i]) continue;
        const std::string cstem = stem(cand[i]);
        for (std::size_t j = 0; j < ref.size(); ++j) {
            if (!ref_used[j] && cstem == stem(ref[j])) {
                match[i] = j;
                ref_used[j] = true;
                break;
            }
        }
    }

    long matches = 0;
    long chunks = 0;
    std::optional<std::size_t> prev_j;
    bool in_chunk = false;
    for (std::size_t i = 0; i < cand.size(); ++i) {
        if (!match[i]) {
            in_chunk = false;
            prev_j.reset();
            continue;
        }
        ++matches;
        if (!in_chunk || *match[i] != *prev_j + 1) ++chunks;
        in_chunk = true;
        prev_j = match[i];
    }
    if (matches == 0) return 0.0;

    const double p = static_cast<double>(matches) / cand.size();
    const double r = static_cast<double>(matches) / ref.size();
    const double f_mean = p * r / (0.9 * p + 0.1 * r);
    const double frag = static_cast<double>(chunks) / matches;
    const double penalty = 0.5 * frag * frag * frag;
    return f_mean * (1.0 - penalty);
}

// ---- label helpers ---------------------------------------------------------

std::set<std::size_t> local_set_from_findings(const std::vector<finding>& findings) {
    std::set<std::size_t> out;
    for (const auto& f : findings) out.insert(static_cast<std::size_t>(f.label));
    return out;
}

std::set<std::size_t> global_set_indices(const std::set<global_label>& labels) {
    std::set<std::size_t> out;
    for (auto g : labels) out.insert(static_cast<std::size_t>(g));
    return out;
}

std::vector<std::string> vocabulary_names(label_space space) {
    std::vector<std::string> names;
    if (space == label_space::global_labels) {
        for (auto g : all_global_labels()) names.emplace_back(to_string(g));
    } else {
        for (auto l : all_local_labels()) names.emplace_back(to_string(l));
    }
    return names;
}

// ---- warning tallies --------------------------------------------------------

constexpr warning_kind kAllWarningKinds[] = {
    warning_kind::malformed_box,        warning_kind::unknown_label,
    warning_kind::coordinate_clamped,   warning_kind::no_labels_found,
    warning_kind::conflicting_no_finding,
};

using warning_tally = std::map<warning_kind, long>;

void tally(warning_tally& tally_map, const std::vector<parse_warning>& warnings) {
    for (const auto& w : warnings) ++tally_map[w.kind];
}

ordered_json warnings_to_json(const warning_tally& tally_map) {
    ordered_json out;
    for (auto kind : kAllWarningKinds) {
        const auto it = tally_map.find(kind);
        out[std::string(to_string(kind))] = it == tally_map.end() ? 0 : it->second;
    }
    return out;
}

// ---- ground-truth / prediction file loading --------------------------------

norm_box box_from_json_checked(const json& arr, const std::string& id) {
    if (!arr.is_array() || arr.size() != 4) {
        throw data_error("study " + id + ": box must be [x1,y1,x2,y2]");
    }
    int c[4];
    for (std::size_t i = 0; i < 4; ++i) {
        if (!arr[i].is_number()) throw data_error("study " + id + ": non-numeric coordinate");
        const double v = arr[i].get<double>();
        if (v < 0 || v > 100 || v != std::floor(v)) {
            throw data_error("study " + id + ": coordinate " + std::to_string(v) +
                             " is not an integer in [0,100]");
        }
        c[i] = static_cast<int>(v);
    }
    const norm_box box{c[0], c[1], c[2], c[3]};
    if (!is_valid(box) || area(box) == 0) {
        throw data_error("study " + id + ": degenerate ground-truth box");
    }
    return box;
}

struct gt_record {
    std::vector<finding> findings;
    std::set<global_label> global;
};

template <typename Fn>
void for_each_jsonl(const std::filesystem::path& path, Fn&& fn) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open " + path.string());
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
        fn(doc, line_no);
    }
}

std::string require_id(const json& doc, const std::filesystem::path& path, std::size_t line_no) {
    if (!doc.contains("id") || !doc["id"].is_string()) {
        throw data_error(path.string() + " line " + std::to_string(line_no) +
                         ": missing string \"id\"");
    }
    return doc["id"].get<std::string>();
}

gt_record parse_gt_record(const json& doc, const std::string& id) {
    gt_record out;
    for (const auto& fd : doc.value("findings", json::array())) {
        const std::string name = fd.at("label").get<std::string>();
        const auto label = parse_local_label(name);
        if (!label) {
            throw data_error("study " + id + ": unknown label in ground truth: '" + name + "'");
        }
        out.findings.push_back({*label, box_from_json_checked(fd.at("box"), id)});
    }
    for (const auto& gd : doc.value("global", json::array())) {
        const std::string name = gd.get<std::string>();
        const auto label = parse_global_label(name);
        if (!label) {
            throw data_error("study " + id + ": unknown label in ground truth: '" + name + "'");
        }
        out.global.insert(*label);
    }
    return out;
}

// A prediction record may carry raw text or ground-truth-shaped fields; the
// latter are serialized into the sentence the task expects.
std::string prediction_text(const json& doc, const std::string& id,
                            const eval_options& options) {
    if (doc.contains("text")) {
        if (!doc["text"].is_string()) {
            throw data_error("study " + id + ": prediction \"text\" must be a string");
        }
        return doc["text"].get<std::string>();
    }
    const gt_record rec = parse_gt_record(doc, id);
    const bool want_global = (options.task == eval_task::classification ||
                              options.task == eval_task::text) &&
                             options.labels == label_space::global_labels;
    try {
        if (want_global) return serialize_diagnoses({rec.global});
        return serialize_findings({rec.findings});
    } catch (const domain_error& e) {
        throw data_error("study " + id + ": cannot serialize prediction record: " + e.what());
    }
}

}  // namespace

// ---- localization -----------------------------------------------------------

match_stats match_findings(const std::vector<finding>& gt, const std::vector<finding>& pred) {
    match_stats stats;
    stats.gt_total = static_cast<long>(gt.size());

    std::set<local_label> shared;
    for (const auto& g : gt) shared.insert(g.label);
    {
        std::set<local_label> pred_labels;
        for (const auto& p : pred) pred_labels.insert(p.label);
        std::set<local_label> both;
        std::set_intersection(shared.begin(), shared.end(), pred_labels.begin(),
                              pred_labels.end(), std::inserter(both, both.begin()));
        shared = std::move(both);
    }

    for (local_label label : shared) {
        std::vector<std::size_t> gt_idx, pred_idx;
        for (std::size_t i = 0; i < gt.size(); ++i) {
            if (gt[i].label == label) gt_idx.push_back(i);
        }
        for (std::size_t j = 0; j < pred.size(); ++j) {
            if (pred[j].label == label) pred_idx.push_back(j);
        }
        stats.eligible += static_cast<long>(gt_idx.size());

        struct candidate {
            double overlap;
            std::size_t g, p;
        };
        std::vector<candidate> candidates;
        for (std::size_t gi = 0; gi < gt_idx.size(); ++gi) {
            for (std::size_t pi = 0; pi < pred_idx.size(); ++pi) {
                const double o = overlap_ratio(gt[gt_idx[gi]].box, pred[pred_idx[pi]].box);
                if (o > 0.0) candidates.push_back({o, gi, pi});
            }
        }
        std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
            if (a.overlap != b.overlap) return a.overlap > b.overlap;
            if (a.g != b.g) return a.g < b.g;
            return a.p < b.p;
        });
        std::vector<bool> gt_used(gt_idx.size(), false), pred_used(pred_idx.size(), false);
        for (const auto& c : candidates) {
            if (gt_used[c.g] || pred_used[c.p]) continue;
            gt_used[c.g] = true;
            pred_used[c.p] = true;
            stats.matched_ious.push_back(c.overlap);
        }
    }
    return stats;
}

double accuracy_at_iou(const std::vector<eval_pair>& pairs, double threshold) {
    if (pairs.empty()) throw domain_error("accuracy_at_iou: empty pair set");
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw domain_error("accuracy_at_iou: threshold " + std::to_string(threshold) +
                           " outside (0,1)");
    }
    long numerator = 0;
    long denominator = 0;
    for (const auto& pair : pairs) {
        const auto parsed = parse_grounded_report(pair.pred_text);
        const match_stats stats = match_findings(pair.gt_findings, parsed.report.findings);
        denominator += stats.eligible;
        for (double o : stats.matched_ious) {
            if (o > threshold) ++numerator;
        }
    }
    return denominator > 0 ? static_cast<double>(numerator) / denominator : 0.0;
}

// ---- multilabel classification -----------------------------------------------

class_report classification_report(const std::vector<label_sample>& samples,
                                   const std::vector<std::string>& vocabulary) {
    const std::size_t n_classes = vocabulary.size();
    class_report report;
    report.class_names = vocabulary;
    report.tp.assign(n_classes, 0);
    report.fp.assign(n_classes, 0);
    report.fn.assign(n_classes, 0);

    double samples_p = 0.0, samples_r = 0.0, samples_f = 0.0;
    for (const auto& sample : samples) {
        long inter = 0;
        for (std::size_t c : sample.truth) {
            if (c >= n_classes) throw data_error("classification_report: label index out of range");
            if (sample.predicted.contains(c)) {
                ++report.tp[c];
                ++inter;
            } else {
                ++report.fn[c];
            }
        }
        for (std::size_t c : sample.predicted) {
            if (c >= n_classes) throw data_error("classification_report: label index out of range");
            if (!sample.truth.contains(c)) ++report.fp[c];
        }
        const double p =
            sample.predicted.empty() ? 0.0 : static_cast<double>(inter) / sample.predicted.size();
        const double r =
            sample.truth.empty() ? 0.0 : static_cast<double>(inter) / sample.truth.size();
        samples_p += p;
        samples_r += r;
        samples_f += p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    }

    auto safe_div = [](double num, double den) { return den > 0.0 ? num / den : 0.0; };

    long tp_sum = 0, fp_sum = 0, fn_sum = 0, support_sum = 0;
    double macro_p = 0.0, macro_r = 0.0, macro_f = 0.0;
    double weighted_p = 0.0, weighted_r = 0.0, weighted_f = 0.0;
    report.per_class.resize(n_classes);
    for (std::size_t c = 0; c < n_classes; ++c) {
        class_metrics& m = report.per_class[c];
        m.support = report.tp[c] + report.fn[c];
        m.precision = safe_div(report.tp[c], report.tp[c] + report.fp[c]);
        m.recall = safe_div(report.tp[c], report.tp[c] + report.fn[c]);
        m.f1 = safe_div(2.0 * m.precision * m.recall, m.precision + m.recall);
        tp_sum += report.tp[c];
        fp_sum += report.fp[c];
        fn_sum += report.fn[c];
        support_sum += m.support;
        macro_p += m.precision;
        macro_r += m.recall;
        macro_f += m.f1;
        weighted_p += m.precision * m.support;
        weighted_r += m.recall * m.support;
        weighted_f += m.f1 * m.support;
    }

    report.micro.precision = safe_div(tp_sum, tp_sum + fp_sum);
    report.micro.recall = safe_div(tp_sum, tp_sum + fn_sum);
    report.micro.f1 = safe_div(2.0 * report.micro.precision * report.micro.recall,
                               report.micro.precision + report.micro.recall);
    report.micro.support = support_sum;

    report.macro.precision = n_classes > 0 ? macro_p / n_classes : 0.0;
    report.macro.recall = n_classes > 0 ? macro_r / n_classes : 0.0;
    report.macro.f1 = n_classes > 0 ? macro_f / n_classes : 0.0;
    report.macro.support = support_sum;

    report.weighted.precision = safe_div(weighted_p, support_sum);
    report.weighted.recall = safe_div(weighted_r, support_sum);
    report.weighted.f1 = safe_div(weighted_f, support_sum);
    report.weighted.support = support_sum;

    const double n_samples = static_cast<double>(samples.size());
    report.samples.precision = samples.empty() ? 0.0 : samples_p / n_samples;
    report.samples.recall = samples.empty() ? 0.0 : samples_r / n_samples;
    report.samples.f1 = samples.empty() ? 0.0 : samples_f / n_samples;
    report.samples.support = support_sum;
    return report;
}

// ---- text metrics --------------------------------------------------------------

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) {
            tokens.push_back(current);
            current.clear();
        }
    };
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            current.push_back(static_cast<char>(std::tolower(c)));
        } else if (std::isspace(c)) {
            flush();
        } else {
            flush();
            tokens.emplace_back(1, static_cast<char>(std::tolower(c)));
        }
    }
    flush();
    return tokens;
}

std::array<double, 4> bleu(const std::vector<text_pair>& pairs, int max_n) {
    max_n = std::clamp(max_n, 1, 4);
    long matched[4] = {0, 0, 0, 0};
    long total[4] = {0, 0, 0, 0};
    long cand_len = 0, ref_len = 0;
    for (const auto& pair : pairs) {
        const auto cand = tokenize(pair.candidate);
        const auto ref = tokenize(pair.reference);
        cand_len += static_cast<long>(cand.size());
        ref_len += static_cast<long>(ref.size());
        for (int n = 1; n <= max_n; ++n) {
            if (static_cast<int>(cand.size()) < n) continue;
            const auto cand_counts = count_ngrams(cand, n);
            const auto ref_counts = count_ngrams(ref, n);
            matched[n - 1] += clipped_matches(cand_counts, ref_counts);
            total[n - 1] += static_cast<long>(cand.size()) - n + 1;
        }
    }
    const double bp =
        cand_len == 0
            ? 0.0
            : std::min(1.0, std::exp(1.0 - static_cast<double>(ref_len) / cand_len));
    std::array<double, 4> scores{0.0, 0.0, 0.0, 0.0};
    double log_sum = 0.0;
    bool zero = false;
    for (int n = 1; n <= 4; ++n) {
        if (n <= max_n) {
            const double p =
                total[n - 1] > 0 ? static_cast<double>(matched[n - 1]) / total[n - 1] : 0.0;
            if (p <= 0.0) {
                zero = true;
            } else {
                log_sum += std::log(p);
            }
            scores[n - 1] = zero ? 0.0 : bp * std::exp(log_sum / n);
        }
    }
    return scores;
}

rouge_scores rouge(const std::vector<text_pair>& pairs) {
    rouge_scores total;
    if (pairs.empty()) return total;
    for (const auto& pair : pairs) {
        const auto cand = tokenize(pair.candidate);
        const auto ref = tokenize(pair.reference);
        for (int n = 1; n <= 2; ++n) {
            const auto cand_counts = count_ngrams(cand, n);
            const auto ref_counts = count_ngrams(ref, n);
            const long cand_total = std::max<long>(static_cast<long>(cand.size()) - n + 1, 0);
            const long ref_total = std::max<long>(static_cast<long>(ref.size()) - n + 1, 0);
            const double f =
                f1_from_counts(clipped_matches(cand_counts, ref_counts), cand_total, ref_total);
            (n == 1 ? total.rouge1 : total.rouge2) += f;
        }
        const long lcs = static_cast<long>(lcs_length(cand, ref));
        total.rouge_l += f1_from_counts(lcs, static_cast<long>(cand.size()),
                                        static_cast<long>(ref.size()));
        total.rouge_lsum += rouge_lsum_pair(pair.candidate, pair.reference);
    }
    const double n = static_cast<double>(pairs.size());
    total.rouge1 /= n;
    total.rouge2 /= n;
    total.rouge_l /= n;
    total.rouge_lsum /= n;
    return total;
}

double meteor(const std::vector<text_pair>& pairs) {
    if (pairs.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& pair : pairs) sum += meteor_pair(pair.candidate, pair.reference);
    return sum / static_cast<double>(pairs.size());
}

cider_score cider(const std::vector<text_pair>& pairs) {
    cider_score out;
    out.degenerate_idf = pairs.size() < 2;
    if (pairs.empty()) return out;
    constexpr int kMaxN = 4;
    constexpr double kSigma = 6.0;

    // Document frequencies over the reference corpus.
    std::array<ngram_counts, kMaxN> df;
    std::vector<std::vector<std::string>> ref_tokens(pairs.size());
    std::vector<std::vector<std::string>> cand_tokens(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        ref_tokens[i] = tokenize(pairs[i].reference);
        cand_tokens[i] = tokenize(pairs[i].candidate);
        for (int n = 1; n <= kMaxN; ++n) {
            std::unordered_set<std::string> seen;
            if (static_cast<int>(ref_tokens[i].size()) >= n) {
                for (std::size_t k = 0; k + n <= ref_tokens[i].size(); ++k) {
                    seen.insert(ngram_key(ref_tokens[i], k, n));
                }
            }
            for (const auto& key : seen) ++df[n - 1][key];
        }
    }
    const double log_corpus = std::log(static_cast<double>(pairs.size()));

    double sum = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const double delta =
            static_cast<double>(cand_tokens[i].size()) - static_cast<double>(ref_tokens[i].size());
        const double length_penalty = std::exp(-delta * delta / (2.0 * kSigma * kSigma));
        double pair_score = 0.0;
        for (int n = 1; n <= kMaxN; ++n) {
            const auto cand_counts = count_ngrams(cand_tokens[i], n);
            const auto ref_counts = count_ngrams(ref_tokens[i], n);
            auto weight = [&](const std::string& key, long tf) {
                const auto it = df[n - 1].find(key);
                const double d = it == df[n - 1].end() ? 1.0 : std::max(1.0, double(it->second));
                return tf * (log_corpus - std::log(d));
            };
            double num = 0.0, norm_c = 0.0, norm_r = 0.0;
            for (const auto& [key, tf] : cand_counts) {
                const double wc = weight(key, tf);
                norm_c += wc * wc;
                const auto rit = ref_counts.find(key);
                if (rit != ref_counts.end()) {
                    const double wr = weight(key, rit->second);
                    num += std::min(wc, wr) * wr;
                }
            }
            for (const auto& [key, tf] : ref_counts) {
                const double wr = weight(key, tf);
                norm_r += wr * wr;
            }
            if (norm_c > 0.0 && norm_r > 0.0) {
                pair_score += num / (std::sqrt(norm_c) * std::sqrt(norm_r)) * length_penalty;
            }
        }
        sum += 10.0 * pair_score / kMaxN;
    }
    out.value = sum / static_cast<double>(pairs.size());
    return out;
}

// ---- run-level evaluation ---------------------------------------------------------

joined_run load_eval_pairs(const std::filesystem::path& gt_path,
                           const std::filesystem::path& pred_path,
                           const eval_options& options) {
    std::map<std::string, gt_record> gt;
    for_each_jsonl(gt_path, [&](const json& doc, std::size_t line_no) {
        const std::string id = require_id(doc, gt_path, line_no);
        try {
            if (!gt.emplace(id, parse_gt_record(doc, id)).second) {
                throw data_error("duplicate study id '" + id + "'");
            }
        } catch (const json::exception& e) {
            throw data_error(gt_path.string() + " line " + std::to_string(line_no) + ": " +
                             e.what());
        }
    });

    std::map<std::string, std::string> pred;
    long unmatched = 0;
    for_each_jsonl(pred_path, [&](const json& doc, std::size_t line_no) {
        const std::string id = require_id(doc, pred_path, line_no);
        try {
            if (!pred.emplace(id, prediction_text(doc, id, options)).second) {
                throw data_error("duplicate prediction id '" + id + "'");
            }
        } catch (const json::exception& e) {
            throw data_error(pred_path.string() + " line " + std::to_string(line_no) + ": " +
                             e.what());
        }
        if (!gt.contains(id)) ++unmatched;
    });

    joined_run run;
    run.predictions_without_ground_truth = unmatched;
    for (auto& [id, record] : gt) {
        eval_pair pair;
        pair.id = id;
        pair.gt_findings = std::move(record.findings);
        pair.gt_global = std::move(record.global);
        const auto it = pred.find(id);
        if (it == pred.end()) {
            pair.missing_prediction = true;
        } else {
            pair.pred_text = it->second;
        }
        run.pairs.push_back(std::move(pair));
    }
    return run;
}

namespace {

ordered_json counts_header(const joined_run& run) {
    long missing = 0;
    for (const auto& p : run.pairs) missing += p.missing_prediction ? 1 : 0;
    ordered_json counts;
    counts["studies"] = run.pairs.size();
    counts["missing_predictions"] = missing;
    counts["predictions_without_ground_truth"] = run.predictions_without_ground_truth;
    return counts;
}

ordered_json metrics_to_json(const class_metrics& m) {
    ordered_json out;
    out["precision"] = m.precision;
    out["recall"] = m.recall;
    out["f1"] = m.f1;
    out["support"] = m.support;
    return out;
}

ordered_json evaluate_localization(const joined_run& run, const eval_options& options) {
    struct study_result {
        match_stats stats;
        std::map<local_label, match_stats> per_label;
        std::vector<parse_warning> warnings;
    };
    auto results = parallel_map_indexed<study_result>(
        run.pairs.size(), options.jobs, [&](std::size_t i) {
            const eval_pair& pair = run.pairs[i];
            study_result out;
            auto parsed = parse_grounded_report(pair.pred_text);
            out.warnings = std::move(parsed.warnings);
            out.stats = match_findings(pair.gt_findings, parsed.report.findings);
            // per-label view for the report breakdown
            std::set<local_label> labels;
            for (const auto& f : pair.gt_findings) labels.insert(f.label);
            for (local_label label : labels) {
                std::vector<finding> gt_sub, pred_sub;
                for (const auto& f : pair.gt_findings) {
                    if (f.label == label) gt_sub.push_back(f);
                }
                for (const auto& f : parsed.report.findings) {
                    if (f.label == label) pred_sub.push_back(f);
                }
                out.per_label[label] = match_findings(gt_sub, pred_sub);
            }
            return out;
        });

    warning_tally warnings;
    long gt_total = 0, eligible = 0;
    std::vector<long> matched(options.thresholds.size(), 0);
    struct label_agg {
        long gt_total = 0, eligible = 0;
        std::vector<long> matched;
    };
    std::map<local_label, label_agg> per_label;
    for (const auto& r : results) {
        tally(warnings, r.warnings);
        gt_total += r.stats.gt_total;
        eligible += r.stats.eligible;
        for (std::size_t t = 0; t < options.thresholds.size(); ++t) {
            for (double o : r.stats.matched_ious) {
                if (o > options.thresholds[t]) ++matched[t];
            }
        }
        for (const auto& [label, stats] : r.per_label) {
            auto& agg = per_label[label];
            if (agg.matched.empty()) agg.matched.assign(options.thresholds.size(), 0);
            agg.gt_total += stats.gt_total;
            agg.eligible += stats.eligible;
            for (std::size_t t = 0; t < options.thresholds.size(); ++t) {
                for (double o : stats.matched_ious) {
                    if (o > options.thresholds[t]) ++agg.matched[t];
                }
            }
        }
    }

    ordered_json report;
    report["task"] = "loc";
    auto& metrics = report["metrics"] = ordered_json::object();
    for (std::size_t t = 0; t < options.thresholds.size(); ++t) {
        metrics["accuracy@" + format_threshold(options.thresholds[t])] =
            eligible > 0 ? static_cast<double>(matched[t]) / eligible : 0.0;
    }
    ordered_json counts = counts_header(run);
    counts["gt_findings"] = gt_total;
    counts["eligible_gt_findings"] = eligible;
    for (std::size_t t = 0; t < options.thresholds.size(); ++t) {
        counts["matched@" + format_threshold(options.thresholds[t])] = matched[t];
    }
    counts["denominator_zero"] = eligible == 0;
    report["counts"] = std::move(counts);
    auto& per_class = report["per_class"] = ordered_json::object();
    for (const auto& [label, agg] : per_label) {
        ordered_json row;
        row["gt_findings"] = agg.gt_total;
        row["eligible"] = agg.eligible;
        for (std::size_t t = 0; t < options.thresholds.size(); ++t) {
            row["matched@" + format_threshold(options.thresholds[t])] = agg.matched[t];
        }
        per_class[std::string(to_string(label))] = std::move(row);
    }
    report["warnings"] = warnings_to_json(warnings);
    return report;
}

ordered_json evaluate_classification(const joined_run& run, const eval_options& options) {
    struct study_result {
        label_sample sample;
        std::vector<parse_warning> warnings;
    };
    const bool global_space = options.labels == label_space::global_labels;
    auto results = parallel_map_indexed<study_result>(
        run.pairs.size(), options.jobs, [&](std::size_t i) {
            const eval_pair& pair = run.pairs[i];
            study_result out;
            if (global_space) {
                if (pair.gt_global.empty()) {
                    throw data_error("study " + pair.id + ": no global labels in ground truth");
                }
                out.sample.truth = global_set_indices(pair.gt_global);
                auto parsed = parse_diagnoses(pair.pred_text);
                out.warnings = std::move(parsed.warnings);
                out.sample.predicted = global_set_indices(parsed.labels);
            } else {
                out.sample.truth = local_set_from_findings(pair.gt_findings);
                auto parsed = parse_grounded_report(pair.pred_text);
                out.warnings = std::move(parsed.warnings);
                out.sample.predicted = local_set_from_findings(parsed.report.findings);
            }
            return out;
        });

    warning_tally warnings;
    std::vector<label_sample> samples;
    samples.reserve(results.size());
    for (auto& r : results) {
        tally(warnings, r.warnings);
        samples.push_back(std::move(r.sample));
    }
    const class_report cls = classification_report(samples, vocabulary_names(options.labels));

    ordered_json report;
    report["task"] = "cls";
    report["label_space"] = global_space ? "global" : "local";
    auto& metrics = report["metrics"] = ordered_json::object();
    metrics["micro avg"] = metrics_to_json(cls.micro);
    metrics["macro avg"] = metrics_to_json(cls.macro);
    metrics["weighted avg"] = metrics_to_json(cls.weighted);
    metrics["samples avg"] = metrics_to_json(cls.samples);
    report["counts"] = counts_header(run);
    auto& per_class = report["per_class"] = ordered_json::object();
    for (std::size_t c = 0; c < cls.class_names.size(); ++c) {
        per_class[cls.class_names[c]] = metrics_to_json(cls.per_class[c]);
    }
    report["warnings"] = warnings_to_json(warnings);
    return report;
}

ordered_json evaluate_text(const joined_run& run, const eval_options& options) {
    const bool global_space = options.labels == label_space::global_labels;
    auto pairs = parallel_map_indexed<text_pair>(
        run.pairs.size(), options.jobs, [&](std::size_t i) {
            const eval_pair& pair = run.pairs[i];
            text_pair out;
            std::string reference;
            if (global_space) {
                if (pair.gt_global.empty()) {
                    throw data_error("study " + pair.id + ": no global labels in ground truth");
                }
                reference = serialize_diagnoses({pair.gt_global});
            } else {
                reference = serialize_findings({pair.gt_findings});
            }
            out.reference = strip_localization(reference);
            out.candidate = strip_localization(pair.pred_text);
            return out;
        });

    const auto bleu_scores = bleu(pairs);
    const auto rouge_result = rouge(pairs);
    const double meteor_score = meteor(pairs);
    const auto cider_result = cider(pairs);

    ordered_json report;
    report["task"] = "text";
    report["label_space"] = global_space ? "global" : "local";
    auto& conventions = report["conventions"] = ordered_json::object();
    conventions["bleu"] = "corpus-level";
    conventions["rouge"] = "mean-of-pairs";
    conventions["meteor"] = "mean-of-pairs";
    conventions["cider"] = "mean-of-pairs, 0-10 scale";
    auto& metrics = report["metrics"] = ordered_json::object();
    metrics["rouge-1"] = rouge_result.rouge1;
    metrics["rouge-2"] = rouge_result.rouge2;
    metrics["rouge-l"] = rouge_result.rouge_l;
    metrics["rouge-lsum"] = rouge_result.rouge_lsum;
    for (int n = 1; n <= 4; ++n) {
        metrics["bleu-" + std::to_string(n)] = bleu_scores[n - 1];
    }
    metrics["meteor"] = meteor_score;
    metrics["cider"] = cider_result.value;
    ordered_json counts = counts_header(run);
    counts["degenerate_idf"] = cider_result.degenerate_idf;
    report["counts"] = std::move(counts);
    report["warnings"] = warnings_to_json({});
    return report;
}

}  // namespace

ordered_json evaluate_pairs(const joined_run& run, const eval_options& options) {
    if (run.pairs.empty()) throw domain_error("evaluate: empty pair set");
    for (double t : options.thresholds) {
        if (!(t > 0.0 && t < 1.0)) {
            throw domain_error("evaluate: threshold " + std::to_string(t) + " outside (0,1)");
        }
    }
    switch (options.task) {
        case eval_task::localization: return evaluate_localization(run, options);
        case eval_task::classification: return evaluate_classification(run, options);
        case eval_task::text: return evaluate_text(run, options);
    }
    throw domain_error("evaluate: unknown task");
}

ordered_json evaluate_run(const std::filesystem::path& gt_path,
                          const std::filesystem::path& pred_path, const eval_options& options) {
    return evaluate_pairs(load_eval_pairs(gt_path, pred_path, options), options);
}

}  // namespace cxrkit
