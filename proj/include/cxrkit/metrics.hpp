#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cxrkit/codec.hpp"
#include "cxrkit/geometry.hpp"

namespace cxrkit {

// One study joined across the ground-truth and prediction files. The raw
// prediction text is parsed lazily by the metric that needs it.
struct eval_pair {
    std::string id;
    std::vector<finding> gt_findings;
    std::set<global_label> gt_global;
    std::string pred_text;
    bool missing_prediction = false;
};

// ---- localization ----------------------------------------------------

// Greedy one-to-one matching of ground-truth and predicted findings within
// one study: per label present on both sides, pairs are taken in
// descending-IoU order. `eligible` counts the GT findings whose label the
// prediction mentioned; `matched_ious` holds one IoU per matched GT box.
struct match_stats {
    long eligible = 0;
    long gt_total = 0;
    std::vector<double> matched_ious;
};

match_stats match_findings(const std::vector<finding>& gt, const std::vector<finding>& pred);

// Fraction of eligible GT findings whose matched box clears IoU > threshold,
// pooled over all studies. A zero denominator scores 0. Throws domain_error
// for an empty pair set or a threshold outside (0,1).
double accuracy_at_iou(const std::vector<eval_pair>& pairs, double threshold);

// ---- multilabel classification ----------------------------------------

struct class_metrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    long support = 0;
};

struct label_sample {
    std::set<std::size_t> truth;
    std::set<std::size_t> predicted;
};

// Per-class precision/recall/F1/support over a fixed vocabulary plus the
// four averaging rows. Classes never seen keep zero rows and still enter
// the macro mean; zero divisions yield 0.
struct class_report {
    std::vector<std::string> class_names;
    std::vector<class_metrics> per_class;
    std::vector<long> tp, fp, fn;
    class_metrics micro, macro, weighted, samples;
};

class_report classification_report(const std::vector<label_sample>& samples,
                                   const std::vector<std::string>& vocabulary);

// ---- text validity -----------------------------------------------------

// Lowercase, detach punctuation into single-character tokens, split on
// whitespace. Shared by every text metric.
std::vector<std::string> tokenize(std::string_view text);

struct text_pair {
    std::string candidate;
    std::string reference;
};

// Corpus-level cumulative BLEU-1..4: clipped n-gram precision pooled over
// the corpus, brevity penalty min(1, exp(1 - ref_len/cand_len)), no
// smoothing (a zero precision zeroes the cumulative score).
std::array<double, 4> bleu(const std::vector<text_pair>& pairs, int max_n = 4);

struct rouge_scores {
    double rouge1 = 0.0;
    double rouge2 = 0.0;
    double rouge_l = 0.0;
    double rouge_lsum = 0.0;
};

// Mean-of-pairs F1 (beta = 1): clipped n-gram overlap for ROUGE-1/2, LCS
// for ROUGE-L, and union-LCS over newline-split sentences for ROUGE-LSUM.
rouge_scores rouge(const std::vector<text_pair>& pairs);

// Mean-of-pairs METEOR: exact-then-stem unigram alignment,
// F = PR/(0.9P + 0.1R), fragmentation penalty 0.5*(chunks/matches)^3.
double meteor(const std::vector<text_pair>& pairs);

struct cider_score {
    double value = 0.0;
    bool degenerate_idf = false;  // fewer than 2 pairs: IDF has no corpus
};

// Mean-of-pairs CIDEr-D on the 0-10 scale: TF-IDF n-gram vectors (n=1..4,
// IDF from the reference corpus), clipped cosine, gaussian length penalty
// with sigma = 6.
cider_score cider(const std::vector<text_pair>& pairs);

// ---- run-level evaluation ----------------------------------------------

enum class eval_task { localization, classification, text };
enum class label_space { global_labels, local_labels };

struct eval_options {
    eval_task task = eval_task::localization;
    std::vector<double> thresholds = {0.3, 0.4, 0.5};
    label_space labels = label_space::global_labels;
    int jobs = 1;
};

struct joined_run {
    std::vector<eval_pair> pairs;  // sorted by study id
    long predictions_without_ground_truth = 0;
};

// Joins the two JSONL files on study id. Missing predictions become empty
// responses; prediction records may carry raw "text" or ground-truth-shaped
// fields (serialized on the fly). Duplicate ids raise data_error.
joined_run load_eval_pairs(const std::filesystem::path& gt_path,
                           const std::filesystem::path& pred_path,
                           const eval_options& options);

// Full report document for one metric family.
nlohmann::ordered_json evaluate_pairs(const joined_run& run, const eval_options& options);
nlohmann::ordered_json evaluate_run(const std::filesystem::path& gt_path,
                                    const std::filesystem::path& pred_path,
                                    const eval_options& options);

}  // namespace cxrkit
